use std::io::Write;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// A CSV table with a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &'static [&'static str]) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width differs from header"
        );
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Writes to `path`, or to stdout when `path` is `None`.
    pub fn write(&self, path: Option<&Path>) -> CliResult<()> {
        let bytes = self.to_csv();
        match path {
            Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
            None => std::io::stdout()
                .lock()
                .write_all(&bytes)
                .map_err(|e| CliError::io("<stdout>", e)),
        }
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
