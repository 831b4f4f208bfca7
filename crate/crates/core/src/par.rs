//! Fixed-partition batch execution.
//!
//! Work is cut into batches whose boundaries depend only on the item count
//! and batch size. Batch results come back in batch order, so any in-order
//! fold over them is independent of thread count and scheduling.

use std::ops::Range;

/// Paths per batch unless a caller overrides it.
pub const DEFAULT_BATCH: u64 = 1000;

/// Splits `start..start + count` into consecutive ranges of `batch` items.
pub fn batches(start: u64, count: u64, batch: u64) -> Vec<Range<u64>> {
    assert!(batch > 0, "batch size must be positive");
    let end = start + count;
    let mut out = Vec::with_capacity(count.div_ceil(batch) as usize);
    let mut lo = start;
    while lo < end {
        let hi = (lo + batch).min(end);
        out.push(lo..hi);
        lo = hi;
    }
    out
}

/// Applies `f` to every batch, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_batches<T, F>(ranges: Vec<Range<u64>>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    ranges.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_batches<T, F>(ranges: Vec<Range<u64>>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync + Send,
{
    ranges.into_iter().map(f).collect()
}

/// Sequential reference path, always available.
pub fn map_batches_sequential<T, F>(ranges: Vec<Range<u64>>, f: F) -> Vec<T>
where
    F: Fn(Range<u64>) -> T,
{
    ranges.into_iter().map(f).collect()
}
