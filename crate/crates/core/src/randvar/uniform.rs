use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const TWO_POW_M52: f64 = 1.0 / 4503599627370496.0;

/// Replayable stream of uniforms on the open interval `(0, 1)`.
///
/// The `k`-th draw of a stream depends only on `(seed, path_index, k)`: each
/// path owns one ChaCha8 stream and draws are read from it at consecutive
/// word positions. Two paths with different indices never share keystream.
#[derive(Clone, Debug)]
pub struct UniformStream {
    rng: ChaCha8Rng,
    seed: u64,
    path_index: u64,
    counter: u64,
}

impl UniformStream {
    pub fn new(seed: u64, path_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        UniformStream {
            rng,
            seed,
            path_index,
            counter: 0,
        }
    }

    /// Positions the stream so that the next draw is draw number `counter`.
    pub fn at(seed: u64, path_index: u64, counter: u64) -> Self {
        let mut stream = UniformStream::new(seed, path_index);
        stream.rng.set_word_pos(2 * counter as u128);
        stream.counter = counter;
        stream
    }

    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        self.counter += 1;
        bits_to_open_unit(self.rng.next_u64())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Number of draws taken so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }
}

/// The draw a stream yields at `counter`, without materialising the stream.
pub fn uniform_at(seed: u64, path_index: u64, counter: u64) -> f64 {
    UniformStream::at(seed, path_index, counter).next_uniform()
}

/// Maps 64 random bits to `(k + 1/2) 2^-52` for a 52-bit `k`.
///
/// The result is exact, lies in `[2^-53, 1 - 2^-53]`, and `1 - u` is exact.
#[inline]
fn bits_to_open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * TWO_POW_M52
}

/// Derives an independent 64-bit seed from a base seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
