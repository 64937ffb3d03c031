//! Keyed random streams and zero-mean Gaussian channel noise.
//!
//! Every random draw in a run comes from a stream keyed by
//! `(master_seed, repeat, round, client, purpose)`. Streams are never shared
//! between tasks, so results are independent of scheduling.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// The generator behind every keyed stream.
pub type Stream = ChaCha12Rng;

/// What a stream is used for. Keys that differ only in purpose are independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    DataBatch = 0,
    ChannelNoise = 1,
    Init = 2,
    /// Sampling points for constant estimation in verification checks.
    Probe = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub repeat: u64,
    pub round: u64,
    pub client: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(master_seed: u64, repeat: u64, round: u64, client: u64, purpose: Purpose) -> Self {
        Self {
            master_seed,
            repeat,
            round,
            client,
            purpose,
        }
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Map a key to its stream. Each field is absorbed through the mixer in
/// turn, then four output words form the 256-bit ChaCha seed.
pub fn derive_stream(key: StreamKey) -> Stream {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let fields = [
        key.master_seed,
        key.repeat,
        key.round,
        key.client,
        key.purpose as u64,
    ];
    let mut state = GOLDEN;
    for (slot, f) in fields.iter().enumerate() {
        state = mix64(state ^ mix64(f.wrapping_add((slot as u64 + 1).wrapping_mul(GOLDEN))));
    }
    let mut seed = [0u8; 32];
    for (k, chunk) in seed.chunks_exact_mut(8).enumerate() {
        state = state.wrapping_add(GOLDEN);
        chunk.copy_from_slice(&mix64(state ^ k as u64).to_le_bytes());
    }
    Stream::from_seed(seed)
}

/// Per-coordinate noise variance, homogeneous across rounds and clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
    pub master_seed: u64,
}

/// Draw a d-vector of i.i.d. N(0, variance) entries. Zero variance returns
/// the zero vector without touching the stream.
pub fn sample_noise<R: rand::Rng + ?Sized>(stream: &mut R, d: usize, variance: f64) -> DVector<f64> {
    assert!(variance >= 0.0, "noise variance must be nonnegative");
    if variance == 0.0 {
        return DVector::zeros(d);
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    DVector::from_fn(d, |_, _| normal.sample(stream))
}

/// d-vector of standard normal draws.
pub fn standard_normal_vector<R: rand::Rng + ?Sized>(stream: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(key: StreamKey, k: usize) -> Vec<f64> {
        let mut s = derive_stream(key);
        (0..k).map(|_| s.random::<f64>()).collect()
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn identical_keys_identical_streams() {
        let key = StreamKey::new(9, 1, 2, 3, Purpose::ChannelNoise);
        let mut a = derive_stream(key);
        let mut b = derive_stream(key);
        let xa: Vec<u64> = (0..64).map(|_| a.random()).collect();
        let xb: Vec<u64> = (0..64).map(|_| b.random()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn purpose_and_round_streams_uncorrelated() {
        let base = StreamKey::new(42, 0, 7, 3, Purpose::DataBatch);
        let a = draws(base, 10_000);
        let b = draws(StreamKey { purpose: Purpose::ChannelNoise, ..base }, 10_000);
        let c = draws(StreamKey { round: 8, ..base }, 10_000);
        assert!(correlation(&a, &b).abs() < 0.05);
        assert!(correlation(&a, &c).abs() < 0.05);
    }

    #[test]
    fn uniform_smoke_test() {
        let xs = draws(StreamKey::new(1, 0, 0, 0, Purpose::Init), 100_000);
        let mut bins = [0usize; 10];
        for x in xs {
            bins[(x * 10.0) as usize] += 1;
        }
        for b in bins {
            assert!((9_500..=10_500).contains(&b), "bin count {b}");
        }
    }

    #[test]
    fn zero_variance_consumes_nothing() {
        let key = StreamKey::new(3, 0, 0, 0, Purpose::ChannelNoise);
        let mut s = derive_stream(key);
        let v = sample_noise(&mut s, 5, 0.0);
        assert_eq!(v, DVector::zeros(5));
        let mut fresh = derive_stream(key);
        assert_eq!(s.random::<u64>(), fresh.random::<u64>());
    }

    fn moments(variance: f64) -> (f64, f64, f64) {
        let mut s = derive_stream(StreamKey::new(11, 0, 0, 0, Purpose::ChannelNoise));
        let v = sample_noise(&mut s, 100_000, variance);
        let n = v.len() as f64;
        let mean = v.sum() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var, (var / n).sqrt())
    }

    #[test]
    fn noise_moments_match_variance() {
        let (mean, var, se) = moments(0.005);
        assert!(mean.abs() <= 4.0 * se);
        assert!((0.0049..=0.0051).contains(&var), "var {var}");
        let (mean, var, se) = moments(0.01);
        assert!(mean.abs() <= 4.0 * se);
        assert!((0.0098..=0.0102).contains(&var), "var {var}");
    }
}
