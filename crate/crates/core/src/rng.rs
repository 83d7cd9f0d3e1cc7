//! Reproducible random streams.
//!
//! Every unit of work (an episode, a block inside an episode, a Monte-Carlo
//! sample) owns a ChaCha8 stream addressed by a master seed and an index path.
//! ChaCha is counter based, so streams with different addresses are
//! independent and results do not depend on which worker runs a unit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds an index path into a single 64-bit stream identifier.
fn stream_id(path: &[u64]) -> u64 {
    let mut acc = 0x243F_6A88_85A3_08D3u64 ^ path.len() as u64;
    for &p in path {
        let mut s = acc ^ p.wrapping_mul(GOLDEN);
        acc = splitmix64(&mut s);
    }
    acc
}

/// Returns the stream addressed by `path` under `master`.
pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    let mut state = master;
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream_id(path));
    rng
}

/// Derives a child master seed, used when a sub-computation needs its own
/// family of streams (calibration vs. assertion runs, for example).
pub fn child_seed(master: u64, tag: u64) -> u64 {
    let mut s = master ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut s)
}

/// Fills `out` with independent N(0, variance) draws.
pub fn fill_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, variance: f64, out: &mut [f64]) {
    let sd = variance.sqrt();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = sd * z;
    }
}

/// Uniform draw on (0, 1].
pub fn open_uniform<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_address_same_stream() {
        let a: Vec<u64> = (0..8).map({
            let mut r = stream(7, &[1, 2]);
            move |_| r.random()
        }).collect();
        let b: Vec<u64> = (0..8).map({
            let mut r = stream(7, &[1, 2]);
            move |_| r.random()
        }).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn different_addresses_differ() {
        let mut a = stream(7, &[1, 2]);
        let mut b = stream(7, &[2, 1]);
        let mut c = stream(8, &[1, 2]);
        let x: u64 = a.random();
        assert_ne!(x, b.random::<u64>());
        assert_ne!(x, c.random::<u64>());
    }

    #[test]
    fn gaussian_moments() {
        let mut r = stream(1, &[0]);
        let mut buf = vec![0.0; 200_000];
        fill_gaussian(&mut r, 0.25, &mut buf);
        let n = buf.len() as f64;
        let mean = buf.iter().sum::<f64>() / n;
        let var = buf.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 * (0.25f64 / n).sqrt());
        assert!((var - 0.25).abs() < 0.005);
    }
}
