//! Small numeric helpers shared by the embedding trainers and the tagger.

use ndarray::{Array1, Array2};
use rand::Rng;
use sha2::{Digest, Sha256};

/// Numerically stable log-sum-exp (subtract-max). All -inf yields -inf.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) matrix initialization.
pub fn init_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

pub fn init_vector(len: usize, fan_in: usize, rng: &mut impl Rng) -> Array1<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array1::from_shape_fn(len, |_| rng.gen_range(-bound..bound))
}

/// Derives a child seed from a run seed and a salt (config index, epoch,
/// word hash). Stable across platforms.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(salt.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Stable 64-bit hash of a string (for per-word deterministic seeding).
pub fn hash_str(s: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(s.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_direct() {
        let v: [f64; 3] = [0.3, -1.2, 2.5];
        let direct = (v.iter().map(|x| x.exp()).sum::<f64>()).ln();
        assert!((logsumexp(&v) - direct).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_all_neg_inf() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn logsumexp_large_values_stable() {
        let v = [1000.0, 1000.0];
        assert!((logsumexp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn derive_seed_is_stable() {
        assert_eq!(derive_seed(42, 7), derive_seed(42, 7));
        assert_ne!(derive_seed(42, 7), derive_seed(42, 8));
    }
}
