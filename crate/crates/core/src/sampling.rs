//! Seeded sample streams shared by the certification and recovery engines.
//!
//! Every sample index gets its own ChaCha stream derived from `(seed, index)`,
//! so sample sets are identical whether evaluated serially or in parallel.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix::UnitScalar;

/// RNG for one component or sample, keyed by `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic child seed for a named component of an experiment.
pub fn derive_seed(seed: u64, component: u64) -> u64 {
    stream_rng(seed, component.wrapping_add(1 << 32)).next_u64()
}

/// Log-uniform draw on `[lo, hi]`.
pub fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    let u: f64 = rng.random();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

/// Sampling parameters: `{"count", "seed", "norm_range": [lo, hi], "mu_count"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    pub norm_range: [f64; 2],
    #[serde(default = "default_mu_count")]
    pub mu_count: usize,
}

fn default_mu_count() -> usize {
    16
}

impl SampleSpec {
    pub fn new(count: usize, seed: u64, norm_range: [f64; 2], mu_count: usize) -> Self {
        Self {
            count,
            seed,
            norm_range,
            mu_count,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_count(&self, count: usize) -> Self {
        Self {
            count,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.norm_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "norm_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if self.mu_count < 4 || !self.mu_count.is_multiple_of(4) {
            return Err(Error::InvalidParameter(format!(
                "mu_count must be a positive multiple of 4, got {}",
                self.mu_count
            )));
        }
        Ok(())
    }

    pub fn draw_norm<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        log_uniform(rng, self.norm_range[0], self.norm_range[1])
    }

    pub fn mu_grid(&self) -> Vec<UnitScalar> {
        mu_grid(self.mu_count)
    }
}

/// Uniform grid `exp(2 pi i k / count)`; the quarter points `1, i, -1, -i`
/// are exact whenever `count` is a multiple of 4.
pub fn mu_grid(count: usize) -> Vec<UnitScalar> {
    let quarter = count / 4;
    (0..count)
        .map(|k| {
            if quarter > 0 && count.is_multiple_of(4) && k % quarter == 0 {
                let z = match k / quarter {
                    0 => Complex64::new(1.0, 0.0),
                    1 => Complex64::new(0.0, 1.0),
                    2 => Complex64::new(-1.0, 0.0),
                    _ => Complex64::new(0.0, -1.0),
                };
                UnitScalar::new(z).expect("quarter points are unimodular")
            } else {
                UnitScalar::from_angle(2.0 * PI * k as f64 / count as f64)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_contains_one_and_i() {
        let grid = mu_grid(16);
        assert_eq!(grid.len(), 16);
        assert_eq!(grid[0].value(), Complex64::new(1.0, 0.0));
        assert_eq!(grid[4].value(), Complex64::new(0.0, 1.0));
        for mu in &grid {
            assert!((mu.value().norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream_rng(7, 3).next_u64();
        let b: u64 = stream_rng(7, 3).next_u64();
        let c: u64 = stream_rng(7, 4).next_u64();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_seed(7, 1), derive_seed(7, 2));
    }

    #[test]
    fn log_uniform_stays_in_range() {
        let mut rng = stream_rng(1, 0);
        for _ in 0..1000 {
            let t = log_uniform(&mut rng, 0.05, 20.0);
            assert!((0.05..=20.0).contains(&t));
        }
    }

    #[test]
    fn sample_spec_validation_and_wire_format() {
        let spec: SampleSpec =
            serde_json::from_str(r#"{"count": 10, "seed": 3, "norm_range": [0.1, 4.0], "mu_count": 8}"#)
                .unwrap();
        assert_eq!(spec, SampleSpec::new(10, 3, [0.1, 4.0], 8));
        assert!(spec.validate().is_ok());
        assert!(SampleSpec::new(10, 3, [0.0, 4.0], 8).validate().is_err());
        assert!(SampleSpec::new(10, 3, [0.1, 4.0], 6).validate().is_err());
    }
}
