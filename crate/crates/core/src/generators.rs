//! Seeded generators for random systems and test input signals.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::StateSpaceSystem;
use crate::signals::Signal;

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v * scale
    })
}

/// Random `nx`-state system with Gaussian entries. With `spectral_radius`
/// set, `A` is rescaled so its largest pole modulus equals that value.
pub fn random_system<R: Rng + ?Sized>(
    rng: &mut R,
    nx: usize,
    nu: usize,
    ny: usize,
    spectral_radius: Option<f64>,
) -> StateSpaceSystem {
    let scale = if nx == 0 { 1.0 } else { 1.0 / (nx as f64).sqrt() };
    let mut a = gaussian_matrix(rng, nx, nx, scale);
    let b = gaussian_matrix(rng, nx, nu, 1.0);
    let c = gaussian_matrix(rng, ny, nx, 1.0);
    let d = gaussian_matrix(rng, ny, nu, 1.0);
    if let Some(target) = spectral_radius {
        let probe = StateSpaceSystem::new(a.clone(), b.clone(), c.clone(), d.clone())
            .expect("consistent shapes");
        let r = probe.spectral_radius().unwrap_or(1.0);
        if r > 0.0 {
            a *= target / r;
        }
    }
    StateSpaceSystem::new(a, b, c, d).expect("consistent shapes")
}

/// Deterministic input generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    /// `amplitude` at time `at`, zero elsewhere.
    Impulse {
        #[serde(default)]
        at: i64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude · decay^(t − start)`; `decay = 1` is a plain step.
    StepDecay {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "default_decay")]
        decay: f64,
    },
    /// White Gaussian noise with standard deviation `std`, damped by
    /// `decay^(t − start)`.
    Gaussian {
        seed: u64,
        #[serde(default = "one")]
        std: f64,
        #[serde(default = "default_decay")]
        decay: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn default_decay() -> f64 {
    0.99
}

impl InputSpec {
    /// Sample on `start..start+len` with `dim` channels.
    pub fn generate(&self, start: i64, len: usize, dim: usize) -> Result<Signal> {
        if dim == 0 || len.saturating_mul(dim) > crate::signals::MAX_SAMPLES {
            return Err(Error::InvalidArgument(format!("cannot generate {len}×{dim} samples")));
        }
        let mut data = vec![0.0; len * dim];
        match *self {
            InputSpec::Impulse { at, amplitude } => {
                check_finite(amplitude)?;
                if let Some(k) = at.checked_sub(start).filter(|k| *k >= 0 && (*k as usize) < len) {
                    let k = k as usize;
                    data[k * dim..(k + 1) * dim].fill(amplitude);
                }
            }
            InputSpec::StepDecay { amplitude, decay } => {
                check_finite(amplitude)?;
                check_decay(decay)?;
                let mut level = amplitude;
                for row in data.chunks_exact_mut(dim) {
                    row.fill(level);
                    level *= decay;
                }
            }
            InputSpec::Gaussian { seed, std, decay } => {
                check_finite(std)?;
                check_decay(decay)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut envelope = std;
                for row in data.chunks_exact_mut(dim) {
                    for v in row.iter_mut() {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        *v = envelope * g;
                    }
                    envelope *= decay;
                }
            }
        }
        Signal::new(start, dim, data)
    }
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("non-finite generator parameter {v}")))
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if (0.0..=1.0).contains(&decay) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("decay must lie in [0, 1], got {decay}")))
    }
}

/// Zero-mean unit-variance Gaussian sequence of length `len` from `seed`.
pub fn white_noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_is_honored() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sys = random_system(&mut rng, 5, 1, 1, Some(0.7));
        assert!((sys.spectral_radius().unwrap() - 0.7).abs() < 1e-10);
    }

    #[test]
    fn generators() {
        let s = InputSpec::Impulse { at: 2, amplitude: 3.0 }.generate(0, 5, 2).unwrap();
        assert_eq!(s.at(2).unwrap(), &[3.0, 3.0]);
        assert_eq!(s.norm_full(), (18.0f64).sqrt());
        let s = InputSpec::StepDecay { amplitude: 1.0, decay: 0.5 }.generate(0, 4, 1).unwrap();
        assert_eq!(s.channel(0), vec![1.0, 0.5, 0.25, 0.125]);
        let g1 = InputSpec::Gaussian { seed: 7, std: 1.0, decay: 1.0 }.generate(0, 16, 1).unwrap();
        let g2 = InputSpec::Gaussian { seed: 7, std: 1.0, decay: 1.0 }.generate(0, 16, 1).unwrap();
        assert_eq!(g1, g2);
        assert!(InputSpec::StepDecay { amplitude: 1.0, decay: 1.5 }.generate(0, 4, 1).is_err());
    }

    #[test]
    fn input_spec_json() {
        let spec: InputSpec = serde_json::from_str(r#"{"kind": "gaussian", "seed": 3}"#).unwrap();
        assert_eq!(spec, InputSpec::Gaussian { seed: 3, std: 1.0, decay: 0.99 });
        assert!(serde_json::from_str::<InputSpec>(r#"{"kind": "chirp"}"#).is_err());
    }
}
