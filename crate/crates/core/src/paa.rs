//! Recursive parameter adaptation with forgetting factors and `ρ⁻ᵗ` data
//! weighting.
//!
//! Plant, in the delay operator `q⁻¹`:
//!
//! ```text
//! y(t) = −Σ aᵢ y(t−i) + Σ bⱼ u(t−d−j) + w(t)
//! ```
//!
//! Update, with `φ` the regressor and `e0 = y − θ̂ᵀφ` the a-priori error:
//!
//! ```text
//! ε   = e0 / (1 + φᵀFφ)
//! θ̂⁺ = θ̂ + F φ ε
//! F⁺  = (1/λ₁) [F − F φ φᵀ F / (λ₁/λ₂ + φᵀFφ)]      (F/λ₁ when λ₂ = 0)
//! ```
//!
//! so that `(F⁺)⁻¹ = λ₁ F⁻¹ + λ₂ φ φᵀ`.
//!
//! Weighting `ỹ(t) = ρ⁻ᵗ y(t)`, `ũ(t) = ρ⁻ᵗ u(t)` turns the plant into
//! `ãᵢ = aᵢ ρ⁻ⁱ`, `b̃ⱼ = bⱼ ρ^(−d−j)` (every root of `A` divided by `ρ`).
//! The estimator runs on the weighted data and reports estimates mapped
//! back to the original coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certify::{self, CertifyOptions, PassivityCertificate};
use crate::error::{Error, Result};
use crate::generators::{white_noise, InputSpec};
use crate::lti::{RationalSiso, StateSpaceSystem};
use crate::signals::{format_f64, rho_pow, Signal};

/// Largest supported `na`, `nb`.
pub const MAX_ORDER: usize = 16;
/// Largest supported input delay.
pub const MAX_DELAY: usize = 1024;
/// Largest excitation order probed in reports.
const EXCITATION_PROBE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantModel {
    /// `a₁..a_na` of `A(q⁻¹) = 1 + a₁q⁻¹ + …`
    pub a: Vec<f64>,
    /// `b₁..b_nb`
    pub b: Vec<f64>,
    #[serde(default)]
    pub d: usize,
}

impl PlantModel {
    pub fn new(a: Vec<f64>, b: Vec<f64>, d: usize) -> Result<Self> {
        let p = Self { a, b, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.is_empty() && self.b.is_empty() {
            return Err(Error::InvalidArgument("plant needs at least one coefficient".into()));
        }
        if self.a.len() > MAX_ORDER || self.b.len() > MAX_ORDER || self.d > MAX_DELAY {
            return Err(Error::InvalidArgument(format!(
                "plant order or delay too large (max order {MAX_ORDER}, max delay {MAX_DELAY})"
            )));
        }
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite plant coefficient".into()));
        }
        Ok(())
    }

    pub fn na(&self) -> usize {
        self.a.len()
    }
    pub fn nb(&self) -> usize {
        self.b.len()
    }
    pub fn n_params(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// `[a₁..a_na, b₁..b_nb]`
    pub fn theta(&self) -> Vec<f64> {
        self.a.iter().chain(&self.b).copied().collect()
    }

    fn with_theta(&self, theta: &[f64]) -> Self {
        let (a, b) = theta.split_at(self.na());
        Self {
            a: a.to_vec(),
            b: b.to_vec(),
            d: self.d,
        }
    }

    /// Model of the `ρ⁻ᵗ`-weighted data (roots of `A` divided by `ρ`).
    pub fn rho_shifted(&self, rho: f64) -> Self {
        Self {
            a: self.a.iter().enumerate().map(|(i, v)| v * rho_pow(rho, -(i as i64 + 1))).collect(),
            b: self
                .b
                .iter()
                .enumerate()
                .map(|(j, v)| v * rho_pow(rho, -((self.d + j) as i64 + 1)))
                .collect(),
            d: self.d,
        }
    }

    /// Inverse of [`PlantModel::rho_shifted`] applied to a parameter vector.
    pub fn unshift_theta(&self, theta: &[f64], rho: f64) -> Vec<f64> {
        let na = self.na();
        theta
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let power = if k < na { k + 1 } else { self.d + (k - na) + 1 };
                v * rho_pow(rho, power as i64)
            })
            .collect()
    }

    /// `1/A(z) = zⁿᵃ / (zⁿᵃ + a₁zⁿᵃ⁻¹ + … + a_na)`
    pub fn inverse_denominator(&self) -> Result<StateSpaceSystem> {
        if self.a.is_empty() {
            return Ok(StateSpaceSystem::scalar_gain(1.0));
        }
        let mut num = vec![0.0; self.na() + 1];
        num[0] = 1.0;
        let mut den = vec![1.0];
        den.extend(&self.a);
        Ok(RationalSiso::new(num, den)?.to_state_space())
    }

    /// Roots of `zⁿᵃ + a₁zⁿᵃ⁻¹ + … + a_na`.
    pub fn poles(&self) -> Result<Vec<crate::lti::Complex64>> {
        self.inverse_denominator()?.poles()
    }
}

/// Difference-equation simulation from rest. `noise` is added sample by
/// sample where defined. Errors with the first step whose output is not
/// finite.
pub fn plant_simulate(plant: &PlantModel, u: &Signal, noise: &Signal) -> Result<Signal> {
    plant.validate()?;
    if u.dim() != 1 || noise.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: u.dim().max(noise.dim()),
        });
    }
    let t0 = u.start();
    let uv = u.as_slice();
    let mut y: Vec<f64> = Vec::with_capacity(uv.len());
    for k in 0..uv.len() {
        let mut v = noise.at(t0 + k as i64).map_or(0.0, |w| w[0]);
        for (i, a) in plant.a.iter().enumerate() {
            if let Some(past) = k.checked_sub(i + 1) {
                v -= a * y[past];
            }
        }
        for (j, b) in plant.b.iter().enumerate() {
            if let Some(past) = k.checked_sub(plant.d + j + 1) {
                v += b * uv[past];
            }
        }
        if !v.is_finite() {
            return Err(Error::Overflow { t: t0 + k as i64 });
        }
        y.push(v);
    }
    Signal::new(t0, 1, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PAAState {
    pub theta: DVector<f64>,
    pub f: DMatrix<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho: f64,
    pub t: i64,
}

impl PAAState {
    pub fn new(theta: DVector<f64>, f: DMatrix<f64>, lambda1: f64, lambda2: f64, rho: f64) -> Result<Self> {
        if !(lambda1 > 0.0 && lambda1 <= 1.0) {
            return Err(Error::InvalidArgument(format!("lambda1 must lie in (0, 1], got {lambda1}")));
        }
        if !(0.0..2.0).contains(&lambda2) {
            return Err(Error::InvalidArgument(format!("lambda2 must lie in [0, 2), got {lambda2}")));
        }
        if !(rho >= 1.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be ≥ 1, got {rho}")));
        }
        let n = theta.len();
        if f.nrows() != n || f.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: f.nrows(),
            });
        }
        let s = Self {
            theta,
            f,
            lambda1,
            lambda2,
            rho,
            t: 0,
        };
        if !s.gain_is_positive_definite() {
            return Err(Error::GainBreakdown { step: 0 });
        }
        Ok(s)
    }

    /// `θ̂ = 0`, `F = f0·I`.
    pub fn initial(n: usize, f0: f64, lambda1: f64, lambda2: f64, rho: f64) -> Result<Self> {
        if !(f0 > 0.0 && f0.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial gain must be > 0, got {f0}")));
        }
        Self::new(DVector::zeros(n), DMatrix::identity(n, n) * f0, lambda1, lambda2, rho)
    }

    pub fn gain_is_positive_definite(&self) -> bool {
        self.f.iter().all(|v| v.is_finite()) && self.f.clone().cholesky().is_some()
    }

    /// Smallest eigenvalue of `F`.
    pub fn gain_min_eigenvalue(&self) -> f64 {
        self.f.clone().symmetric_eigenvalues().min()
    }

    /// One update; returns the a-posteriori error `ε`. On error the state
    /// is left partially updated.
    pub fn step(&mut self, phi: &DVector<f64>, e0: f64) -> Result<f64> {
        if phi.len() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                got: phi.len(),
            });
        }
        let fphi = &self.f * phi;
        let q = phi.dot(&fphi);
        let eps = e0 / (1.0 + q);
        self.theta += &fphi * eps;
        let mut f = if self.lambda2 > 0.0 {
            (&self.f - &fphi * fphi.transpose() / (self.lambda1 / self.lambda2 + q)) / self.lambda1
        } else {
            &self.f / self.lambda1
        };
        f = (&f + f.transpose()) * 0.5;
        self.f = f;
        self.t += 1;
        if !eps.is_finite() || self.theta.iter().chain(self.f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Overflow { t: self.t });
        }
        if !self.gain_is_positive_definite() {
            return Err(Error::GainBreakdown { step: self.t });
        }
        Ok(eps)
    }
}

/// Functional form of [`PAAState::step`].
pub fn paa_step(state: &PAAState, phi: &DVector<f64>, e0: f64) -> Result<(PAAState, f64)> {
    let mut next = state.clone();
    let eps = next.step(phi, e0)?;
    Ok((next, eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Regressor from measured outputs; associated `H = 1`.
    EquationError,
    /// Regressor from a-posteriori predictions; associated `H = 1/A`.
    OutputError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentExperiment {
    pub plant: PlantModel,
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub lambda1: f64,
    #[serde(default = "one")]
    pub lambda2: f64,
    #[serde(default = "one")]
    pub rho: f64,
    pub steps: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    /// Excitation; unit-variance white noise from `seed` when absent.
    #[serde(default)]
    pub input: Option<InputSpec>,
    /// Initial adaptation gain `F(0) = f0·I`.
    #[serde(default = "default_f0")]
    pub f0: f64,
    #[serde(default)]
    pub certify: CertifyOptions,
}

fn one() -> f64 {
    1.0
}

fn default_f0() -> f64 {
    1e6
}

/// Stream offset separating measurement noise from the excitation.
const NOISE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

impl IdentExperiment {
    pub fn from_json(text: &str) -> Result<Self> {
        let e: IdentExperiment = serde_json::from_str(text)?;
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        if self.steps == 0 || self.steps > crate::signals::MAX_SAMPLES {
            return Err(Error::InvalidArgument(format!("steps {} out of range", self.steps)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument("noise_std must be finite and ≥ 0".into()));
        }
        PAAState::initial(self.plant.n_params(), self.f0, self.lambda1, self.lambda2, self.rho)?;
        Ok(())
    }

    pub fn excitation(&self) -> Result<Signal> {
        match &self.input {
            Some(spec) => spec.generate(0, self.steps, 1),
            None => Ok(Signal::from_scalars(0, &white_noise(self.seed, self.steps))),
        }
    }

    pub fn noise(&self) -> Signal {
        let w: Vec<f64> = white_noise(self.seed ^ NOISE_STREAM, self.steps)
            .into_iter()
            .map(|v| v * self.noise_std)
            .collect();
        Signal::from_scalars(0, &w)
    }
}

/// Outcome of [`spr_gate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReport {
    pub verdict: bool,
    pub certificate: PassivityCertificate,
    /// Transfer that was tested.
    pub assumption: String,
}

/// Tests whether `H(ρz) − λ₂/2` is strictly positive real, with `H = 1`
/// for the equation-error scheme and `H = 1/A` of `plant` for output error.
pub fn spr_gate(plant: &PlantModel, scheme: Scheme, rho: f64, lambda2: f64, opts: &CertifyOptions) -> Result<GateReport> {
    let (h, assumption) = match scheme {
        Scheme::EquationError => (StateSpaceSystem::scalar_gain(1.0), "H = 1 (equation error)".to_string()),
        Scheme::OutputError => (
            plant.inverse_denominator()?,
            "H = 1/A(z) of the declared plant (output error; assumes the plant is known)".to_string(),
        ),
    };
    let (verdict, certificate) = certify::spr_check(&h, rho, lambda2 / 2.0, opts)?;
    Ok(GateReport {
        verdict,
        certificate,
        assumption,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Plant output left the floating-point range.
    PlantOverflow,
    /// Estimate or gain update produced a non-finite value.
    NonFiniteUpdate,
    /// `F` lost positive definiteness, typically from underflow on
    /// exponentially growing data.
    GainBreakdown,
}

/// Full run: trajectory of mapped-back estimates plus summary.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentRun {
    /// Estimate after each completed step, original coordinates.
    pub trajectory: Vec<Vec<f64>>,
    /// Euclidean parameter error after each completed step.
    pub errors: Vec<f64>,
    /// Raw estimate in weighted coordinates at the end.
    pub theta_weighted: Vec<f64>,
    pub report: IdentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentReport {
    pub scheme: Scheme,
    pub rho: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub theta_true: Vec<f64>,
    pub theta_final: Vec<f64>,
    #[serde(with = "crate::json_float")]
    pub final_error: f64,
    pub steps_completed: usize,
    /// The run exhausted floating-point range and stopped early.
    pub overflow: bool,
    pub overflow_step: Option<i64>,
    pub stop_reason: Option<StopReason>,
    pub spr_gate: GateReport,
    /// Largest `n ≤ 16` whose input autocorrelation matrix is well conditioned.
    pub excitation_order: usize,
    /// Weighted regressor energy in the last quarter over the third quarter.
    #[serde(with = "crate::json_float")]
    pub regressor_tail_ratio: f64,
    #[serde(with = "crate::json_float")]
    pub max_gain_trace: f64,
    #[serde(with = "crate::json_float")]
    pub max_abs_estimate: f64,
    /// Where the trajectory CSV was written, filled in by the caller.
    pub theta_trajectory_ref: Option<String>,
}

/// Run the estimator over the experiment's data.
///
/// The plant output is simulated unweighted; data are then weighted by
/// `ρ⁻ᵗ`. If the plant output overflows, the run stops at the last finite
/// sample and the report carries the overflow flag.
pub fn run_identification(exp: &IdentExperiment) -> Result<IdentRun> {
    exp.validate()?;
    let plant = &exp.plant;
    let gate = spr_gate(plant, exp.scheme, exp.rho, exp.lambda2, &exp.certify)?;
    let u = exp.excitation()?;
    let w = exp.noise();
    let (y, plant_stop) = match plant_simulate(plant, &u, &w) {
        Ok(y) => (y.as_slice().to_vec(), None),
        Err(Error::Overflow { t }) => (
            simulate_prefix(plant, &u, &w, t as usize),
            Some((t, StopReason::PlantOverflow)),
        ),
        Err(e) => return Err(e),
    };
    let steps = y.len();
    let uw: Vec<f64> = (0..steps).map(|t| u.as_slice()[t] * rho_pow(exp.rho, -(t as i64))).collect();
    let yw: Vec<f64> = (0..steps).map(|t| y[t] * rho_pow(exp.rho, -(t as i64))).collect();

    let run = estimate(plant, exp.scheme, &yw, &uw, exp.f0, exp.lambda1, exp.lambda2, exp.rho)?;
    let stop = run.stop.or(plant_stop);
    let steps = run.thetas.len();
    let theta_true = plant.theta();
    let mapped: Vec<Vec<f64>> = run.thetas.iter().map(|th| plant.unshift_theta(th, exp.rho)).collect();
    let errors: Vec<f64> = mapped.iter().map(|th| euclid(th, &theta_true)).collect();
    let theta_final = mapped.last().cloned().unwrap_or_else(|| vec![0.0; plant.n_params()]);
    let final_error = euclid(&theta_final, &theta_true);
    let max_abs_estimate = mapped.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    let report = IdentReport {
        scheme: exp.scheme,
        rho: exp.rho,
        lambda1: exp.lambda1,
        lambda2: exp.lambda2,
        theta_true,
        theta_final,
        final_error,
        steps_completed: steps,
        overflow: stop.is_some(),
        overflow_step: stop.map(|s| s.0),
        stop_reason: stop.map(|s| s.1),
        spr_gate: gate,
        excitation_order: excitation_order(&u.as_slice()[..y.len()]),
        regressor_tail_ratio: tail_ratio(&run.regressor_energy),
        max_gain_trace: run.max_trace,
        max_abs_estimate,
        theta_trajectory_ref: None,
    };
    Ok(IdentRun {
        trajectory: mapped,
        errors,
        theta_weighted: run.thetas.last().cloned().unwrap_or_default(),
        report,
    })
}

fn simulate_prefix(plant: &PlantModel, u: &Signal, w: &Signal, len: usize) -> Vec<f64> {
    let u = Signal::from_scalars(0, &u.as_slice()[..len]);
    plant_simulate(plant, &u, w).map(|s| s.as_slice().to_vec()).unwrap_or_default()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Estimator pass over already-weighted data.
pub struct EstimatePass {
    /// Weighted-coordinate estimate after each step.
    pub thetas: Vec<Vec<f64>>,
    pub a_priori: Vec<f64>,
    pub a_posteriori: Vec<f64>,
    /// `‖φ(t)‖²`
    pub regressor_energy: Vec<f64>,
    pub max_trace: f64,
    /// First step whose update failed; the pass stops there.
    pub stop: Option<(i64, StopReason)>,
}

/// Run the recursion on `(y, u)` sampled from `t = 0`. The regressor is
/// zero-padded before the first sample.
#[allow(clippy::too_many_arguments)]
pub fn estimate(
    model: &PlantModel,
    scheme: Scheme,
    y: &[f64],
    u: &[f64],
    f0: f64,
    lambda1: f64,
    lambda2: f64,
    rho: f64,
) -> Result<EstimatePass> {
    if y.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: u.len(),
        });
    }
    let (na, nb, d) = (model.na(), model.nb(), model.d);
    let mut state = PAAState::initial(na + nb, f0, lambda1, lambda2, rho)?;
    // output history used in the regressor: measured or predicted
    let mut hist: Vec<f64> = Vec::with_capacity(y.len());
    let mut out = EstimatePass {
        thetas: Vec::with_capacity(y.len()),
        a_priori: Vec::with_capacity(y.len()),
        a_posteriori: Vec::with_capacity(y.len()),
        regressor_energy: Vec::with_capacity(y.len()),
        max_trace: state.f.trace(),
        stop: None,
    };
    for t in 0..y.len() {
        let phi = DVector::from_fn(na + nb, |k, _| {
            if k < na {
                t.checked_sub(k + 1).map_or(0.0, |p| -hist[p])
            } else {
                t.checked_sub(d + (k - na) + 1).map_or(0.0, |p| u[p])
            }
        });
        let e0 = y[t] - state.theta.dot(&phi);
        let eps = match state.step(&phi, e0) {
            Ok(eps) => eps,
            Err(Error::Overflow { .. }) => {
                out.stop = Some((t as i64, StopReason::NonFiniteUpdate));
                break;
            }
            Err(Error::GainBreakdown { .. }) => {
                out.stop = Some((t as i64, StopReason::GainBreakdown));
                break;
            }
            Err(e) => return Err(e),
        };
        hist.push(match scheme {
            Scheme::EquationError => y[t],
            Scheme::OutputError => y[t] - eps,
        });
        out.thetas.push(state.theta.iter().copied().collect());
        out.a_priori.push(e0);
        out.a_posteriori.push(eps);
        out.regressor_energy.push(phi.norm_squared());
        out.max_trace = out.max_trace.max(state.f.trace());
    }
    Ok(out)
}

/// Last-quarter energy over third-quarter energy.
fn tail_ratio(energy: &[f64]) -> f64 {
    let n = energy.len();
    if n < 4 {
        return f64::NAN;
    }
    let q3: f64 = energy[n / 2..3 * n / 4].iter().sum();
    let q4: f64 = energy[3 * n / 4..].iter().sum();
    if q3 == 0.0 {
        if q4 == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        q4 / q3
    }
}

/// Largest `n` for which the sample autocorrelation matrix of order `n`
/// has condition number below `1e8`.
pub fn excitation_order(u: &[f64]) -> usize {
    let len = u.len();
    let mut best = 0;
    for n in 1..=EXCITATION_PROBE.min(len) {
        let r: Vec<f64> = (0..n)
            .map(|k| u[k..].iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / len as f64)
            .collect();
        let m = DMatrix::from_fn(n, n, |i, j| r[i.abs_diff(j)]);
        let ev = m.symmetric_eigenvalues();
        let (lo, hi) = (ev.min(), ev.max());
        if hi > 0.0 && lo > hi * 1e-8 {
            best = n;
        } else {
            break;
        }
    }
    best
}

impl IdentRun {
    /// CSV with columns `t, a1.., b1.., error`.
    pub fn trajectory_csv(&self, plant: &PlantModel) -> String {
        let mut out = String::from("t");
        for i in 1..=plant.na() {
            out.push_str(&format!(",a{i}"));
        }
        for j in 1..=plant.nb() {
            out.push_str(&format!(",b{j}"));
        }
        out.push_str(",error\n");
        for (t, (th, err)) in self.trajectory.iter().zip(&self.errors).enumerate() {
            out.push_str(&t.to_string());
            for v in th {
                out.push(',');
                out.push_str(&format_f64(*v));
            }
            out.push(',');
            out.push_str(&format_f64(*err));
            out.push('\n');
        }
        out
    }
}

/// Plant with parameters `theta` in the layout of `like`.
pub fn plant_from_theta(like: &PlantModel, theta: &[f64]) -> PlantModel {
    like.with_theta(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn zero_noise(len: usize) -> Signal {
        Signal::from_scalars(0, &vec![0.0; len])
    }

    #[test]
    fn plant_simulate_examples() {
        let p = PlantModel::new(vec![], vec![1.0], 0).unwrap();
        let u = Signal::from_scalars(0, &[1.0, 2.0, 3.0]);
        assert_eq!(plant_simulate(&p, &u, &zero_noise(3)).unwrap().channel(0), vec![0.0, 1.0, 2.0]);

        let p = PlantModel::new(vec![-1.0], vec![1.0], 0).unwrap();
        let u = Signal::from_scalars(0, &[1.0; 6]);
        assert_eq!(plant_simulate(&p, &u, &zero_noise(6)).unwrap().channel(0), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn plant_simulate_matches_transfer_realization() {
        // y = q⁻¹ B / A u  equals the state-space form of (b1 z + b2) / (z² + a1 z + a2)
        let p = PlantModel::new(vec![-1.5, 0.7], vec![1.0, 0.5], 0).unwrap();
        let u = Signal::from_scalars(0, &white_noise(4, 64));
        let y = plant_simulate(&p, &u, &zero_noise(64)).unwrap();
        let tf = RationalSiso::new(vec![0.0, 1.0, 0.5], vec![1.0, -1.5, 0.7]).unwrap().to_state_space();
        let oracle = tf.simulate(&u, None).unwrap();
        for (a, b) in y.as_slice().iter().zip(oracle.as_slice()) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn plant_simulate_reports_overflow_step() {
        let p = PlantModel::new(vec![-1e200], vec![1e200], 0).unwrap();
        let u = Signal::from_scalars(0, &[1.0; 8]);
        assert!(matches!(plant_simulate(&p, &u, &zero_noise(8)), Err(Error::Overflow { t: 2 })));
    }

    #[test]
    fn zero_regressor_only_inflates_gain() {
        let s = PAAState::initial(2, 3.0, 0.5, 1.0, 1.0).unwrap();
        let (n, eps) = paa_step(&s, &DVector::zeros(2), 0.7).unwrap();
        assert_eq!(eps, 0.7);
        assert_eq!(n.theta, s.theta);
        assert_eq!(n.f, s.f * 2.0);
    }

    #[test]
    fn gradient_limit_keeps_gain_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mut s = PAAState::new(DVector::zeros(2), f0.clone(), 1.0, 0.0, 1.0).unwrap();
        let mut theta = DVector::<f64>::zeros(2);
        for _ in 0..200 {
            let phi = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let e0: f64 = rng.random_range(-1.0..1.0);
            s.step(&phi, e0).unwrap();
            let q = (phi.transpose() * &f0 * &phi)[0];
            theta += &f0 * &phi * (e0 / (1.0 + q));
            assert_eq!(s.f, f0);
        }
        assert!((s.theta - theta).norm() < 1e-12);
    }

    #[test]
    fn inverse_update_identity_and_positivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4;
        let mut s = PAAState::initial(n, 10.0, 0.97, 1.0, 1.0).unwrap();
        for _ in 0..2000 {
            s.lambda1 = rng.random_range(0.95..=1.0);
            s.lambda2 = rng.random_range(0.1..2.0);
            let phi = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let fi = s.f.clone().try_inverse().unwrap();
            let e0: f64 = StandardNormal.sample(&mut rng);
            let q = phi.dot(&(&s.f * &phi));
            let eps = s.step(&phi, e0).unwrap();
            assert!((eps * (1.0 + q) - e0).abs() <= 1e-12 * (1.0 + e0.abs()));
            let expect = fi * s.lambda1 + &phi * phi.transpose() * s.lambda2;
            let got = s.f.clone().try_inverse().unwrap();
            assert!((&got - &expect).norm() / expect.norm() < 1e-8);
            assert!(s.gain_min_eigenvalue() > 1e-12);
        }
    }

    #[test]
    fn state_validation() {
        assert!(PAAState::initial(2, 1.0, 0.0, 1.0, 1.0).is_err());
        assert!(PAAState::initial(2, 1.0, 1.0, 2.0, 1.0).is_err());
        assert!(PAAState::initial(2, 1.0, 1.0, 1.0, 0.9).is_err());
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(PAAState::new(DVector::zeros(2), not_pd, 1.0, 1.0, 1.0).is_err());
    }

    /// θ = (ΦᵀΦ + I/f0)⁻¹ ΦᵀY
    fn regularized_ls(model: &PlantModel, y: &[f64], u: &[f64], f0: f64) -> Vec<f64> {
        let (na, nb, d) = (model.na(), model.nb(), model.d);
        let n = na + nb;
        let mut g = DMatrix::identity(n, n) / f0;
        let mut h = DVector::zeros(n);
        for t in 0..y.len() {
            let phi = DVector::from_fn(n, |k, _| {
                if k < na {
                    if t > k { -y[t - k - 1] } else { 0.0 }
                } else {
                    let lag = d + (k - na) + 1;
                    if t >= lag { u[t - lag] } else { 0.0 }
                }
            });
            g += &phi * phi.transpose();
            h += &phi * y[t];
        }
        g.lu().solve(&h).unwrap().iter().copied().collect()
    }

    #[test]
    fn stable_plant_matches_batch_least_squares() {
        let exp = IdentExperiment {
            plant: PlantModel::new(vec![-0.5], vec![1.0], 0).unwrap(),
            scheme: Scheme::EquationError,
            lambda1: 1.0,
            lambda2: 1.0,
            rho: 1.0,
            steps: 500,
            noise_std: 0.0,
            seed: 3,
            input: None,
            f0: 1e6,
            certify: CertifyOptions::default(),
        };
        let run = run_identification(&exp).unwrap();
        assert!(run.report.final_error < 1e-6);
        assert!(run.report.spr_gate.verdict);
        let u = exp.excitation().unwrap();
        let y = plant_simulate(&exp.plant, &u, &zero_noise(500)).unwrap();
        let oracle = regularized_ls(&exp.plant, y.as_slice(), u.as_slice(), 1e6);
        assert!(euclid(&run.report.theta_final, &oracle) < 1e-8);
        assert!(run.report.excitation_order >= 2);
    }

    #[test]
    fn weighting_equals_shifted_plant() {
        let plant = PlantModel::new(vec![-1.0], vec![0.5, 0.2], 1).unwrap();
        let rho = 1.05;
        let n = 300;
        let u = Signal::from_scalars(0, &white_noise(8, n));
        let y = plant_simulate(&plant, &u, &zero_noise(n)).unwrap();
        let uw: Vec<f64> = (0..n).map(|t| u.as_slice()[t] * rho_pow(rho, -(t as i64))).collect();
        let yw: Vec<f64> = (0..n).map(|t| y.as_slice()[t] * rho_pow(rho, -(t as i64))).collect();
        let shifted = plant.rho_shifted(rho);
        let ys = plant_simulate(&shifted, &Signal::from_scalars(0, &uw), &zero_noise(n)).unwrap();
        for (a, b) in yw.iter().zip(ys.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        let pa = estimate(&plant, Scheme::EquationError, &yw, &uw, 1e4, 1.0, 1.0, rho).unwrap();
        let pb = estimate(&plant, Scheme::EquationError, ys.as_slice(), &uw, 1e4, 1.0, 1.0, rho).unwrap();
        for (a, b) in pa.thetas.iter().zip(&pb.thetas) {
            assert!(euclid(a, b) < 1e-9);
        }
        let back = shifted.unshift_theta(&shifted.theta(), rho);
        assert!(euclid(&back, &plant.theta()) < 1e-12);
        let p0 = plant.poles().unwrap();
        let p1 = shifted.poles().unwrap();
        assert!((p0[0].norm() / p1[0].norm() - rho).abs() < 1e-12);
    }

    #[test]
    fn spr_gate_examples() {
        let opts = CertifyOptions::default();
        let integ = PlantModel::new(vec![-1.0], vec![1.0], 0).unwrap();
        let g = spr_gate(&integ, Scheme::EquationError, 1.0, 1.0, &opts).unwrap();
        assert!(g.verdict && (g.certificate.delta - 0.5).abs() < 1e-12);
        let g = spr_gate(&integ, Scheme::OutputError, 1.0, 1.0, &opts).unwrap();
        assert!(!g.certificate.analytic && !g.verdict);
        // 1/(1 − (ρz)⁻¹) on |z| = 1 has real part ≥ ρ/(ρ+1)
        let rho = 1.1;
        let g = spr_gate(&integ, Scheme::OutputError, rho, 0.1, &opts).unwrap();
        let oracle = (0..=20000)
            .map(|k| {
                let th = std::f64::consts::PI * k as f64 / 20000.0;
                let z = crate::lti::Complex64::from_polar(rho, th);
                (z / (z - 1.0)).re
            })
            .fold(f64::INFINITY, f64::min);
        assert!((g.certificate.delta - (oracle - 0.05)).abs() < 1e-6);
        assert!(g.verdict);
    }

    #[test]
    fn integrator_identification_with_weighting() {
        let exp = IdentExperiment {
            plant: PlantModel::new(vec![-1.0], vec![1.0], 0).unwrap(),
            scheme: Scheme::EquationError,
            lambda1: 1.0,
            lambda2: 1.0,
            rho: 1.05,
            steps: 1000,
            noise_std: 0.0,
            seed: 21,
            input: None,
            f0: 1e6,
            certify: CertifyOptions::default(),
        };
        let run = run_identification(&exp).unwrap();
        assert!(run.report.final_error < 1e-3, "{}", run.report.final_error);
        assert!(run.report.regressor_tail_ratio < 1.0);
        let unweighted = run_identification(&IdentExperiment { rho: 1.0, ..exp }).unwrap();
        assert!(unweighted.report.regressor_tail_ratio > 1.0);
    }

    #[test]
    fn overflow_gives_partial_run() {
        let exp = IdentExperiment {
            plant: PlantModel::new(vec![-1.5], vec![1.0], 0).unwrap(),
            scheme: Scheme::EquationError,
            lambda1: 1.0,
            lambda2: 1.0,
            rho: 1.0,
            steps: 4000,
            noise_std: 0.0,
            seed: 1,
            input: None,
            f0: 1e6,
            certify: CertifyOptions::default(),
        };
        let run = run_identification(&exp).unwrap();
        assert!(run.report.overflow);
        assert_eq!(run.trajectory.len(), run.report.steps_completed);
        assert_eq!(Some(run.report.steps_completed as i64), run.report.overflow_step);
        assert!(run.report.steps_completed < 4000);
    }

    #[test]
    fn experiment_json() {
        let text = r#"{"plant": {"a": [-0.5], "b": [1.0]}, "scheme": "equation_error", "steps": 100}"#;
        let e = IdentExperiment::from_json(text).unwrap();
        assert_eq!((e.lambda1, e.lambda2, e.rho, e.f0), (1.0, 1.0, 1.0, 1e6));
        assert!(IdentExperiment::from_json(r#"{"plant": {"a": [], "b": []}, "scheme": "equation_error", "steps": 1}"#).is_err());
        assert!(IdentExperiment::from_json(r#"{"plant": {"a": [1], "b": []}, "scheme": "equation_error", "steps": 0}"#).is_err());
    }
}
