//! Frequency-domain certificates for exponentially weighted stability and
//! passivity.
//!
//! Everything here evaluates a transfer matrix on a circle `|z| = r` over
//! `θ ∈ [0, π]` (real-coefficient systems are conjugate-symmetric, so the
//! lower half circle adds nothing). A uniform grid seeds the search and one
//! golden-section pass refines the extremum around the best grid point.
//!
//! Circles used:
//! - forward block `ρ⁻¹∘H∘ρ` has transfer `ĥ(ρz)`, so it is evaluated on
//!   `|z| = ρ` and is analytic outside the unit circle iff every pole has
//!   modulus `< ρ`;
//! - feedback block `ρ∘H∘ρ⁻¹` has transfer `ĥ(z/ρ)`, evaluated on
//!   `|z| = 1/ρ` with the pole gate `< 1/ρ`.
//!
//! Poles exactly on the circle are rejected (the analytic region is open).

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lti::{Complex64, StateSpaceSystem};
use crate::signals::check_rho;

/// Relative margin below which a pole counts as lying on the test circle.
const ON_CIRCLE_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyOptions {
    /// Uniform θ grid size on `[0, π]` (endpoints included).
    pub grid: usize,
    /// Golden-section iterations around the grid extremum.
    pub refine_iters: usize,
    /// `delta > strict_tol` stands in for `delta > 0`.
    pub strict_tol: f64,
    /// Bisection tolerance for the output index.
    pub bisection_tol: f64,
    /// Output-index bracket is `[−cap, cap]`.
    pub delta_cap: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            grid: 512,
            refine_iters: 40,
            strict_tol: 1e-9,
            bisection_tol: 1e-9,
            delta_cap: 1e6,
        }
    }
}

impl CertifyOptions {
    pub fn with_grid(grid: usize) -> Self {
        Self {
            grid,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grid < 64 {
            return Err(Error::InvalidArgument(format!(
                "frequency grid needs at least 64 points, got {}",
                self.grid
            )));
        }
        if !(self.strict_tol >= 0.0 && self.bisection_tol > 0.0 && self.delta_cap > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMethod {
    FrequencySweep,
    Empirical,
    /// Known analytically (sector or bound declaration).
    Declared,
}

/// A gain bound `‖Hx‖_T ≤ gamma·‖x‖_T + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    #[serde(with = "crate::json_float")]
    pub gamma: f64,
    pub beta: f64,
    /// The `beta = 0` bound applies.
    pub zero_bias: bool,
    pub method: GainMethod,
}

impl GainEstimate {
    pub fn zero_bias(gamma: f64, method: GainMethod) -> Self {
        Self {
            gamma,
            beta: 0.0,
            zero_bias: true,
            method,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gamma.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassivityKind {
    /// `⟨x, Hx⟩_T ≥ δ ‖x‖²_T`
    InputIndex,
    /// `⟨x, Hx⟩_T ≥ δ ‖Hx‖²_T`
    OutputIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassivityCertificate {
    pub rho: f64,
    pub kind: PassivityKind,
    /// Undefined (`NaN`, `null` in JSON) when `analytic` is false.
    #[serde(with = "crate::json_float")]
    pub delta: f64,
    pub beta_prime: f64,
    pub analytic: bool,
    pub grid_points: usize,
    pub theta_star: f64,
    pub strict_tol: f64,
}

impl PassivityCertificate {
    fn uncertified(rho: f64, kind: PassivityKind, opts: &CertifyOptions) -> Self {
        Self {
            rho,
            kind,
            delta: f64::NAN,
            beta_prime: 0.0,
            analytic: false,
            grid_points: opts.grid,
            theta_star: 0.0,
            strict_tol: opts.strict_tol,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: PassivityCertificate = serde_json::from_str(text)?;
        let finite = [c.rho, c.beta_prime, c.theta_star, c.strict_tol];
        if finite.iter().any(|v| !v.is_finite()) || !(c.rho > 0.0) {
            return Err(Error::Parse("certificate fields must be finite, rho > 0".into()));
        }
        if c.analytic && c.delta.is_nan() {
            return Err(Error::Parse("analytic certificate without delta".into()));
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("certificate serializes")
    }

    /// Analytic with `delta > strict_tol`.
    pub fn is_strict(&self) -> bool {
        self.analytic && self.delta > self.strict_tol
    }

    /// Analytic with `delta ≥ 0` (up to `strict_tol`).
    pub fn is_passive(&self) -> bool {
        self.analytic && self.delta >= -self.strict_tol
    }
}

fn analytic_outside(sys: &StateSpaceSystem, radius: f64) -> Result<bool> {
    let r = sys.spectral_radius()?;
    Ok(r < radius * (1.0 - ON_CIRCLE_MARGIN))
}

fn eval_on_circle(sys: &StateSpaceSystem, radius: f64, theta: f64) -> Result<DMatrix<Complex64>> {
    sys.transfer_eval(Complex::from_polar(radius, theta))
}

fn sigma_max(m: &DMatrix<Complex64>) -> f64 {
    if m.len() == 1 {
        return m[(0, 0)].norm();
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of the Hermitian part `(M + M*)/2`.
fn lambda_min_hermitian(m: &DMatrix<Complex64>) -> f64 {
    if m.len() == 1 {
        return m[(0, 0)].re;
    }
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    h.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn theta_grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| PI * k as f64 / (n - 1) as f64)
}

/// Golden-section minimization of a unimodal-near-minimum function on `[a, b]`.
fn golden_min<F: FnMut(f64) -> Result<f64>>(mut f: F, mut a: f64, mut b: f64, iters: usize) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

/// Minimize `f` over `[0, π]`: grid seed plus golden-section refinement.
/// Returns `(min value, argmin)`.
fn sweep_min<F: FnMut(f64) -> Result<f64>>(mut f: F, opts: &CertifyOptions) -> Result<(f64, f64)> {
    let n = opts.grid;
    let mut best = (f64::INFINITY, 0.0);
    let mut best_k = 0;
    for (k, theta) in theta_grid(n).enumerate() {
        let v = f(theta)?;
        if v < best.0 {
            best = (v, theta);
            best_k = k;
        }
    }
    let step = PI / (n - 1) as f64;
    let lo = (best_k as f64 - 1.0).max(0.0) * step;
    let hi = ((best_k + 1) as f64 * step).min(PI);
    let (theta, v) = golden_min(&mut f, lo, hi, opts.refine_iters)?;
    if v < best.0 {
        best = (v, theta);
    }
    Ok(best)
}

fn gain_on_circle(sys: &StateSpaceSystem, radius: f64, opts: &CertifyOptions) -> Result<GainEstimate> {
    opts.validate()?;
    if !analytic_outside(sys, radius)? {
        return Ok(GainEstimate::zero_bias(f64::INFINITY, GainMethod::FrequencySweep));
    }
    if sys.n_states() == 0 {
        let g = sigma_max(&sys.d().map(Complex64::from));
        return Ok(GainEstimate::zero_bias(g, GainMethod::FrequencySweep));
    }
    let (neg, _) = sweep_min(|th| Ok(-sigma_max(&eval_on_circle(sys, radius, th)?)), opts)?;
    Ok(GainEstimate::zero_bias(-neg, GainMethod::FrequencySweep))
}

/// `γ⁰(ρ⁻¹∘H∘ρ)`: the peak singular value of `ĥ` on `|z| = ρ`, or `+∞` if a
/// pole lies on or outside that circle.
pub fn rho_gain(sys: &StateSpaceSystem, rho: f64, opts: &CertifyOptions) -> Result<GainEstimate> {
    check_rho(rho)?;
    gain_on_circle(sys, rho, opts)
}

/// `γ⁰(ρ∘H∘ρ⁻¹)`, the gain of a block sitting in the feedback path.
pub fn feedback_gain(sys: &StateSpaceSystem, rho: f64, opts: &CertifyOptions) -> Result<GainEstimate> {
    check_rho(rho)?;
    gain_on_circle(sys, 1.0 / rho, opts)
}

fn input_index_on_circle(
    sys: &StateSpaceSystem,
    rho: f64,
    radius: f64,
    opts: &CertifyOptions,
) -> Result<PassivityCertificate> {
    opts.validate()?;
    if !sys.is_square() {
        return Err(Error::InvalidArgument(
            "passivity indices need a square transfer matrix".into(),
        ));
    }
    let kind = PassivityKind::InputIndex;
    if !analytic_outside(sys, radius)? {
        return Ok(PassivityCertificate::uncertified(rho, kind, opts));
    }
    let (delta, theta_star) = if sys.n_states() == 0 {
        (lambda_min_hermitian(&sys.d().map(Complex64::from)), 0.0)
    } else {
        sweep_min(|th| Ok(lambda_min_hermitian(&eval_on_circle(sys, radius, th)?)), opts)?
    };
    Ok(PassivityCertificate {
        rho,
        kind,
        delta,
        beta_prime: 0.0,
        analytic: true,
        grid_points: opts.grid,
        theta_star,
        strict_tol: opts.strict_tol,
    })
}

/// Input passivity index of `ρ⁻¹∘H∘ρ`: `min_θ λ_min((M + M*)/2)` with
/// `M = ĥ(ρe^{iθ})`.
pub fn rho_passivity_index(
    sys: &StateSpaceSystem,
    rho: f64,
    opts: &CertifyOptions,
) -> Result<PassivityCertificate> {
    check_rho(rho)?;
    input_index_on_circle(sys, rho, rho, opts)
}

/// Input passivity index of the feedback block `ρ∘H∘ρ⁻¹` (circle `1/ρ`).
/// `delta ≥ 0` certifies `⟨x, ρ∘H∘ρ⁻¹∘x⟩_T ≥ 0`.
pub fn feedback_passivity_index(
    sys: &StateSpaceSystem,
    rho: f64,
    opts: &CertifyOptions,
) -> Result<PassivityCertificate> {
    check_rho(rho)?;
    input_index_on_circle(sys, rho, 1.0 / rho, opts)
}

/// Output passivity index of the feedback block `ρ∘H∘ρ⁻¹`: the largest `δ`
/// with `Herm(M) − δ M*M ⪰ 0` at every grid angle, `M = ĥ(e^{iθ}/ρ)`.
/// Found by bisection on `[−cap, cap]`; the cap is returned when the
/// condition holds (or fails) across the whole bracket.
pub fn output_passivity_index(
    sys: &StateSpaceSystem,
    rho: f64,
    opts: &CertifyOptions,
) -> Result<PassivityCertificate> {
    check_rho(rho)?;
    opts.validate()?;
    if !sys.is_square() {
        return Err(Error::InvalidArgument(
            "passivity indices need a square transfer matrix".into(),
        ));
    }
    let kind = PassivityKind::OutputIndex;
    let radius = 1.0 / rho;
    if !analytic_outside(sys, radius)? {
        return Ok(PassivityCertificate::uncertified(rho, kind, opts));
    }
    let samples: Vec<(f64, DMatrix<Complex64>, DMatrix<Complex64>)> = if sys.n_states() == 0 {
        let m = sys.d().map(Complex64::from);
        vec![(0.0, herm(&m), m.adjoint() * &m)]
    } else {
        theta_grid(opts.grid)
            .map(|th| {
                let m = eval_on_circle(sys, radius, th)?;
                Ok((th, herm(&m), m.adjoint() * &m))
            })
            .collect::<Result<_>>()?
    };
    let margin = |delta: f64| -> (f64, f64) {
        samples
            .iter()
            .map(|(th, h, g)| {
                let scale = 1.0 + h.norm() + delta.abs() * g.norm();
                let lam = (h - g * Complex64::new(delta, 0.0))
                    .symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                (lam / scale, *th)
            })
            .fold((f64::INFINITY, 0.0), |acc, v| if v.0 < acc.0 { v } else { acc })
    };
    let feasible = |delta: f64| margin(delta).0 >= -1e-13;
    let cap = opts.delta_cap;
    let delta = if feasible(cap) {
        cap
    } else if !feasible(-cap) {
        -cap
    } else {
        let (mut lo, mut hi) = (-cap, cap);
        while hi - lo > opts.bisection_tol {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    Ok(PassivityCertificate {
        rho,
        kind,
        delta,
        beta_prime: 0.0,
        analytic: true,
        grid_points: opts.grid,
        theta_star: margin(delta).1,
        strict_tol: opts.strict_tol,
    })
}

fn herm(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Whether `ĥ(ρz) − offset·I` is strictly positive real.
pub fn spr_check(
    sys: &StateSpaceSystem,
    rho: f64,
    offset: f64,
    opts: &CertifyOptions,
) -> Result<(bool, PassivityCertificate)> {
    if !(offset >= 0.0 && offset.is_finite()) {
        return Err(Error::InvalidArgument(format!("SPR offset must be ≥ 0, got {offset}")));
    }
    let shifted = sys.with_feedthrough_shift(-offset)?;
    let cert = rho_passivity_index(&shifted, rho, opts)?;
    Ok((cert.is_strict(), cert))
}

/// Realization of the scattering operator `S = (H − I)(I + H)⁻¹`.
///
/// With `E = (I + D)⁻¹`: `A_S = A − B E C`, `B_S = B E`, `C_S = 2 E C`,
/// `D_S = (D − I) E`.
pub fn cayley(sys: &StateSpaceSystem) -> Result<StateSpaceSystem> {
    if !sys.is_square() {
        return Err(Error::InvalidArgument("Cayley transform needs a square system".into()));
    }
    let n = sys.n_inputs();
    let id = DMatrix::<f64>::identity(n, n);
    let i_plus_d = &id + sys.d();
    let lu = i_plus_d.clone().lu();
    let scale = i_plus_d.amax().max(1.0);
    let min_pivot = lu.u().diagonal().amin();
    if !(min_pivot > 1e-14 * scale) {
        return Err(Error::SingularFeedthrough);
    }
    let e = lu.try_inverse().ok_or(Error::SingularFeedthrough)?;
    let be = sys.b() * &e;
    StateSpaceSystem::new(
        sys.a() - &be * sys.c(),
        be,
        &e * sys.c() * 2.0,
        (sys.d() - &id) * &e,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallGainVerdict {
    FiniteGain,
    SStable,
    Inconclusive,
}

/// Small-gain verdict for a loop whose weighted blocks have gains `g1`, `g2`.
pub fn small_gain_product(g1: &GainEstimate, g2: &GainEstimate) -> SmallGainVerdict {
    let product = g1.gamma * g2.gamma;
    let small = g1.is_finite() && g2.is_finite() && product < 1.0;
    if small && g1.zero_bias && g2.zero_bias {
        SmallGainVerdict::SStable
    } else if small {
        SmallGainVerdict::FiniteGain
    } else {
        SmallGainVerdict::Inconclusive
    }
}

/// Certificate for a memoryless map in sector `[0, k]` (`k = ∞` allowed).
///
/// `ρ∘N∘ρ⁻¹` maps `x(t)` to `ρᵗ φ(ρ⁻ᵗ x(t))`, which stays in the same sector
/// for every `ρ`: passive with input index 0, output index `1/k`.
pub fn sector_certificate(
    rho: f64,
    upper: f64,
    kind: PassivityKind,
    opts: &CertifyOptions,
) -> Result<PassivityCertificate> {
    check_rho(rho)?;
    if !(upper >= 0.0) {
        return Err(Error::InvalidArgument(format!("sector bound must be ≥ 0, got {upper}")));
    }
    let delta = match kind {
        PassivityKind::InputIndex => 0.0,
        PassivityKind::OutputIndex => (1.0 / upper).min(opts.delta_cap),
    };
    Ok(PassivityCertificate {
        rho,
        kind,
        delta,
        beta_prime: 0.0,
        analytic: true,
        grid_points: opts.grid,
        theta_star: 0.0,
        strict_tol: opts.strict_tol,
    })
}
