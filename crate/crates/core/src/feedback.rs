//! Weighted feedback interconnection.
//!
//! The loop is
//!
//! ```text
//! e1 = u1 − y2,   y2 = ρ∘H2∘ρ⁻¹ e2
//! e2 = u2 + y1,   y1 = ρ⁻¹∘H1∘ρ e1
//! ```
//!
//! and is solved forward in time. LTI blocks are realized through their
//! `ρ`-shifted state-space forms (time invariant, no growing intermediates);
//! memoryless nonlinearities are conjugated explicitly, `ρᵗ φ(ρ⁻ᵗ ·)` on the
//! feedback side and `ρ⁻ᵗ φ(ρᵗ ·)` on the forward side.
//!
//! Well-posedness is decided once at construction:
//! - a strictly causal LTI block breaks the algebraic loop outright;
//! - two affine feedthroughs need `I + D2 D1` invertible at every step;
//! - one static nonlinearity against an affine feedthrough with a diagonal,
//!   nonnegative `D` gives a scalar monotone equation per channel, solved by
//!   bisection;
//! - anything else (two nonlinear feedthroughs, coupled `D`) is rejected.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::certify::{
    self, CertifyOptions, GainEstimate, GainMethod, PassivityCertificate, PassivityKind,
    SmallGainVerdict,
};
use crate::error::{Error, Result};
use crate::generators::InputSpec;
use crate::lti::{RationalSiso, SsBlock, StateSpaceSystem, Stepper, SystemFile};
use crate::signals::{check_rho, format_f64, rho_pow, Horizon, Signal};

/// Interconnection residual allowed in a solved trace.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// Memoryless scalar maps, applied channel by channel. Every map is
/// nondecreasing with `φ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case", deny_unknown_fields)]
pub enum StaticMap {
    /// `k σ`, sector `[0, k]`.
    Linear { gain: f64 },
    /// `clamp(σ, −L, L)`, sector `[0, 1]`.
    Saturation { level: f64 },
    /// Zero on `[−w, w]`, slope 1 outside; sector `[0, 1]`.
    DeadZone { width: f64 },
    /// `k tanh(σ)`, sector `[0, k]`.
    Tanh { gain: f64 },
    /// `c σ³`, sector `[0, ∞)`.
    Cubic { coef: f64 },
}

impl StaticMap {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            StaticMap::Linear { gain } => gain * s,
            StaticMap::Saturation { level } => s.clamp(-level, level),
            StaticMap::DeadZone { width } => {
                if s > width {
                    s - width
                } else if s < -width {
                    s + width
                } else {
                    0.0
                }
            }
            StaticMap::Tanh { gain } => gain * s.tanh(),
            StaticMap::Cubic { coef } => coef * s * s * s,
        }
    }

    /// Declared sector upper bound `k` (`∞` for cubic).
    pub fn sector_upper(&self) -> f64 {
        match *self {
            StaticMap::Linear { gain } | StaticMap::Tanh { gain } => gain,
            StaticMap::Saturation { .. } | StaticMap::DeadZone { .. } => 1.0,
            StaticMap::Cubic { .. } => f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            StaticMap::Linear { gain } | StaticMap::Tanh { gain } => ("gain", gain),
            StaticMap::Saturation { level } => ("level", level),
            StaticMap::DeadZone { width } => ("width", width),
            StaticMap::Cubic { coef } => ("coef", coef),
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{name} must be finite and ≥ 0, got {v}")))
        }
    }
}

/// One block of the loop.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorBox {
    Lti(StateSpaceSystem),
    /// Elementwise memoryless map.
    Static(StaticMap),
    /// `y(t) = g(t) x(t)`; `gains[k]` applies at `t = k`, the last value is
    /// held afterwards and the first before.
    TimeVaryingGain {
        gains: Vec<f64>,
        lower: f64,
        upper: f64,
    },
}

impl OperatorBox {
    pub fn time_varying(gains: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::Empty("time-varying gain sequence"));
        }
        if !(lower <= upper) || gains.iter().any(|g| !(lower..=upper).contains(g)) {
            return Err(Error::SectorViolation(format!(
                "gain sequence leaves its declared bounds [{lower}, {upper}]"
            )));
        }
        Ok(OperatorBox::TimeVaryingGain { gains, lower, upper })
    }

    fn lti(&self) -> Option<&StateSpaceSystem> {
        match self {
            OperatorBox::Lti(s) => Some(s),
            _ => None,
        }
    }

    fn gain_at(gains: &[f64], t: i64) -> f64 {
        let k = t.clamp(0, gains.len() as i64 - 1) as usize;
        gains[k]
    }
}

/// Which multiplier pair surrounds a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    /// `ρ⁻¹∘H∘ρ`
    Forward,
    /// `ρ∘H∘ρ⁻¹`
    Feedback,
}

/// How the per-step algebraic loop is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Posedness {
    /// `H1` has no feedthrough.
    ForwardStrictlyCausal,
    /// `H2` has no feedthrough.
    FeedbackStrictlyCausal,
    /// Both feedthroughs affine: solve `(I + D2 D1) e1 = r`.
    LinearSolve,
    /// One static nonlinearity against a diagonal nonnegative feedthrough.
    MonotoneScalar,
}

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    h1: OperatorBox,
    h2: OperatorBox,
    rho: f64,
    dim: usize,
    // LTI blocks after the ρ-shift
    w1: Option<StateSpaceSystem>,
    w2: Option<StateSpaceSystem>,
    posedness: Posedness,
}

impl ClosedLoop {
    /// Build the weighted loop; fails with [`Error::IllPosed`] when the
    /// algebraic loop cannot be resolved forward in time.
    pub fn new(h1: OperatorBox, h2: OperatorBox, rho: f64) -> Result<Self> {
        Self::with_dim(h1, h2, rho, None)
    }

    /// Like [`ClosedLoop::new`], with an explicit channel count for loops
    /// that contain no LTI block.
    pub fn with_dim(h1: OperatorBox, h2: OperatorBox, rho: f64, dim: Option<usize>) -> Result<Self> {
        check_rho(rho)?;
        let mut dims = Vec::new();
        for b in [&h1, &h2] {
            match b {
                OperatorBox::Lti(s) => {
                    if !s.is_square() {
                        return Err(Error::InvalidArgument(
                            "loop blocks must map n channels to n channels".into(),
                        ));
                    }
                    dims.push(s.n_inputs());
                }
                OperatorBox::Static(m) => m.validate()?,
                OperatorBox::TimeVaryingGain { gains, lower, upper } => {
                    OperatorBox::time_varying(gains.clone(), *lower, *upper)?;
                }
            }
        }
        if let Some(d) = dim {
            dims.push(d);
        }
        let dim = dims.first().copied().unwrap_or(1);
        if dim == 0 || dims.iter().any(|d| *d != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: dims.into_iter().find(|d| *d != dim).unwrap_or(0),
            });
        }
        let w1 = h1.lti().map(|s| s.rho_shift(rho)).transpose()?;
        let w2 = h2.lti().map(|s| s.rho_shift(1.0 / rho)).transpose()?;
        let posedness = decide_posedness(&h1, &h2, dim)?;
        Ok(Self {
            h1,
            h2,
            rho,
            dim,
            w1,
            w2,
            posedness,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn h1(&self) -> &OperatorBox {
        &self.h1
    }
    pub fn h2(&self) -> &OperatorBox {
        &self.h2
    }
    pub fn posedness(&self) -> Posedness {
        self.posedness
    }

    /// Solve the loop on `t0..=horizon`, `t0` the earliest input start.
    pub fn solve(&self, u1: &Signal, u2: &Signal, horizon: Horizon) -> Result<LoopTrace> {
        for u in [u1, u2] {
            if u.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: u.dim(),
                });
            }
        }
        let t0 = u1.start().min(u2.start());
        let n = self.dim;
        let steps = if horizon >= t0 { (horizon - t0 + 1) as usize } else { 0 };
        if steps > crate::signals::MAX_SAMPLES {
            return Err(Error::InvalidArgument("simulation horizon too long".into()));
        }
        let mut s1 = self.w1.as_ref().map(|s| Stepper::new(s, None)).transpose()?;
        let mut s2 = self.w2.as_ref().map(|s| Stepper::new(s, None)).transpose()?;
        let mut buf: [Vec<f64>; 6] = Default::default();
        for b in buf.iter_mut() {
            b.reserve(steps * n);
        }
        for k in 0..steps {
            let t = t0 + k as i64;
            let u1t = sample(u1, t, n);
            let u2t = sample(u2, t, n);
            let f1 = self.feedthrough(Side::Forward, s1.as_ref(), t)?;
            let f2 = self.feedthrough(Side::Feedback, s2.as_ref(), t)?;
            let (e1, e2, y1, y2) = self.resolve(t, &u1t, &u2t, &f1, &f2)?;
            for (v, slot) in [&u1t, &u2t, &e1, &e2, &y1, &y2].into_iter().zip(buf.iter_mut()) {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Overflow { t });
                }
                slot.extend(v.iter());
            }
            if let Some(s) = s1.as_mut() {
                s.advance(&e1);
            }
            if let Some(s) = s2.as_mut() {
                s.advance(&e2);
            }
        }
        let [u1b, u2b, e1b, e2b, y1b, y2b] = buf;
        Ok(LoopTrace {
            u1: Signal::new(t0, n, u1b)?,
            u2: Signal::new(t0, n, u2b)?,
            e1: Signal::new(t0, n, e1b)?,
            e2: Signal::new(t0, n, e2b)?,
            y1: Signal::new(t0, n, y1b)?,
            y2: Signal::new(t0, n, y2b)?,
        })
    }

    fn feedthrough(&self, side: Side, stepper: Option<&Stepper>, t: i64) -> Result<Feedthrough> {
        let block = match side {
            Side::Forward => &self.h1,
            Side::Feedback => &self.h2,
        };
        let n = self.dim;
        Ok(match block {
            OperatorBox::Lti(_) => {
                let s = stepper.expect("LTI block has a stepper");
                Feedthrough::Affine {
                    free: s.free_output(),
                    d: s_d(side, self).clone(),
                }
            }
            OperatorBox::TimeVaryingGain { gains, .. } => Feedthrough::Affine {
                free: DVector::zeros(n),
                d: DMatrix::identity(n, n) * OperatorBox::gain_at(gains, t),
            },
            OperatorBox::Static(map) => {
                // forward: ρ⁻ᵗ φ(ρᵗ e); feedback: ρᵗ φ(ρ⁻ᵗ e)
                let scale = match side {
                    Side::Forward => rho_pow(self.rho, -t),
                    Side::Feedback => rho_pow(self.rho, t),
                };
                if !scale.is_finite() || scale == 0.0 {
                    return Err(Error::Overflow { t });
                }
                Feedthrough::Nonlinear { map: *map, scale }
            }
        })
    }

    fn resolve(
        &self,
        t: i64,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
        f1: &Feedthrough,
        f2: &Feedthrough,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
        let n = self.dim;
        match (f1, f2) {
            (Feedthrough::Affine { free, d }, _) if is_zero(d) => {
                let y1 = free.clone();
                let e2 = u2 + &y1;
                let y2 = f2.apply(&e2, t)?;
                let e1 = u1 - &y2;
                Ok((e1, e2, y1, y2))
            }
            (_, Feedthrough::Affine { free, d }) if is_zero(d) => {
                let y2 = free.clone();
                let e1 = u1 - &y2;
                let y1 = f1.apply(&e1, t)?;
                let e2 = u2 + &y1;
                Ok((e1, e2, y1, y2))
            }
            (
                Feedthrough::Affine { free: c1, d: d1 },
                Feedthrough::Affine { free: c2, d: d2 },
            ) => {
                let m = DMatrix::identity(n, n) + d2 * d1;
                let rhs = u1 - c2 - d2 * (u2 + c1);
                let e1 = solve_linear(m, rhs).ok_or_else(|| {
                    Error::IllPosed(format!("I + D2·D1 is singular at t = {t}"))
                })?;
                let y1 = c1 + d1 * &e1;
                let e2 = u2 + &y1;
                let y2 = c2 + d2 * &e2;
                Ok((e1, e2, y1, y2))
            }
            (Feedthrough::Nonlinear { .. }, Feedthrough::Affine { free: c2, d: d2 }) => {
                // e1 + D2 ψ1(e1) = u1 − c2 − D2 u2
                let rhs = u1 - c2 - d2 * u2;
                let e1 = DVector::from_fn(n, |i, _| {
                    solve_monotone(|v| f1.apply_scalar(v), d2[(i, i)], rhs[i])
                });
                let y1 = f1.apply(&e1, t)?;
                let e2 = u2 + &y1;
                let y2 = c2 + d2 * &e2;
                Ok((e1, e2, y1, y2))
            }
            (Feedthrough::Affine { free: c1, d: d1 }, Feedthrough::Nonlinear { .. }) => {
                // e2 + D1 ψ2(e2) = u2 + c1 + D1 u1
                let rhs = u2 + c1 + d1 * u1;
                let e2 = DVector::from_fn(n, |i, _| {
                    solve_monotone(|v| f2.apply_scalar(v), d1[(i, i)], rhs[i])
                });
                let y2 = f2.apply(&e2, t)?;
                let e1 = u1 - &y2;
                let y1 = c1 + d1 * &e1;
                Ok((e1, e2, y1, y2))
            }
            (Feedthrough::Nonlinear { .. }, Feedthrough::Nonlinear { .. }) => Err(
                Error::IllPosed("nonlinear feedthrough on both blocks".into()),
            ),
        }
    }
}

fn s_d(side: Side, lp: &ClosedLoop) -> &DMatrix<f64> {
    match side {
        Side::Forward => lp.w1.as_ref().expect("forward LTI").d(),
        Side::Feedback => lp.w2.as_ref().expect("feedback LTI").d(),
    }
}

fn sample(u: &Signal, t: i64, n: usize) -> DVector<f64> {
    match u.at(t) {
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(n),
    }
}

fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| *v == 0.0)
}

fn solve_linear(m: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let scale = m.amax().max(1.0);
    let lu = m.lu();
    if !(lu.u().diagonal().amin() > 1e-14 * scale) {
        return None;
    }
    lu.solve(&rhs)
}

/// Root of `v + d·ψ(v) = r` for nondecreasing `ψ` with `sign ψ(v) = sign v`
/// and `d ≥ 0`; the root lies between 0 and `r`.
fn solve_monotone<F: Fn(f64) -> f64>(psi: F, d: f64, r: f64) -> f64 {
    if d == 0.0 {
        return r;
    }
    let g = |v: f64| v + d * psi(v) - r;
    let (mut lo, mut hi) = if r >= 0.0 { (0.0, r) } else { (r, 0.0) };
    for _ in 0..2100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if g(lo).abs() <= g(hi).abs() {
        lo
    } else {
        hi
    }
}

fn decide_posedness(h1: &OperatorBox, h2: &OperatorBox, n: usize) -> Result<Posedness> {
    let strictly_causal = |b: &OperatorBox| matches!(b, OperatorBox::Lti(s) if s.is_strictly_causal());
    if strictly_causal(h1) {
        return Ok(Posedness::ForwardStrictlyCausal);
    }
    if strictly_causal(h2) {
        return Ok(Posedness::FeedbackStrictlyCausal);
    }
    let affine_d = |b: &OperatorBox| -> Option<Vec<DMatrix<f64>>> {
        match b {
            OperatorBox::Lti(s) => Some(vec![s.d().clone()]),
            OperatorBox::TimeVaryingGain { lower, upper, .. } => Some(vec![
                DMatrix::identity(n, n) * *lower,
                DMatrix::identity(n, n) * *upper,
            ]),
            OperatorBox::Static(_) => None,
        }
    };
    match (affine_d(h1), affine_d(h2)) {
        (Some(d1s), Some(d2s)) => {
            for d1 in &d1s {
                for d2 in &d2s {
                    let m = DMatrix::identity(n, n) + d2 * d1;
                    if solve_linear(m, DVector::zeros(n)).is_none() {
                        return Err(Error::IllPosed("I + D2·D1 is singular".into()));
                    }
                }
            }
            // time-varying gains are re-checked at every step
            Ok(Posedness::LinearSolve)
        }
        (None, None) => Err(Error::IllPosed("nonlinear feedthrough on both blocks".into())),
        (Some(ds), None) | (None, Some(ds)) => {
            let diagonal_nonneg = ds.iter().all(|d| {
                (0..n).all(|i| (0..n).all(|j| if i == j { d[(i, j)] >= 0.0 } else { d[(i, j)] == 0.0 }))
            });
            if diagonal_nonneg {
                Ok(Posedness::MonotoneScalar)
            } else {
                Err(Error::IllPosed(
                    "static nonlinearity against a coupled or negative feedthrough".into(),
                ))
            }
        }
    }
}

enum Feedthrough {
    Affine {
        free: DVector<f64>,
        d: DMatrix<f64>,
    },
    /// `v ↦ scale · φ(v / scale)`
    Nonlinear { map: StaticMap, scale: f64 },
}

impl Feedthrough {
    fn apply_scalar(&self, v: f64) -> f64 {
        match self {
            Feedthrough::Nonlinear { map, scale } => scale * map.eval(v / scale),
            Feedthrough::Affine { .. } => unreachable!("scalar apply on nonlinear blocks only"),
        }
    }

    fn apply(&self, v: &DVector<f64>, t: i64) -> Result<DVector<f64>> {
        match self {
            Feedthrough::Affine { free, d } => Ok(free + d * v),
            Feedthrough::Nonlinear { map, .. } => {
                let k = map.sector_upper();
                let out = v.map(|x| self.apply_scalar(x));
                for (x, y) in v.iter().zip(out.iter()) {
                    let inside = x * y >= 0.0 && (k.is_infinite() || y.abs() <= k * x.abs() * (1.0 + 1e-12));
                    if !inside {
                        return Err(Error::SectorViolation(format!(
                            "{map:?} left its sector at t = {t}"
                        )));
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Solved loop signals on a common window.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTrace {
    pub u1: Signal,
    pub u2: Signal,
    pub e1: Signal,
    pub e2: Signal,
    pub y1: Signal,
    pub y2: Signal,
}

/// Loop signal selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    U1,
    U2,
    E1,
    E2,
    Y1,
    Y2,
}

impl LoopTrace {
    pub fn port(&self, p: Port) -> &Signal {
        match p {
            Port::U1 => &self.u1,
            Port::U2 => &self.u2,
            Port::E1 => &self.e1,
            Port::E2 => &self.e2,
            Port::Y1 => &self.y1,
            Port::Y2 => &self.y2,
        }
    }

    pub fn start(&self) -> i64 {
        self.e1.start()
    }

    pub fn end(&self) -> Option<i64> {
        self.e1.end()
    }

    /// `sqrt(Σ ‖p‖²_T)` over the selected ports.
    pub fn joint_norm(&self, ports: &[Port], horizon: Horizon) -> f64 {
        ports
            .iter()
            .map(|p| self.port(*p).norm(horizon).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest of `|e1 − (u1 − y2)|` and `|e2 − (u2 + y1)|` over the window.
    pub fn max_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let zipped = self
            .e1
            .as_slice()
            .iter()
            .zip(self.u1.as_slice())
            .zip(self.y2.as_slice())
            .zip(self.e2.as_slice().iter().zip(self.u2.as_slice()).zip(self.y1.as_slice()));
        for (((e1, u1), y2), ((e2, u2), y1)) in zipped {
            worst = worst.max((e1 - (u1 - y2)).abs()).max((e2 - (u2 + y1)).abs());
        }
        worst
    }

    /// `‖(e1, e2, y1, y2)‖_T / (‖(u1, u2)‖_T + 1)` for every `T` in the window.
    pub fn boundedness_profile(&self) -> Vec<f64> {
        let out: Vec<Vec<f64>> = [&self.e1, &self.e2, &self.y1, &self.y2]
            .iter()
            .map(|s| s.cumulative_energy())
            .collect();
        let inp: Vec<Vec<f64>> = [&self.u1, &self.u2].iter().map(|s| s.cumulative_energy()).collect();
        (0..self.e1.len())
            .map(|k| {
                let o: f64 = out.iter().map(|v| v[k]).sum();
                let i: f64 = inp.iter().map(|v| v[k]).sum();
                o.sqrt() / (i.sqrt() + 1.0)
            })
            .collect()
    }

    /// CSV with columns `t, e1.., e2.., y1.., y2..`.
    pub fn to_csv(&self) -> String {
        let n = self.e1.dim();
        let mut out = String::from("t");
        for name in ["e1", "e2", "y1", "y2"] {
            for i in 1..=n {
                if n == 1 {
                    out.push_str(&format!(",{name}"));
                } else {
                    out.push_str(&format!(",{name}_{i}"));
                }
            }
        }
        out.push('\n');
        let sigs = [&self.e1, &self.e2, &self.y1, &self.y2];
        for (k, (t, _)) in self.e1.samples().enumerate() {
            out.push_str(&t.to_string());
            for s in sigs {
                for v in &s.as_slice()[k * n..(k + 1) * n] {
                    out.push(',');
                    out.push_str(&format_f64(*v));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// `max(last quarter) / max(first three quarters)` of a sequence.
pub fn trend_ratio(values: &[f64]) -> f64 {
    let split = values.len() * 3 / 4;
    let early = values[..split].iter().copied().fold(0.0, f64::max);
    let late = values[split..].iter().copied().fold(0.0, f64::max);
    if early == 0.0 {
        if late == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        late / early
    }
}

/// Which ports [`empirical_gain`] measures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GainMap {
    pub from: Vec<Port>,
    pub to: Vec<Port>,
}

impl Default for GainMap {
    fn default() -> Self {
        Self {
            from: vec![Port::U1, Port::U2],
            to: vec![Port::E1, Port::E2, Port::Y1, Port::Y2],
        }
    }
}

/// Fit `‖out‖_T ≈ γ ‖in‖_T + β` by least squares over every (input, T)
/// pair, then raise β to the largest residual so the pair bounds all the
/// observed data. Measures a lower bound on the true gain.
pub fn empirical_gain(
    lp: &ClosedLoop,
    inputs: &[(Signal, Signal)],
    horizons: &[Horizon],
    map: &GainMap,
) -> Result<GainEstimate> {
    if inputs.is_empty() {
        return Err(Error::Empty("empirical gain needs at least one input"));
    }
    if horizons.is_empty() {
        return Err(Error::Empty("empirical gain needs at least one horizon"));
    }
    let last = *horizons.iter().max().expect("nonempty");
    let mut pts = Vec::with_capacity(inputs.len() * horizons.len());
    for (u1, u2) in inputs {
        let trace = lp.solve(u1, u2, last)?;
        for &h in horizons {
            pts.push((trace.joint_norm(&map.from, h), trace.joint_norm(&map.to, h)));
        }
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let gamma = if sxx > 1e-12 * (1.0 + mx * mx) * n {
        (sxy / sxx).max(0.0)
    } else if mx > 0.0 {
        pts.iter().map(|p| if p.0 > 0.0 { p.1 / p.0 } else { 0.0 }).fold(0.0, f64::max)
    } else {
        0.0
    };
    let beta = pts.iter().map(|p| p.1 - gamma * p.0).fold(0.0, f64::max);
    Ok(GainEstimate {
        gamma,
        beta,
        zero_bias: false,
        method: GainMethod::Empirical,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassivityVerdict {
    SStable,
    Inconclusive,
}

/// Extended passivity verdict: the forward block has finite zero-bias gain
/// and a strictly positive input index, the feedback block is passive.
pub fn passivity_verdict(
    gain1: &GainEstimate,
    cert1: &PassivityCertificate,
    cert2: &PassivityCertificate,
) -> Result<PassivityVerdict> {
    if cert1.rho != cert2.rho {
        return Err(Error::MismatchedRho(cert1.rho, cert2.rho));
    }
    let ok = gain1.zero_bias
        && gain1.is_finite()
        && cert1.kind == PassivityKind::InputIndex
        && cert2.kind == PassivityKind::InputIndex
        && cert1.is_strict()
        && cert2.analytic
        && cert2.delta >= 0.0;
    Ok(if ok {
        PassivityVerdict::SStable
    } else {
        PassivityVerdict::Inconclusive
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem1Verdict {
    Bounded,
    Inconclusive,
}

/// Mixed-index verdict: bounded when `δ1 + δ2 > strict_tol` and the forward
/// gain is finite. Either index may be negative on its own.
pub fn theorem1_verdict(delta1: f64, delta2: f64, gain1: &GainEstimate, strict_tol: f64) -> Theorem1Verdict {
    if gain1.is_finite() && delta1 + delta2 > strict_tol {
        Theorem1Verdict::Bounded
    } else {
        Theorem1Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSample {
    pub horizon: Horizon,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofBoundReport {
    pub samples: Vec<BoundSample>,
    pub worst_slack: f64,
    pub holds: bool,
}

/// Slack below which the quadratic bound counts as violated.
pub const PROOF_SLACK_TOL: f64 = -1e-6;

/// Evaluate the quadratic energy bound on `‖e1‖_T` at each horizon:
///
/// ```text
/// (δ1+δ2)‖e1‖² ≤ ‖e1‖ (2|δ2|‖u1‖ + γ1‖u1‖ + ‖u2‖)
///               + ‖u1‖‖u2‖ + β1‖u1‖ + |δ2|‖u1‖² − β1′ − β2′
/// ```
///
/// It follows from `⟨e1,y1⟩ + ⟨e2,y2⟩ = ⟨u1,y1⟩ + ⟨u2,y2⟩`, the two index
/// inequalities, `‖y1‖ ≤ γ1‖e1‖ + β1` and `y2 = u1 − e1`.
pub fn proof_bound_check(
    trace: &LoopTrace,
    delta1: f64,
    delta2: f64,
    gain1: &GainEstimate,
    beta_primes: (f64, f64),
    horizons: &[Horizon],
) -> ProofBoundReport {
    let samples: Vec<BoundSample> = horizons
        .iter()
        .map(|&h| {
            let e1 = trace.e1.norm(h);
            let u1 = trace.u1.norm(h);
            let u2 = trace.u2.norm(h);
            let d2 = delta2.abs();
            let lhs = (delta1 + delta2) * e1 * e1;
            let rhs = e1 * (2.0 * d2 * u1 + gain1.gamma * u1 + u2) + u1 * u2 + gain1.beta * u1 + d2 * u1 * u1
                - beta_primes.0
                - beta_primes.1;
            BoundSample {
                horizon: h,
                lhs,
                rhs,
                slack: rhs - lhs,
            }
        })
        .collect();
    let worst_slack = samples.iter().map(|s| s.slack).fold(f64::INFINITY, f64::min);
    ProofBoundReport {
        holds: samples.iter().all(|s| s.slack >= PROOF_SLACK_TOL),
        samples,
        worst_slack,
    }
}

/// Gains and indices of both weighted blocks plus the three verdicts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopAnalysis {
    pub rho: f64,
    pub posedness: Posedness,
    pub gain1: GainEstimate,
    pub gain2: GainEstimate,
    pub input_index1: PassivityCertificate,
    pub input_index2: PassivityCertificate,
    pub output_index2: PassivityCertificate,
    pub small_gain: SmallGainVerdict,
    pub passivity: PassivityVerdict,
    pub theorem1: Theorem1Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OverallVerdict {
    SStable,
    Bounded,
    FiniteGain,
    Inconclusive,
}

impl LoopAnalysis {
    pub fn overall(&self) -> OverallVerdict {
        if self.small_gain == SmallGainVerdict::SStable || self.passivity == PassivityVerdict::SStable {
            OverallVerdict::SStable
        } else if self.theorem1 == Theorem1Verdict::Bounded {
            OverallVerdict::Bounded
        } else if self.small_gain == SmallGainVerdict::FiniteGain {
            OverallVerdict::FiniteGain
        } else {
            OverallVerdict::Inconclusive
        }
    }

    /// The mixed-index certificate on a solved trace.
    pub fn proof_bound(&self, trace: &LoopTrace, horizons: &[Horizon]) -> ProofBoundReport {
        let d1 = if self.input_index1.analytic { self.input_index1.delta } else { f64::NAN };
        let d2 = if self.output_index2.analytic { self.output_index2.delta } else { f64::NAN };
        proof_bound_check(trace, d1, d2, &self.gain1, (0.0, 0.0), horizons)
    }
}

/// Certify both weighted blocks of `lp`.
pub fn analyze(lp: &ClosedLoop, opts: &CertifyOptions) -> Result<LoopAnalysis> {
    let rho = lp.rho;
    let (gain1, input_index1) = match &lp.h1 {
        OperatorBox::Lti(s) => (
            certify::rho_gain(s, rho, opts)?,
            certify::rho_passivity_index(s, rho, opts)?,
        ),
        OperatorBox::Static(m) => (
            GainEstimate::zero_bias(m.sector_upper(), GainMethod::Declared),
            certify::sector_certificate(rho, m.sector_upper(), PassivityKind::InputIndex, opts)?,
        ),
        OperatorBox::TimeVaryingGain { lower, upper, .. } => (
            GainEstimate::zero_bias(lower.abs().max(upper.abs()), GainMethod::Declared),
            bound_certificate(rho, *lower, PassivityKind::InputIndex, opts),
        ),
    };
    let (gain2, input_index2, output_index2) = match &lp.h2 {
        OperatorBox::Lti(s) => (
            certify::feedback_gain(s, rho, opts)?,
            certify::feedback_passivity_index(s, rho, opts)?,
            certify::output_passivity_index(s, rho, opts)?,
        ),
        OperatorBox::Static(m) => (
            GainEstimate::zero_bias(m.sector_upper(), GainMethod::Declared),
            certify::sector_certificate(rho, m.sector_upper(), PassivityKind::InputIndex, opts)?,
            certify::sector_certificate(rho, m.sector_upper(), PassivityKind::OutputIndex, opts)?,
        ),
        OperatorBox::TimeVaryingGain { lower, upper, .. } => (
            GainEstimate::zero_bias(lower.abs().max(upper.abs()), GainMethod::Declared),
            bound_certificate(rho, *lower, PassivityKind::InputIndex, opts),
            bound_certificate(rho, tv_output_index(*lower, *upper, opts.delta_cap), PassivityKind::OutputIndex, opts),
        ),
    };
    let small_gain = certify::small_gain_product(&gain1, &gain2);
    let passivity = passivity_verdict(&gain1, &input_index1, &input_index2)?;
    let theorem1 = if input_index1.analytic && output_index2.analytic {
        theorem1_verdict(input_index1.delta, output_index2.delta, &gain1, opts.strict_tol)
    } else {
        Theorem1Verdict::Inconclusive
    };
    Ok(LoopAnalysis {
        rho,
        posedness: lp.posedness,
        gain1,
        gain2,
        input_index1,
        input_index2,
        output_index2,
        small_gain,
        passivity,
        theorem1,
    })
}

fn bound_certificate(rho: f64, delta: f64, kind: PassivityKind, opts: &CertifyOptions) -> PassivityCertificate {
    PassivityCertificate {
        rho,
        kind,
        delta,
        beta_prime: 0.0,
        analytic: true,
        grid_points: opts.grid,
        theta_star: 0.0,
        strict_tol: opts.strict_tol,
    }
}

/// Largest `δ` with `g ≥ δ g²` for every `g ∈ [lo, hi]`.
fn tv_output_index(lo: f64, hi: f64, cap: f64) -> f64 {
    if hi == 0.0 && lo == 0.0 {
        cap
    } else if lo >= 0.0 || hi < 0.0 {
        (1.0 / hi).clamp(-cap, cap)
    } else {
        -cap
    }
}

/// On-disk block description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockSpec {
    Ss(SsBlock),
    Tf(RationalSiso),
    Static(StaticMap),
    TimeVarying {
        gains: Vec<f64>,
        lower: f64,
        upper: f64,
    },
    /// Zero operator (strictly causal).
    Zero,
}

impl BlockSpec {
    pub fn build(&self, dim: usize) -> Result<OperatorBox> {
        Ok(match self {
            BlockSpec::Ss(ss) => OperatorBox::Lti(SystemFile::Ss(ss.clone()).into_system()?),
            BlockSpec::Tf(tf) => OperatorBox::Lti(SystemFile::Tf(tf.clone()).into_system()?),
            BlockSpec::Static(m) => {
                m.validate()?;
                OperatorBox::Static(*m)
            }
            BlockSpec::TimeVarying { gains, lower, upper } => {
                OperatorBox::time_varying(gains.clone(), *lower, *upper)?
            }
            BlockSpec::Zero => OperatorBox::Lti(StateSpaceSystem::zero(dim)?),
        })
    }

    fn lti_dim(&self) -> Result<Option<usize>> {
        Ok(match self {
            BlockSpec::Ss(_) | BlockSpec::Tf(_) => Some(self.build(1)?.lti_dim()),
            _ => None,
        })
    }
}

impl OperatorBox {
    fn lti_dim(&self) -> usize {
        self.lti().map_or(1, |s| s.n_inputs())
    }
}

/// Input source: a generator or a CSV signal file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSource {
    Generated(InputSpec),
    File { file: String },
}

impl InputSource {
    pub fn load(&self, base: &Path, steps: usize, dim: usize) -> Result<Signal> {
        match self {
            InputSource::Generated(spec) => spec.generate(0, steps, dim),
            InputSource::File { file } => {
                let text = std::fs::read_to_string(base.join(file))
                    .map_err(|e| Error::Parse(format!("{file}: {e}")))?;
                let s = Signal::from_csv(&text, false)?;
                if s.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: s.dim(),
                    });
                }
                Ok(s)
            }
        }
    }
}

fn zero_input() -> InputSource {
    InputSource::Generated(InputSpec::Impulse { at: 0, amplitude: 0.0 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPair {
    pub u1: InputSource,
    #[serde(default = "zero_input")]
    pub u2: InputSource,
}

pub const DEFAULT_STEPS: usize = 2048;

/// Closed-loop experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopDescriptor {
    pub h1: BlockSpec,
    pub h2: BlockSpec,
    pub rho: f64,
    /// Number of simulated steps, starting at `t = 0`.
    #[serde(default = "default_steps")]
    pub horizon: usize,
    /// Channel count when neither block is LTI.
    #[serde(default)]
    pub dim: Option<usize>,
    pub inputs: Vec<InputPair>,
    #[serde(default)]
    pub certify: CertifyOptions,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

impl LoopDescriptor {
    pub fn from_json(text: &str) -> Result<Self> {
        let d: LoopDescriptor = serde_json::from_str(text)?;
        if d.inputs.is_empty() {
            return Err(Error::Empty("experiment lists no inputs"));
        }
        if d.horizon == 0 || d.horizon > crate::signals::MAX_SAMPLES {
            return Err(Error::InvalidArgument(format!("horizon {} out of range", d.horizon)));
        }
        Ok(d)
    }

    /// Channel count implied by the blocks (or `dim`).
    pub fn channels(&self) -> Result<usize> {
        let d1 = self.h1.lti_dim()?;
        let d2 = self.h2.lti_dim()?;
        Ok(d1.or(d2).or(self.dim).unwrap_or(1))
    }

    pub fn build_loop(&self) -> Result<ClosedLoop> {
        let n = self.channels()?;
        ClosedLoop::with_dim(self.h1.build(n)?, self.h2.build(n)?, self.rho, self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::random_system;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn integrator_like() -> StateSpaceSystem {
        RationalSiso::new(vec![1.0, 0.0], vec![1.0, -1.0]).unwrap().to_state_space()
    }

    fn gaussian(seed: u64, decay: f64, len: usize) -> Signal {
        InputSpec::Gaussian { seed, std: 1.0, decay }.generate(0, len, 1).unwrap()
    }

    fn zero_lti() -> OperatorBox {
        OperatorBox::Lti(StateSpaceSystem::zero(1).unwrap())
    }

    #[test]
    fn open_loop_when_feedback_is_zero() {
        let rho = 1.1;
        let h1 = integrator_like();
        let lp = ClosedLoop::new(OperatorBox::Lti(h1.clone()), zero_lti(), rho).unwrap();
        let u1 = gaussian(1, 0.98, 64);
        let u2 = gaussian(2, 0.98, 64);
        let tr = lp.solve(&u1, &u2, 63).unwrap();
        assert_eq!(tr.e1, u1);
        assert!(tr.y2.as_slice().iter().all(|v| *v == 0.0));
        let expect = u2.add(&h1.weighted_apply(rho, &u1).unwrap()).unwrap();
        for (a, b) in tr.e2.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_blocks_pass_inputs_through() {
        let lp = ClosedLoop::new(zero_lti(), zero_lti(), 1.3).unwrap();
        let u1 = gaussian(3, 1.0, 32);
        let u2 = gaussian(4, 1.0, 32);
        let tr = lp.solve(&u1, &u2, 31).unwrap();
        assert_eq!(tr.e1, u1);
        assert_eq!(tr.e2, u2);
        assert_eq!(tr.max_residual(), 0.0);
    }

    #[test]
    fn linear_solve_matches_closed_form_static_loop() {
        // y1 = 2 e1, y2 = 0.5 e2: e1 = (u1 − 0.5 u2) / 2
        let lp = ClosedLoop::new(
            OperatorBox::Lti(StateSpaceSystem::scalar_gain(2.0)),
            OperatorBox::Lti(StateSpaceSystem::scalar_gain(0.5)),
            1.0,
        )
        .unwrap();
        assert_eq!(lp.posedness(), Posedness::LinearSolve);
        let tr = lp.solve(&Signal::from_scalars(0, &[1.0]), &Signal::from_scalars(0, &[2.0]), 0).unwrap();
        assert!((tr.e1.value(0, 0) - 0.0).abs() < 1e-15);
        let tr = lp.solve(&Signal::from_scalars(0, &[4.0]), &Signal::from_scalars(0, &[0.0]), 0).unwrap();
        assert!((tr.e1.value(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn ill_posed_loops_are_rejected() {
        let sat = OperatorBox::Static(StaticMap::Saturation { level: 1.0 });
        let err = ClosedLoop::new(sat.clone(), sat.clone(), 1.0).unwrap_err();
        assert!(matches!(err, Error::IllPosed(_)));
        let err = ClosedLoop::new(
            OperatorBox::Lti(StateSpaceSystem::scalar_gain(1.0)),
            OperatorBox::Lti(StateSpaceSystem::scalar_gain(-1.0)),
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::IllPosed(_)));
        let err = ClosedLoop::new(OperatorBox::Lti(StateSpaceSystem::scalar_gain(-0.5)), sat, 1.0).unwrap_err();
        assert!(matches!(err, Error::IllPosed(_)));
    }

    #[test]
    fn nonlinear_feedback_against_feedthrough_keeps_residuals_small() {
        let lp = ClosedLoop::new(
            OperatorBox::Lti(integrator_like()),
            OperatorBox::Static(StaticMap::Saturation { level: 0.5 }),
            1.1,
        )
        .unwrap();
        assert_eq!(lp.posedness(), Posedness::MonotoneScalar);
        let tr = lp.solve(&gaussian(5, 0.99, 512), &gaussian(6, 0.99, 512), 511).unwrap();
        assert!(tr.max_residual() < RESIDUAL_TOL);
    }

    #[test]
    fn time_varying_gain_bounds_are_enforced() {
        assert!(OperatorBox::time_varying(vec![0.5, 2.0], 0.0, 1.0).is_err());
        let tv = OperatorBox::time_varying(vec![0.5, 1.0, 0.25], 0.0, 1.0).unwrap();
        let lp = ClosedLoop::new(OperatorBox::Lti(StateSpaceSystem::unit_delay()), tv, 1.2).unwrap();
        let tr = lp.solve(&gaussian(7, 0.9, 40), &gaussian(8, 0.9, 40), 39).unwrap();
        assert!(tr.max_residual() < RESIDUAL_TOL);
    }

    #[test]
    fn weighted_nonlinearity_is_conjugated() {
        // H1 = 0 strictly causal, so e2 = u2 and y2 = ρᵗ sat(ρ⁻ᵗ u2)
        let rho = 1.5;
        let lp = ClosedLoop::new(zero_lti(), OperatorBox::Static(StaticMap::Saturation { level: 1.0 }), rho).unwrap();
        let u2 = Signal::from_scalars(0, &[3.0, 3.0, 3.0, 3.0]);
        let tr = lp.solve(&Signal::from_scalars(0, &[0.0]), &u2, 3).unwrap();
        for t in 0..4 {
            let expect = rho.powi(t as i32) * (3.0 * rho.powi(-(t as i32))).clamp(-1.0, 1.0);
            assert!((tr.y2.value(t, 0) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sector_nonlinearity_is_passive_under_any_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let maps = [
            StaticMap::Saturation { level: 0.7 },
            StaticMap::DeadZone { width: 0.3 },
            StaticMap::Tanh { gain: 2.0 },
            StaticMap::Cubic { coef: 0.5 },
            StaticMap::Linear { gain: 1.5 },
        ];
        for map in maps {
            for _ in 0..10 {
                let rho = rng.random_range(0.6..1.6);
                let lp = ClosedLoop::new(zero_lti(), OperatorBox::Static(map), rho).unwrap();
                let x = gaussian(rng.random(), 1.0, 48);
                let tr = lp.solve(&Signal::from_scalars(0, &[0.0]), &x, 47).unwrap();
                for t in 0..48 {
                    assert!(tr.e2.inner_product(&tr.y2, t).unwrap() >= 0.0);
                }
            }
        }
    }

    #[test]
    fn passivity_verdict_examples() {
        let opts = CertifyOptions::default();
        let h = integrator_like();
        let gain = certify::rho_gain(&h, 1.1, &opts).unwrap();
        let c1 = certify::rho_passivity_index(&h, 1.1, &opts).unwrap();
        let c2 = certify::sector_certificate(1.1, 1.0, PassivityKind::InputIndex, &opts).unwrap();
        assert!((gain.gamma - 11.0).abs() < 1e-9);
        assert!((c1.delta - 1.1 / 2.1).abs() < 1e-6);
        assert_eq!(passivity_verdict(&gain, &c1, &c2).unwrap(), PassivityVerdict::SStable);

        let mut flat = c1;
        flat.delta = 0.0;
        assert_eq!(passivity_verdict(&gain, &flat, &c2).unwrap(), PassivityVerdict::Inconclusive);
        let bad = certify::rho_passivity_index(&h, 1.0, &opts).unwrap();
        let c2_at_1 = certify::sector_certificate(1.0, 1.0, PassivityKind::InputIndex, &opts).unwrap();
        assert_eq!(passivity_verdict(&gain, &bad, &c2_at_1).unwrap(), PassivityVerdict::Inconclusive);
        assert!(matches!(passivity_verdict(&gain, &c1, &c2_at_1), Err(Error::MismatchedRho(..))));
    }

    #[test]
    fn theorem1_verdict_examples() {
        let g = GainEstimate::zero_bias(3.0, GainMethod::FrequencySweep);
        assert_eq!(theorem1_verdict(-0.2, 0.5, &g, 1e-9), Theorem1Verdict::Bounded);
        assert_eq!(theorem1_verdict(0.5, -0.5, &g, 1e-9), Theorem1Verdict::Inconclusive);
        assert_eq!(theorem1_verdict(0.01, 0.0, &g, 1e-9), Theorem1Verdict::Bounded);
        let inf = GainEstimate::zero_bias(f64::INFINITY, GainMethod::FrequencySweep);
        assert_eq!(theorem1_verdict(1.0, 1.0, &inf, 1e-9), Theorem1Verdict::Inconclusive);
    }

    #[test]
    fn proof_bound_open_loop_and_zero_inputs() {
        let opts = CertifyOptions::default();
        let h = integrator_like();
        let rho = 1.1;
        let lp = ClosedLoop::new(OperatorBox::Lti(h.clone()), zero_lti(), rho).unwrap();
        let gain = certify::rho_gain(&h, rho, &opts).unwrap();
        let d1 = certify::rho_passivity_index(&h, rho, &opts).unwrap().delta;
        let tr = lp.solve(&gaussian(10, 0.99, 256), &gaussian(11, 0.99, 256), 255).unwrap();
        let horizons: Vec<i64> = (0..10).map(|k| 25 * k + 10).collect();
        let rep = proof_bound_check(&tr, d1, 0.0, &gain, (0.0, 0.0), &horizons);
        assert!(rep.holds, "{rep:?}");
        // with δ2 = 0 and e1 = u1 the bound reduces to δ1‖u1‖² ≤ (γ1‖u1‖+‖u2‖)‖u1‖ + ‖u1‖‖u2‖
        for s in &rep.samples {
            let u1 = tr.u1.norm(s.horizon);
            let u2 = tr.u2.norm(s.horizon);
            assert!((s.lhs - d1 * u1 * u1).abs() < 1e-9 * (1.0 + s.lhs));
            assert!((s.rhs - (u1 * (gain.gamma * u1 + u2) + u1 * u2)).abs() < 1e-9 * (1.0 + s.rhs));
        }

        let z = Signal::from_scalars(0, &[0.0; 16]);
        let tr = lp.solve(&z, &z, 15).unwrap();
        let rep = proof_bound_check(&tr, d1, 0.0, &gain, (0.0, 0.0), &[0, 7, 15]);
        assert!(rep.samples.iter().all(|s| s.lhs == 0.0 && s.rhs == 0.0));
        assert!(rep.holds);
    }

    #[test]
    fn empirical_gain_examples() {
        let pair = |a, b| (gaussian(a, 0.97, 128), gaussian(b, 0.97, 128));
        let inputs: Vec<_> = (0..5).map(|k| pair(2 * k, 2 * k + 1)).collect();
        let horizons: Vec<i64> = (0..8).map(|k| 16 * k + 15).collect();

        let lp = ClosedLoop::new(zero_lti(), zero_lti(), 1.0).unwrap();
        let map = GainMap {
            from: vec![Port::U1, Port::U2],
            to: vec![Port::E1, Port::E2],
        };
        let g = empirical_gain(&lp, &inputs, &horizons, &map).unwrap();
        assert!((g.gamma - 1.0).abs() < 1e-9 && g.beta < 1e-9);
        assert!(!g.zero_bias);

        let lp = ClosedLoop::new(OperatorBox::Lti(StateSpaceSystem::scalar_gain(3.0)), zero_lti(), 1.0).unwrap();
        let map = GainMap {
            from: vec![Port::U1],
            to: vec![Port::Y1],
        };
        let g = empirical_gain(&lp, &inputs, &horizons, &map).unwrap();
        assert!((g.gamma - 3.0).abs() < 1e-9);

        assert!(empirical_gain(&lp, &[], &horizons, &map).is_err());
    }

    #[test]
    fn empirical_gain_respects_small_gain_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let opts = CertifyOptions::default();
        let rho = 1.2;
        let h1 = random_system(&mut rng, 3, 1, 1, Some(1.1));
        let h2 = random_system(&mut rng, 2, 1, 1, Some(0.6));
        let g1 = certify::rho_gain(&h1, rho, &opts).unwrap().gamma;
        let g2 = certify::feedback_gain(&h2, rho, &opts).unwrap().gamma;
        let h1 = h1.scaled(1.5 / g1).unwrap();
        let h2 = h2.scaled(0.5 / g2).unwrap();
        let lp = ClosedLoop::new(OperatorBox::Lti(h1), OperatorBox::Lti(h2), rho).unwrap();
        let inputs: Vec<_> = (0..6).map(|k| (gaussian(k, 0.98, 256), gaussian(k + 50, 0.98, 256))).collect();
        let horizons: Vec<i64> = (0..16).map(|k| 16 * k + 15).collect();
        let map = GainMap {
            from: vec![Port::U1, Port::U2],
            to: vec![Port::E1],
        };
        let g = empirical_gain(&lp, &inputs, &horizons, &map).unwrap();
        let bound = (1.0 + 0.5) / (1.0 - 0.75);
        assert!(g.gamma <= bound + 1e-6, "{} > {bound}", g.gamma);
    }

    #[test]
    fn trend_ratio_values() {
        assert_eq!(trend_ratio(&[1.0, 2.0, 2.0, 2.0]), 1.0);
        assert_eq!(trend_ratio(&[1.0, 1.0, 1.0, 4.0]), 4.0);
        assert_eq!(trend_ratio(&[0.0; 8]), 1.0);
    }

    #[test]
    fn trace_csv_layout() {
        let lp = ClosedLoop::new(zero_lti(), zero_lti(), 1.0).unwrap();
        let tr = lp
            .solve(&Signal::from_scalars(0, &[1.0, 2.0]), &Signal::from_scalars(0, &[0.5, 0.0]), 1)
            .unwrap();
        assert_eq!(tr.to_csv(), "t,e1,e2,y1,y2\n0,1,0.5,0,0\n1,2,0,0,0\n");
    }

    #[test]
    fn descriptor_parsing() {
        let text = r#"{
            "h1": {"tf": {"num": [1, 0], "den": [1, -1]}},
            "h2": {"static": {"map": "saturation", "level": 1.0}},
            "rho": 1.1,
            "horizon": 256,
            "inputs": [
                {"u1": {"kind": "gaussian", "seed": 1, "decay": 0.98}},
                {"u1": {"kind": "impulse"}, "u2": {"kind": "step_decay", "decay": 0.9}}
            ]
        }"#;
        let d = LoopDescriptor::from_json(text).unwrap();
        assert_eq!(d.certify, CertifyOptions::default());
        let lp = d.build_loop().unwrap();
        assert_eq!(lp.posedness(), Posedness::MonotoneScalar);
        let zero = r#"{"h1": "zero", "h2": "zero", "rho": 1.0, "inputs": [{"u1": {"kind": "impulse"}}]}"#;
        let d = LoopDescriptor::from_json(zero).unwrap();
        assert_eq!(d.horizon, DEFAULT_STEPS);
        assert!(d.build_loop().is_ok());
        assert!(LoopDescriptor::from_json(r#"{"h1": "zero", "h2": "zero", "rho": 1.0, "inputs": []}"#).is_err());
        assert!(LoopDescriptor::from_json(r#"{"h1": "zero", "h2": "zero", "rho": 1.0, "inputs": [], "extra": 1}"#).is_err());
    }
}
