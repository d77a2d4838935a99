//! Causal discrete-time LTI operators in state-space form.
//!
//! `x(t+1) = A x(t) + B u(t)`, `y(t) = C x(t) + D u(t)`, transfer matrix
//! `ĥ(z) = C (zI − A)⁻¹ B + D`. Scalar rational transfer functions are
//! converted to controllable canonical form on construction.
//!
//! Poles are the eigenvalues of the realization's `A`. No pole-zero
//! cancellation is attempted, so a non-minimal realization may carry poles
//! that a minimal one would not.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{check_rho, Signal};

pub type Complex64 = Complex<f64>;

pub const MAX_STATES: usize = 32;
pub const MAX_CHANNELS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpaceSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let nx = a.nrows();
        let (ny, nu) = d.shape();
        if a.ncols() != nx {
            return Err(Error::InvalidArgument(format!(
                "A must be square, got {}×{}",
                nx,
                a.ncols()
            )));
        }
        if b.shape() != (nx, nu) {
            return Err(Error::InvalidArgument(format!(
                "B must be {nx}×{nu}, got {:?}",
                b.shape()
            )));
        }
        if c.shape() != (ny, nx) {
            return Err(Error::InvalidArgument(format!(
                "C must be {ny}×{nx}, got {:?}",
                c.shape()
            )));
        }
        if nx > MAX_STATES {
            return Err(Error::InvalidArgument(format!(
                "state dimension {nx} exceeds {MAX_STATES}"
            )));
        }
        if nu == 0 || ny == 0 || nu > MAX_CHANNELS || ny > MAX_CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "channel counts must be in 1..={MAX_CHANNELS}, got {ny}×{nu}"
            )));
        }
        if [&a, &b, &c, &d]
            .iter()
            .any(|m| m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(Self { a, b, c, d })
    }

    /// Memoryless system `y = D u`.
    pub fn static_gain(d: DMatrix<f64>) -> Result<Self> {
        let (ny, nu) = d.shape();
        Self::new(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, nu),
            DMatrix::zeros(ny, 0),
            d,
        )
    }

    pub fn scalar_gain(k: f64) -> Self {
        Self::static_gain(DMatrix::from_element(1, 1, k)).expect("1×1 gain")
    }

    /// The zero operator on `n` channels.
    pub fn zero(n: usize) -> Result<Self> {
        Self::static_gain(DMatrix::zeros(n, n))
    }

    /// `ĥ(z) = 1/z`.
    pub fn unit_delay() -> Self {
        Self::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .expect("unit delay")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.d.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.d.nrows()
    }

    pub fn is_square(&self) -> bool {
        self.n_inputs() == self.n_outputs()
    }

    /// True when `D = 0`, i.e. the output at `t` ignores the input at `t`.
    pub fn is_strictly_causal(&self) -> bool {
        self.d.iter().all(|v| *v == 0.0)
    }

    /// Same dynamics with feedthrough `D + shift·I` (square systems only).
    pub fn with_feedthrough_shift(&self, shift: f64) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::InvalidArgument(
                "feedthrough shift needs a square system".into(),
            ));
        }
        let n = self.n_inputs();
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            &self.d + DMatrix::identity(n, n) * shift,
        )
    }

    /// Uniform output scaling `k·H`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            &self.c * k,
            &self.d * k,
        )
    }

    /// Markov parameter `h(k)`: `D` for `k = 0`, `C A^{k−1} B` otherwise.
    pub fn markov(&self, k: usize) -> DMatrix<f64> {
        if k == 0 {
            return self.d.clone();
        }
        let mut m = self.b.clone();
        for _ in 1..k {
            m = &self.a * m;
        }
        &self.c * m
    }

    /// Zero-state (or `x0`) response to `u`; the output window matches `u`.
    pub fn simulate(&self, u: &Signal, x0: Option<&[f64]>) -> Result<Signal> {
        if u.dim() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs(),
                got: u.dim(),
            });
        }
        let mut stepper = Stepper::new(self, x0)?;
        let mut out = Vec::with_capacity(u.len() * self.n_outputs());
        for (t, v) in u.samples() {
            let input = DVector::from_column_slice(v);
            let y = stepper.step(&input);
            if y.iter().any(|v| !v.is_finite()) || stepper.diverged() {
                return Err(Error::Overflow { t });
            }
            out.extend(y.iter());
        }
        Signal::new(u.start(), self.n_outputs(), out)
    }

    /// `ĥ(z) = C (zI − A)⁻¹ B + D`.
    pub fn transfer_eval(&self, z: Complex64) -> Result<DMatrix<Complex64>> {
        let d = self.d.map(Complex64::from);
        let nx = self.n_states();
        if nx == 0 {
            return Ok(d);
        }
        let resolvent = DMatrix::<Complex64>::identity(nx, nx) * z - self.a.map(Complex64::from);
        let scale = resolvent.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let lu = resolvent.lu();
        let u = lu.u();
        let min_pivot = u.diagonal().iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
        if !(min_pivot > 1e-15 * scale.max(f64::MIN_POSITIVE)) {
            return Err(Error::SingularResolvent);
        }
        let x = lu
            .solve(&self.b.map(Complex64::from))
            .ok_or(Error::SingularResolvent)?;
        let h = self.c.map(Complex64::from) * x + d;
        if h.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::SingularResolvent);
        }
        Ok(h)
    }

    /// Eigenvalues of `A`, with multiplicity, sorted by real then imaginary part.
    pub fn poles(&self) -> Result<Vec<Complex64>> {
        if self.n_states() == 0 {
            return Ok(Vec::new());
        }
        let schur = self
            .a
            .clone()
            .try_schur(f64::EPSILON, 10_000)
            .ok_or(Error::Eigensolver)?;
        let mut poles: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
        if poles.iter().any(|p| !p.re.is_finite() || !p.im.is_finite()) {
            return Err(Error::Eigensolver);
        }
        poles.sort_by(|p, q| p.re.total_cmp(&q.re).then(p.im.total_cmp(&q.im)));
        Ok(poles)
    }

    /// Largest pole modulus (0 for static systems).
    pub fn spectral_radius(&self) -> Result<f64> {
        Ok(self.poles()?.iter().map(|p| p.norm()).fold(0.0, f64::max))
    }

    /// Realization of `ρ⁻¹∘H∘ρ`: `(A/ρ, B/ρ, C, D)`, transfer `z ↦ ĥ(ρz)`.
    pub fn rho_shift(&self, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        Ok(Self {
            a: &self.a / rho,
            b: &self.b / rho,
            c: self.c.clone(),
            d: self.d.clone(),
        })
    }

    /// `ρ⁻¹∘H∘ρ∘x` evaluated literally in the time domain.
    pub fn weighted_apply(&self, rho: f64, x: &Signal) -> Result<Signal> {
        let y = self.simulate(&x.weight(rho)?, None)?;
        y.weight(1.0 / rho)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SystemFile = serde_json::from_str(text)?;
        file.into_system()
    }

    pub fn to_json(&self) -> String {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        let file = SystemFile::Ss(SsBlock {
            a: rows(&self.a),
            b: rows(&self.b),
            c: rows(&self.c),
            d: rows(&self.d),
        });
        serde_json::to_string(&file).expect("serializable")
    }
}

/// Step-by-step evaluator holding the current state.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    sys: &'a StateSpaceSystem,
    x: DVector<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a StateSpaceSystem, x0: Option<&[f64]>) -> Result<Self> {
        let nx = sys.n_states();
        let x = match x0 {
            Some(v) if v.len() != nx => {
                return Err(Error::DimensionMismatch {
                    expected: nx,
                    got: v.len(),
                })
            }
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(nx),
        };
        Ok(Self { sys, x })
    }

    /// `C x(t)`, the part of the output that does not depend on `u(t)`.
    pub fn free_output(&self) -> DVector<f64> {
        &self.sys.c * &self.x
    }

    /// Emit `y(t)` for input `u(t)` and advance to `t+1`.
    pub fn step(&mut self, u: &DVector<f64>) -> DVector<f64> {
        let y = self.free_output() + &self.sys.d * u;
        self.advance(u);
        y
    }

    /// Advance the state with `u(t)` without forming the output.
    pub fn advance(&mut self, u: &DVector<f64>) {
        self.x = &self.sys.a * &self.x + &self.sys.b * u;
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn diverged(&self) -> bool {
        self.x.iter().any(|v| !v.is_finite())
    }
}

/// Scalar proper rational transfer function in descending powers of `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalSiso {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl RationalSiso {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        if den.is_empty() || den[0] == 0.0 {
            return Err(Error::InvalidArgument(
                "denominator leading coefficient must be nonzero".into(),
            ));
        }
        if num.iter().chain(&den).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coefficient".into()));
        }
        let first = num.iter().position(|v| *v != 0.0).unwrap_or(num.len());
        let num: Vec<f64> = if first == num.len() {
            vec![0.0]
        } else {
            num[first..].to_vec()
        };
        if num.len() > den.len() {
            return Err(Error::InvalidArgument(
                "improper transfer function (deg num > deg den) is not causal".into(),
            ));
        }
        if den.len() - 1 > MAX_STATES {
            return Err(Error::InvalidArgument(format!(
                "denominator degree exceeds {MAX_STATES}"
            )));
        }
        Ok(Self { num, den })
    }

    /// Direct evaluation `num(z)/den(z)` by Horner's rule.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let horner = |c: &[f64]| c.iter().fold(Complex64::new(0.0, 0.0), |acc, v| acc * z + v);
        horner(&self.num) / horner(&self.den)
    }

    /// Controllable canonical realization.
    pub fn to_state_space(&self) -> StateSpaceSystem {
        let n = self.den.len() - 1;
        let lead = self.den[0];
        let a: Vec<f64> = self.den[1..].iter().map(|v| v / lead).collect();
        let mut b = vec![0.0; n + 1 - self.num.len()];
        b.extend(self.num.iter().map(|v| v / lead));
        let d = DMatrix::from_element(1, 1, b[0]);
        if n == 0 {
            return StateSpaceSystem::static_gain(d).expect("1×1");
        }
        let mut am = DMatrix::zeros(n, n);
        for j in 0..n {
            am[(0, j)] = -a[j];
        }
        for i in 1..n {
            am[(i, i - 1)] = 1.0;
        }
        let mut bm = DMatrix::zeros(n, 1);
        bm[(0, 0)] = 1.0;
        let cm = DMatrix::from_fn(1, n, |_, j| b[j + 1] - a[j] * b[0]);
        StateSpaceSystem::new(am, bm, cm, d).expect("canonical form is consistent")
    }
}

/// On-disk system description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SystemFile {
    Ss(SsBlock),
    Tf(RationalSiso),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsBlock {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
}

impl SystemFile {
    pub fn into_system(self) -> Result<StateSpaceSystem> {
        match self {
            SystemFile::Tf(tf) => Ok(RationalSiso::new(tf.num, tf.den)?.to_state_space()),
            SystemFile::Ss(ss) => {
                let d = matrix_from_rows(&ss.d, None)?;
                let (ny, nu) = d.shape();
                let nx = ss.a.len();
                let a = matrix_from_rows(&ss.a, Some(nx))?;
                let b = if nx == 0 && ss.b.is_empty() {
                    DMatrix::zeros(0, nu)
                } else {
                    matrix_from_rows(&ss.b, Some(nu))?
                };
                let c = if nx == 0 && ss.c.is_empty() {
                    DMatrix::zeros(ny, 0)
                } else {
                    matrix_from_rows(&ss.c, Some(nx))?
                };
                StateSpaceSystem::new(a, b, c, d)
            }
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], cols: Option<usize>) -> Result<DMatrix<f64>> {
    let ncols = cols.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    if rows.len() > MAX_STATES.max(MAX_CHANNELS) || ncols > MAX_STATES.max(MAX_CHANNELS) {
        return Err(Error::InvalidArgument("matrix too large".into()));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
