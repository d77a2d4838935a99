//! Finitely supported vector-valued discrete-time signals.
//!
//! A [`Signal`] stores samples densely over a window `start..start+len`; every
//! time outside that window carries the zero vector. Because support is
//! bounded on the left and finite on the right, every stored signal is
//! square-summable, and the truncated inner products `⟨x, y⟩_T` are finite
//! sums.

use crate::error::{Error, Result};

/// Integer truncation horizon `T`.
pub type Horizon = i64;

/// Upper bound on stored samples per signal (guards decoders against
/// pathological time gaps).
pub const MAX_SAMPLES: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    start: i64,
    dim: usize,
    data: Vec<f64>,
}

impl Signal {
    /// Build from a flat row-major buffer (`len * dim` values).
    pub fn new(start: i64, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("signal dimension must be ≥ 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim * (data.len() / dim + 1),
                got: data.len(),
            });
        }
        if data.len() / dim > MAX_SAMPLES {
            return Err(Error::InvalidArgument("signal too long".into()));
        }
        Ok(Self { start, dim, data })
    }

    pub fn zeros(start: i64, dim: usize, len: usize) -> Result<Self> {
        Self::new(start, dim, vec![0.0; dim * len])
    }

    /// Scalar signal from a slice of samples.
    pub fn from_scalars(start: i64, values: &[f64]) -> Self {
        Self {
            start,
            dim: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_rows(start: i64, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(start, dim, data)
    }

    /// Scalar impulse of height `value` at time `t`.
    pub fn impulse(t: i64, value: f64) -> Self {
        Self::from_scalars(t, &[value])
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored time steps.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Last stored time index, if any.
    pub fn end(&self) -> Option<i64> {
        (!self.is_empty()).then(|| self.start + self.len() as i64 - 1)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Sample vector at `t`, or `None` outside the stored window.
    pub fn at(&self, t: i64) -> Option<&[f64]> {
        let k = self.index_of(t)?;
        Some(&self.data[k * self.dim..(k + 1) * self.dim])
    }

    /// Component `i` at time `t` (zero outside the window).
    pub fn value(&self, t: i64, i: usize) -> f64 {
        self.at(t).map_or(0.0, |v| v[i])
    }

    /// Iterate `(t, sample)` over the stored window.
    pub fn samples(&self) -> impl Iterator<Item = (i64, &[f64])> + '_ {
        self.data
            .chunks_exact(self.dim)
            .enumerate()
            .map(move |(k, v)| (self.start + k as i64, v))
    }

    /// Scalar samples of channel `i`.
    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.data.iter().skip(i).step_by(self.dim).copied().collect()
    }

    fn index_of(&self, t: i64) -> Option<usize> {
        let k = t.checked_sub(self.start)?;
        (k >= 0 && (k as usize) < self.len()).then_some(k as usize)
    }

    /// `P_T x`: keep samples at `t ≤ T`, drop the rest.
    pub fn truncate(&self, horizon: Horizon) -> Signal {
        let keep = horizon
            .checked_sub(self.start)
            .and_then(|k| k.checked_add(1))
            .map_or(0, |k| k.clamp(0, self.len() as i64) as usize);
        Signal {
            start: self.start,
            dim: self.dim,
            data: self.data[..keep * self.dim].to_vec(),
        }
    }

    /// Truncated inner product `⟨x, y⟩_T = Σ_{t ≤ T} x(t)ᵀ y(t)`.
    pub fn inner_product(&self, other: &Signal, horizon: Horizon) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let (Some(e1), Some(e2)) = (self.end(), other.end()) else {
            return Ok(0.0);
        };
        let lo = self.start.max(other.start);
        let hi = e1.min(e2).min(horizon);
        let mut acc = 0.0;
        let mut t = lo;
        while t <= hi {
            let a = self.at(t).expect("in window");
            let b = other.at(t).expect("in window");
            acc += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            t += 1;
        }
        Ok(acc)
    }

    /// `‖x‖_T`.
    pub fn norm(&self, horizon: Horizon) -> f64 {
        self.inner_product(self, horizon)
            .expect("same dimension")
            .sqrt()
    }

    /// Norm over the whole stored window.
    pub fn norm_full(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Squared norms `‖x‖²_T` for every `T` in the stored window, in order.
    pub fn cumulative_energy(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.data
            .chunks_exact(self.dim)
            .map(|v| {
                acc += v.iter().map(|a| a * a).sum::<f64>();
                acc
            })
            .collect()
    }

    /// The group action `(ρ∘x)(t) = ρᵗ x(t)`.
    pub fn weight(&self, rho: f64) -> Result<Signal> {
        check_rho(rho)?;
        let mut data = Vec::with_capacity(self.data.len());
        for (t, v) in self.samples() {
            let factor = rho_pow(rho, t);
            for &x in v {
                let w = factor * x;
                if !w.is_finite() && x.is_finite() {
                    return Err(Error::Overflow { t });
                }
                data.push(w);
            }
        }
        Ok(Signal {
            start: self.start,
            dim: self.dim,
            data,
        })
    }

    pub fn scaled(&self, a: f64) -> Signal {
        Signal {
            start: self.start,
            dim: self.dim,
            data: self.data.iter().map(|v| a * v).collect(),
        }
    }

    /// Pointwise sum over the union of both windows.
    pub fn add(&self, other: &Signal) -> Result<Signal> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let (lo, hi) = match (self.end(), other.end()) {
            (None, None) => return Ok(self.clone()),
            (None, Some(_)) => return Ok(other.clone()),
            (Some(_), None) => return Ok(self.clone()),
            (Some(a), Some(b)) => (self.start.min(other.start), a.max(b)),
        };
        let len = (hi - lo + 1) as usize;
        let mut data = vec![0.0; len * self.dim];
        for s in [self, other] {
            for (t, v) in s.samples() {
                let k = (t - lo) as usize * self.dim;
                for (slot, x) in data[k..k + self.dim].iter_mut().zip(v) {
                    *slot += x;
                }
            }
        }
        Signal::new(lo, self.dim, data)
    }

    /// Stack channels of several signals sampled on `start..=end`.
    pub fn stack(parts: &[&Signal], start: i64, end: i64) -> Result<Signal> {
        if parts.is_empty() {
            return Err(Error::Empty("no signals to stack"));
        }
        let dim: usize = parts.iter().map(|s| s.dim).sum();
        let len = if end >= start { (end - start + 1) as usize } else { 0 };
        let mut data = Vec::with_capacity(len * dim);
        for t in start..start + len as i64 {
            for s in parts {
                match s.at(t) {
                    Some(v) => data.extend_from_slice(v),
                    None => data.extend(std::iter::repeat_n(0.0, s.dim)),
                }
            }
        }
        Signal::new(start, dim, data)
    }

    /// Serialize as CSV with header `t,x1,...,xn`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.dim {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (t, v) in self.samples() {
            out.push_str(&t.to_string());
            for x in v {
                out.push(',');
                out.push_str(&format_f64(*x));
            }
            out.push('\n');
        }
        out
    }

    /// Parse CSV written by [`Signal::to_csv`]. Rows must have strictly
    /// increasing `t`; missing rows are zero unless `strict_grid` is set.
    pub fn from_csv(text: &str, strict_grid: bool) -> Result<Signal> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "t" {
            return Err(Error::Parse("header must be t,x1,...,xn".into()));
        }
        for (i, h) in headers.iter().enumerate().skip(1) {
            if h != format!("x{i}") {
                return Err(Error::Parse(format!("unexpected column name {h:?}")));
            }
        }
        let dim = headers.len() - 1;
        let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() != dim + 1 {
                return Err(Error::Parse(format!(
                    "row has {} fields, expected {}",
                    record.len(),
                    dim + 1
                )));
            }
            let t: i64 = record[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad time index {:?}", &record[0])))?;
            if let Some((prev, _)) = rows.last() {
                if t <= *prev {
                    return Err(Error::Parse(format!("time index {t} not increasing")));
                }
                if strict_grid && t != prev + 1 {
                    return Err(Error::Parse(format!("gap before t = {t}")));
                }
            }
            let values = record
                .iter()
                .skip(1)
                .map(|f| match f.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Parse(format!("bad sample {f:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((t, values));
        }
        let Some(&(start, _)) = rows.first() else {
            return Signal::zeros(0, dim, 0);
        };
        let last = rows.last().map(|r| r.0).unwrap_or(start);
        let span = last
            .checked_sub(start)
            .and_then(|s| usize::try_from(s).ok())
            .filter(|s| *s < MAX_SAMPLES)
            .ok_or_else(|| Error::Parse("time span too large".into()))?;
        let mut data = vec![0.0; (span + 1) * dim];
        for (t, v) in rows {
            let k = (t - start) as usize * dim;
            data[k..k + dim].copy_from_slice(&v);
        }
        Signal::new(start, dim, data)
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("weight ρ must be positive, got {rho}")))
    }
}

/// `ρᵗ` for a signed time index.
pub fn rho_pow(rho: f64, t: i64) -> f64 {
    rho.powf(t as f64)
}

/// Shortest round-trip decimal form.
pub(crate) fn format_f64(x: f64) -> String {
    let s = format!("{x:?}");
    s.strip_suffix(".0").map(str::to_owned).unwrap_or(s)
}
