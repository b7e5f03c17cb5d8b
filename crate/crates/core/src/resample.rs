//! Fixed-length resampling: head truncation for long trials, one-dimensional
//! interpolation for short ones.
//!
//! All interpolants work in sample-index units: knots sit at `0, 1, …, l-1`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trial_store::{Trial, TrialRecord};

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("signal has {0} samples, interpolation needs at least two")]
    DegenerateSignal(usize),
    #[error("{method:?} interpolation needs at least {needed} knots, got {got}")]
    InsufficientPoints {
        method: InterpMethod,
        needed: usize,
        got: usize,
    },
    #[error("query time {0} outside the knot domain")]
    OutOfDomain(f64),
    #[error("invalid resample spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpMethod {
    Nearest,
    Linear,
    Quadratic,
    Cubic,
}

impl InterpMethod {
    pub fn min_points(self) -> usize {
        match self {
            InterpMethod::Nearest | InterpMethod::Linear => 2,
            InterpMethod::Quadratic => 3,
            InterpMethod::Cubic => 4,
        }
    }
}

impl std::str::FromStr for InterpMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(InterpMethod::Nearest),
            "linear" => Ok(InterpMethod::Linear),
            "quadratic" => Ok(InterpMethod::Quadratic),
            "cubic" => Ok(InterpMethod::Cubic),
            other => Err(format!("unknown interpolation method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub target_length_s: f64,
    pub method: InterpMethod,
}

impl Default for ResampleSpec {
    fn default() -> Self {
        ResampleSpec {
            target_length_s: 4.0,
            method: InterpMethod::Cubic,
        }
    }
}

impl ResampleSpec {
    /// Output length `N = round(L · fs)`, half away from zero.
    pub fn target_samples(&self, sample_rate_hz: f64) -> usize {
        (self.target_length_s * sample_rate_hz).round() as usize
    }
}

/// A trial brought to exactly `N` samples per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTrial {
    pub record: TrialRecord,
    pub samples: Array2<f64>,
}

impl FixedTrial {
    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }
}

/// Query times spreading `n` outputs evenly over `[0, l-1]`.
pub fn stretch_times(l: usize, n: usize) -> Vec<f64> {
    let last = (l - 1) as f64;
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|j| {
            if j == n - 1 {
                last
            } else {
                j as f64 * last / (n - 1) as f64
            }
        })
        .collect()
}

/// Bring every channel to `round(L·fs)` samples.
pub fn fit_length(trial: &Trial, spec: &ResampleSpec) -> Result<FixedTrial, ResampleError> {
    if !(spec.target_length_s.is_finite() && spec.target_length_s > 0.0) {
        return Err(ResampleError::InvalidSpec("target length must be positive".into()));
    }
    let target = spec.target_samples(trial.record.sample_rate_hz);
    if target < 2 {
        return Err(ResampleError::InvalidSpec(format!("target length of {target} samples")));
    }
    let (channels, l) = trial.samples.dim();
    if l >= target {
        let samples = trial.samples.slice(ndarray::s![.., ..target]).mapv(f64::from);
        return Ok(FixedTrial {
            record: trial.record.clone(),
            samples,
        });
    }
    if l < 2 {
        return Err(ResampleError::DegenerateSignal(l));
    }
    let queries = stretch_times(l, target);
    let mut samples = Array2::<f64>::zeros((channels, target));
    for (c, row) in trial.samples.rows().into_iter().enumerate() {
        let values: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        let out = interpolate(&values, &queries, spec.method)?;
        samples.row_mut(c).assign(&ndarray::Array1::from(out));
    }
    Ok(FixedTrial {
        record: trial.record.clone(),
        samples,
    })
}

/// Evaluate the chosen interpolant of `values` at `query_times`.
pub fn interpolate(values: &[f64], query_times: &[f64], method: InterpMethod) -> Result<Vec<f64>, ResampleError> {
    let l = values.len();
    if l < method.min_points() {
        return Err(ResampleError::InsufficientPoints {
            method,
            needed: method.min_points(),
            got: l,
        });
    }
    let last = (l - 1) as f64;
    if let Some(&bad) = query_times.iter().find(|&&t| !(0.0..=last).contains(&t)) {
        return Err(ResampleError::OutOfDomain(bad));
    }
    let out = match method {
        InterpMethod::Nearest => query_times
            .iter()
            .map(|&t| values[((t + 0.5).floor() as usize).min(l - 1)])
            .collect(),
        InterpMethod::Linear => query_times
            .iter()
            .map(|&t| {
                let i = t.floor() as usize;
                if i >= l - 1 {
                    return values[l - 1];
                }
                let frac = t - i as f64;
                if frac == 0.0 {
                    values[i]
                } else {
                    values[i] + frac * (values[i + 1] - values[i])
                }
            })
            .collect(),
        InterpMethod::Quadratic => {
            let spline = QuadraticSpline::new(values);
            query_times.iter().map(|&t| spline.eval(t)).collect()
        }
        InterpMethod::Cubic => {
            let spline = CubicSpline::new(values);
            query_times.iter().map(|&t| spline.eval(t)).collect()
        }
    };
    Ok(out)
}

/// Solve a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    if n == 0 {
        return;
    }
    let mut c_prime = vec![0.0; n];
    let mut denom = diag[0];
    c_prime[0] = upper[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c_prime[i - 1];
        c_prime[i] = upper[i] / denom;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c_prime[i] * rhs[i + 1];
    }
}

/// Not-a-knot cubic spline on unit-spaced knots, stored as second
/// derivatives at the knots.
struct CubicSpline<'a> {
    y: &'a [f64],
    m: Vec<f64>,
}

impl<'a> CubicSpline<'a> {
    fn new(y: &'a [f64]) -> Self {
        let n = y.len();
        debug_assert!(n >= 4);
        // Interior continuity rows: M[i-1] + 4 M[i] + M[i+1] = 6 Δ²y[i].
        // Not-a-knot at knots 1 and n-2 gives M[0] = 2M[1] - M[2] and
        // M[n-1] = 2M[n-2] - M[n-3]; substituted into rows 1 and n-2 those
        // collapse to 6 M[1] = r[1] and 6 M[n-2] = r[n-2].
        let r = |i: usize| 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]);
        let mut m = vec![0.0; n];
        m[1] = r(1) / 6.0;
        m[n - 2] = r(n - 2) / 6.0;
        if n > 5 {
            let inner = n - 4; // unknowns M[2..n-2]
            let lower = vec![1.0; inner];
            let diag = vec![4.0; inner];
            let upper = vec![1.0; inner];
            let mut rhs: Vec<f64> = (2..n - 2).map(r).collect();
            rhs[0] -= m[1];
            rhs[inner - 1] -= m[n - 2];
            solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
            m[2..n - 2].copy_from_slice(&rhs);
        } else if n == 5 {
            m[2] = (r(2) - m[1] - m[3]) / 4.0;
        }
        m[0] = 2.0 * m[1] - m[2];
        m[n - 1] = 2.0 * m[n - 2] - m[n - 3];
        CubicSpline { y, m }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.y.len();
        let i = (t.floor() as usize).min(n - 2);
        let b = t - i as f64;
        if b == 0.0 {
            return self.y[i];
        }
        let a = 1.0 - b;
        a * self.y[i] + b * self.y[i + 1] + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) / 6.0
    }
}

/// Quadratic spline through unit-spaced samples with breakpoints halfway
/// between them. Piece `i` spans `[i-½, i+½]` (clipped to the domain at the
/// ends) and is stored through its values at both breakpoints. The first
/// and last pieces are linear (natural end condition).
struct QuadraticSpline<'a> {
    y: &'a [f64],
    /// `mid[i]` = spline value at `i + ½`.
    mid: Vec<f64>,
}

impl<'a> QuadraticSpline<'a> {
    fn new(y: &'a [f64]) -> Self {
        let n = y.len();
        debug_assert!(n >= 3);
        // C¹ at every breakpoint:
        //   interior:  s[i-1] + 6 s[i] + s[i+1] = 4 (y[i] + y[i+1])
        //   first:     5 s[0] + s[1]             = 2 y[0] + 4 y[1]
        //   last:      s[n-3] + 5 s[n-2]         = 4 y[n-2] + 2 y[n-1]
        let k = n - 1;
        let mut lower = vec![1.0; k];
        let mut diag = vec![6.0; k];
        let mut upper = vec![1.0; k];
        let mut rhs: Vec<f64> = (0..k).map(|i| 4.0 * (y[i] + y[i + 1])).collect();
        diag[0] = 5.0;
        rhs[0] = 2.0 * y[0] + 4.0 * y[1];
        diag[k - 1] = 5.0;
        rhs[k - 1] = 4.0 * y[n - 2] + 2.0 * y[n - 1];
        lower[0] = 0.0;
        upper[k - 1] = 0.0;
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
        QuadraticSpline { y, mid: rhs }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.y.len();
        let i = ((t + 0.5).floor() as usize).min(n - 1);
        let u = t - i as f64;
        if u == 0.0 {
            return self.y[i];
        }
        let yi = self.y[i];
        if i == 0 {
            return yi + 2.0 * (self.mid[0] - yi) * u;
        }
        if i == n - 1 {
            return yi + 2.0 * (yi - self.mid[n - 2]) * u;
        }
        let left = self.mid[i - 1];
        let right = self.mid[i];
        let slope = right - left;
        let curv = 2.0 * (left + right - 2.0 * yi);
        yi + slope * u + curv * u * u
    }
}
