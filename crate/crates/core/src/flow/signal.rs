//! Scalar control signals of time.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar function of time with derivatives.
pub trait Signal: Send + Sync + fmt::Debug {
    fn value(&self, t: f64) -> f64 {
        self.derivative(t, 0)
    }

    /// `k`-th time derivative (`k = 0` is the value).
    fn derivative(&self, t: f64, k: usize) -> f64;

    /// Largest angular frequency present, 0 for non-oscillatory signals.
    fn max_frequency(&self) -> f64 {
        0.0
    }

    /// True when the signal is identically zero by construction.
    fn is_zero(&self) -> bool {
        false
    }
}

pub type SignalRef = Arc<dyn Signal>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl Signal for Constant {
    fn derivative(&self, _t: f64, k: usize) -> f64 {
        if k == 0 {
            self.0
        } else {
            0.0
        }
    }

    fn is_zero(&self) -> bool {
        self.0 == 0.0
    }
}

/// `amplitude · sin(omega·t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Signal for Sinusoid {
    fn derivative(&self, t: f64, k: usize) -> f64 {
        let arg = self.omega * t + self.phase + k as f64 * std::f64::consts::FRAC_PI_2;
        self.amplitude * self.omega.powi(k as i32) * arg.sin()
    }

    fn max_frequency(&self) -> f64 {
        self.omega.abs()
    }
}

type DerivFn = dyn Fn(f64, usize) -> f64 + Send + Sync;

/// Closure-backed signal; the closure receives `(t, k)`.
#[derive(Clone)]
pub struct FnSignal {
    label: String,
    f: Arc<DerivFn>,
    frequency: f64,
}

impl FnSignal {
    pub fn new(
        label: impl Into<String>,
        frequency: f64,
        f: impl Fn(f64, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FnSignal {
            label: label.into(),
            f: Arc::new(f),
            frequency,
        }
    }
}

impl fmt::Debug for FnSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnSignal({})", self.label)
    }
}

impl Signal for FnSignal {
    fn derivative(&self, t: f64, k: usize) -> f64 {
        (self.f)(t, k)
    }

    fn max_frequency(&self) -> f64 {
        self.frequency
    }
}

/// Natural cubic spline through `(knots[i], values[i])`; the end cubics
/// are continued outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    #[serde(skip)]
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() || knots.len() < 2 {
            return Err(Error::InvalidArgument(
                "spline needs at least two knots and one value per knot".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "spline knots must be strictly increasing".into(),
            ));
        }
        let second = natural_second_derivatives(&knots, &values);
        Ok(CubicSpline { knots, values, second })
    }

    /// Spline sampled from `f` on `n + 1` uniform knots over `[0, horizon]`.
    pub fn sample(horizon: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let knots: Vec<f64> = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        let values = knots.iter().map(|&t| f(t)).collect();
        Self::new(knots, values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rebuilds derived data after deserialization.
    pub fn rebuilt(self) -> Result<Self> {
        Self::new(self.knots, self.values)
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.knots.len();
        match self.knots.partition_point(|&k| k <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }
}

fn natural_second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        diag[i - 1] = 2.0 * (h0 + h1);
        upper[i - 1] = h1;
        rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    for i in 1..k {
        let lower = x[i + 1] - x[i];
        let w = lower / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for i in (0..k - 1).rev() {
        m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
    }
    m
}

impl Signal for CubicSpline {
    fn derivative(&self, t: f64, k: usize) -> f64 {
        let i = self.segment(t);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        match k {
            0 => a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0,
            1 => (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0 + (3.0 * b * b - 1.0) * h * m1 / 6.0,
            2 => a * m0 + b * m1,
            3 => (m1 - m0) / h,
            _ => 0.0,
        }
    }

    fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Piecewise-constant signal: `values[i]` on `[knots[i], knots[i+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::InvalidArgument(
                "piecewise-constant signal needs one more knot than values".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("knots must be strictly increasing".into()));
        }
        Ok(PiecewiseConstant { knots, values })
    }
}

impl Signal for PiecewiseConstant {
    fn derivative(&self, t: f64, k: usize) -> f64 {
        if k > 0 {
            return 0.0;
        }
        let i = self.knots.partition_point(|&x| x <= t).saturating_sub(1);
        self.values[i.min(self.values.len() - 1)]
    }

    fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}
