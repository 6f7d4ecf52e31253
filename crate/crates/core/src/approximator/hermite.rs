//! Physicists' Hermite polynomials, Gauss–Hermite quadrature and Hermite
//! function expansions `h(θ) = Σ c_m H_m(θ) e^{-θ²}`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Overflow guard for [`hermite_poly`].
pub const HERMITE_CAP: usize = 200;

/// `H_m(x)` by `H_{m+1} = 2x H_m − 2m H_{m−1}`.
pub fn hermite_poly(m: usize, x: f64) -> Result<f64> {
    if m > HERMITE_CAP {
        return Err(Error::HermiteCap { m, cap: HERMITE_CAP });
    }
    let (mut a, mut b) = (1.0, 2.0 * x);
    if m == 0 {
        return Ok(a);
    }
    for k in 1..m {
        let c = 2.0 * x * b - 2.0 * k as f64 * a;
        a = b;
        b = c;
    }
    Ok(b)
}

/// Orthonormal Hermite functions without the weight:
/// `ψ_m = H_m / sqrt(2^m m! √π)`, for `m = 0..=max`.
fn normalized_hermite(max: usize, x: f64) -> Vec<f64> {
    let mut psi = Vec::with_capacity(max + 1);
    psi.push(std::f64::consts::PI.powf(-0.25));
    if max >= 1 {
        psi.push(std::f64::consts::SQRT_2 * x * psi[0]);
    }
    for m in 1..max {
        let mf = m as f64;
        let next = (2.0 / (mf + 1.0)).sqrt() * x * psi[m] - (mf / (mf + 1.0)).sqrt() * psi[m - 1];
        psi.push(next);
    }
    psi
}

/// `ln sqrt(2^m m! √π)`
fn log_norm(m: usize) -> f64 {
    let log_fact: f64 = (1..=m).map(|k| (k as f64).ln()).sum();
    0.5 * (m as f64 * std::f64::consts::LN_2 + log_fact + 0.5 * std::f64::consts::PI.ln())
}

/// Gauss–Hermite nodes and weights for `∫ f(x) e^{-x²} dx` (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], sqrt_pi * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// A scalar function with a declared support; it is treated as zero
/// outside the support.
#[derive(Clone)]
pub struct Profile {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub support: (f64, f64),
    pub label: String,
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Profile({}, support {:?})", self.label, self.support)
    }
}

impl Profile {
    pub fn new(label: impl Into<String>, support: (f64, f64), f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Profile {
            f: Arc::new(f),
            support,
            label: label.into(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < self.support.0 || x > self.support.1 {
            0.0
        } else {
            (self.f)(x)
        }
    }

    /// Smooth cutoff extension of `θ ↦ θ e^{θ²}`, so that
    /// `g(θ) e^{-θ²} ≈ θ` on `[0, 1]`.
    ///
    /// The cutoff is `χ = ½[erf((θ+2)/w) − erf((θ−2.25)/w)]` with `w = 0.5`;
    /// on `[0, 1]` it differs from 1 by less than `3·10⁻⁴`, and the resulting
    /// expansion error is included in every measured sup error.
    pub fn identity_extension() -> Self {
        let (a, b, w) = (-2.0, 2.25, 0.5);
        Profile::new("theta*exp(theta^2)*cutoff", (-5.0, 6.5), move |t: f64| {
            let chi = 0.5 * (libm::erf((t - a) / w) - libm::erf((t - b) / w));
            t * (t * t).exp() * chi
        })
    }
}

/// `h(θ) = Σ_{m≤M} c_m H_m(θ) e^{-θ²}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HermiteExpansion {
    #[serde(rename = "M")]
    pub order: usize,
    pub coeffs: Vec<f64>,
    /// Coefficients against the orthonormal `ψ_m`; used for evaluation.
    #[serde(skip)]
    normalized: Vec<f64>,
    pub quadrature_nodes: usize,
    pub warning: Option<String>,
}

impl HermiteExpansion {
    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        let normalized = coeffs.iter().enumerate().map(|(m, c)| c * log_norm(m).exp()).collect();
        HermiteExpansion {
            order: coeffs.len().saturating_sub(1),
            coeffs,
            normalized,
            quadrature_nodes: 0,
            warning: None,
        }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        if self.normalized.is_empty() {
            return 0.0;
        }
        let psi = normalized_hermite(self.order, theta);
        let s: f64 = self.normalized.iter().zip(&psi).map(|(a, p)| a * p).sum();
        s * (-theta * theta).exp()
    }

    /// `h'(θ)` via `H'_m = 2m H_{m−1}`.
    pub fn derivative(&self, theta: f64) -> f64 {
        if self.normalized.is_empty() {
            return 0.0;
        }
        let psi = normalized_hermite(self.order, theta);
        let mut s = 0.0;
        for (m, a) in self.normalized.iter().enumerate() {
            let lower = if m > 0 {
                (2.0 * m as f64).sqrt() * psi[m - 1]
            } else {
                0.0
            };
            s += a * (lower - 2.0 * theta * psi[m]);
        }
        s * (-theta * theta).exp()
    }

    /// `max |h(θ) − target(θ)|` over `nodes` uniform points of `[a, b]`.
    pub fn sup_error(&self, interval: (f64, f64), nodes: usize, target: impl Fn(f64) -> f64) -> f64 {
        grid(interval, nodes)
            .map(|t| (self.eval(t) - target(t)).abs())
            .fold(0.0, f64::max)
    }
}

fn grid(interval: (f64, f64), nodes: usize) -> impl Iterator<Item = f64> {
    let (a, b) = interval;
    (0..nodes).map(move |i| a + (b - a) * i as f64 / (nodes - 1) as f64)
}

fn project(profile: &Profile, order: usize, nodes: usize) -> Vec<f64> {
    let (x, w) = gauss_hermite(nodes);
    let mut a = vec![0.0; order + 1];
    for (xi, wi) in x.iter().zip(&w) {
        let g = profile.eval(*xi);
        if g == 0.0 {
            continue;
        }
        let psi = normalized_hermite(order, *xi);
        for (am, p) in a.iter_mut().zip(&psi) {
            *am += wi * g * p;
        }
    }
    a
}

/// Hermite coefficients `c_m = (2^m m! √π)⁻¹ ∫ g H_m e^{-x²} dx`, `m ≤ M`,
/// by Gauss–Hermite quadrature with `2M + 16` nodes, checked against a
/// doubled node count.
pub fn expand_profile(profile: &Profile, order: usize) -> Result<HermiteExpansion> {
    if order > HERMITE_CAP {
        return Err(Error::HermiteCap {
            m: order,
            cap: HERMITE_CAP,
        });
    }
    let nodes = 2 * order + 16;
    let a = project(profile, order, nodes);
    let a2 = project(profile, order, 2 * nodes);
    let to_c = |a: &[f64]| -> Vec<f64> { a.iter().enumerate().map(|(m, v)| v * (-log_norm(m)).exp()).collect() };
    let c = to_c(&a);
    let c2 = to_c(&a2);
    let change = c.iter().zip(&c2).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let warning = (change > 1e-10)
        .then(|| format!("quadrature not converged: coefficients moved by {change:.2e} when doubling {nodes} nodes"));
    if let Some(w) = &warning {
        log::warn!("{} at M = {order}: {w}", profile.label);
    }
    Ok(HermiteExpansion {
        order,
        coeffs: c,
        normalized: a,
        quadrature_nodes: nodes,
        warning,
    })
}

/// `max (|h| + |h'|)` over 1001 uniform nodes of the interval.
pub fn profile_derivative_bound(h: &HermiteExpansion, interval: (f64, f64)) -> f64 {
    grid(interval, 1001)
        .map(|t| h.eval(t).abs() + h.derivative(t).abs())
        .fold(0.0, f64::max)
}

/// Report entry for one truncation order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HermiteReport {
    #[serde(rename = "M")]
    pub order: usize,
    pub coeffs: Vec<f64>,
    pub sup_error: f64,
    pub lambda_bound: f64,
    pub warning: Option<String>,
}

/// Expands [`Profile::identity_extension`] at order `M` and measures it
/// against the identity on `interval`.
pub fn identity_report(order: usize, interval: (f64, f64)) -> Result<HermiteReport> {
    let h = expand_profile(&Profile::identity_extension(), order)?;
    Ok(HermiteReport {
        order,
        sup_error: h.sup_error(interval, 1001, |t| t),
        lambda_bound: profile_derivative_bound(&h, interval),
        coeffs: h.coeffs.clone(),
        warning: h.warning.clone(),
    })
}
