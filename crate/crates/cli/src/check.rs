//! Built-in invariant suite behind `ensemble-steer check`.

use std::sync::Arc;

use ensemble_steer::approximator::{expand_profile, gauss_hermite, hermite_poly, identity_report, Profile};
use ensemble_steer::flow::{
    check_variational_formula, CompactBox, ControlLinearSystem, IntegratorSettings, SignalRef, Sinusoid,
};
use ensemble_steer::liealg::{bracket, iterated_bracket, pushforward_remainder, BracketWord, FieldFamily, SmoothField};
use ensemble_steer::oscillate::{loglog_slope, single_bracket_reduce, Channel};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub bound: f64,
    pub passed: bool,
}

/// `scale` multiplies every absolute tolerance; slope thresholds are kept.
pub fn run_checks(scale: f64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut at_most = |name: &str, measured: Result<f64, ensemble_steer::Error>, tol: f64| {
        let bound = tol * scale;
        let measured = measured.unwrap_or(f64::NAN);
        out.push(CheckResult {
            name: name.into(),
            measured,
            relation: Relation::AtMost,
            bound,
            passed: measured <= bound,
        });
    };
    at_most("bracket.hermite_words", hermite_words(), 1e-8);
    let pts = halton(100);
    at_most("bracket.antisymmetry", antisymmetry(&pts), 1e-9);
    at_most("bracket.bilinearity", bilinearity(&pts), 1e-9);
    at_most("bracket.jacobi", jacobi(&pts), 1e-7);
    at_most("variational.formula", variational(), 1e-5);
    at_most("hermite.h3_norm", h3_norm(), 1e-9);
    at_most("hermite.derivative", hermite_derivative(), 1e-6);
    at_most(
        "hermite.identity_m40",
        identity_report(40, (0.0, 1.0)).map(|r| r.sup_error),
        1e-2,
    );
    at_most("oscillate.product_identity", product_identity(), 1e-12);

    for (n, min) in [(1, 0.9), (2, 1.8)] {
        let measured = pushforward_slope(n).unwrap_or(f64::NAN);
        out.push(CheckResult {
            name: format!("pushforward.order{n}_slope"),
            measured,
            relation: Relation::AtLeast,
            bound: min,
            passed: measured >= min,
        });
    }
    out
}

/// Halton points (bases 2, 3) in `[-1, 1]²`.
fn halton(n: usize) -> Vec<Vec<f64>> {
    let radical = |mut k: usize, b: usize| {
        let (mut f, mut r) = (1.0, 0.0);
        while k > 0 {
            f /= b as f64;
            r += f * (k % b) as f64;
            k /= b;
        }
        r
    };
    (1..=n)
        .map(|k| vec![2.0 * radical(k, 2) - 1.0, 2.0 * radical(k, 3) - 1.0])
        .collect()
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn triple() -> Result<[SmoothField; 3], ensemble_steer::Error> {
    let fam = FieldFamily::gaussian();
    let z = SmoothField::from_expressions("Z", &["x1*x2 + 0.5", "x1^2 - x2"])?;
    Ok([fam.members()[0].clone(), fam.members()[1].clone(), z])
}

fn hermite_words() -> Result<f64, ensemble_steer::Error> {
    let fam = FieldFamily::gaussian();
    let mut worst = 0.0f64;
    for k in 0..=6 {
        let f = iterated_bracket(&fam, &BracketWord::power(1, k, 2))?;
        for x1 in [-1.0, 0.0, 0.5, 1.0] {
            let v = f.eval(&[x1, 0.0]);
            let expect = (-1f64).powi(k as i32) * hermite_poly(k, x1)? * (-x1 * x1).exp();
            worst = worst.max(v[0].abs()).max((v[1] - expect).abs());
        }
    }
    Ok(worst)
}

fn antisymmetry(pts: &[Vec<f64>]) -> Result<f64, ensemble_steer::Error> {
    let [a, b, c] = triple()?;
    let mut worst = 0.0f64;
    for (p, q) in [(&a, &b), (&b, &c), (&a, &c)] {
        let (l, r) = (bracket(p, q)?, bracket(q, p)?);
        for x in pts {
            let neg: Vec<f64> = r.eval(x).iter().map(|v| -v).collect();
            worst = worst.max(norm_diff(&l.eval(x), &neg));
        }
    }
    Ok(worst)
}

fn bilinearity(pts: &[Vec<f64>]) -> Result<f64, ensemble_steer::Error> {
    let [a, b, c] = triple()?;
    let (s, t) = (0.7, -1.3);
    let comb = SmoothField::combination(vec![(s, a.clone()), (t, b.clone())])?;
    let l = bracket(&comb, &c)?;
    let (ra, rb) = (bracket(&a, &c)?, bracket(&b, &c)?);
    let mut worst = 0.0f64;
    for x in pts {
        let r: Vec<f64> = ra.eval(x).iter().zip(rb.eval(x)).map(|(u, v)| s * u + t * v).collect();
        worst = worst.max(norm_diff(&l.eval(x), &r));
    }
    Ok(worst)
}

fn jacobi(pts: &[Vec<f64>]) -> Result<f64, ensemble_steer::Error> {
    let [a, b, c] = triple()?;
    let terms = [
        bracket(&a, &bracket(&b, &c)?)?,
        bracket(&b, &bracket(&c, &a)?)?,
        bracket(&c, &bracket(&a, &b)?)?,
    ];
    let mut worst = 0.0f64;
    for x in pts {
        let mut sum = vec![0.0; 2];
        for f in &terms {
            for (s, v) in sum.iter_mut().zip(f.eval(x)) {
                *s += v;
            }
        }
        worst = worst.max(norm_diff(&sum, &[0.0, 0.0]));
    }
    Ok(worst)
}

/// `f_t = cos(t)·f2`, `g = f1`, `U(t) = 0.8 sin 2t` on `[-1, 1]²`.
fn variational() -> Result<f64, ensemble_steer::Error> {
    let fam = FieldFamily::gaussian();
    let v: SignalRef = Arc::new(Sinusoid {
        amplitude: 1.0,
        omega: 1.0,
        phase: std::f64::consts::FRAC_PI_2,
    });
    let f = Arc::new(ControlLinearSystem::new(
        FieldFamily::new(vec![fam.members()[1].clone()])?,
        vec![v],
    )?);
    let u: SignalRef = Arc::new(Sinusoid {
        amplitude: 0.8,
        omega: 2.0,
        phase: 0.0,
    });
    let k = CompactBox::cube(2, -1.0, 1.0, 3)?;
    Ok(check_variational_formula(f, fam.members()[0].clone(), u, &k, 1.0, 1e-3, 2e-4)?.residual)
}

/// Relative error of the quadrature value of `∫ H₃² e^{-x²}` against `48√π`.
fn h3_norm() -> Result<f64, ensemble_steer::Error> {
    let (x, w) = gauss_hermite(8);
    let mut q = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        q += wi * hermite_poly(3, *xi)?.powi(2);
    }
    let exact = 48.0 * std::f64::consts::PI.sqrt();
    Ok((q - exact).abs() / exact)
}

/// Analytic derivative of an expansion against a central difference.
fn hermite_derivative() -> Result<f64, ensemble_steer::Error> {
    let profile = Profile::new("bump", (-4.0, 4.0), |t| (-(t - 0.3) * (t - 0.3)).exp() * t.cos());
    let h = expand_profile(&profile, 20)?;
    let step = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..=40 {
        let t = -2.0 + 0.1 * k as f64;
        let fd = (h.eval(t + step) - h.eval(t - step)) / (2.0 * step);
        worst = worst.max((fd - h.derivative(t)).abs());
    }
    Ok(worst)
}

fn product_identity() -> Result<f64, ensemble_steer::Error> {
    let ctl = single_bracket_reduce(Channel::zero(), Channel::zero(), Channel::constant(0.7, 1.0), 0.1, 1.0)?;
    let level = &ctl.levels[0];
    Ok((0..=200)
        .map(|k| level.product_identity_residual(k as f64 / 200.0).abs())
        .fold(0.0, f64::max))
}

fn pushforward_slope(n: usize) -> Result<f64, ensemble_steer::Error> {
    let fam = FieldFamily::gaussian();
    let grid = CompactBox::cube(2, -1.0, 1.0, 3)?.grid();
    let settings = IntegratorSettings::default().with_h_max(1e-3);
    let us = [0.2, 0.1, 0.05];
    let r = us
        .iter()
        .map(|&u| pushforward_remainder(&fam.members()[0], &fam.members()[1], u, n, &grid, &settings))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(loglog_slope(&us, &r))
}
