//! Parameterized point ensembles, their distances, and diffeotopies.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{integrate_batch_at, FlowMap, IntegratorSettings, TimeField, TimeFieldRef};
use crate::liealg::{coordinate_names, expr::Expr};

/// Points `γ(θ_k)` over a parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    theta: Vec<f64>,
    points: Vec<Vec<f64>>,
    dim: usize,
    continual: bool,
}

impl Ensemble {
    /// Ensemble over a continual parameter set; `theta` strictly increasing.
    pub fn continual(theta: Vec<f64>, points: Vec<Vec<f64>>) -> Result<Self> {
        if theta.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridMismatch("theta grid must be strictly increasing".into()));
        }
        Self::build(theta, points, true)
    }

    /// Finite ensemble with distinct labels.
    pub fn finite(labels: Vec<f64>, points: Vec<Vec<f64>>) -> Result<Self> {
        let mut sorted = labels.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::GridMismatch("ensemble labels must be distinct".into()));
        }
        Self::build(labels, points, false)
    }

    fn build(theta: Vec<f64>, points: Vec<Vec<f64>>, continual: bool) -> Result<Self> {
        if theta.len() != points.len() || theta.is_empty() {
            return Err(Error::GridMismatch(format!(
                "{} parameter nodes but {} points",
                theta.len(),
                points.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument("points need at least one coordinate".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::Dimension {
                context: "ensemble point".into(),
                expected: dim,
                found: p.len(),
            });
        }
        Ok(Ensemble {
            theta,
            points,
            dim,
            continual,
        })
    }

    /// `n_theta` uniform nodes on `[0, 1]` mapped through `f`.
    pub fn uniform(n_theta: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        if n_theta < 2 {
            return Err(Error::InvalidArgument(
                "a continual ensemble needs at least 2 nodes".into(),
            ));
        }
        let theta: Vec<f64> = (0..n_theta).map(|k| k as f64 / (n_theta - 1) as f64).collect();
        let points = theta.iter().map(|&t| f(t)).collect();
        Self::continual(theta, points)
    }

    /// Coordinates given as expressions in `theta`.
    pub fn from_expressions<S: AsRef<str>>(n_theta: usize, coords: &[S]) -> Result<Self> {
        let exprs = coords
            .iter()
            .map(|c| Expr::parse(c.as_ref(), &["theta"]))
            .collect::<Result<Vec<_>>>()?;
        Self::uniform(n_theta, |t| exprs.iter().map(|e| e.eval(&[t])).collect())
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn is_continual(&self) -> bool {
        self.continual
    }

    /// Same grid, new points.
    pub fn with_points(&self, points: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(self.theta.clone(), points, self.continual)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.get(0) != Some("theta") || headers.len() < 2 {
            return Err(Error::InvalidArgument(
                "ensemble CSV must start with a `theta` column followed by x1..xn".into(),
            ));
        }
        let mut theta = Vec::new();
        let mut points = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad number `{v}` in ensemble CSV")))
                })
                .collect::<Result<Vec<_>>>()?;
            theta.push(vals[0]);
            points.push(vals[1..].to_vec());
        }
        if theta.windows(2).all(|w| w[1] > w[0]) {
            Self::continual(theta, points)
        } else {
            Self::finite(theta, points)
        }
    }

    /// CSV with header `theta,x1..xn`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["theta".to_string()];
        header.extend(coordinate_names(self.dim));
        wr.write_record(&header)?;
        for (t, p) in self.theta.iter().zip(&self.points) {
            let mut row = vec![t.to_string()];
            row.extend(p.iter().map(f64::to_string));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn same_grid(a: &Ensemble, b: &Ensemble) -> Result<()> {
    if a.theta != b.theta {
        return Err(Error::GridMismatch(
            "ensembles live on different parameter grids".into(),
        ));
    }
    if a.dim != b.dim {
        return Err(Error::Dimension {
            context: "ensemble distance".into(),
            expected: a.dim,
            found: b.dim,
        });
    }
    Ok(())
}

fn pointwise(a: &Ensemble, b: &Ensemble) -> Vec<f64> {
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .collect()
}

/// Maps each point through the flow, annotating failures with their θ.
pub fn apply_flow(flow: &FlowMap, e: &Ensemble) -> Result<Ensemble> {
    match flow.apply_batch(&e.points) {
        Ok(points) => e.with_points(points),
        Err(_) => {
            // locate the first failing node for the diagnostic
            for (t, p) in e.theta.iter().zip(&e.points) {
                if let Err(err) = flow.apply(p) {
                    return Err(err.at_node(*t));
                }
            }
            Err(Error::InvalidArgument(
                "batch integration failed without a failing node".into(),
            ))
        }
    }
}

/// `max_θ |a(θ) − b(θ)|`.
pub fn c0_distance(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    same_grid(a, b)?;
    Ok(pointwise(a, b).into_iter().fold(0.0, f64::max))
}

/// `(∫_Θ |a − b|^p dθ)^{1/p}` by the trapezoidal rule on the grid.
pub fn lp_distance(a: &Ensemble, b: &Ensemble, p: f64) -> Result<f64> {
    same_grid(a, b)?;
    if !a.continual {
        return Err(Error::InvalidArgument("L_p distance needs a continual ensemble".into()));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument("L_p distance needs p ≥ 1".into()));
    }
    let d = pointwise(a, b);
    // scale by the sup to keep d^p representable for large p
    let m = d.iter().copied().fold(0.0, f64::max);
    if m == 0.0 {
        return Ok(0.0);
    }
    let integral: f64 = a
        .theta
        .windows(2)
        .zip(d.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * ((v[0] / m).powf(p) + (v[1] / m).powf(p)))
        .sum();
    Ok(m * integral.powf(1.0 / p))
}

/// `γ_t = R_t(start)` generated by the time-variant field `Y_t`.
#[derive(Clone)]
pub struct Diffeotopy {
    pub generator: TimeFieldRef,
    pub start: Ensemble,
    pub horizon: f64,
    pub settings: IntegratorSettings,
}

impl std::fmt::Debug for Diffeotopy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Diffeotopy")
            .field("horizon", &self.horizon)
            .field("nodes", &self.start.len())
            .finish()
    }
}

/// `γ_t` and `Y_t(γ_t(θ))` at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffeotopySample {
    pub time: f64,
    pub ensemble: Ensemble,
    pub generator_values: Vec<Vec<f64>>,
}

impl Diffeotopy {
    pub fn new(generator: TimeFieldRef, start: Ensemble, horizon: f64, settings: IntegratorSettings) -> Result<Self> {
        if generator.dim() != start.dim() {
            return Err(Error::Dimension {
                context: "diffeotopy generator".into(),
                expected: start.dim(),
                found: generator.dim(),
            });
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument("diffeotopy horizon must be positive".into()));
        }
        Ok(Diffeotopy {
            generator,
            start,
            horizon,
            settings,
        })
    }

    /// Samples at sorted times in `[0, T]`, integrating once through them.
    pub fn samples(&self, times: &[f64]) -> Result<Vec<DiffeotopySample>> {
        if times.iter().any(|&t| t < 0.0 || t > self.horizon * (1.0 + 1e-12)) {
            return Err(Error::InvalidArgument("sample time outside [0, T]".into()));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("sample times must be sorted".into()));
        }
        let mut schedule = vec![0.0];
        schedule.extend_from_slice(times);
        let states = integrate_batch_at(&*self.generator, &self.start.points, &schedule, &self.settings)?;
        let n = self.start.dim();
        states
            .into_iter()
            .skip(1)
            .zip(times)
            .map(|(pts, &t)| {
                let mut vals = Vec::with_capacity(pts.len());
                for p in &pts {
                    let mut out = vec![0.0; n];
                    self.generator.eval(t, p, &mut out)?;
                    vals.push(out);
                }
                Ok(DiffeotopySample {
                    time: t,
                    ensemble: self.start.with_points(pts)?,
                    generator_values: vals,
                })
            })
            .collect()
    }
}

/// Single-time convenience wrapper around [`Diffeotopy::samples`].
pub fn diffeotopy_sample(d: &Diffeotopy, t: f64) -> Result<DiffeotopySample> {
    Ok(d.samples(&[t])?.remove(0))
}

/// Time-variant field from coordinate expressions over `x1..xn` and `t`.
#[derive(Debug, Clone)]
pub struct ExprTimeField {
    exprs: Vec<Expr>,
}

impl ExprTimeField {
    pub fn new<S: AsRef<str>>(coords: &[S]) -> Result<Self> {
        let mut names = coordinate_names(coords.len());
        names.push("t".into());
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let exprs = coords
            .iter()
            .map(|c| Expr::parse(c.as_ref(), &refs))
            .collect::<Result<_>>()?;
        Ok(ExprTimeField { exprs })
    }

    pub fn shared<S: AsRef<str>>(coords: &[S]) -> Result<TimeFieldRef> {
        Ok(Arc::new(Self::new(coords)?))
    }
}

impl TimeField for ExprTimeField {
    fn dim(&self) -> usize {
        self.exprs.len()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let mut xt = x.to_vec();
        xt.push(t);
        for (o, e) in out.iter_mut().zip(&self.exprs) {
            *o = e.eval(&xt);
        }
        Ok(())
    }

    fn jacobian(&self, t: f64, x: &[f64]) -> Result<nalgebra::DMatrix<f64>> {
        let n = x.len();
        let mut xt = x.to_vec();
        xt.push(t);
        let jets: Vec<_> = self.exprs.iter().map(|e| e.jet(&xt, 1)).collect();
        Ok(nalgebra::DMatrix::from_fn(n, n, |i, j| jets[i].gradient_component(j)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{Constant, ControlLinearSystem};
    use crate::liealg::FieldFamily;

    fn diag(n: usize) -> Ensemble {
        Ensemble::uniform(n, |t| vec![t, 0.0]).unwrap()
    }

    #[test]
    fn c0_examples() {
        let a = diag(101);
        assert_eq!(c0_distance(&a, &a).unwrap(), 0.0);
        let shifted = a
            .with_points(a.points().iter().map(|p| vec![p[0] + 0.3, p[1] - 0.4]).collect())
            .unwrap();
        assert!((c0_distance(&a, &shifted).unwrap() - 0.5).abs() < 1e-15);
        let b = Ensemble::uniform(101, |t| vec![t, t]).unwrap();
        assert_eq!(c0_distance(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn lp_examples() {
        let a = diag(101);
        let b = Ensemble::uniform(101, |t| vec![t, t]).unwrap();
        let d = lp_distance(&a, &b, 2.0).unwrap();
        assert!((d - 1.0 / 3f64.sqrt()).abs() < 1e-4);
        let c = Ensemble::uniform(101, |t| vec![t, 1.0]).unwrap();
        for p in [1.0, 2.0, 7.5] {
            assert!((lp_distance(&a, &c, p).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = diag(11);
        let b = diag(12);
        assert!(matches!(c0_distance(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn flow_of_constant_v() {
        let sys = ControlLinearSystem::new(
            FieldFamily::gaussian(),
            vec![Arc::new(Constant(0.0)), Arc::new(Constant(1.0))],
        )
        .unwrap();
        let f = FlowMap::new(Arc::new(sys), 0.0, 1.0, Default::default());
        let out = apply_flow(&f, &diag(11)).unwrap();
        for (t, p) in out.theta().iter().zip(out.points()) {
            assert!((p[1] - (-t * t).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn linear_shear_diffeotopy() {
        let gen = ExprTimeField::shared(&["0", "x1"]).unwrap();
        let d = Diffeotopy::new(gen, diag(11), 1.0, Default::default()).unwrap();
        let samples = d.samples(&[0.0, 0.4, 1.0]).unwrap();
        assert_eq!(samples[0].ensemble, diag(11));
        for s in &samples {
            for ((t, p), y) in s
                .ensemble
                .theta()
                .iter()
                .zip(s.ensemble.points())
                .zip(&s.generator_values)
            {
                assert!((p[1] - s.time * t).abs() < 1e-14);
                assert_eq!(y, &vec![0.0, *t]);
            }
        }
    }

    #[test]
    fn csv_roundtrip() {
        let a = Ensemble::uniform(5, |t| vec![t, t * t]).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("theta,x1,x2\n"));
        assert_eq!(Ensemble::read_csv(&buf[..]).unwrap(), a);
    }
}
