//! Time-variant dynamics, fixed-step RK4 flows and flow-map distances.
//!
//! Step policy: `h = min(h_max, 2π/(samples·ω))` where `ω` is the largest
//! angular frequency declared by the right-hand side, so that every carrier
//! period gets at least `samples` steps.

mod signal;
mod variational;

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use signal::{Constant, CubicSpline, FnSignal, PiecewiseConstant, Signal, SignalRef, Sinusoid};
pub use variational::{check_variational_formula, VariationalReport};

use crate::error::{Error, Result};
use crate::liealg::{FieldFamily, SmoothField};

/// A time-dependent vector field on ℝⁿ.
pub trait TimeField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn jacobian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>>;

    /// Largest angular frequency in the time dependence.
    fn max_frequency(&self) -> f64 {
        0.0
    }

    /// Evaluates at many points sharing `t`; `xs` and `out` are row-major
    /// `N × n`. Implementations must give each point the same arithmetic as
    /// [`TimeField::eval`].
    fn eval_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        for (x, o) in xs.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            self.eval(t, x, o)?;
        }
        Ok(())
    }
}

pub type TimeFieldRef = Arc<dyn TimeField>;

/// A time-invariant field viewed as a [`TimeField`].
#[derive(Debug, Clone)]
pub struct Autonomous(pub SmoothField);

impl TimeField for Autonomous {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.0.eval_into(x, out);
        Ok(())
    }

    fn jacobian(&self, _t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        self.0.jacobian(x)
    }
}

/// `ẋ = Σ_j f_j(x) u_j(t)`.
#[derive(Clone)]
pub struct ControlLinearSystem {
    family: FieldFamily,
    controls: Vec<SignalRef>,
}

impl fmt::Debug for ControlLinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlLinearSystem")
            .field("dim", &self.family.dim())
            .field("controls", &self.controls)
            .finish()
    }
}

impl ControlLinearSystem {
    pub fn new(family: FieldFamily, controls: Vec<SignalRef>) -> Result<Self> {
        if controls.len() != family.len() {
            return Err(Error::Dimension {
                context: "control channels".into(),
                expected: family.len(),
                found: controls.len(),
            });
        }
        Ok(ControlLinearSystem { family, controls })
    }

    pub fn family(&self) -> &FieldFamily {
        &self.family
    }

    pub fn controls(&self) -> &[SignalRef] {
        &self.controls
    }
}

impl TimeField for ControlLinearSystem {
    fn dim(&self) -> usize {
        self.family.dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.eval_batch(t, x, out)
    }

    fn eval_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        let u: Vec<f64> = self.controls.iter().map(|c| c.value(t)).collect();
        let mut tmp = vec![0.0; n];
        for (x, o) in xs.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            o.iter_mut().for_each(|v| *v = 0.0);
            for (f, &uj) in self.family.members().iter().zip(&u) {
                if uj == 0.0 {
                    continue;
                }
                f.eval_into(x, &mut tmp);
                for (a, b) in o.iter_mut().zip(&tmp) {
                    *a += uj * b;
                }
            }
        }
        Ok(())
    }

    fn jacobian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        for (f, c) in self.family.members().iter().zip(&self.controls) {
            let uj = c.value(t);
            if uj != 0.0 {
                jac += f.jacobian(x)? * uj;
            }
        }
        Ok(jac)
    }

    fn max_frequency(&self) -> f64 {
        self.controls.iter().map(|c| c.max_frequency()).fold(0.0, f64::max)
    }
}

/// Axis-aligned box with a grid resolution per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactBox {
    pub intervals: Vec<[f64; 2]>,
    pub resolution: Vec<usize>,
}

impl CompactBox {
    pub fn new(intervals: Vec<[f64; 2]>, resolution: Vec<usize>) -> Result<Self> {
        if intervals.is_empty() || intervals.len() != resolution.len() {
            return Err(Error::InvalidArgument(
                "box needs one interval and one resolution per axis".into(),
            ));
        }
        if intervals
            .iter()
            .any(|[a, b]| !(a <= b) || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::InvalidArgument("box intervals must be finite with a ≤ b".into()));
        }
        if resolution.iter().any(|&r| r < 2) {
            return Err(Error::InvalidArgument(
                "box resolution must be at least 2 per axis".into(),
            ));
        }
        Ok(CompactBox { intervals, resolution })
    }

    /// Same intervals and resolution on every axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, resolution: usize) -> Result<Self> {
        Self::new(vec![[lo, hi]; dim], vec![resolution; dim])
    }

    /// Smallest box containing `points`, resolution 2.
    pub fn bounding(points: &[Vec<f64>]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty point set".into()))?;
        let mut iv: Vec<[f64; 2]> = first.iter().map(|&v| [v, v]).collect();
        for p in points {
            for (b, &v) in iv.iter_mut().zip(p) {
                b[0] = b[0].min(v);
                b[1] = b[1].max(v);
            }
        }
        let n = iv.len();
        Self::new(iv, vec![2; n])
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    /// Guard box: half-widths doubled about the center, never below 1.
    pub fn guard(&self) -> CompactBox {
        let intervals = self
            .intervals
            .iter()
            .map(|[a, b]| {
                let c = 0.5 * (a + b);
                let h = (b - a).max(1.0);
                [c - h, c + h]
            })
            .collect();
        CompactBox {
            intervals,
            resolution: self.resolution.clone(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.intervals).all(|(v, [a, b])| *v >= *a && *v <= *b)
    }

    /// Tensor grid, first axis varying slowest.
    pub fn grid(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .intervals
            .iter()
            .zip(&self.resolution)
            .map(|([a, b], &r)| (0..r).map(|i| a + (b - a) * i as f64 / (r - 1) as f64).collect())
            .collect();
        let mut out = vec![vec![]];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for p in &out {
                for &v in axis {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            out = next;
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSettings {
    /// Largest step regardless of frequency content.
    pub h_max: f64,
    /// Minimum steps per period of the fastest declared oscillation.
    pub samples_per_period: f64,
    /// Refuse integrations needing more steps than this.
    pub max_steps: u64,
    /// Escape from this box is an error; `None` disables the check.
    pub guard: Option<CompactBox>,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            h_max: 1e-2,
            samples_per_period: 40.0,
            max_steps: 100_000_000,
            guard: None,
        }
    }
}

impl IntegratorSettings {
    pub fn with_guard(mut self, guard: CompactBox) -> Self {
        self.guard = Some(guard);
        self
    }

    pub fn with_h_max(mut self, h: f64) -> Self {
        self.h_max = h;
        self
    }

    /// Step size for a right-hand side with angular frequency `omega`.
    pub fn step_for(&self, omega: f64) -> f64 {
        if omega > 0.0 {
            self.h_max
                .min(2.0 * std::f64::consts::PI / (self.samples_per_period * omega))
        } else {
            self.h_max
        }
    }

    /// Number of uniform steps for a span, checked against the budget.
    pub fn steps_for(&self, span: f64, omega: f64) -> Result<usize> {
        if span == 0.0 {
            return Ok(0);
        }
        let h = self.step_for(omega);
        let n = (span.abs() / h).ceil();
        if !n.is_finite() || n > self.max_steps as f64 {
            return Err(Error::StepBudget {
                required: if n.is_finite() { n as u64 } else { u64::MAX },
                budget: self.max_steps,
                frequency: omega,
            });
        }
        Ok((n as usize).max(1))
    }
}

/// Classical RK4 on a batch of points sharing the time grid.
struct BatchStepper<'a> {
    field: &'a dyn TimeField,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> BatchStepper<'a> {
    fn new(field: &'a dyn TimeField, len: usize) -> Self {
        BatchStepper {
            field,
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }

    fn step(&mut self, t: f64, h: f64, y: &mut [f64]) -> Result<()> {
        let f = self.field;
        f.eval_batch(t, y, &mut self.k1)?;
        for ((o, a), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k1) {
            *o = a + 0.5 * h * k;
        }
        f.eval_batch(t + 0.5 * h, &self.tmp, &mut self.k2)?;
        for ((o, a), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k2) {
            *o = a + 0.5 * h * k;
        }
        f.eval_batch(t + 0.5 * h, &self.tmp, &mut self.k3)?;
        for ((o, a), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k3) {
            *o = a + h * k;
        }
        f.eval_batch(t + h, &self.tmp, &mut self.k4)?;
        for (i, v) in y.iter_mut().enumerate() {
            *v += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

fn check_states(y: &[f64], n: usize, t: f64, guard: Option<&CompactBox>) -> Result<()> {
    for p in y.chunks_exact(n) {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Stiffness { t });
        }
        if let Some(g) = guard {
            if !g.contains(p) {
                return Err(Error::Domain { t, point: p.to_vec() });
            }
        }
    }
    Ok(())
}

fn chunk_len(points: usize) -> usize {
    let workers = rayon::current_num_threads().max(1) * 4;
    points.div_ceil(workers).max(1)
}

/// Integrates every point of `points` through consecutive `times`
/// (`times[0]` is the start), returning the states at each time.
pub fn integrate_batch_at(
    field: &dyn TimeField,
    points: &[Vec<f64>],
    times: &[f64],
    settings: &IntegratorSettings,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = field.dim();
    for p in points {
        if p.len() != n {
            return Err(Error::Dimension {
                context: "initial point".into(),
                expected: n,
                found: p.len(),
            });
        }
    }
    if times.is_empty() {
        return Ok(vec![]);
    }
    let omega = field.max_frequency();
    let mut total = 0u64;
    let mut segments = Vec::with_capacity(times.len().saturating_sub(1));
    for w in times.windows(2) {
        let steps = settings.steps_for(w[1] - w[0], omega)?;
        total += steps as u64;
        segments.push(steps);
    }
    if total > settings.max_steps {
        return Err(Error::StepBudget {
            required: total,
            budget: settings.max_steps,
            frequency: omega,
        });
    }
    let chunk = chunk_len(points.len());
    let per_chunk: Vec<Result<Vec<Vec<Vec<f64>>>>> = points
        .par_chunks(chunk)
        .map(|pts| {
            let mut y: Vec<f64> = pts.iter().flatten().copied().collect();
            let mut stepper = BatchStepper::new(field, y.len());
            let unflatten = |y: &[f64]| y.chunks_exact(n).map(<[f64]>::to_vec).collect::<Vec<_>>();
            let mut out = Vec::with_capacity(times.len());
            out.push(unflatten(&y));
            for (w, &steps) in times.windows(2).zip(&segments) {
                let (t0, t1) = (w[0], w[1]);
                if steps > 0 {
                    let h = (t1 - t0) / steps as f64;
                    for k in 0..steps {
                        let t = t0 + k as f64 * h;
                        stepper.step(t, h, &mut y)?;
                        check_states(&y, n, t + h, settings.guard.as_ref())?;
                    }
                }
                out.push(unflatten(&y));
            }
            Ok(out)
        })
        .collect();
    let mut result: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(points.len()); times.len()];
    for chunk in per_chunk {
        for (slot, states) in result.iter_mut().zip(chunk?) {
            slot.extend(states);
        }
    }
    Ok(result)
}

/// State and Jacobian `D_x P(x)` of the flow, integrated jointly.
pub fn integrate_with_jacobian(
    field: &dyn TimeField,
    x0: &[f64],
    t0: f64,
    t1: f64,
    settings: &IntegratorSettings,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = field.dim();
    let steps = settings.steps_for(t1 - t0, field.max_frequency())?;
    let mut x = x0.to_vec();
    let mut jac = DMatrix::<f64>::identity(n, n);
    if steps == 0 {
        return Ok((x, jac));
    }
    let h = (t1 - t0) / steps as f64;
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    let mut f3 = vec![0.0; n];
    let mut f4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        field.eval(t, &x, &mut f1)?;
        let a1 = field.jacobian(t, &x)? * &jac;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * f1[i];
        }
        field.eval(t + 0.5 * h, &tmp, &mut f2)?;
        let a2 = field.jacobian(t + 0.5 * h, &tmp)? * (&jac + &a1 * (0.5 * h));
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * f2[i];
        }
        field.eval(t + 0.5 * h, &tmp, &mut f3)?;
        let a3 = field.jacobian(t + 0.5 * h, &tmp)? * (&jac + &a2 * (0.5 * h));
        for i in 0..n {
            tmp[i] = x[i] + h * f3[i];
        }
        field.eval(t + h, &tmp, &mut f4)?;
        let a4 = field.jacobian(t + h, &tmp)? * (&jac + &a3 * h);
        for i in 0..n {
            x[i] += h / 6.0 * (f1[i] + 2.0 * f2[i] + 2.0 * f3[i] + f4[i]);
        }
        jac += (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
        check_states(&x, n, t + h, settings.guard.as_ref())?;
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::Stiffness { t: t + h });
        }
    }
    Ok((x, jac))
}

/// Time-stamped states of one initial point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    /// CSV with header `t,x1..xn`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(crate::liealg::coordinate_names(n));
        wr.write_record(&header)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Flow `P_{t0→t1}` of a time-variant field.
#[derive(Clone)]
pub struct FlowMap {
    pub field: TimeFieldRef,
    pub t0: f64,
    pub t1: f64,
    pub settings: IntegratorSettings,
}

impl fmt::Debug for FlowMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowMap")
            .field("t0", &self.t0)
            .field("t1", &self.t1)
            .field("settings", &self.settings)
            .finish()
    }
}

impl FlowMap {
    pub fn new(field: TimeFieldRef, t0: f64, t1: f64, settings: IntegratorSettings) -> Self {
        FlowMap {
            field,
            t0,
            t1,
            settings,
        }
    }

    pub fn autonomous(field: SmoothField, t0: f64, t1: f64, settings: IntegratorSettings) -> Self {
        Self::new(Arc::new(Autonomous(field)), t0, t1, settings)
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn step_size(&self) -> f64 {
        self.settings.step_for(self.field.max_frequency())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply_batch(&[x.to_vec()])?.remove(0))
    }

    pub fn apply_batch(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut all = integrate_batch_at(&*self.field, points, &[self.t0, self.t1], &self.settings)?;
        Ok(all.pop().unwrap_or_default())
    }

    /// States of every point at each of `times` (within `[t0, t1]`, sorted).
    pub fn apply_batch_at(&self, points: &[Vec<f64>], times: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut grid = vec![self.t0];
        grid.extend_from_slice(times);
        let mut all = integrate_batch_at(&*self.field, points, &grid, &self.settings)?;
        all.remove(0);
        Ok(all)
    }

    /// Dense output of a single point at the requested times.
    pub fn integrate_point(&self, x0: &[f64], times: &[f64]) -> Result<Trajectory> {
        let states = self
            .apply_batch_at(&[x0.to_vec()], times)?
            .into_iter()
            .map(|mut v| v.remove(0))
            .collect();
        Ok(Trajectory {
            times: times.to_vec(),
            states,
        })
    }

    pub fn apply_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        integrate_with_jacobian(&*self.field, x, self.t0, self.t1, &self.settings)
    }

    pub fn apply_with_jacobian_batch(&self, points: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, DMatrix<f64>)>> {
        points.par_iter().map(|x| self.apply_with_jacobian(x)).collect()
    }
}

/// `count` uniform checkpoints over `(t0, t1]`, the last one at `t1`.
pub fn checkpoints(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|k| t0 + (t1 - t0) * k as f64 / count as f64).collect()
}

/// A grid-sup distance together with the grid it was measured on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowDistance {
    pub value: f64,
    pub nodes: usize,
    pub resolution: Vec<usize>,
    pub worst_node: Vec<f64>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `max_{x ∈ grid(K)} |P(x) − Q(x)|`.
pub fn flow_c0_distance(p: &FlowMap, q: &FlowMap, k: &CompactBox) -> Result<FlowDistance> {
    let grid = k.grid();
    let a = p.apply_batch(&grid)?;
    let b = q.apply_batch(&grid)?;
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| euclid(x, y)).collect();
    let i = argmax(&d);
    Ok(FlowDistance {
        value: d[i],
        nodes: grid.len(),
        resolution: k.resolution.clone(),
        worst_node: grid[i].clone(),
    })
}

/// `max_{x ∈ grid(K)} |P(x) − Q(x)| + |DP(x) − DQ(x)|_F`.
pub fn flow_c1_distance(p: &FlowMap, q: &FlowMap, k: &CompactBox) -> Result<FlowDistance> {
    let grid = k.grid();
    let a = p.apply_with_jacobian_batch(&grid)?;
    let b = q.apply_with_jacobian_batch(&grid)?;
    let d: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|((x, jx), (y, jy))| euclid(x, y) + (jx - jy).norm())
        .collect();
    let i = argmax(&d);
    Ok(FlowDistance {
        value: d[i],
        nodes: grid.len(),
        resolution: k.resolution.clone(),
        worst_node: grid[i].clone(),
    })
}

/// Distances between two flows sampled on a shared fine grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LockstepComparison {
    /// Sup over points and over every step of the fine grid.
    pub dense_sup: f64,
    pub checkpoint_times: Vec<f64>,
    /// Sup over points at each checkpoint.
    pub checkpoint_distances: Vec<f64>,
    pub steps: usize,
    pub step: f64,
}

/// Integrates `points` under both fields and records their separation.
///
/// Each field runs at its own step policy. The field needing fewer steps
/// (rounded up to a multiple of `checkpoints`) is integrated first and
/// evaluated at the other field's steps by cubic Hermite interpolation;
/// the other field's step count is rounded up to a multiple of it, so the
/// checkpoints and the coarse nodes lie on the fine grid. With equal
/// policies both fields share one grid and no interpolation happens.
pub fn compare_in_lockstep(
    a: &dyn TimeField,
    b: &dyn TimeField,
    points: &[Vec<f64>],
    t0: f64,
    t1: f64,
    checkpoints: usize,
    settings: &IntegratorSettings,
) -> Result<LockstepComparison> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::Dimension {
            context: "lockstep comparison".into(),
            expected: n,
            found: b.dim(),
        });
    }
    let raw_a = settings.steps_for(t1 - t0, a.max_frequency())?.max(1);
    let raw_b = settings.steps_for(t1 - t0, b.max_frequency())?.max(1);
    let (coarse, fine, raw_c, raw_f) = if raw_a <= raw_b {
        (a, b, raw_a, raw_b)
    } else {
        (b, a, raw_b, raw_a)
    };
    let coarse_steps = raw_c.div_ceil(checkpoints) * checkpoints;
    let steps = raw_f.div_ceil(coarse_steps) * coarse_steps;
    if steps as u64 > settings.max_steps {
        return Err(Error::StepBudget {
            required: steps as u64,
            budget: settings.max_steps,
            frequency: a.max_frequency().max(b.max_frequency()),
        });
    }
    let ratio = steps / coarse_steps;
    let stride = steps / checkpoints;
    let h = (t1 - t0) / steps as f64;
    let hc = (t1 - t0) / coarse_steps as f64;
    let chunk = chunk_len(points.len());
    let per_chunk: Vec<Result<(f64, Vec<f64>)>> = points
        .par_chunks(chunk)
        .map(|pts| {
            let y0: Vec<f64> = pts.iter().flatten().copied().collect();
            let len = y0.len();
            // coarse trajectory with slopes at the nodes
            let mut nodes: Vec<Vec<f64>> = Vec::with_capacity(coarse_steps + 1);
            let mut slopes: Vec<Vec<f64>> = Vec::with_capacity(coarse_steps + 1);
            let mut yc = y0.clone();
            let mut sc = BatchStepper::new(coarse, len);
            let mut f = vec![0.0; len];
            if ratio > 1 {
                coarse.eval_batch(t0, &yc, &mut f)?;
                nodes.push(yc.clone());
                slopes.push(f.clone());
                for i in 0..coarse_steps {
                    let t = t0 + i as f64 * hc;
                    sc.step(t, hc, &mut yc)?;
                    check_states(&yc, n, t + hc, settings.guard.as_ref())?;
                    coarse.eval_batch(t + hc, &yc, &mut f)?;
                    nodes.push(yc.clone());
                    slopes.push(f.clone());
                }
            }
            let mut yf = y0.clone();
            let mut sf = BatchStepper::new(fine, len);
            let mut interp = vec![0.0; len];
            let mut dense = 0.0f64;
            let mut cps = Vec::with_capacity(checkpoints);
            for k in 0..steps {
                let t = t0 + k as f64 * h;
                sf.step(t, h, &mut yf)?;
                check_states(&yf, n, t + h, settings.guard.as_ref())?;
                let reference: &[f64] = if ratio > 1 {
                    let i = (k + 1) / ratio;
                    let r = (k + 1) % ratio;
                    if r == 0 {
                        &nodes[i]
                    } else {
                        let s = r as f64 / ratio as f64;
                        let (h00, h10) = (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s);
                        let (h01, h11) = (-2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
                        for (j, v) in interp.iter_mut().enumerate() {
                            *v = h00 * nodes[i][j]
                                + h10 * hc * slopes[i][j]
                                + h01 * nodes[i + 1][j]
                                + h11 * hc * slopes[i + 1][j];
                        }
                        &interp
                    }
                } else {
                    sc.step(t, h, &mut yc)?;
                    check_states(&yc, n, t + h, settings.guard.as_ref())?;
                    &yc
                };
                let d = reference
                    .chunks_exact(n)
                    .zip(yf.chunks_exact(n))
                    .map(|(p, q)| euclid(p, q))
                    .fold(0.0, f64::max);
                dense = dense.max(d);
                if (k + 1) % stride == 0 {
                    cps.push(d);
                }
            }
            Ok((dense, cps))
        })
        .collect();
    let mut dense_sup = 0.0f64;
    let mut checkpoint_distances = vec![0.0f64; checkpoints];
    for r in per_chunk {
        let (d, cps) = r?;
        dense_sup = dense_sup.max(d);
        for (slot, v) in checkpoint_distances.iter_mut().zip(cps) {
            *slot = slot.max(v);
        }
    }
    Ok(LockstepComparison {
        dense_sup,
        checkpoint_times: self::checkpoints(t0, t1, checkpoints),
        checkpoint_distances,
        steps,
        step: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss_system(u: f64, v: f64) -> ControlLinearSystem {
        ControlLinearSystem::new(
            FieldFamily::gaussian(),
            vec![Arc::new(Constant(u)), Arc::new(Constant(v))],
        )
        .unwrap()
    }

    #[test]
    fn zero_span_is_exact_identity() {
        let f = FlowMap::new(Arc::new(gauss_system(1.0, 1.0)), 0.3, 0.3, Default::default());
        let x = [0.1234567, -9.87654321];
        assert_eq!(f.apply(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_controls_constant_trajectory() {
        let f = FlowMap::new(Arc::new(gauss_system(0.0, 0.0)), 0.0, 1.0, Default::default());
        let tr = f.integrate_point(&[0.3, 0.4], &[0.25, 0.5, 1.0]).unwrap();
        assert!(tr.states.iter().all(|s| s == &vec![0.3, 0.4]));
    }

    #[test]
    fn decoupled_integrator_endpoint() {
        let f = FlowMap::new(Arc::new(gauss_system(1.0, 0.0)), 0.0, 1.0, Default::default());
        let y = f.apply(&[0.0, 0.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-14 && y[1] == 0.0);
    }

    #[test]
    fn attainable_profile_closed_form() {
        for m in [1.0, 2.5] {
            let f = FlowMap::new(Arc::new(gauss_system(0.0, 1.0)), 0.0, m, Default::default());
            for theta in [0.0, 0.5, 1.0] {
                let y = f.apply(&[theta, 0.0]).unwrap();
                assert!((y[1] - m * (-theta * theta).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guard_escape_reports_time() {
        let guard = CompactBox::cube(2, -1.0, 1.0, 2).unwrap();
        let f = FlowMap::new(
            Arc::new(gauss_system(1.0, 0.0)),
            0.0,
            3.0,
            IntegratorSettings::default().with_guard(guard),
        );
        match f.apply(&[0.0, 0.0]) {
            Err(Error::Domain { t, .. }) => assert!((t - 1.0).abs() < 0.011),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn step_policy_resolves_carrier() {
        let s = IntegratorSettings::default();
        let eps: f64 = 0.05;
        let h = s.step_for(1.0 / (eps * eps));
        assert!((h - 2.0 * std::f64::consts::PI * eps * eps / 40.0).abs() < 1e-15);
        assert_eq!(s.step_for(0.0), 1e-2);
    }

    #[test]
    fn budget_guard_trips() {
        let s = IntegratorSettings {
            max_steps: 1000,
            ..Default::default()
        };
        assert!(matches!(s.steps_for(1.0, 1e6), Err(Error::StepBudget { .. })));
    }

    #[test]
    fn translation_distance() {
        let c = [0.3, -0.4];
        let zero = FlowMap::autonomous(SmoothField::constant(&[0.0, 0.0]), 0.0, 2.0, Default::default());
        let tr = FlowMap::autonomous(SmoothField::constant(&c), 0.0, 2.0, Default::default());
        let k = CompactBox::cube(2, -1.0, 1.0, 5).unwrap();
        let d0 = flow_c0_distance(&zero, &tr, &k).unwrap();
        assert!((d0.value - 1.0).abs() < 1e-14);
        assert_eq!(d0.nodes, 25);
        let d1 = flow_c1_distance(&zero, &tr, &k).unwrap();
        assert!((d1.value - d0.value).abs() < 1e-14);
        assert_eq!(flow_c0_distance(&tr, &tr, &k).unwrap().value, 0.0);
    }

    #[test]
    fn guard_box_doubles_half_widths() {
        let b = CompactBox::new(vec![[0.0, 2.0], [-1.0, -1.0]], vec![3, 2]).unwrap();
        let g = b.guard();
        assert_eq!(g.intervals, vec![[-1.0, 3.0], [-2.0, 0.0]]);
        assert!(CompactBox::new(vec![[0.0, 1.0]], vec![1]).is_err());
    }
}
