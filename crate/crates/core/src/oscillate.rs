//! Realization of bracket channels by fast-oscillating ordinary controls.
//!
//! One reduction step replaces the extended system
//! `u^e X + v^e Y + w^e [X, Y]` by the two-channel control
//! `u = u^e + ε d/dt[2 sin(ωt) w^e]`, `v = v^e + ε⁻¹ sin(ωt)` with
//! `ω = ε⁻²`. Deeper words are eliminated first, each on its own carrier.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approximator::{BracketDictionary, ExtendedControl, ExtendedSystem};
use crate::error::{Error, Result};
use crate::flow::{
    compare_in_lockstep, flow_c1_distance, CompactBox, ControlLinearSystem, CubicSpline, FlowMap, IntegratorSettings,
    Signal, SignalRef, TimeFieldRef,
};
use crate::liealg::{BracketWord, FieldFamily};

/// One additive piece of a channel.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    /// Smooth sampled part.
    Baseline { spline: Arc<CubicSpline> },
    /// `amplitude · sin(omega·t)`.
    Sine { amplitude: f64, omega: f64 },
    /// `ε · d/dt[2 sin(omega·t) · envelope(t)]`.
    Modulated {
        epsilon: f64,
        omega: f64,
        envelope: Box<Channel>,
    },
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn sin_derivative(omega: f64, t: f64, k: usize) -> f64 {
    omega.powi(k as i32) * (omega * t + k as f64 * std::f64::consts::FRAC_PI_2).sin()
}

/// `d^m/dt^m [2 sin(ωt) w(t)]`.
fn modulated_primitive(omega: f64, w: &Channel, t: f64, m: usize) -> f64 {
    2.0 * (0..=m)
        .map(|i| binomial(m, i) * sin_derivative(omega, t, i) * w.derivative(t, m - i))
        .sum::<f64>()
}

impl Term {
    fn derivative(&self, t: f64, k: usize) -> f64 {
        match self {
            Term::Baseline { spline } => spline.derivative(t, k),
            Term::Sine { amplitude, omega } => amplitude * sin_derivative(*omega, t, k),
            Term::Modulated {
                epsilon,
                omega,
                envelope,
            } => epsilon * modulated_primitive(*omega, envelope, t, k + 1),
        }
    }

    fn max_frequency(&self) -> f64 {
        match self {
            Term::Baseline { .. } => 0.0,
            Term::Sine { omega, .. } => *omega,
            Term::Modulated { omega, envelope, .. } => omega.max(envelope.max_frequency()),
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Term::Baseline { spline } => spline.is_zero(),
            Term::Sine { amplitude, .. } => *amplitude == 0.0,
            Term::Modulated { envelope, .. } => envelope.is_zero(),
        }
    }
}

/// A scalar control channel: a sum of [`Term`]s.
#[derive(Clone, Default, Serialize)]
pub struct Channel {
    terms: Vec<Term>,
}

impl fmt::Debug for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Channel({} terms, ω_max {:.3e})",
            self.terms.len(),
            self.max_frequency()
        )
    }
}

impl Channel {
    pub fn zero() -> Self {
        Channel::default()
    }

    pub fn baseline(spline: CubicSpline) -> Self {
        Self::from_spline(Arc::new(spline))
    }

    pub fn from_spline(spline: Arc<CubicSpline>) -> Self {
        Channel {
            terms: vec![Term::Baseline { spline }],
        }
    }

    /// Constant channel on `[0, horizon]`.
    pub fn constant(value: f64, horizon: f64) -> Self {
        Self::baseline(CubicSpline::new(vec![0.0, horizon], vec![value, value]).expect("two knots"))
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn push(&mut self, term: Term) {
        self.terms.push(term);
    }

    /// Number of oscillatory terms.
    pub fn oscillators(&self) -> usize {
        self.terms
            .iter()
            .filter(|t| !matches!(t, Term::Baseline { .. }))
            .count()
    }
}

impl Signal for Channel {
    fn derivative(&self, t: f64, k: usize) -> f64 {
        self.terms.iter().map(|term| term.derivative(t, k)).sum()
    }

    fn max_frequency(&self) -> f64 {
        self.terms.iter().map(Term::max_frequency).fold(0.0, f64::max)
    }

    fn is_zero(&self) -> bool {
        self.terms.iter().all(Term::is_zero)
    }
}

/// One elimination step.
#[derive(Debug, Clone, Serialize)]
pub struct Level {
    pub word: BracketWord,
    pub epsilon: f64,
    pub omega: f64,
    /// Channel receiving the modulated term (the head letter).
    pub head_channel: usize,
    /// Word whose channel receives the carrier.
    pub tail: BracketWord,
    #[serde(skip)]
    envelope: Channel,
}

impl Level {
    /// `U_ε(t) = 2 sin(ωt) w(t)`.
    pub fn primitive(&self, t: f64) -> f64 {
        modulated_primitive(self.omega, &self.envelope, t, 0)
    }

    /// `v̂_ε(t) = sin(ωt)`; the tail channel gains `ε⁻¹ v̂_ε`.
    pub fn carrier(&self, t: f64) -> f64 {
        (self.omega * t).sin()
    }

    pub fn envelope(&self) -> &Channel {
        &self.envelope
    }

    /// `U_ε v̂_ε − w + w cos(2ωt)`, zero up to rounding.
    pub fn product_identity_residual(&self, t: f64) -> f64 {
        let w = self.envelope.value(t);
        self.primitive(t) * self.carrier(t) - w + w * (2.0 * self.omega * t).cos()
    }
}

/// An ordinary `s`-channel control with its reduction metadata.
#[derive(Debug, Clone, Serialize)]
pub struct OscillatingControl {
    pub channels: Vec<Channel>,
    pub horizon: f64,
    pub levels: Vec<Level>,
    /// `Σ ε_i`, a heuristic size of the reduction error.
    pub predicted_error: f64,
}

impl OscillatingControl {
    pub fn signals(&self) -> Vec<SignalRef> {
        self.channels.iter().map(|c| Arc::new(c.clone()) as SignalRef).collect()
    }

    pub fn max_frequency(&self) -> f64 {
        self.channels.iter().map(Signal::max_frequency).fold(0.0, f64::max)
    }

    /// The control-linear system driven by these channels.
    pub fn system(&self, family: &FieldFamily) -> Result<ControlLinearSystem> {
        ControlLinearSystem::new(family.clone(), self.signals())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 0.5]")));
    }
    Ok(())
}

fn add_modulated(u: &mut Channel, w: &Channel, epsilon: f64, omega: f64) {
    u.push(Term::Modulated {
        epsilon,
        omega,
        envelope: Box::new(w.clone()),
    });
}

/// Two-channel realization of `u^e X + v^e Y + w^e [X, Y]`.
pub fn single_bracket_reduce(
    u_e: Channel,
    v_e: Channel,
    w_e: Channel,
    epsilon: f64,
    horizon: f64,
) -> Result<OscillatingControl> {
    check_epsilon(epsilon)?;
    let omega = epsilon.powi(-2);
    let mut u = u_e;
    let mut v = v_e;
    add_modulated(&mut u, &w_e, epsilon, omega);
    v.push(Term::Sine {
        amplitude: 1.0 / epsilon,
        omega,
    });
    let word = BracketWord::new(vec![1, 2]).expect("valid");
    Ok(OscillatingControl {
        channels: vec![u, v],
        horizon,
        levels: vec![Level {
            word,
            epsilon,
            omega,
            head_channel: 1,
            tail: BracketWord::letter(2),
            envelope: w_e,
        }],
        predicted_error: epsilon,
    })
}

/// How the per-level `ε_i` follow from `ε_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `ε_{i+1} = ε_i^exponent`.
    Power { exponent: f64 },
    /// `ε_{i+1} = ratio · ε_i`.
    Geometric { ratio: f64 },
    /// Explicit list, one per level.
    Explicit { epsilons: Vec<f64> },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Power { exponent: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionPlan {
    /// `ε_1`, used by the deepest word.
    pub epsilon: f64,
    /// Required ratio between consecutive carrier frequencies.
    pub separation: f64,
    pub schedule: Schedule,
}

impl Default for ReductionPlan {
    fn default() -> Self {
        ReductionPlan {
            epsilon: 0.05,
            separation: 10.0,
            schedule: Schedule::default(),
        }
    }
}

impl ReductionPlan {
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        ReductionPlan {
            epsilon,
            ..self.clone()
        }
    }

    /// `ε_i` for `levels` levels, checked for separation and underflow.
    pub fn epsilons(&self, levels: usize) -> Result<Vec<f64>> {
        if self.separation < 1.0 {
            return Err(Error::Plan(format!("separation factor {} below 1", self.separation)));
        }
        let mut eps = Vec::with_capacity(levels);
        match &self.schedule {
            Schedule::Explicit { epsilons } => {
                if epsilons.len() < levels {
                    return Err(Error::Plan(format!(
                        "{} levels needed but {} epsilons given",
                        levels,
                        epsilons.len()
                    )));
                }
                eps.extend_from_slice(&epsilons[..levels]);
            }
            Schedule::Power { exponent } => {
                let mut e = self.epsilon;
                for _ in 0..levels {
                    eps.push(e);
                    e = e.powf(*exponent);
                }
            }
            Schedule::Geometric { ratio } => {
                let mut e = self.epsilon;
                for _ in 0..levels {
                    eps.push(e);
                    e *= ratio;
                }
            }
        }
        for (i, &e) in eps.iter().enumerate() {
            let omega = e.powi(-2);
            if !(e > 0.0) || !omega.is_finite() {
                return Err(Error::Plan(format!("level {} epsilon {e:e} underflows", i + 1)));
            }
            check_epsilon(e).map_err(|err| Error::Plan(err.to_string()))?;
        }
        for (i, w) in eps.windows(2).enumerate() {
            let ratio = w[0].powi(2) / w[1].powi(2);
            if ratio < self.separation {
                return Err(Error::Plan(format!(
                    "frequency collision between levels {} and {}: ratio {ratio:.3} below {}",
                    i + 1,
                    i + 2,
                    self.separation
                )));
            }
        }
        Ok(eps)
    }
}

/// Eliminates every bracket word of the extended control, deepest first.
///
/// Words with identically zero coefficients are skipped. A tail that is not
/// in the dictionary gets an implicit zero channel, eliminated in turn.
pub fn reduce(family: &FieldFamily, extended: &ExtendedControl, plan: &ReductionPlan) -> Result<OscillatingControl> {
    let s = family.len();
    let horizon = extended.horizon();
    let mut channels: HashMap<BracketWord, Channel> = HashMap::new();
    let mut order: Vec<BracketWord> = Vec::new();
    for (i, w) in extended.words().iter().enumerate() {
        if w.max_letter() > s {
            return Err(Error::Plan(format!("word {w} uses a letter outside 1..={s}")));
        }
        let ch = if extended.is_zero_channel(i) {
            Channel::zero()
        } else {
            Channel::from_spline(Arc::new(CubicSpline::new(
                extended.times().to_vec(),
                extended.samples()[i].clone(),
            )?))
        };
        channels.insert(w.clone(), ch);
        order.push(w.clone());
    }
    for j in 1..=s {
        let w = BracketWord::letter(j);
        if !channels.contains_key(&w) {
            channels.insert(w.clone(), Channel::zero());
            order.push(w);
        }
    }

    // pending bracket words, counted to size the schedule
    let mut pending: Vec<BracketWord> = order
        .iter()
        .filter(|w| w.depth() > 1 && !channels[*w].is_zero())
        .cloned()
        .collect();
    let mut level_count = 0;
    {
        let mut seen: std::collections::HashSet<BracketWord> = pending.iter().cloned().collect();
        let mut stack = pending.clone();
        while let Some(w) = stack.pop() {
            level_count += 1;
            let tail = w.tail().expect("depth > 1");
            if tail.depth() > 1 && seen.insert(tail.clone()) {
                stack.push(tail);
            }
        }
    }
    let eps = plan.epsilons(level_count)?;

    let mut levels = Vec::with_capacity(level_count);
    while !pending.is_empty() {
        let deepest = pending.iter().map(BracketWord::depth).max().expect("nonempty");
        let k = pending.iter().position(|w| w.depth() == deepest).expect("present");
        let word = pending.remove(k);
        let epsilon = eps[levels.len()];
        let omega = epsilon.powi(-2);
        let w = channels.remove(&word).expect("channel present");
        let head = BracketWord::letter(word.head());
        let tail = word.tail().expect("depth > 1");
        add_modulated(channels.get_mut(&head).expect("plain channel"), &w, epsilon, omega);
        let tail_channel = channels.entry(tail.clone()).or_insert_with(|| {
            order.push(tail.clone());
            Channel::zero()
        });
        tail_channel.push(Term::Sine {
            amplitude: 1.0 / epsilon,
            omega,
        });
        if tail.depth() > 1 && !pending.contains(&tail) {
            pending.push(tail.clone());
        }
        levels.push(Level {
            word,
            epsilon,
            omega,
            head_channel: head.head(),
            tail,
            envelope: w,
        });
    }
    let out: Vec<Channel> = (1..=s)
        .map(|j| channels.remove(&BracketWord::letter(j)).expect("plain channel"))
        .collect();
    Ok(OscillatingControl {
        channels: out,
        horizon,
        predicted_error: eps.iter().sum(),
        levels,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    /// Sup over grid points and every integration step.
    pub sup_c0_distance: f64,
    pub checkpoint_times: Vec<f64>,
    pub checkpoint_distances: Vec<f64>,
    pub c1_distance: Option<f64>,
    pub level_epsilons: Vec<f64>,
    pub predicted_error: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Log-log slope of `sup_c0_distance` against `ε`.
    pub slope: f64,
    /// Log-log slope of the largest checkpoint distance against `ε`.
    pub checkpoint_slope: f64,
    pub grid_nodes: usize,
}

impl ConvergenceStudy {
    /// CSV: `epsilon,sup_c0_distance,d1..d16`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let cps = self.rows.first().map_or(0, |r| r.checkpoint_distances.len());
        let mut header = vec!["epsilon".to_string(), "sup_c0_distance".to_string()];
        header.extend((1..=cps).map(|k| format!("d{k}")));
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut row = vec![r.epsilon.to_string(), r.sup_c0_distance.to_string()];
            row.extend(r.checkpoint_distances.iter().map(f64::to_string));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Options for [`convergence_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub checkpoints: usize,
    pub c1: bool,
    pub settings: IntegratorSettings,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            checkpoints: 16,
            c1: false,
            settings: IntegratorSettings::default(),
        }
    }
}

/// Distance between the extended flow and the reduced flow for each `ε`.
pub fn convergence_study(
    dictionary: &BracketDictionary,
    extended: &ExtendedControl,
    plan: &ReductionPlan,
    epsilons: &[f64],
    k: &CompactBox,
    options: &StudyOptions,
) -> Result<ConvergenceStudy> {
    if epsilons.len() < 3 || epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument(
            "a convergence study needs at least 3 strictly decreasing epsilons".into(),
        ));
    }
    let family = dictionary.family();
    let ext: TimeFieldRef = Arc::new(ExtendedSystem::new(dictionary.clone(), extended.clone())?);
    let grid = k.grid();
    let horizon = extended.horizon();
    let rows = epsilons
        .par_iter()
        .map(|&epsilon| -> Result<ConvergenceRow> {
            let run = || -> Result<ConvergenceRow> {
                let p = plan.with_epsilon(epsilon);
                let control = reduce(family, extended, &p)?;
                let reduced: TimeFieldRef = Arc::new(control.system(family)?);
                let cmp = compare_in_lockstep(
                    &*ext,
                    &*reduced,
                    &grid,
                    0.0,
                    horizon,
                    options.checkpoints,
                    &options.settings,
                )?;
                let c1_distance = if options.c1 {
                    let a = FlowMap::new(ext.clone(), 0.0, horizon, options.settings.clone());
                    let b = FlowMap::new(reduced.clone(), 0.0, horizon, options.settings.clone());
                    Some(flow_c1_distance(&a, &b, k)?.value)
                } else {
                    None
                };
                Ok(ConvergenceRow {
                    epsilon,
                    sup_c0_distance: cmp.dense_sup,
                    checkpoint_times: cmp.checkpoint_times,
                    checkpoint_distances: cmp.checkpoint_distances,
                    c1_distance,
                    level_epsilons: control.levels.iter().map(|l| l.epsilon).collect(),
                    predicted_error: control.predicted_error,
                    steps: cmp.steps,
                })
            };
            run().map_err(|e| Error::AtEpsilon {
                epsilon,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let sup: Vec<f64> = rows.iter().map(|r| r.sup_c0_distance).collect();
    let cp: Vec<f64> = rows
        .iter()
        .map(|r| r.checkpoint_distances.iter().copied().fold(0.0, f64::max))
        .collect();
    Ok(ConvergenceStudy {
        slope: loglog_slope(&eps, &sup),
        checkpoint_slope: loglog_slope(&eps, &cp),
        rows,
        grid_nodes: grid.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spline(f: impl Fn(f64) -> f64) -> CubicSpline {
        CubicSpline::sample(1.0, 64, f).unwrap()
    }

    #[test]
    fn channel_formula_matches_closed_form() {
        let eps = 0.1;
        let w = |t: f64| (2.0 * t).cos();
        let ctl = single_bracket_reduce(
            Channel::baseline(spline(|t| t)),
            Channel::zero(),
            Channel::baseline(spline(w)),
            eps,
            1.0,
        )
        .unwrap();
        let wc = Channel::baseline(spline(w));
        for t in [0.1, 0.37, 0.8] {
            let om = eps.powi(-2);
            let expect = ctl.channels[0].terms[0].derivative(t, 0)
                + 2.0 / eps * (om * t).cos() * wc.value(t)
                + 2.0 * eps * (om * t).sin() * wc.derivative(t, 1);
            assert!((ctl.channels[0].value(t) - expect).abs() < 1e-9);
            assert!((ctl.channels[1].value(t) - (om * t).sin() / eps).abs() < 1e-12);
            assert!(ctl.levels[0].product_identity_residual(t).abs() < 1e-12);
        }
    }

    #[test]
    fn plan_rejects_collisions_and_bad_eps() {
        let plan = ReductionPlan {
            epsilon: 0.1,
            separation: 10.0,
            schedule: Schedule::Geometric { ratio: 0.5 },
        };
        assert!(matches!(plan.epsilons(2), Err(Error::Plan(_))));
        assert_eq!(plan.epsilons(1).unwrap(), vec![0.1]);
        let power = ReductionPlan::default().with_epsilon(0.1);
        assert_eq!(power.epsilons(3).unwrap().len(), 3);
        assert!(ReductionPlan::default().with_epsilon(0.6).epsilons(1).is_err());
        let deep = ReductionPlan::default().with_epsilon(0.1);
        assert!(matches!(deep.epsilons(12), Err(Error::Plan(_))));
    }

    #[test]
    fn plain_dictionary_passes_through() {
        let fam = FieldFamily::gaussian();
        let words = vec![BracketWord::letter(1), BracketWord::letter(2), "12".parse().unwrap()];
        let ext = ExtendedControl::from_fn(words, 1.0, 8, |i, t| if i < 2 { t + i as f64 } else { 0.0 }).unwrap();
        let ctl = reduce(&fam, &ext, &ReductionPlan::default()).unwrap();
        assert!(ctl.levels.is_empty());
        for (j, ch) in ctl.channels.iter().enumerate() {
            assert_eq!(ch.oscillators(), 0);
            for t in [0.0, 0.3, 1.0] {
                assert_eq!(ch.value(t), ext.coefficient(j, t));
            }
        }
    }

    #[test]
    fn nested_word_creates_implicit_tail() {
        let fam = FieldFamily::gaussian();
        let words = vec![BracketWord::letter(1), BracketWord::letter(2), "112".parse().unwrap()];
        let ext = ExtendedControl::constant(words, 1.0, &[0.0, 0.0, 1.0]).unwrap();
        let ctl = reduce(&fam, &ext, &ReductionPlan::default().with_epsilon(0.1)).unwrap();
        let names: Vec<String> = ctl.levels.iter().map(|l| l.word.to_string()).collect();
        assert_eq!(names, ["112", "12"]);
        assert!((ctl.levels[1].epsilon - 0.01).abs() < 1e-15);
        assert!(ctl.max_frequency() > 0.99e4);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.2, 0.1, 0.05];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
