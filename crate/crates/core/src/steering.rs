//! End-to-end steering: generator approximation, extended flow, reduction
//! to ordinary controls, and the error accounting between them.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::approximator::{
    approximate_generator, ApproximationSettings, BracketDictionary, ExtendedSystem, GeneratorApproximation,
};
use crate::ensemble::{Diffeotopy, Ensemble};
use crate::error::{Error, Result};
use crate::flow::{checkpoints, integrate_batch_at, CompactBox, IntegratorSettings, TimeField};
use crate::liealg::FieldFamily;
use crate::oscillate::{reduce, OscillatingControl, ReductionPlan};

/// Relative slack allowed by [`verify_gronwall`].
pub const GRONWALL_SLACK: f64 = 0.05;
/// Absolute floor added to the bound, covering integrator round-off.
pub const GRONWALL_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteeringSettings {
    pub approximation: ApproximationSettings,
    pub plan: ReductionPlan,
    pub integrator: IntegratorSettings,
    pub checkpoints: usize,
}

impl Default for SteeringSettings {
    fn default() -> Self {
        SteeringSettings {
            approximation: ApproximationSettings::default(),
            plan: ReductionPlan::default(),
            integrator: IntegratorSettings::default(),
            checkpoints: 16,
        }
    }
}

/// Outcome of [`verify_gronwall`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallCheck {
    pub passed: bool,
    pub worst_ratio: f64,
    pub times: Vec<f64>,
    pub deviations: Vec<f64>,
    pub bounds: Vec<f64>,
}

/// `ε (e^{λt} − 1) / λ`.
pub fn gronwall_bound(epsilon: f64, lambda: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        epsilon * t
    } else {
        epsilon * (lambda * t).exp_m1() / lambda
    }
}

/// Checks `deviation(t) ≤ ε(e^{λt} − 1)/λ` at every time; passes when the
/// worst ratio is within [`GRONWALL_SLACK`].
pub fn verify_gronwall(epsilon: f64, lambda: f64, times: &[f64], deviations: &[f64]) -> GronwallCheck {
    let bounds: Vec<f64> = times.iter().map(|&t| gronwall_bound(epsilon, lambda, t)).collect();
    let worst_ratio = deviations
        .iter()
        .zip(&bounds)
        .map(|(d, b)| d / (b + GRONWALL_FLOOR))
        .fold(0.0, f64::max);
    GronwallCheck {
        passed: worst_ratio <= 1.0 + GRONWALL_SLACK,
        worst_ratio,
        times: times.to_vec(),
        deviations: deviations.to_vec(),
        bounds,
    }
}

fn sup_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Generator approximation plus the extended flow of the start ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct ExtendedStage {
    pub approximation: GeneratorApproximation,
    pub checkpoint_times: Vec<f64>,
    /// `sup_θ |x(t;θ) − γ_t(θ)|` per checkpoint.
    pub deviations: Vec<f64>,
    /// Deviation at `T`.
    pub extended_error: f64,
    pub gronwall_bound: f64,
    pub gronwall: GronwallCheck,
    #[serde(skip)]
    pub states: Vec<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub system: Arc<ExtendedSystem>,
    #[serde(skip)]
    pub seconds: f64,
}

pub fn extended_stage(
    d: &Diffeotopy,
    dict: &BracketDictionary,
    k: &CompactBox,
    settings: &SteeringSettings,
) -> Result<ExtendedStage> {
    let started = Instant::now();
    let approximation = approximate_generator(d, dict, &settings.approximation, k)?;
    let system = Arc::new(ExtendedSystem::new(dict.clone(), approximation.control.clone())?);
    let times = checkpoints(0.0, d.horizon, settings.checkpoints);
    let mut schedule = vec![0.0];
    schedule.extend_from_slice(&times);
    let mut states = integrate_batch_at(&*system, d.start.points(), &schedule, &settings.integrator)?;
    states.remove(0);
    let gamma = d.samples(&times)?;
    let deviations: Vec<f64> = states
        .iter()
        .zip(&gamma)
        .map(|(x, g)| sup_distance(x, g.ensemble.points()))
        .collect();
    let eps = approximation.generator_residual;
    let lambda = approximation.lambda_measured;
    log::info!("extended stage: eps_gen {eps:.3e}, lambda {lambda:.3}");
    let gronwall = verify_gronwall(eps, lambda, &times, &deviations);
    Ok(ExtendedStage {
        extended_error: *deviations.last().expect("at least one checkpoint"),
        gronwall_bound: gronwall_bound(eps, lambda, d.horizon),
        approximation,
        checkpoint_times: times,
        deviations,
        gronwall,
        states,
        system,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Ordinary control realizing the extended one, and its flow.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionStage {
    #[serde(skip)]
    pub control: OscillatingControl,
    pub level_epsilons: Vec<f64>,
    pub max_frequency: f64,
    pub predicted_error: f64,
    /// `sup_θ |x_red(t;θ) − x_ext(t;θ)|` per checkpoint.
    pub distances: Vec<f64>,
    /// Distance at `T`.
    pub reduction_error: f64,
    #[serde(skip)]
    pub final_states: Vec<Vec<f64>>,
    #[serde(skip)]
    pub seconds: f64,
}

pub fn reduction_stage(
    family: &FieldFamily,
    d: &Diffeotopy,
    ext: &ExtendedStage,
    settings: &SteeringSettings,
) -> Result<ReductionStage> {
    let started = Instant::now();
    let epsilon = settings.plan.epsilon;
    let at_eps = |e: Error| Error::AtEpsilon {
        epsilon,
        source: Box::new(e),
    };
    let control = reduce(family, ext.system.control(), &settings.plan).map_err(at_eps)?;
    let system = control.system(family)?;
    log::info!(
        "reduction: {} levels, max frequency {:.3e}",
        control.levels.len(),
        system.max_frequency()
    );
    let mut schedule = vec![0.0];
    schedule.extend_from_slice(&ext.checkpoint_times);
    let mut states = integrate_batch_at(&system, d.start.points(), &schedule, &settings.integrator).map_err(at_eps)?;
    states.remove(0);
    let distances: Vec<f64> = states
        .iter()
        .zip(&ext.states)
        .map(|(a, b)| sup_distance(a, b))
        .collect();
    Ok(ReductionStage {
        level_epsilons: control.levels.iter().map(|l| l.epsilon).collect(),
        max_frequency: system.max_frequency(),
        predicted_error: control.predicted_error,
        reduction_error: *distances.last().expect("at least one checkpoint"),
        distances,
        final_states: states.pop().expect("final states"),
        control,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SteeringReport {
    /// `sup_θ |x(T;θ) − ω(θ)|` under the ordinary control.
    pub achieved_c0_error: f64,
    pub generator_residual: f64,
    pub gronwall_bound: f64,
    pub reduction_error: f64,
    /// Extended flow against the diffeotopy at `T`.
    pub extended_error: f64,
    /// `sup_θ |γ_T(θ) − ω(θ)|`.
    pub diffeotopy_target_gap: f64,
    /// `extended + reduction + gap − achieved`; nonnegative by the
    /// triangle inequality.
    pub decomposition_slack: f64,
    pub lambda: f64,
    pub lambda_setting: f64,
    pub horizon: f64,
    pub n_theta: usize,
    pub epsilon_schedule: Vec<f64>,
    pub gronwall: GronwallCheck,
    pub extended: ExtendedStage,
    pub reduction: ReductionStage,
}

/// Full pipeline. `target` defaults to `γ_T`.
pub fn steer(
    family: &FieldFamily,
    d: &Diffeotopy,
    target: Option<&Ensemble>,
    dict: &BracketDictionary,
    k: &CompactBox,
    settings: &SteeringSettings,
) -> Result<(OscillatingControl, SteeringReport)> {
    let ext = extended_stage(d, dict, k, settings)?;
    let red = reduction_stage(family, d, &ext, settings)?;
    finish(d, target, ext, red, settings)
}

/// Assembles the report from completed stages.
pub fn finish(
    d: &Diffeotopy,
    target: Option<&Ensemble>,
    ext: ExtendedStage,
    red: ReductionStage,
    settings: &SteeringSettings,
) -> Result<(OscillatingControl, SteeringReport)> {
    let gamma_t = d.samples(&[d.horizon])?.remove(0).ensemble;
    let target = target.unwrap_or(&gamma_t);
    if target.len() != d.start.len() || target.dim() != d.start.dim() {
        return Err(Error::GridMismatch(
            "target ensemble does not match the start grid".into(),
        ));
    }
    let achieved = sup_distance(&red.final_states, target.points());
    let gap = sup_distance(gamma_t.points(), target.points());
    let report = SteeringReport {
        achieved_c0_error: achieved,
        generator_residual: ext.approximation.generator_residual,
        gronwall_bound: ext.gronwall_bound,
        reduction_error: red.reduction_error,
        extended_error: ext.extended_error,
        diffeotopy_target_gap: gap,
        decomposition_slack: ext.extended_error + red.reduction_error + gap - achieved,
        lambda: ext.approximation.lambda_measured,
        lambda_setting: settings.approximation.lambda,
        horizon: d.horizon,
        n_theta: d.start.len(),
        epsilon_schedule: red.level_epsilons.clone(),
        gronwall: ext.gronwall.clone(),
        extended: ext,
        reduction: red,
    };
    Ok((report.reduction.control.clone(), report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gronwall_zero_epsilon() {
        let c = verify_gronwall(0.0, 2.0, &[0.5, 1.0], &[0.0, 0.0]);
        assert!(c.passed);
        assert_eq!(c.worst_ratio, 0.0);
    }

    #[test]
    fn gronwall_detects_underreported_lambda() {
        // deviations exactly on the bound for λ = 2
        let times: Vec<f64> = (1..=16).map(|k| k as f64 / 16.0).collect();
        let dev: Vec<f64> = times.iter().map(|&t| gronwall_bound(1e-3, 2.0, t)).collect();
        assert!(verify_gronwall(1e-3, 2.0, &times, &dev).passed);
        assert!(!verify_gronwall(1e-3, 1.0, &times, &dev).passed);
    }
}
