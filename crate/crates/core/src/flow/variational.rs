use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{
    checkpoints, euclid, integrate_batch_at, integrate_with_jacobian, Autonomous, CompactBox, IntegratorSettings,
    SignalRef, TimeField, TimeFieldRef,
};
use crate::error::{Error, Result};
use crate::liealg::SmoothField;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationalReport {
    /// Sup over grid and checkpoints of |left − right|.
    pub residual: f64,
    pub checkpoint_times: Vec<f64>,
    pub checkpoint_residuals: Vec<f64>,
    /// Worst condition number of `De^{U(t)g}` seen at the checkpoints.
    pub condition_factor: f64,
    pub step: f64,
    pub reference_step: f64,
    pub nodes: usize,
}

/// `ẋ = f_t(x) + g(x) U̇(t)`
struct Direct {
    f: TimeFieldRef,
    g: SmoothField,
    u: SignalRef,
}

impl TimeField for Direct {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.f.eval(t, x, out)?;
        let du = self.u.derivative(t, 1);
        if du != 0.0 {
            let gx = self.g.eval(x);
            for (o, v) in out.iter_mut().zip(gx) {
                *o += du * v;
            }
        }
        Ok(())
    }

    fn jacobian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.f.jacobian(t, x)? + self.g.jacobian(x)? * self.u.derivative(t, 1))
    }

    fn max_frequency(&self) -> f64 {
        self.f.max_frequency().max(self.u.max_frequency())
    }
}

/// `ẏ = [De^{U(t)g}(y)]⁻¹ f_t(e^{U(t)g}(y))`, the time-variant pushforward
/// `(e^{-U(t)g})_* f_t`.
struct Pushed {
    f: TimeFieldRef,
    g: Arc<Autonomous>,
    u: SignalRef,
    inner: IntegratorSettings,
}

impl TimeField for Pushed {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        let (z, jac) = integrate_with_jacobian(&*self.g, y, 0.0, self.u.value(t), &self.inner)?;
        let mut fz = vec![0.0; z.len()];
        self.f.eval(t, &z, &mut fz)?;
        let sol = jac
            .lu()
            .solve(&DVector::from_vec(fz))
            .ok_or_else(|| Error::InvalidArgument("singular flow Jacobian".into()))?;
        out.copy_from_slice(sol.as_slice());
        Ok(())
    }

    fn jacobian(&self, _t: f64, _y: &[f64]) -> Result<DMatrix<f64>> {
        Err(Error::InvalidArgument(
            "the pushforward field is only used for state integration".into(),
        ))
    }

    fn max_frequency(&self) -> f64 {
        self.f.max_frequency().max(self.u.max_frequency())
    }
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Compares the direct flow of `f_t + g·U̇` with the composition of the
/// time-variant pushforward flow and `e^{U(t)g}` at the checkpoints
/// `T/4, T/2, 3T/4, T`, over the grid of `k`.
///
/// The right side is integrated with `step`, the left side with
/// `reference_step`. Requires `U(0) = 0`.
pub fn check_variational_formula(
    f: TimeFieldRef,
    g: SmoothField,
    u: SignalRef,
    k: &CompactBox,
    horizon: f64,
    step: f64,
    reference_step: f64,
) -> Result<VariationalReport> {
    if u.value(0.0).abs() > 1e-14 {
        return Err(Error::InvalidArgument("the variational formula needs U(0) = 0".into()));
    }
    if g.dim() != f.dim() || k.dim() != f.dim() {
        return Err(Error::Dimension {
            context: "variational formula".into(),
            expected: f.dim(),
            found: if g.dim() != f.dim() { g.dim() } else { k.dim() },
        });
    }
    let grid = k.grid();
    let guard = k.guard();
    let base = IntegratorSettings::default().with_guard(guard);
    let times = checkpoints(0.0, horizon, 4);
    let mut schedule = vec![0.0];
    schedule.extend_from_slice(&times);

    let direct = Direct {
        f: f.clone(),
        g: g.clone(),
        u: u.clone(),
    };
    let left = integrate_batch_at(&direct, &grid, &schedule, &base.clone().with_h_max(reference_step))?;

    let g_field = Arc::new(Autonomous(g));
    let pushed = Pushed {
        f,
        g: g_field.clone(),
        u: u.clone(),
        inner: base.clone(),
    };
    let right_y = integrate_batch_at(&pushed, &grid, &schedule, &base.clone().with_h_max(step))?;

    let mut checkpoint_residuals = Vec::with_capacity(times.len());
    let mut condition_factor = 1.0f64;
    for (i, &t) in times.iter().enumerate() {
        let ut = u.value(t);
        let mut worst = 0.0f64;
        for (x_left, y) in left[i + 1].iter().zip(&right_y[i + 1]) {
            let (x_right, jac) = integrate_with_jacobian(&*g_field, y, 0.0, ut, &base)?;
            condition_factor = condition_factor.max(condition(&jac));
            worst = worst.max(euclid(x_left, &x_right));
        }
        checkpoint_residuals.push(worst);
    }
    Ok(VariationalReport {
        residual: checkpoint_residuals.iter().copied().fold(0.0, f64::max),
        checkpoint_times: times,
        checkpoint_residuals,
        condition_factor,
        step,
        reference_step,
        nodes: grid.len(),
    })
}
