use std::sync::Arc;

use ensemble_steer::flow::{
    check_variational_formula, compare_in_lockstep, CompactBox, ControlLinearSystem, IntegratorSettings, SignalRef,
    Sinusoid, TimeField,
};
use ensemble_steer::liealg::{pushforward_remainder, FieldFamily, SmoothField};
use ensemble_steer::oscillate::loglog_slope;

fn gaussian_pair() -> (SmoothField, SmoothField) {
    let fam = FieldFamily::gaussian();
    (fam.members()[0].clone(), fam.members()[1].clone())
}

#[test]
fn variational_formula_on_gaussian_pair() {
    let (x, y) = gaussian_pair();
    let v: SignalRef = Arc::new(Sinusoid {
        amplitude: 1.0,
        omega: 1.0,
        phase: std::f64::consts::FRAC_PI_2,
    });
    let f = Arc::new(ControlLinearSystem::new(FieldFamily::new(vec![y]).unwrap(), vec![v]).unwrap());
    let u: SignalRef = Arc::new(Sinusoid {
        amplitude: 0.8,
        omega: 2.0,
        phase: 0.0,
    });
    let k = CompactBox::cube(2, -1.0, 1.0, 5).unwrap();
    let started = std::time::Instant::now();
    let r = check_variational_formula(f, x, u, &k, 1.0, 1e-3, 1e-4).unwrap();
    eprintln!("{r:?} in {:?}", started.elapsed());
    assert!(r.residual < 1e-5, "{}", r.residual);
}

#[test]
fn pushforward_remainder_orders() {
    let (g, z) = gaussian_pair();
    let grid = CompactBox::cube(2, -1.0, 1.0, 5).unwrap().grid();
    let us = [0.2, 0.1, 0.05];
    let settings = IntegratorSettings::default().with_h_max(1e-3);
    for (n, min) in [(1, 0.9), (2, 1.8)] {
        let r: Vec<f64> = us
            .iter()
            .map(|&u| pushforward_remainder(&g, &z, u, n, &grid, &settings).unwrap())
            .collect();
        let s = loglog_slope(&us, &r);
        eprintln!("N={n} {r:?} slope {s}");
        assert!(s >= min, "N={n}: slope {s}");
    }
    assert_eq!(pushforward_remainder(&g, &z, 0.0, 1, &grid, &settings).unwrap(), 0.0);
}

struct Zero;

impl TimeField for Zero {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> ensemble_steer::Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn jacobian(&self, _t: f64, _x: &[f64]) -> ensemble_steer::Result<nalgebra::DMatrix<f64>> {
        Ok(nalgebra::DMatrix::zeros(2, 2))
    }
}

#[test]
fn fast_oscillation_has_vanishing_effect() {
    // u_ε(t) = ε⁻¹ V̇(t/ε²) with V(s) = sin(2πs), in phase on both members
    // so no bracket is generated
    let fam = FieldFamily::gaussian();
    let k = CompactBox::cube(2, -1.0, 1.0, 3).unwrap();
    let grid = k.grid();
    let eps = [0.2, 0.1, 0.05];
    let sup: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let tau = std::f64::consts::TAU;
            let mk = |scale: f64| -> SignalRef {
                Arc::new(Sinusoid {
                    amplitude: scale * tau / e,
                    omega: tau / (e * e),
                    phase: std::f64::consts::FRAC_PI_2,
                })
            };
            let sys = ControlLinearSystem::new(fam.clone(), vec![mk(1.0), mk(-0.5)]).unwrap();
            compare_in_lockstep(&sys, &Zero, &grid, 0.0, 1.0, 16, &IntegratorSettings::default())
                .unwrap()
                .dense_sup
        })
        .collect();
    let s = loglog_slope(&eps, &sup);
    eprintln!("{sup:?} slope {s}");
    assert!(s >= 0.9, "slope {s}");
}
