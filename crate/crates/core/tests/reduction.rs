use std::sync::Arc;

use ensemble_steer::approximator::{BracketDictionary, ExtendedControl};
use ensemble_steer::flow::{CompactBox, CubicSpline, FlowMap, IntegratorSettings, Signal};
use ensemble_steer::liealg::{BracketWord, FieldFamily, SmoothField};
use ensemble_steer::oscillate::{
    convergence_study, reduce, single_bracket_reduce, Channel, ReductionPlan, StudyOptions,
};

fn heisenberg() -> FieldFamily {
    let x = SmoothField::from_expressions("X", &["1", "0"]).unwrap();
    let y = SmoothField::from_expressions("Y", &["0", "x1"]).unwrap();
    FieldFamily::new(vec![x, y]).unwrap()
}

#[test]
fn canonical_bracket_translates_origin() {
    let fam = heisenberg();
    let mut errors = vec![];
    for eps in [0.1, 0.05] {
        let ctl =
            single_bracket_reduce(Channel::zero(), Channel::zero(), Channel::constant(1.0, 1.0), eps, 1.0).unwrap();
        let flow = FlowMap::new(
            Arc::new(ctl.system(&fam).unwrap()),
            0.0,
            1.0,
            IntegratorSettings::default(),
        );
        let end = flow.apply(&[0.0, 0.0]).unwrap();
        errors.push((end[0].powi(2) + (end[1] - 1.0).powi(2)).sqrt());
    }
    assert!(errors[1] < 0.2, "{errors:?}");
    assert!(errors[1] < errors[0], "{errors:?}");
}

#[test]
fn product_identity_on_approximator_like_envelope() {
    let w = CubicSpline::sample(1.0, 256, |t| (3.0 * t).sin() * t).unwrap();
    let ctl = single_bracket_reduce(Channel::zero(), Channel::zero(), Channel::baseline(w), 0.05, 1.0).unwrap();
    let level = &ctl.levels[0];
    let mut t = 0.123_f64;
    for _ in 0..1000 {
        t = (t * 7.77 + 0.31).fract();
        assert!(level.product_identity_residual(t).abs() < 1e-12);
        assert!(level.primitive(t).abs() <= 2.0 * 1.0 + 1e-12);
    }
}

#[test]
fn zero_brackets_reduce_to_plain_coefficients() {
    let fam = FieldFamily::gaussian();
    let dict = BracketDictionary::from_spec(&fam, "12 112", 8).unwrap();
    let ext = ExtendedControl::from_fn(dict.words().to_vec(), 1.0, 16, |i, t| match i {
        0 => t.cos(),
        1 => 0.5 - t,
        _ => 0.0,
    })
    .unwrap();
    let ctl = reduce(&fam, &ext, &ReductionPlan::default()).unwrap();
    assert!(ctl.levels.is_empty());
    for t in [0.0, 0.21, 0.5, 0.99] {
        assert_eq!(ctl.channels[0].value(t), ext.coefficient(0, t));
        assert_eq!(ctl.channels[1].value(t), ext.coefficient(1, t));
    }
}

#[test]
fn single_word_reduce_matches_single_step() {
    let fam = FieldFamily::gaussian();
    let dict = BracketDictionary::from_spec(&fam, "12", 8).unwrap();
    let ext = ExtendedControl::from_fn(dict.words().to_vec(), 1.0, 32, |i, t| [0.2, -0.1, t.cos()][i]).unwrap();
    let plan = ReductionPlan::default().with_epsilon(0.1);
    let a = reduce(&fam, &ext, &plan).unwrap();
    let spline =
        |i: usize| Channel::baseline(CubicSpline::new(ext.times().to_vec(), ext.samples()[i].clone()).unwrap());
    let b = single_bracket_reduce(spline(0), spline(1), spline(2), 0.1, 1.0).unwrap();
    for t in [0.0, 0.33, 0.7] {
        for j in 0..2 {
            assert_eq!(a.channels[j].value(t), b.channels[j].value(t));
        }
    }
}

#[test]
fn zero_bracket_study_is_at_integrator_noise() {
    let fam = FieldFamily::gaussian();
    let dict = BracketDictionary::from_spec(&fam, "12", 8).unwrap();
    let ext = ExtendedControl::constant(dict.words().to_vec(), 1.0, &[0.3, 0.2, 0.0]).unwrap();
    let k = CompactBox::cube(2, -0.5, 0.5, 3).unwrap();
    let study = convergence_study(
        &dict,
        &ext,
        &ReductionPlan::default(),
        &[0.2, 0.1, 0.05],
        &k,
        &StudyOptions::default(),
    )
    .unwrap();
    for r in &study.rows {
        assert!(r.sup_c0_distance < 1e-12, "{}", r.sup_c0_distance);
    }
}

#[test]
fn canonical_single_bracket_slope() {
    let fam = FieldFamily::gaussian();
    let dict = BracketDictionary::from_spec(&fam, "12", 8).unwrap();
    let ext = ExtendedControl::from_fn(dict.words().to_vec(), 1.0, 64, |i, t| [0.0, 0.0, t.cos()][i]).unwrap();
    let k = CompactBox::cube(2, -1.0, 1.0, 3).unwrap();
    let opts = StudyOptions {
        c1: true,
        ..Default::default()
    };
    let study = convergence_study(
        &dict,
        &ext,
        &ReductionPlan::default(),
        &[0.2, 0.1, 0.05, 0.025],
        &k,
        &opts,
    )
    .unwrap();
    for r in &study.rows {
        eprintln!("eps {} sup {:.4e} c1 {:?}", r.epsilon, r.sup_c0_distance, r.c1_distance);
    }
    assert!(study.slope >= 0.8, "slope {}", study.slope);
    let c1: Vec<f64> = study.rows.iter().map(|r| r.c1_distance.unwrap()).collect();
    assert!(c1.iter().all(|v| v.is_finite() && *v < 10.0), "{c1:?}");

    let wider = ReductionPlan {
        separation: 20.0,
        ..ReductionPlan::default()
    };
    let study2 = convergence_study(
        &dict,
        &ext,
        &wider,
        &[0.2, 0.1, 0.05, 0.025],
        &k,
        &StudyOptions::default(),
    )
    .unwrap();
    assert!(study2.slope >= study.slope - 0.1);
}

#[test]
fn nested_word_names_levels() {
    let fam = FieldFamily::gaussian();
    let dict = BracketDictionary::new(&fam, &["112".parse::<BracketWord>().unwrap()], 8).unwrap();
    let ext = ExtendedControl::constant(dict.words().to_vec(), 1.0, &[0.0, 0.0, 1.0]).unwrap();
    let ctl = reduce(&fam, &ext, &ReductionPlan::default().with_epsilon(0.2)).unwrap();
    assert_eq!(ctl.levels.len(), 2);
    assert!((ctl.predicted_error - 0.24).abs() < 1e-12);
}
