use ensemble_steer::approximator::{identity_report, ApproximationSettings, BracketDictionary};
use ensemble_steer::ensemble::{Diffeotopy, Ensemble, ExprTimeField};
use ensemble_steer::flow::{CompactBox, IntegratorSettings};
use ensemble_steer::liealg::FieldFamily;
use ensemble_steer::oscillate::ReductionPlan;
use ensemble_steer::steering::{extended_stage, steer, SteeringSettings};

fn flagship(m: usize) -> (Diffeotopy, BracketDictionary, CompactBox, SteeringSettings) {
    let fam = FieldFamily::gaussian();
    let start = Ensemble::from_expressions(101, &["theta", "0"]).unwrap();
    let d = Diffeotopy::new(
        ExprTimeField::shared(&["0", "x1"]).unwrap(),
        start,
        1.0,
        IntegratorSettings::default(),
    )
    .unwrap();
    let dict = BracketDictionary::hermite(&fam, m, m + 1).unwrap();
    let k = CompactBox::cube(2, 0.0, 1.0, 11).unwrap();
    let settings = SteeringSettings {
        approximation: ApproximationSettings {
            lambda: 4.1,
            ..Default::default()
        },
        ..Default::default()
    };
    (d, dict, k, settings)
}

#[test]
fn flagship_extended_stage() {
    let mut eps = vec![];
    for m in [6, 12] {
        let (d, dict, k, settings) = flagship(m);
        let ext = extended_stage(&d, &dict, &k, &settings).unwrap();
        let hermite = identity_report(m, (0.0, 1.0)).unwrap();
        let a = &ext.approximation;
        assert!(a.max_node_residual <= hermite.sup_error, "M={m}");
        assert!(a.lambda_measured <= 4.1 * (1.0 + 1e-9));
        assert!(ext.gronwall.passed, "M={m}: ratio {}", ext.gronwall.worst_ratio);
        eps.push(a.generator_residual);
    }
    // measured: 2.16e-4 at M = 6, 1.96e-5 at M = 12
    assert!(eps[1] <= eps[0] * 1.1, "{eps:?}");
    assert!(eps[1] < 5e-5, "{eps:?}");
}

#[test]
fn exact_generator_steers_and_decomposes() {
    // Y = 0.5 f1 + 0.3 f2 lies in the span of the family
    let fam = FieldFamily::gaussian();
    let start = Ensemble::from_expressions(11, &["theta", "0"]).unwrap();
    let d = Diffeotopy::new(
        ExprTimeField::shared(&["0.5", "0.3*gauss(x1)"]).unwrap(),
        start,
        1.0,
        IntegratorSettings::default(),
    )
    .unwrap();
    let dict = BracketDictionary::from_spec(&fam, "12", 8).unwrap();
    let k = CompactBox::new(vec![[0.0, 1.5], [-0.5, 1.0]], vec![6, 6]).unwrap();
    let settings = SteeringSettings {
        plan: ReductionPlan::default().with_epsilon(0.1),
        ..Default::default()
    };
    let (control, report) = steer(&fam, &d, None, &dict, &k, &settings).unwrap();
    assert!(report.generator_residual < 1e-6, "{}", report.generator_residual);
    // the residual oscillation of the bracket level costs O(ε)
    assert!(report.extended_error < 1e-6, "{}", report.extended_error);
    assert!(report.achieved_c0_error < 0.1, "{}", report.achieved_c0_error);
    assert!(report.decomposition_slack >= -1e-6);
    assert_eq!(report.n_theta, 11);
    assert!(control.levels.len() <= 1);
}
