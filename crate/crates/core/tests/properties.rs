use ensemble_steer::ensemble::{c0_distance, lp_distance, Ensemble};
use ensemble_steer::liealg::{bracket, FieldFamily, SmoothField};
use ensemble_steer::rank::{build_bracket_matrix, is_bracket_generating};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fields() -> [SmoothField; 3] {
    let fam = FieldFamily::gaussian();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    [
        fam.members()[0].clone(),
        fam.members()[1].clone(),
        SmoothField::random_polynomial(2, 2, 1.0, &mut rng),
    ]
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn antisymmetry(x in point()) {
        let [a, b, c] = fields();
        for (p, q) in [(&a, &b), (&b, &c), (&a, &c)] {
            let l = bracket(p, q).unwrap().eval(&x);
            let r = bracket(q, p).unwrap().eval(&x);
            let sum: Vec<f64> = l.iter().zip(&r).map(|(u, v)| u + v).collect();
            prop_assert!(dist(&sum, &[0.0, 0.0]) <= 1e-9);
        }
    }

    #[test]
    fn bilinearity(x in point(), s in -2.0..2.0f64, t in -2.0..2.0f64) {
        let [a, b, c] = fields();
        let comb = SmoothField::combination(vec![(s, a.clone()), (t, b.clone())]).unwrap();
        let l = bracket(&comb, &c).unwrap().eval(&x);
        let ra = bracket(&a, &c).unwrap().eval(&x);
        let rb = bracket(&b, &c).unwrap().eval(&x);
        let r: Vec<f64> = ra.iter().zip(&rb).map(|(u, v)| s * u + t * v).collect();
        prop_assert!(dist(&l, &r) <= 1e-9);
    }

    #[test]
    fn jacobi(x in point()) {
        let [a, b, c] = fields();
        let cyc = |p: &SmoothField, q: &SmoothField, r: &SmoothField| {
            bracket(p, &bracket(q, r).unwrap()).unwrap().eval(&x)
        };
        let t = [cyc(&a, &b, &c), cyc(&b, &c, &a), cyc(&c, &a, &b)];
        let sum = [t[0][0] + t[1][0] + t[2][0], t[0][1] + t[1][1] + t[2][1]];
        prop_assert!(dist(&sum, &[0.0, 0.0]) <= 1e-7);
    }

    #[test]
    fn metric_axioms(pts in prop::collection::vec((point(), point(), point()), 5)) {
        let mk = |k: usize| {
            let p: Vec<Vec<f64>> = pts.iter().map(|t| [&t.0, &t.1, &t.2][k].clone()).collect();
            let theta = (0..p.len()).map(|i| i as f64 / (p.len() - 1) as f64).collect();
            Ensemble::continual(theta, p).unwrap()
        };
        let (a, b, c) = (mk(0), mk(1), mk(2));
        for d in [
            &(|u: &Ensemble, v: &Ensemble| c0_distance(u, v).unwrap()) as &dyn Fn(&Ensemble, &Ensemble) -> f64,
            &|u: &Ensemble, v: &Ensemble| lp_distance(u, v, 2.0).unwrap(),
        ] {
            prop_assert_eq!(d(&a, &a), 0.0);
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }
    }

    #[test]
    fn rank_ignores_scaling_and_order(
        pts in prop::collection::vec(point(), 2..4),
        scale in prop_oneof![-3.0..-0.3f64, 0.3..3.0f64],
    ) {
        let fam = FieldFamily::gaussian();
        let Ok(m) = build_bracket_matrix(&fam, &pts, 4) else {
            return Ok(());
        };
        let base = is_bracket_generating(&m, None).rank;

        let scaled = FieldFamily::new(vec![fam.members()[0].scaled(scale), fam.members()[1].clone()]).unwrap();
        let ms = build_bracket_matrix(&scaled, &pts, 4).unwrap();
        prop_assert_eq!(is_bracket_generating(&ms, None).rank, base);

        let mut rev = pts.clone();
        rev.reverse();
        let mr = build_bracket_matrix(&fam, &rev, 4).unwrap();
        prop_assert_eq!(is_bracket_generating(&mr, None).rank, base);

        let deeper = build_bracket_matrix(&fam, &pts, 5).unwrap();
        prop_assert!(is_bracket_generating(&deeper, None).rank >= base);
    }
}
