//! Acceptance suite: one line per criterion, `PASS` or `FAIL`, with the
//! measured quantities and the wall time. Exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ensemble_steer::approximator::{hermite_poly, identity_report, BracketDictionary, ExtendedControl};
use ensemble_steer::flow::{
    check_variational_formula, compare_in_lockstep, CompactBox, ControlLinearSystem, IntegratorSettings, SignalRef,
    Sinusoid, TimeField,
};
use ensemble_steer::liealg::{bracket, iterated_bracket, pushforward_remainder, BracketWord, FieldFamily, SmoothField};
use ensemble_steer::oscillate::{convergence_study, loglog_slope, ReductionPlan, StudyOptions};
use ensemble_steer::rank::{build_bracket_matrix, genericity_probe, is_bracket_generating, trial_seed};
use ensemble_steer::Error;
use ensemble_steer_cli::{run_scenario, Scenario};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn criterion(n: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let o = f();
    let took = started.elapsed();
    let in_time = took <= limit;
    let passed = o.passed && in_time;
    let timing = if in_time {
        format!("{:.1}s", took.as_secs_f64())
    } else {
        format!("{:.1}s over the {}s limit", took.as_secs_f64(), limit.as_secs())
    };
    println!(
        "{} criterion {n:>2} {name}: {} [{timing}]",
        if passed { "PASS" } else { "FAIL" },
        o.detail
    );
    passed
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

/// Uniform draws in `[-1, 1]` from the splitmix sequence.
fn uniform(seed: u64, k: usize) -> f64 {
    (trial_seed(seed, k) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn bracket_oracle() -> Outcome {
    let fam = FieldFamily::gaussian();
    let mut worst = 0.0f64;
    for k in 0..=6 {
        let f = iterated_bracket(&fam, &BracketWord::power(1, k, 2)).unwrap();
        for x1 in [-1.0, 0.0, 0.5, 1.0] {
            let v = f.eval(&[x1, 0.2]);
            let expect = (-1f64).powi(k as i32) * hermite_poly(k, x1).unwrap() * (-x1 * x1).exp();
            worst = worst.max(v[0].abs()).max((v[1] - expect).abs());
        }
    }
    outcome(worst <= 1e-8, format!("max deviation {worst:.2e} (tol 1e-8)"))
}

fn bracket_algebra() -> Outcome {
    let fam = FieldFamily::gaussian();
    let z = SmoothField::from_expressions("Z", &["x1*x2 - 0.4*x2^3", "1 + x1^2*x2"]).unwrap();
    let (a, b, c) = (&fam.members()[0], &fam.members()[1], &z);
    let pts: Vec<Vec<f64>> = (0..100)
        .map(|i| vec![uniform(1, 2 * i), uniform(1, 2 * i + 1)])
        .collect();
    let (mut anti, mut bil, mut jac) = (0.0f64, 0.0f64, 0.0f64);
    let (s, t) = (1.7, -0.6);
    let comb = SmoothField::combination(vec![(s, a.clone()), (t, c.clone())]).unwrap();
    let lhs_bil = bracket(&comb, b).unwrap();
    let ab = bracket(a, b).unwrap();
    let ba = bracket(b, a).unwrap();
    let cb = bracket(c, b).unwrap();
    let cyc = [
        bracket(a, &bracket(b, c).unwrap()).unwrap(),
        bracket(b, &bracket(c, a).unwrap()).unwrap(),
        bracket(c, &bracket(a, b).unwrap()).unwrap(),
    ];
    for x in &pts {
        let neg: Vec<f64> = ba.eval(x).iter().map(|v| -v).collect();
        anti = anti.max(dist(&ab.eval(x), &neg));
        let rhs: Vec<f64> = ab.eval(x).iter().zip(cb.eval(x)).map(|(p, q)| s * p + t * q).collect();
        bil = bil.max(dist(&lhs_bil.eval(x), &rhs));
        let mut sum = [0.0; 2];
        for f in &cyc {
            for (acc, v) in sum.iter_mut().zip(f.eval(x)) {
                *acc += v;
            }
        }
        jac = jac.max(dist(&sum, &[0.0, 0.0]));
    }
    outcome(
        anti <= 1e-9 && bil <= 1e-9 && jac <= 1e-7,
        format!("antisymmetry {anti:.1e}, bilinearity {bil:.1e}, Jacobi {jac:.1e} over 100 points"),
    )
}

fn variational() -> Outcome {
    let fam = FieldFamily::gaussian();
    let v: SignalRef = Arc::new(Sinusoid {
        amplitude: 1.0,
        omega: 1.0,
        phase: std::f64::consts::FRAC_PI_2,
    });
    let f =
        Arc::new(ControlLinearSystem::new(FieldFamily::new(vec![fam.members()[1].clone()]).unwrap(), vec![v]).unwrap());
    let u: SignalRef = Arc::new(Sinusoid {
        amplitude: 0.8,
        omega: 2.0,
        phase: 0.0,
    });
    let k = CompactBox::cube(2, -1.0, 1.0, 5).unwrap();
    let r = check_variational_formula(f, fam.members()[0].clone(), u, &k, 1.0, 1e-3, 1e-4).unwrap();
    outcome(
        r.residual < 1e-5,
        format!("residual {:.2e} at step 1e-3 on {} nodes", r.residual, r.nodes),
    )
}

fn pushforward() -> Outcome {
    let fam = FieldFamily::gaussian();
    let grid = CompactBox::cube(2, -1.0, 1.0, 5).unwrap().grid();
    let settings = IntegratorSettings::default().with_h_max(1e-3);
    let us = [0.2, 0.1, 0.05];
    let slope = |n: usize| {
        let r: Vec<f64> = us
            .iter()
            .map(|&u| pushforward_remainder(&fam.members()[0], &fam.members()[1], u, n, &grid, &settings).unwrap())
            .collect();
        loglog_slope(&us, &r)
    };
    let (s1, s2) = (slope(1), slope(2));
    outcome(s1 >= 0.9 && s2 >= 1.8, format!("slopes N=1 {s1:.3}, N=2 {s2:.3}"))
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

/// `u_ε(t) = ε^{α−β} V̇(t/ε^β)` with `α = 1`, `β = 2`, `V(s) = sin 2πs`.
fn fast_oscillation() -> Outcome {
    let fam = FieldFamily::gaussian();
    let grid = CompactBox::cube(2, -1.0, 1.0, 5).unwrap().grid();
    let eps = [0.2, 0.1, 0.05];
    let tau = std::f64::consts::TAU;
    let sup: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let mk = |scale: f64| -> SignalRef {
                Arc::new(Sinusoid {
                    amplitude: scale * tau / e,
                    omega: tau / (e * e),
                    phase: std::f64::consts::FRAC_PI_2,
                })
            };
            let sys = ControlLinearSystem::new(fam.clone(), vec![mk(1.0), mk(0.5)]).unwrap();
            compare_in_lockstep(&sys, &Zero, &grid, 0.0, 1.0, 16, &IntegratorSettings::default())
                .unwrap()
                .dense_sup
        })
        .collect();
    let s = loglog_slope(&eps, &sup);
    outcome(s >= 0.9, format!("slope {s:.3}, distances {}", sci(&sup)))
}

fn study(word: &str, intervals: usize, resolution: usize) -> (f64, Vec<f64>) {
    let fam = FieldFamily::gaussian();
    let dict = BracketDictionary::from_spec(&fam, word, 8).unwrap();
    let target: BracketWord = word.parse().unwrap();
    let i = dict.words().iter().position(|w| *w == target);
    let ext = ExtendedControl::from_fn(dict.words().to_vec(), 1.0, intervals, |j, t| {
        if Some(j) == i {
            t.cos()
        } else {
            0.0
        }
    })
    .unwrap();
    let k = CompactBox::cube(2, -1.0, 1.0, resolution).unwrap();
    let s = convergence_study(
        &dict,
        &ext,
        &ReductionPlan::default(),
        &[0.2, 0.1, 0.05, 0.025],
        &k,
        &StudyOptions::default(),
    )
    .unwrap();
    (s.slope, s.rows.iter().map(|r| r.sup_c0_distance).collect())
}

fn reduction() -> Outcome {
    let (single, d1) = study("12", 64, 3);
    let (nested, d2) = study("112", 64, 2);
    outcome(
        single >= 0.8 && nested >= 0.7,
        format!(
            "single bracket slope {single:.3} {}, nested depth 3 slope {nested:.3} {}",
            sci(&d1),
            sci(&d2)
        ),
    )
}

fn hermite() -> Outcome {
    const LAMBDA: f64 = 4.1;
    let reports: Vec<_> = [10, 20, 40]
        .iter()
        .map(|&m| identity_report(m, (0.0, 1.0)).unwrap())
        .collect();
    let sup40 = reports[2].sup_error;
    let bounds: Vec<f64> = reports.iter().map(|r| r.lambda_bound).collect();
    outcome(
        sup40 <= 1e-2 && bounds.iter().all(|&b| b <= LAMBDA),
        format!("sup error at M=40 {sup40:.2e}, |h|+|h'| bounds {bounds:.3?} against λ = {LAMBDA}"),
    )
}

fn flagship() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let s = Scenario::load(&example("gauss_steering.json")).unwrap();
    let o = run_scenario(&s, Some(dir.path()));
    let r = &o.report["result"];
    let (ratio, achieved) = match r.get("steering") {
        Some(st) => (st["gronwall"]["worst_ratio"].as_f64(), st["achieved_c0_error"].as_f64()),
        None => (r["extended"]["gronwall"]["worst_ratio"].as_f64(), None),
    };
    let ratio = ratio.unwrap_or(f64::NAN);
    let gronwall_ok = ratio <= 1.05;
    let achieved_ok = o.exit_code == 0 && achieved.is_some_and(|a| a <= 0.1);
    let achieved_text = match (&o.error, achieved) {
        (_, Some(a)) => format!("achieved error {a:.3e}"),
        (Some(e), None) => format!("no reduced control ({e})"),
        (None, None) => "no achieved error reported".into(),
    };
    outcome(
        gronwall_ok && achieved_ok,
        format!("exit {}, {achieved_text}; Gronwall ratio {ratio:.3}", o.exit_code),
    )
}

fn rank() -> Outcome {
    let fam = FieldFamily::gaussian();
    let pts = vec![vec![-0.5, 0.0], vec![0.1, 0.3], vec![0.7, -0.2]];
    let d = is_bracket_generating(&build_bracket_matrix(&fam, &pts, 6).unwrap(), None);
    let mut dup = pts.clone();
    dup[1] = dup[0].clone();
    let dup_no = matches!(build_bracket_matrix(&fam, &dup, 6), Err(Error::Degenerate { .. }));
    let frame = FieldFamily::coordinate_frame(2);
    let flat = genericity_probe(&frame, 3, 6, 10, 0.0, 7).unwrap().fraction;
    let perturbed = genericity_probe(&frame, 3, 6, 50, 0.1, 7).unwrap().fraction;
    outcome(
        d.generating && d.rank == 6 && dup_no && flat == 0.0 && perturbed >= 0.9,
        format!(
            "Gaussian N=3 depth 6 rank {} of {} (decision {}), duplicate rejected {dup_no}, frame probe δ=0 {flat}, δ=0.1 {perturbed}",
            d.rank,
            d.required,
            if d.generating { "yes" } else { "no" }
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut same = Vec::new();
    for name in [
        "canonical_convergence.json",
        "gauss_steering.json",
        "gauss_rank.json",
        "frame_probe.json",
    ] {
        let s = Scenario::load(&example(name)).unwrap();
        let runs: Vec<Vec<u8>> = (0..2)
            .map(|_| {
                // same directory both times: the report records it
                let out = dir.path().join(name);
                let o = run_scenario(&s, Some(&out));
                let mut bytes = Vec::new();
                for f in o.files.iter().filter(|f| !f.ends_with("timings.json")) {
                    bytes.extend(std::fs::read(f).unwrap());
                }
                bytes
            })
            .collect();
        same.push((name, !runs[0].is_empty() && runs[0] == runs[1]));
    }
    let all = same.iter().all(|(_, s)| *s);
    let detail = same
        .iter()
        .map(|(n, s)| format!("{n} {}", if *s { "identical" } else { "differs" }))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(all, detail)
}

fn main() {
    let results = [
        criterion(1, "bracket oracle", secs(1), bracket_oracle),
        criterion(2, "bracket algebra", secs(5), bracket_algebra),
        criterion(3, "variational formula", secs(30), variational),
        criterion(4, "pushforward expansions", secs(30), pushforward),
        criterion(5, "fast-oscillation nullity", secs(60), fast_oscillation),
        criterion(6, "bracket reduction convergence", secs(300), reduction),
        criterion(7, "Hermite approximation", secs(10), hermite),
        criterion(8, "flagship steering", secs(300), flagship),
        criterion(9, "rank test", secs(60), rank),
        criterion(10, "determinism", secs(600), determinism),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
