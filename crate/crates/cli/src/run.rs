//! Executes one scenario and writes its report files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ensemble_steer::approximator::identity_report;
use ensemble_steer::ensemble::Ensemble;
use ensemble_steer::oscillate::{convergence_study, StudyOptions};
use ensemble_steer::rank::{build_bracket_matrix, genericity_probe, is_bracket_generating};
use ensemble_steer::steering::{extended_stage, finish, reduction_stage};
use serde::Serialize;
use serde_json::{json, Value};

use crate::scenario::{self, Format, Scenario, Task};
use crate::{CliError, EXIT_OK};

/// Result of [`run_scenario`]. The report is written even when a stage
/// fails, holding whatever completed before the failure.
#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub error: Option<CliError>,
    pub report: Value,
    pub files: Vec<PathBuf>,
    pub timings: BTreeMap<String, f64>,
}

struct Sink {
    dir: PathBuf,
    formats: Vec<Format>,
    files: Vec<PathBuf>,
}

impl Sink {
    fn open(&mut self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::Write {
            path: path.clone(),
            source: e,
        })?;
        self.files.push(path.clone());
        Ok((path, BufWriter::new(file)))
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        if !self.formats.contains(&Format::Json) {
            return Ok(());
        }
        let (path, mut w) = self.open(name)?;
        let io = |e: std::io::Error| CliError::Write {
            path: path.clone(),
            source: e,
        };
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(io)
    }

    fn csv(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> ensemble_steer::Result<()>,
    ) -> Result<(), CliError> {
        if !self.formats.contains(&Format::Csv) {
            return Ok(());
        }
        let (_, mut w) = self.open(name)?;
        Ok(f(&mut w)?)
    }
}

#[derive(Default)]
struct Progress {
    result: serde_json::Map<String, Value>,
    timings: BTreeMap<String, f64>,
}

impl Progress {
    fn put(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("report values serialize");
        self.result.insert(key.to_string(), v);
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let started = Instant::now();
        let out = f();
        self.timings.insert(stage.to_string(), started.elapsed().as_secs_f64());
        out
    }
}

/// Runs `scenario`, writing into `out` (the scenario's output directory
/// when `None`).
pub fn run_scenario(scenario: &Scenario, out: Option<&Path>) -> RunOutcome {
    let mut scenario = scenario.clone();
    if let Some(dir) = out {
        scenario.outputs.directory = dir.to_path_buf();
    }
    let mut sink = Sink {
        dir: scenario.outputs.directory.clone(),
        formats: scenario.outputs.formats.clone(),
        files: Vec::new(),
    };
    let mut progress = Progress::default();
    let started = Instant::now();

    let mut error = std::fs::create_dir_all(&sink.dir)
        .map_err(|e| CliError::Write {
            path: sink.dir.clone(),
            source: e,
        })
        .err();
    if error.is_none() {
        error = execute(&scenario, &mut sink, &mut progress).err();
    }
    progress.timings.insert("total".into(), started.elapsed().as_secs_f64());

    let report = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": scenario,
        "status": if error.is_some() { "error" } else { "ok" },
        "error": error.as_ref().map(|e| json!({
            "class": e.class_name(),
            "exit_code": e.exit_code(),
            "message": e.to_string(),
        })),
        "result": Value::Object(progress.result),
    });
    if let Err(e) = sink.json("report.json", &report) {
        error.get_or_insert(e);
    }
    if let Err(e) = sink.json("timings.json", &progress.timings) {
        error.get_or_insert(e);
    }
    RunOutcome {
        exit_code: error.as_ref().map_or(EXIT_OK, CliError::exit_code),
        error,
        report,
        files: sink.files,
        timings: progress.timings,
    }
}

fn execute(s: &Scenario, sink: &mut Sink, p: &mut Progress) -> Result<(), CliError> {
    let family = s.family()?;
    let cap = s.settings.depth_cap;
    match &s.task {
        Task::Steer {
            start,
            target,
            diffeotopy,
            dictionary,
            region,
            approximation,
            plan,
            checkpoints,
        } => {
            let dict = dictionary.build(&family, cap)?;
            let start = start.build()?;
            let target: Option<Ensemble> = target.as_ref().map(|t| t.build()).transpose()?;
            let d = scenario::diffeotopy(diffeotopy, start, &s.settings.integrator)?;
            let k = region.to_box()?;
            let settings = scenario::steering_settings(approximation, plan, *checkpoints, &s.settings);
            p.put("dictionary", dict.words());
            p.put("n_theta", d.start.len());

            let ext = p.time("extended", || extended_stage(&d, &dict, &k, &settings))?;
            p.put("extended", &ext);
            sink.csv("extended_control.csv", |w| ext.approximation.control.write_csv(w))?;

            let red = p.time("reduction", || reduction_stage(&family, &d, &ext, &settings))?;
            p.put("reduction", &red);
            let final_ensemble = d.start.with_points(red.final_states.clone())?;
            let (control, report) = finish(&d, target.as_ref(), ext, red, &settings)?;
            p.result.remove("extended");
            p.result.remove("reduction");
            p.put("steering", &report);
            sink.json("control.json", &control)?;
            sink.csv("final_ensemble.csv", |w| final_ensemble.write_csv(w))?;
        }
        Task::Convergence {
            dictionary,
            coefficients,
            horizon,
            epsilons,
            plan,
            region,
            c1,
            samples,
            checkpoints,
        } => {
            let dict = dictionary.build(&family, cap)?;
            let ext = scenario::extended_control(&dict, coefficients, *horizon, *samples)?;
            let k = region.to_box()?;
            let options = StudyOptions {
                checkpoints: *checkpoints,
                c1: *c1,
                settings: s.settings.integrator.clone(),
            };
            p.put("dictionary", dict.words());
            sink.csv("extended_control.csv", |w| ext.write_csv(w))?;
            let study = p.time("study", || convergence_study(&dict, &ext, plan, epsilons, &k, &options))?;
            p.put("study", &study);
            sink.csv("convergence.csv", |w| study.write_csv(w))?;
        }
        Task::Rank {
            points,
            depth,
            tolerance,
        } => {
            let m = build_bracket_matrix(&family, points, *depth)?;
            let decision = is_bracket_generating(&m, *tolerance);
            p.put("matrix", &m);
            p.put("decision", &decision);
        }
        Task::Probe {
            n_points,
            depth,
            trials,
            delta,
        } => {
            let seed = s.settings.seed;
            let probe = p.time("probe", || {
                genericity_probe(&family, *n_points, *depth, *trials, *delta, seed)
            })?;
            p.put("probe", &probe);
        }
        Task::Hermite { orders, interval } => {
            let reports = orders
                .iter()
                .map(|&m| identity_report(m, (interval[0], interval[1])))
                .collect::<Result<Vec<_>, _>>()?;
            let lambda = reports.iter().map(|r| r.lambda_bound).fold(0.0, f64::max);
            p.put("expansions", &reports);
            p.put("common_lambda", lambda);
        }
    }
    Ok(())
}
