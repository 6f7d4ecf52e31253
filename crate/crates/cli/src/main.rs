use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ensemble_steer_cli::check::{run_checks, Relation};
use ensemble_steer_cli::scenario::Task;
use ensemble_steer_cli::{run_scenario, Scenario, EXIT_CHECK_FAILED, EXIT_OK, EXIT_SCHEMA};

#[derive(Parser)]
#[command(
    name = "ensemble-steer",
    version,
    about = "Steer ensembles of points with fast-oscillating controls"
)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        file: PathBuf,
        /// Output directory, overriding the scenario's.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed, overriding the scenario's.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the built-in invariant suite.
    Check {
        #[arg(long)]
        json: bool,
        #[arg(long, hide = true, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
    /// Run a convergence scenario and print its table.
    Convergence {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ENSEMBLE_STEER_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not cap threads: {e}");
        }
    }
    let code = match cli.command {
        Command::Run { file, out, seed } => run(&file, out, seed, false),
        Command::Convergence { file, out } => run(&file, out, None, true),
        Command::Check { json, tolerance_scale } => check(json, tolerance_scale),
    };
    ExitCode::from(code as u8)
}

fn run(file: &Path, out: Option<PathBuf>, seed: Option<u64>, study_only: bool) -> i32 {
    let mut scenario = match Scenario::load(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if study_only && !matches!(scenario.task, Task::Convergence { .. }) {
        eprintln!("error: `convergence` needs a scenario whose task kind is `convergence`");
        return EXIT_SCHEMA;
    }
    if let Some(s) = seed {
        scenario.settings.seed = s;
    }
    let outcome = run_scenario(&scenario, out.as_deref());
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}");
    }
    let result = &outcome.report["result"];
    if study_only {
        if let Some(rows) = result["study"]["rows"].as_array() {
            println!("{:>10}  {:>14}", "epsilon", "sup distance");
            for r in rows {
                println!(
                    "{:>10}  {:>14.6e}",
                    r["epsilon"],
                    r["sup_c0_distance"].as_f64().unwrap_or(f64::NAN)
                );
            }
            println!("slope {:.4}", result["study"]["slope"].as_f64().unwrap_or(f64::NAN));
        }
    } else if let Some(s) = result.get("steering") {
        println!(
            "achieved error {:.4e}, eps_gen {:.3e}, gronwall ratio {:.3}",
            s["achieved_c0_error"].as_f64().unwrap_or(f64::NAN),
            s["generator_residual"].as_f64().unwrap_or(f64::NAN),
            s["gronwall"]["worst_ratio"].as_f64().unwrap_or(f64::NAN),
        );
    }
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    outcome.exit_code
}

fn check(json: bool, scale: f64) -> i32 {
    let results = run_checks(scale);
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&results).expect("check results serialize")
        );
    } else {
        for r in &results {
            let rel = match r.relation {
                Relation::AtMost => "<=",
                Relation::AtLeast => ">=",
            };
            let tag = if r.passed { "PASS" } else { "FAIL" };
            println!("{tag}  {:<28} {:>12.4e} {rel} {:.1e}", r.name, r.measured, r.bound);
        }
    }
    if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}
