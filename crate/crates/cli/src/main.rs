use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dirlab_core::scenario::{self, corpus_entries, sidecar_path, RunOutput, Scenario, ScenarioError, Sidecar, Task};
use dirlab_core::ShapeSpec;
use rayon::prelude::*;

const VERSION: &str = env!("DIRLAB_VERSION");

#[derive(Parser)]
#[command(name = "dirichlet-lab", version = VERSION, about = "Scenario-driven Dirichlet problem laboratory")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DIRLAB_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Override a scenario key, e.g. `--set sim.seed=7`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_kv)]
    overrides: Vec<(String, String)>,
    /// Output prefix; defaults to the scenario's `output`, then its name.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario with the task it names.
    Run(RunArgs),
    /// Run every scenario of a corpus directory against its sidecar.
    Corpus {
        dir: PathBuf,
        /// Directory for summaries and CSVs.
        #[arg(long, default_value = "corpus-out")]
        out: PathBuf,
    },
    /// Parse and validate a scenario without running it.
    Validate(RunArgs),
    /// List the supported domain shapes.
    ListShapes,
    /// Monte Carlo estimators.
    Estimate {
        #[arg(value_enum)]
        what: EstimateKind,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Solvers.
    Solve {
        #[arg(value_enum)]
        what: SolveKind,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Boundary-point tests.
    Test {
        #[arg(value_enum)]
        what: TestKind,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Consistency checks.
    Check {
        #[arg(value_enum)]
        what: CheckKind,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Path-limit trace of an interior function.
    Trace(RunArgs),
    /// Martin-metric distances between point pairs.
    MartinDistance(RunArgs),
    /// Harmonic plus potential splitting of an interior function.
    Decompose(RunArgs),
    /// D^p and S^p norms.
    Norms(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimateKind {
    Hmeasure,
    Delta,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveKind {
    Pwb,
    Weak,
    Semilinear,
    CompareWeakPwb,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestKind {
    Regularity,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckKind {
    Soft,
    Harnack,
    Embedding,
    GoodMeasure,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn forced(task: Task, run: RunArgs) -> (RunArgs, Option<Task>) {
    (run, Some(task))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: cannot configure {j} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let (args, task) = match cli.command {
        Command::ListShapes => {
            list_shapes();
            return ExitCode::SUCCESS;
        }
        Command::Corpus { dir, out } => return corpus(&dir, &out),
        Command::Validate(args) => return validate(&args),
        Command::Run(args) => (args, None),
        Command::Estimate { what, run } => forced(
            match what {
                EstimateKind::Hmeasure => Task::EstimateHmeasure,
                EstimateKind::Delta => Task::EstimateDelta,
            },
            run,
        ),
        Command::Solve { what, run } => forced(
            match what {
                SolveKind::Pwb => Task::SolvePwb,
                SolveKind::Weak => Task::SolveWeak,
                SolveKind::Semilinear => Task::SolveSemilinear,
                SolveKind::CompareWeakPwb => Task::CompareWeakPwb,
            },
            run,
        ),
        Command::Test { what: TestKind::Regularity, run } => forced(Task::TestRegularity, run),
        Command::Check { what, run } => forced(
            match what {
                CheckKind::Soft => Task::CheckSoft,
                CheckKind::Harnack => Task::CheckHarnack,
                CheckKind::Embedding => Task::CheckEmbedding,
                CheckKind::GoodMeasure => Task::GoodMeasure,
            },
            run,
        ),
        Command::Trace(run) => forced(Task::Trace, run),
        Command::MartinDistance(run) => forced(Task::MartinDistance, run),
        Command::Decompose(run) => forced(Task::Decompose, run),
        Command::Norms(run) => forced(Task::Norms, run),
    };
    run(args, task)
}

fn load(args: &RunArgs, task: Option<Task>) -> Result<Scenario, ScenarioError> {
    let mut overrides = args.overrides.clone();
    if let Some(t) = task {
        overrides.insert(0, ("task".into(), t.name().into()));
    }
    Scenario::load(&args.scenario, &overrides)
}

fn report(e: &ScenarioError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run(args: RunArgs, task: Option<Task>) -> ExitCode {
    let sc = match load(&args, task) {
        Ok(sc) => sc,
        Err(e) => return report(&e),
    };
    let prefix = args
        .output
        .clone()
        .or_else(|| sc.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&sc.name));
    match scenario::run(&sc, VERSION).and_then(|out| out.write(&prefix).map(|w| (out, w))) {
        Ok((out, written)) => {
            print_headline(&out);
            for p in written {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}

fn print_headline(out: &RunOutput) {
    let s = &out.summary;
    println!("{} [{}] seed {}", s["name"].as_str().unwrap_or(""), s["task"].as_str().unwrap_or(""), s["seed"]);
}

fn validate(args: &RunArgs) -> ExitCode {
    match load(args, None).and_then(|sc| sc.resolve().map(|_| sc)) {
        Ok(sc) => {
            println!("{}: ok ({})", args.scenario.display(), sc.task.name());
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}

fn list_shapes() {
    let about = |kind: &str| match kind {
        "ball" => "ball(center, radius) in 2D or 3D",
        "box" => "box(lo, hi) in 2D or 3D",
        "polygon" => "polygon(vertices, holes) in 2D",
        "slit_ball" => "disk(center, radius) minus a closed slit segment, two-sided",
        "punctured_ball" => "ball(center, radius) minus one removed point",
        "csg" => "union, intersection or difference of two shapes",
        "offset" => "points of a base shape farther than r from its boundary",
        _ => "",
    };
    for kind in ShapeSpec::KINDS {
        println!("{kind:<16}{}", about(kind));
    }
}

struct Entry {
    name: String,
    task: String,
    passed: usize,
    total: usize,
    error: Option<String>,
    failures: Vec<String>,
    seconds: f64,
}

fn run_entry(path: &Path, out: &Path) -> anyhow::Result<Entry> {
    let sidecar = Sidecar::load(&sidecar_path(path))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).ok_or_else(|| anyhow!("bad file name"))?.to_string();
    let start = Instant::now();
    let sc = Scenario::load(path, &[])?;
    let mut entry = Entry {
        name: stem.clone(),
        task: sc.task.name().into(),
        passed: 0,
        total: sidecar.checks.len(),
        error: None,
        failures: Vec::new(),
        seconds: 0.0,
    };
    match scenario::run(&sc, VERSION) {
        Ok(output) => {
            output.write(&out.join(&stem))?;
            for o in sidecar.evaluate(&output.summary) {
                if o.passed {
                    entry.passed += 1;
                } else {
                    entry.failures.push(format!("{}: {}", o.pointer, o.detail));
                }
            }
        }
        Err(e) => entry.error = Some(e.to_string()),
    }
    entry.seconds = start.elapsed().as_secs_f64();
    Ok(entry)
}

fn corpus(dir: &Path, out: &Path) -> ExitCode {
    let result = (|| -> anyhow::Result<bool> {
        let entries = corpus_entries(dir)?;
        if entries.is_empty() {
            return Err(anyhow!("no scenarios in {}", dir.display()));
        }
        let missing: Vec<_> = entries.iter().map(|p| sidecar_path(p)).filter(|s| !s.exists()).collect();
        if let Some(m) = missing.first() {
            return Err(anyhow!("missing sidecar {}", m.display()));
        }
        std::fs::create_dir_all(out).with_context(|| out.display().to_string())?;
        let rows: Vec<anyhow::Result<Entry>> = entries.par_iter().map(|p| run_entry(p, out)).collect();
        println!("{:<32} {:<20} {:>7} {:>9}  status", "scenario", "task", "checks", "seconds");
        let mut ok = true;
        for (path, row) in entries.iter().zip(rows) {
            match row {
                Ok(e) => {
                    let pass = e.error.is_none() && e.passed == e.total;
                    ok &= pass;
                    println!(
                        "{:<32} {:<20} {:>3}/{:<3} {:>9.2}  {}",
                        e.name,
                        e.task,
                        e.passed,
                        e.total,
                        e.seconds,
                        if pass { "PASS" } else { "FAIL" }
                    );
                    if let Some(err) = e.error {
                        println!("    error: {err}");
                    }
                    for f in e.failures {
                        println!("    {f}");
                    }
                }
                Err(err) => {
                    ok = false;
                    println!("{:<32} error: {err:#}", path.display());
                }
            }
        }
        Ok(ok)
    })();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
