use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use serde::de::DeserializeOwned;

use pcn_core::analysis::{sweep_csv, AnalysisError, SweepSpec};
use pcn_core::scenario::artifacts::{self, METRICS_FILE, SWEEP_FILE, TRACE_FILE, VERDICTS_FILE};
use pcn_core::scenario::properties::Property;
use pcn_core::scenario::{self, validate, RunError, ScenarioConfig};

const PASS: u8 = 0;
const VIOLATION: u8 = 1;
const INVALID: u8 = 2;
const BUDGET: u8 = 3;

/// Runs payment channel network scenarios and analysis sweeps.
#[derive(Debug, Parser)]
#[command(name = "pcnsim", version)]
struct Args {
    /// Scenario file to run.
    #[arg(long, required_unless_present = "sweep", conflicts_with = "sweep")]
    config: Option<PathBuf>,
    /// Grid file; writes sweep.csv.
    #[arg(long)]
    sweep: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Properties that decide the exit status. All four are written regardless.
    #[arg(long, value_enum, default_value_t = Check::All)]
    check: Check,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Check {
    All,
    Def1,
    Def2,
    Def3,
    Def4,
}

impl Check {
    fn selects(self, p: Property) -> bool {
        match self {
            Check::All => true,
            Check::Def1 => p == Property::Def1,
            Check::Def2 => p == Property::Def2,
            Check::Def3 => p == Property::Def3,
            Check::Def4 => p == Property::Def4,
        }
    }
}

/// Input the user has to fix; reported with exit status 2.
#[derive(Debug)]
struct Invalid(Vec<String>);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0.join("\n"))
    }
}

impl std::error::Error for Invalid {}

fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Invalid(vec![format!("{}: {e}", path.display())]))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = match e.path().to_string() {
            p if p == "." => "(root)".to_string(),
            p => p,
        };
        Invalid(vec![format!("{}: {field}: {}", path.display(), e.inner())]).into()
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run_scenario(args: &Args, path: &Path) -> Result<u8> {
    let mut cfg: ScenarioConfig = load(path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    validate(&cfg).map_err(|errs| Invalid(errs.iter().map(|e| format!("{}: {e}", path.display())).collect()))?;
    let report = scenario::run(&cfg).map_err(|e| match e {
        RunError::Invalid(errs) => Invalid(errs.iter().map(ToString::to_string).collect()),
        RunError::Setup(e) => Invalid(vec![e.to_string()]),
    })?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let verdicts = artifacts::verdicts(&cfg, &report);
    write(&args.out_dir, TRACE_FILE, &report.trace.to_ndjson())?;
    write(&args.out_dir, METRICS_FILE, &artifacts::metrics_json(&cfg, &report))?;
    write(&args.out_dir, VERDICTS_FILE, &artifacts::verdicts_json(&verdicts))?;

    let mut code = PASS;
    for v in &verdicts {
        let status = match (v.pass, v.applicable) {
            (true, true) => "pass",
            (true, false) => "pass (not applicable)",
            (false, _) => "FAIL",
        };
        println!("{} {}: {status}", v.property.key(), v.name);
        if let Some(d) = &v.detail {
            println!("  {d}");
        }
        if !v.pass && args.check.selects(v.property) {
            code = VIOLATION;
        }
    }
    if report.budget_exceeded {
        eprintln!(
            "event budget of {} exceeded at t = {}",
            cfg.event_budget, report.end_time
        );
        code = BUDGET;
    }
    Ok(code)
}

fn run_sweep(args: &Args, path: &Path) -> Result<u8> {
    let spec: SweepSpec = load(path)?;
    let csv = sweep_csv(&spec).map_err(|e| match e {
        AnalysisError::Domain(m) => anyhow::Error::from(Invalid(vec![format!("{}: {m}", path.display())])),
        other => other.into(),
    })?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    write(&args.out_dir, SWEEP_FILE, &csv)?;
    println!(
        "{} rows written to {}",
        spec.cells(),
        args.out_dir.join(SWEEP_FILE).display()
    );
    Ok(PASS)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match (&args.config, &args.sweep) {
        (Some(c), _) => run_scenario(&args, c),
        (None, Some(s)) => run_sweep(&args, s),
        (None, None) => unreachable!("clap requires one of --config and --sweep"),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) if e.is::<Invalid>() => {
            eprintln!("invalid input:\n{e}");
            ExitCode::from(INVALID)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(INVALID)
        }
    }
}
