use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use pinch_core::gradients::GradMode;
use pinch_core::harness::{self, checks, ExperimentSpec, Method};
use pinch_core::{PinchingLayout, SystemConfig};

/// Two-timescale transmit and pinching beamforming experiments.
#[derive(Parser)]
#[command(name = "pinch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write results, timings, traces and layouts.
    Run(RunArgs),
    /// Compare the analytic position gradient with central differences.
    Gradcheck(GradcheckArgs),
    /// Compare the spacing projection with active-set enumeration.
    Projcheck(ProjcheckArgs),
    /// Fit duals on export-stream samples and write a JSON-lines dataset.
    ExportData(ExportArgs),
    /// Score a JSON-lines duals file.
    EvalDuals(EvalArgs),
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec (TOML). Defaults apply to every missing key.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl SpecArgs {
    fn load(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.spec {
            Some(path) => ExperimentSpec::from_path(path)?,
            None => ExperimentSpec::default(),
        };
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        Ok(spec)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (TOML).
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Comma-separated subset of proposed, ssca_thp, mimo.
    #[arg(long)]
    methods: Option<String>,
    /// omit, fd or spsa.
    #[arg(long)]
    grad_mode: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Central-difference step in meters.
    #[arg(long, default_value_t = 1e-7)]
    step: f64,
    /// Largest accepted relative entry error.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    l: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ProjcheckArgs {
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Number of records.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Layout JSON (rows of positions) as written by `run`; defaults to the grid.
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long, default_value = "dataset.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// JSON-lines duals file.
    duals: PathBuf,
    /// Optional per-record score CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every internal check passed.
fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::Projcheck(args) => projcheck(args),
        Command::ExportData(args) => export(args),
        Command::EvalDuals(args) => eval_duals(args),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn run(args: RunArgs) -> Result<bool> {
    let mut spec = SpecArgs {
        spec: args.spec,
        seed: args.seed,
    }
    .load()?;
    if let Some(m) = &args.methods {
        spec.methods = Method::parse_list(m)?;
    }
    if let Some(g) = &args.grad_mode {
        spec.grad_mode = match (GradMode::parse(g)?, spec.grad_mode) {
            (GradMode::Fd { .. }, GradMode::Fd { step }) => GradMode::Fd { step },
            (GradMode::Spsa { .. }, GradMode::Spsa { step, draws }) => GradMode::Spsa { step, draws },
            (mode, _) => mode,
        };
    }
    spec.validate()?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;

    let outcome = harness::run_experiment(&spec)?;
    let rows = outcome.rows();
    harness::write_results_csv(create(&args.out.join("results.csv"))?, &rows)?;
    harness::write_timing_csv(create(&args.out.join("timing.csv"))?, &rows)?;
    for p in &outcome.points {
        let stem = format!("{}_{}dBm", p.method, p.row.p_max_dbm);
        if !p.trace.is_empty() {
            harness::write_trace_csv(create(&args.out.join(format!("trace_{stem}.csv")))?, &p.trace)?;
        }
        if let Some(layout) = &p.layout {
            let mut w = create(&args.out.join(format!("layout_{stem}.json")))?;
            serde_json::to_writer(&mut w, &layout.to_rows())?;
            writeln!(w)?;
            w.flush()?;
        }
    }
    harness::write_results_csv(std::io::stdout().lock(), &rows)?;
    let unconverged = outcome.unconverged_solves();
    if unconverged > 0 {
        eprintln!("note: {unconverged} short-term solves hit their iteration limit");
    }
    info!("wrote {}", args.out.display());
    Ok(true)
}

fn gradcheck(args: GradcheckArgs) -> Result<bool> {
    let cfg = SystemConfig::with_dims(args.k, args.l);
    let rep = checks::gradient_check(&cfg, args.instances, args.step, args.seed)?;
    for (i, e) in rep.errors.iter().enumerate() {
        println!("instance {i:3}  max relative error {e:.3e}");
    }
    let ok = rep.max_error() < args.tol;
    println!(
        "{}: worst {:.3e} over {} instances at step {:e} m (tolerance {:e})",
        if ok { "PASS" } else { "FAIL" },
        rep.max_error(),
        rep.instances,
        rep.step,
        args.tol
    );
    Ok(ok)
}

fn projcheck(args: ProjcheckArgs) -> Result<bool> {
    let rep = checks::projection_check(args.instances, args.seed);
    let ok = rep.max_error < args.tol;
    println!(
        "{}: worst coordinate difference {:.3e} over {} instances (tolerance {:e})",
        if ok { "PASS" } else { "FAIL" },
        rep.max_error,
        rep.instances,
        args.tol
    );
    Ok(ok)
}

fn export(args: ExportArgs) -> Result<bool> {
    let spec = args.spec.load()?;
    let layout = match &args.layout {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let rows: Vec<Vec<f64>> = serde_json::from_str(&text)
                .with_context(|| format!("{} is not a JSON array of rows", path.display()))?;
            PinchingLayout::checked(&spec.scenario, PinchingLayout::from_rows(&rows)?.into_positions())?
        }
        None => PinchingLayout::grid(&spec.scenario),
    };
    let records = harness::export_training_set(&spec, &layout, args.count, create(&args.out)?)?;
    println!("wrote {} records to {}", records.len(), args.out.display());
    Ok(true)
}

fn eval_duals(args: EvalArgs) -> Result<bool> {
    let spec = args.spec.load()?;
    let ev = harness::eval_duals_file(&spec, &args.duals)?;
    if let Some(path) = &args.out {
        let mut w = create(path)?;
        writeln!(w, "record,sum_rate,stored_sum_rate")?;
        for (i, (s, t)) in ev.scores.iter().zip(&ev.stored).enumerate() {
            let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(w, "{i},{},{}", fmt(s), fmt(t))?;
        }
        w.flush()?;
    }
    harness::write_results_csv(std::io::stdout().lock(), std::slice::from_ref(&ev.row))?;
    if ev.skipped > 0 {
        eprintln!("warning: {} of {} records skipped", ev.skipped, ev.scores.len());
    }
    if ev.scores.is_empty() && ev.skipped == 0 {
        return Ok(true);
    }
    if ev.skipped == ev.scores.len() {
        bail!("no record could be scored");
    }
    Ok(true)
}
