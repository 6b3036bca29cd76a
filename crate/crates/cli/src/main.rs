//! `gsot`: generate synthetic data, solve single instances, run grid benchmarks.

mod record;
mod svg;

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsot_core::data::{gen_synthetic, instance_from_samples, load_csv, save_matrix_csv, save_source_csv, save_target_csv, InstanceOptions};
use gsot_core::{audit_solve, params_from_rho, solve, ProblemInstance, Solution, SolverMode, SolverOptions};
use rayon::prelude::*;

use record::{write_history, write_records, BenchRecord, HISTORY_HEADER};

const DEFAULT_GAMMAS: [f64; 7] = [1e3, 1e2, 1e1, 1.0, 1e-1, 1e-2, 1e-3];
const DEFAULT_RHOS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] gsot_core::Error),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use gsot_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::InvalidParameter { .. } | E::RhoOutOfRange(_)) => 2,
            CliError::Core(E::AuditViolation(_)) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Parser)]
#[command(name = "gsot", version, about = "Group-sparse optimal transport with safe gradient skipping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic source/target pair as CSV.
    Gen {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Solve one instance and print a results row.
    Solve(SolveArgs),
    /// Run a (gamma, rho, mode) grid and write results.csv.
    Bench(BenchArgs),
}

/// Where the instance comes from: two CSV files, or the synthetic generator.
#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    #[arg(long, default_value_t = 10, conflicts_with = "source")]
    classes: usize,
    #[arg(long, default_value_t = 10, conflicts_with = "source")]
    per_class: usize,
    #[arg(long, default_value_t = 1, conflicts_with = "source")]
    seed: u64,
    /// Divide the cost matrix by its largest entry.
    #[arg(long)]
    normalize_cost: bool,
    /// Use the optional `weight` columns as marginals.
    #[arg(long)]
    weighted: bool,
}

impl DataArgs {
    fn instance(&self) -> Result<ProblemInstance, CliError> {
        let (src, tgt) = match (&self.source, &self.target) {
            (Some(s), Some(t)) => load_csv(s, t)?,
            _ => gen_synthetic(self.classes, self.per_class, self.seed)?,
        };
        let opts = InstanceOptions { normalize_cost: self.normalize_cost, weighted: self.weighted };
        Ok(instance_from_samples(&src, &tgt, opts)?)
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 10)]
    snapshot_interval: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_outer: usize,
    #[arg(long, default_value_t = 10)]
    lbfgs_memory: usize,
}

impl SolverArgs {
    fn options(&self, mode: SolverMode) -> SolverOptions {
        SolverOptions {
            snapshot_interval: self.snapshot_interval,
            grad_tol: self.tol,
            max_outer_loops: self.max_outer,
            lbfgs_memory: self.lbfgs_memory,
            mode,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    rho: f64,
    /// baseline | fast | fast-no-lb | audit
    #[arg(long, default_value = "fast")]
    mode: SolverMode,
    /// Verify every skip and active-set decision against exact computation.
    #[arg(long)]
    audit: bool,
    /// Write the recovered transport plan as CSV.
    #[arg(long)]
    emit_plan: Option<PathBuf>,
    /// Write per-gradient-call screening counters as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Repeatable; defaults to 1e3, 1e2, ..., 1e-3.
    #[arg(long)]
    gamma: Vec<f64>,
    /// Repeatable; defaults to 0.2, 0.4, 0.6, 0.8.
    #[arg(long)]
    rho: Vec<f64>,
    /// Repeatable; defaults to baseline and fast.
    #[arg(long)]
    mode: Vec<SolverMode>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Bar chart of baseline/fast wall-time ratio per gamma.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Write per-gradient-call screening counters for every run as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Run grid points concurrently. Wall times then include contention.
    #[arg(long)]
    parallel: bool,
}

/// Runs one grid point. Audit violations surface as errors.
fn run_one(inst: &ProblemInstance, gamma: f64, rho: f64, opts: &SolverOptions, audit: bool) -> Result<Solution, CliError> {
    let p = params_from_rho(gamma, rho)?;
    let sol = if audit || opts.mode == SolverMode::Audit {
        audit_solve(inst, &p, opts)?.0
    } else {
        solve(inst, &p, opts)?
    };
    Ok(sol)
}

fn history_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(HISTORY_HEADER)?;
    Ok(w)
}

fn cmd_gen(classes: usize, per_class: usize, seed: u64, out_dir: &Path) -> Result<bool, CliError> {
    if classes == 0 || per_class == 0 {
        return Err(CliError::Usage("--classes and --per-class must be positive".into()));
    }
    let (src, tgt) = gen_synthetic(classes, per_class, seed)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    save_source_csv(&src, out_dir.join("source.csv"))?;
    save_target_csv(&tgt, out_dir.join("target.csv"))?;
    Ok(true)
}

fn cmd_solve(args: &SolveArgs) -> Result<bool, CliError> {
    params_from_rho(args.gamma, args.rho)?;
    let opts = args.solver.options(args.mode);
    opts.validate()?;
    let inst = args.data.instance()?;
    let sol = run_one(&inst, args.gamma, args.rho, &opts, args.audit)?;
    let rec = BenchRecord::new(&inst, args.mode, args.gamma, args.rho, &sol)?;
    write_records(io::stdout().lock(), std::slice::from_ref(&rec))?;
    if let Some(path) = &args.emit_plan {
        save_matrix_csv(&sol.plan.plan, path)?;
    }
    if let Some(path) = &args.history {
        let mut w = history_writer(path)?;
        write_history(&mut w, args.mode, args.gamma, args.rho, &sol.stats.history)?;
        w.flush().map_err(io_err(path))?;
    }
    if !sol.converged {
        eprintln!("gsot: not converged after {} iterations ({:?})", sol.iterations, sol.termination);
    }
    Ok(sol.converged)
}

fn label(gamma: f64) -> String {
    format!("{gamma:e}")
}

/// Baseline/fast wall-time ratios: per gamma with times summed over rho,
/// then per (gamma, rho).
fn speedup_summary(records: &[BenchRecord]) -> (Vec<svg::Bar>, Vec<String>) {
    let mut gammas: Vec<f64> = Vec::new();
    for r in records {
        if !gammas.iter().any(|g| g.to_bits() == r.gamma.to_bits()) {
            gammas.push(r.gamma);
        }
    }
    let time = |mode: SolverMode, gamma: f64, rho: Option<f64>| -> f64 {
        records
            .iter()
            .filter(|r| r.mode == mode && r.gamma.to_bits() == gamma.to_bits())
            .filter(|r| rho.is_none_or(|x| r.rho.to_bits() == x.to_bits()))
            .map(|r| r.wall_ms)
            .sum()
    };
    let mut bars = Vec::new();
    let mut lines = vec!["gamma,rho,baseline_ms,fast_ms,ratio".to_string()];
    for &g in &gammas {
        let (b, f) = (time(SolverMode::Baseline, g, None), time(SolverMode::Fast, g, None));
        lines.push(format!("{g:?},sum,{b:?},{f:?},{:?}", b / f));
        bars.push(svg::Bar { label: label(g), value: b / f });
        let mut rhos: Vec<f64> = Vec::new();
        for r in records.iter().filter(|r| r.gamma.to_bits() == g.to_bits()) {
            if !rhos.iter().any(|x| x.to_bits() == r.rho.to_bits()) {
                rhos.push(r.rho);
            }
        }
        for rho in rhos {
            let (b, f) = (time(SolverMode::Baseline, g, Some(rho)), time(SolverMode::Fast, g, Some(rho)));
            lines.push(format!("{g:?},{rho:?},{b:?},{f:?},{:?}", b / f));
        }
    }
    (bars, lines)
}

fn cmd_bench(args: &BenchArgs) -> Result<bool, CliError> {
    let gammas = if args.gamma.is_empty() { DEFAULT_GAMMAS.to_vec() } else { args.gamma.clone() };
    let rhos = if args.rho.is_empty() { DEFAULT_RHOS.to_vec() } else { args.rho.clone() };
    let modes = if args.mode.is_empty() { vec![SolverMode::Baseline, SolverMode::Fast] } else { args.mode.clone() };
    for &g in &gammas {
        for &r in &rhos {
            params_from_rho(g, r)?;
        }
    }
    args.solver.options(SolverMode::Fast).validate()?;
    let inst = args.data.instance()?;

    let mut grid = Vec::with_capacity(gammas.len() * rhos.len() * modes.len());
    for &g in &gammas {
        for &r in &rhos {
            grid.extend(modes.iter().map(|&m| (g, r, m)));
        }
    }
    let work = |&(g, r, m): &(f64, f64, SolverMode)| {
        let opts = args.solver.options(m);
        run_one(&inst, g, r, &opts, false).and_then(|s| Ok((BenchRecord::new(&inst, m, g, r, &s)?, s.stats.history)))
    };
    let results: Vec<_> = if args.parallel { grid.par_iter().map(work).collect() } else { grid.iter().map(work).collect() };

    let mut records = Vec::new();
    let mut histories = Vec::new();
    let mut first_error: Option<CliError> = None;
    for ((g, r, m), res) in grid.iter().zip(results) {
        match res {
            Ok((rec, hist)) => {
                histories.push((*m, *g, *r, hist));
                records.push(rec);
            }
            Err(e) => {
                eprintln!("gsot: {} gamma={g:e} rho={r}: {e}", m.as_str());
                if first_error.as_ref().is_none_or(|f| e.exit_code() > f.exit_code()) {
                    first_error = Some(e);
                }
            }
        }
    }

    // Completed rows are written even when some grid points failed.
    let file = File::create(&args.out).map_err(io_err(&args.out))?;
    write_records(BufWriter::new(file), &records)?;
    if let Some(path) = &args.history {
        let mut w = history_writer(path)?;
        for (m, g, r, hist) in &histories {
            write_history(&mut w, *m, *g, *r, hist)?;
        }
        w.flush().map_err(io_err(path))?;
    }
    if modes.contains(&SolverMode::Baseline) && modes.contains(&SolverMode::Fast) {
        let (bars, lines) = speedup_summary(&records);
        for line in &lines {
            println!("{line}");
        }
        if let Some(path) = &args.svg {
            let chart = svg::bar_chart("Baseline / fast wall time (summed over rho)", "time ratio", &bars);
            fs::write(path, chart).map_err(io_err(path))?;
        }
    } else if args.svg.is_some() {
        eprintln!("gsot: --svg needs both baseline and fast modes in the grid; skipped");
    }

    if let Some(e) = first_error {
        return Err(e);
    }
    let unconverged = records.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        eprintln!("gsot: {unconverged} of {} runs did not converge", records.len());
    }
    Ok(unconverged == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gen { classes, per_class, seed, out_dir } => cmd_gen(*classes, *per_class, *seed, out_dir),
        Command::Solve(args) => cmd_solve(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("gsot: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
