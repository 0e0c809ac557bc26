//! `jpcg`: solve a Matrix Market system with the streamed accelerator model
//! and/or the sequential reference solver.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jpcg_core::controller::{
    run_jpcg, ScheduleMode, SolveArtifacts, SolverConfig, SolverError, Termination, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use jpcg_core::isa::render_trace;
use jpcg_core::matrix_io::{load_matrix_market, validate_solver_input, CsrMatrix, MatrixError};
use jpcg_core::reference::{compare_traces, jpcg_reference, ReferenceError};
use jpcg_core::report::{write_trace_csv, SolverKind, SolverReport, TraceCsvError, TracePoint};
use jpcg_core::runtime::SchedulerKind;
use jpcg_core::spmv::PrecisionScheme;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "jpcg", version, about = "Streamed Jacobi-preconditioned CG solver model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve A x = b and write a JSON report and optional CSV trace.
    Solve(SolveArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Streamed,
    Reference,
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scheduler {
    Det,
    Conc,
}

impl From<Scheduler> for SchedulerKind {
    fn from(s: Scheduler) -> Self {
        match s {
            Scheduler::Det => SchedulerKind::Deterministic,
            Scheduler::Conc => SchedulerKind::Concurrent,
        }
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Matrix Market file (coordinate, real/integer/pattern, general or symmetric).
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Streamed)]
    mode: Mode,
    /// fp64, mixed-v1, mixed-v2 or mixed-v3.
    #[arg(long, default_value = "fp64")]
    scheme: PrecisionScheme,
    /// naive or decentralized.
    #[arg(long, default_value = "decentralized")]
    schedule: ScheduleMode,
    /// Threshold on the squared residual norm.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: u64,
    /// Channel depth override, e.g. `M5->M6:r=34`. Repeatable.
    #[arg(long = "fifo-depth", value_name = "NAME=N", value_parser = parse_depth)]
    fifo_depth: Vec<(String, usize)>,
    #[arg(long, value_enum, default_value_t = Scheduler::Det)]
    scheduler: Scheduler,
    /// Residual trace CSV (`iteration,rr`).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// JSON report; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Right-hand side, one value per line (default all ones).
    #[arg(long)]
    b: Option<PathBuf>,
    /// Initial guess, one value per line (default all zeros).
    #[arg(long)]
    x0: Option<PathBuf>,
    /// Split SpMV columns into on-chip windows and keep spacing across them.
    #[arg(long)]
    hw_faithful: bool,
    /// Run the full iteration tail after convergence instead of the exit bundle.
    #[arg(long)]
    no_early_exit: bool,
    /// Relative tolerance for the compare mode divergence report.
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    /// Issued instructions in trace format, one per line.
    #[arg(long)]
    instruction_log: Option<PathBuf>,
    /// Channel transcripts of the streamed run.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    /// Per-PE nonzero schedule.
    #[arg(long)]
    schedule_dump: Option<PathBuf>,
    /// Final x, one value per line.
    #[arg(long)]
    solution: Option<PathBuf>,
}

fn parse_depth(s: &str) -> Result<(String, usize), String> {
    let (name, depth) = s
        .rsplit_once('=')
        .ok_or_else(|| format!("expected NAME=N, got {s:?}"))?;
    let depth = depth.trim().parse().map_err(|e| format!("depth in {s:?}: {e}"))?;
    Ok((name.trim().to_string(), depth))
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Matrix { path: PathBuf, source: MatrixError },
    #[error("{path}:{line}: {reason}")]
    Vector { path: PathBuf, line: usize, reason: String },
    #[error("invalid input:\n  {}", .0.join("\n  "))]
    Input(Vec<String>),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("reference solver: {0}")]
    Reference(#[from] ReferenceError),
    #[error("trace: {0}")]
    Trace(#[from] TraceCsvError),
    #[error("report: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| CliError::Vector {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(io_err(p))?;
            let mut w = BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w).and_then(|_| w.flush()).map_err(io_err(p))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w).map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn config(args: &SolveArgs) -> SolverConfig {
    SolverConfig {
        tol: args.tol,
        max_iters: args.max_iters,
        scheme: args.scheme,
        schedule_mode: args.schedule,
        fifo_depths: args.fifo_depth.iter().cloned().collect(),
        hardware_faithful: args.hw_faithful,
        scheduler: args.scheduler.into(),
        early_exit: !args.no_early_exit,
        record_transcripts: args.transcripts.is_some(),
        ..SolverConfig::default()
    }
}

fn reference_report(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    args: &SolveArgs,
) -> Result<(SolverReport, Vec<f64>), CliError> {
    let t = jpcg_reference(a, b, x0, args.tol, args.max_iters, args.scheme)?;
    let trace = t
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| TracePoint {
            iteration: i as u64,
            rr: s.rr,
        })
        .collect();
    let termination = if t.converged {
        Termination::Converged
    } else {
        Termination::Budget
    };
    let report = SolverReport::unmodeled(SolverKind::Reference, args.scheme, a.n(), a.nnz(), termination, trace);
    Ok((report, t.x))
}

fn streamed(a: &CsrMatrix, b: &[f64], x0: &[f64], args: &SolveArgs) -> Result<SolveArtifacts, CliError> {
    let cfg = config(args);
    let out = run_jpcg(a, b, x0, &cfg)?;
    if let Some(p) = &args.instruction_log {
        write_file(p, |w| {
            out.instruction_log
                .iter()
                .try_for_each(|i| writeln!(w, "{}", render_trace(i)))
        })?;
    }
    if let (Some(p), Some(dump)) = (&args.transcripts, &out.transcript_dump) {
        fs::write(p, dump).map_err(io_err(p))?;
    }
    Ok(out)
}

fn solve(args: &SolveArgs) -> Result<i32, CliError> {
    let a = load_matrix_market(&args.matrix).map_err(|source| CliError::Matrix {
        path: args.matrix.clone(),
        source,
    })?;
    let n = a.n();
    let b = match &args.b {
        Some(p) => read_vector(p)?,
        None => vec![1.0; n],
    };
    let x0 = match &args.x0 {
        Some(p) => read_vector(p)?,
        None => vec![0.0; n],
    };
    let diags = validate_solver_input(&a, &b, &x0);
    if !diags.is_empty() {
        return Err(CliError::Input(diags.iter().map(|d| d.to_string()).collect()));
    }
    if let Some(p) = &args.schedule_dump {
        let params = config(args).schedule_params();
        let sched = jpcg_core::spmv::schedule_nonzeros(&a, params).map_err(SolverError::from)?;
        fs::write(p, sched.dump()).map_err(io_err(p))?;
    }

    let (report, x) = match args.mode {
        Mode::Reference => reference_report(&a, &b, &x0, args)?,
        Mode::Streamed => {
            let out = streamed(&a, &b, &x0, args)?;
            (out.report, out.x)
        }
        Mode::Compare => {
            let out = streamed(&a, &b, &x0, args)?;
            let (oracle, _) = reference_report(&a, &b, &x0, args)?;
            let mut report = out.report;
            report.comparison = Some(compare_traces(&report.rr_values(), &oracle.rr_values(), args.rel_tol));
            (report, out.x)
        }
    };
    if let Some(p) = &args.trace {
        let file = File::create(p).map_err(io_err(p))?;
        let mut w = BufWriter::new(file);
        write_trace_csv(&report.residual_trace, &mut w)?;
        w.flush().map_err(io_err(p))?;
    }
    if let Some(p) = &args.solution {
        write_file(p, |w| x.iter().try_for_each(|v| writeln!(w, "{v:e}")))?;
    }
    write_json(&report, args.report.as_deref())?;
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => solve(args),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
