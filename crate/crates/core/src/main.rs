#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use dl_replica::boundaries::{gamma_f, gamma_s, BoundarySearch};
use dl_replica::export::{self, BoundaryRow, SweepRecord};
use dl_replica::{Error, ModelParams, QuadratureSpec, SolveOptions};

const SUBCOMMANDS: [&str; 5] = ["solve", "sweep", "boundary", "phase-diagram", "free-entropy"];

/// Replica-symmetric solver for Bayes-optimal dictionary learning.
///
/// Flags may also be given in a TOML file of `key = value` pairs passed with
/// `--config` before the subcommand; flags on the command line win.
#[derive(Parser, Debug)]
#[command(name = "dl-replica", version, args_override_self = true)]
struct Cli {
    /// TOML file with default flag values for the subcommand.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads; defaults to one per core. Output does not depend on it.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// All branches at one parameter point.
    Solve(SolveArgs),
    /// Branch records on a grid of sample ratios.
    Sweep(SweepArgs),
    /// Critical sample ratios and the spinodal density.
    Boundary(BoundaryArgs),
    /// Region labels on an alpha-rho grid plus the alpha_M polyline.
    PhaseDiagram(PhaseArgs),
    /// Free entropy of every branch on a grid of sample ratios.
    FreeEntropy(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct Numerics {
    /// Gauss-Hermite order in both directions (odd, >= 3).
    #[arg(long, default_value_t = 101)]
    quad_order: usize,
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
}

impl Numerics {
    fn quadrature(&self) -> Result<QuadratureSpec, Error> {
        QuadratureSpec::with_order(self.quad_order)
    }

    fn options(&self) -> Result<SolveOptions, Error> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidParams(format!(
                "damping = {} outside [0, 1)",
                self.damping
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParams("tol and max-iter must be positive".into()));
        }
        Ok(SolveOptions {
            damping: self.damping,
            tol: self.tol,
            max_iter: self.max_iter,
        })
    }
}

#[derive(Args, Debug, Clone)]
struct Model {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    rho: f64,
    /// Density assumed by the learner; defaults to rho.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma_x2: f64,
}

impl Model {
    fn params(&self, gamma: f64) -> Result<ModelParams, Error> {
        ModelParams::new(
            self.alpha,
            gamma,
            self.rho,
            self.theta.unwrap_or(self.rho),
            self.sigma_x2,
            0.0,
        )
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    model: Model,
    #[arg(long)]
    gamma: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(flatten)]
    numerics: Numerics,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    model: Model,
    #[arg(long)]
    gamma_min: f64,
    #[arg(long)]
    gamma_max: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    numerics: Numerics,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum Which {
    GammaS,
    GammaF,
    GammaM,
    RhoM,
}

#[derive(Args, Debug)]
struct BoundaryArgs {
    #[arg(long, value_enum)]
    which: Which,
    #[arg(long, conflicts_with = "alpha_range")]
    alpha: Option<f64>,
    #[arg(long, conflicts_with = "rho_range")]
    rho: Option<f64>,
    /// `start:stop:count`, endpoints included.
    #[arg(long, value_parser = parse_range)]
    rho_range: Option<Grid>,
    /// `start:stop:count`, endpoints included.
    #[arg(long, value_parser = parse_range)]
    alpha_range: Option<Grid>,
    /// Bracket width at which bisection stops.
    #[arg(long, default_value_t = 1e-3)]
    boundary_tol: f64,
    /// Largest gamma probed before gamma-m is declared divergent.
    #[arg(long, default_value_t = 1e3)]
    gamma_cap: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_x2: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    numerics: Numerics,
}

#[derive(Args, Debug)]
struct PhaseArgs {
    /// `start:stop:count`, endpoints included.
    #[arg(long, value_parser = parse_range)]
    alpha_grid: Grid,
    /// `start:stop:count`, endpoints included.
    #[arg(long, value_parser = parse_range)]
    rho_grid: Grid,
    /// Upper end of the alpha_M search.
    #[arg(long, default_value_t = 1.0)]
    alpha_max: f64,
    #[arg(long, default_value_t = 1e-4)]
    boundary_tol: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_x2: f64,
    /// Region table.
    #[arg(long)]
    out: PathBuf,
    /// alpha_M polyline; defaults to the region table path with an
    /// `_alpha_m` suffix.
    #[arg(long)]
    alpha_m_out: Option<PathBuf>,
    #[command(flatten)]
    numerics: Numerics,
}

/// Points of a `start:stop:count` range.
#[derive(Debug, Clone)]
struct Grid(Vec<f64>);

fn parse_range(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        return Err(format!("expected start:stop:count, got {s:?}"));
    };
    let a: f64 = a.parse().map_err(|_| format!("bad start {a:?}"))?;
    let b: f64 = b.parse().map_err(|_| format!("bad stop {b:?}"))?;
    let n: usize = n.parse().map_err(|_| format!("bad count {n:?}"))?;
    match n {
        1 if a == b => Ok(Grid(vec![a])),
        _ => export::gamma_grid(a, b, n).map(Grid).map_err(|e| e.to_string()),
    }
}

enum Failure {
    Usage(String),
    Unconverged(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParams(_) | Error::Undefined(_) => Failure::Usage(e.to_string()),
            Error::Unconverged { .. } => Failure::Unconverged(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match with_config(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Unconverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

/// Splices the flags of a `--config` file in right after the subcommand, so
/// that the same flags given later on the command line override them.
fn with_config(mut args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(pos) = args
        .iter()
        .position(|a| a == "--config" || a.to_string_lossy().starts_with("--config="))
    else {
        return Ok(args);
    };
    let path = match args[pos].to_string_lossy().strip_prefix("--config=") {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(args.get(pos + 1).ok_or("--config needs a file")?),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let table: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
    let mut flags = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        let value = match value {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(true) => {
                flags.push(OsString::from(flag));
                continue;
            }
            toml::Value::Boolean(false) => continue,
            other => return Err(format!("{}: unsupported value for {key}: {other}", path.display())),
        };
        flags.push(OsString::from(flag));
        flags.push(OsString::from(value));
    }
    let Some(sub) = args.iter().position(|a| SUBCOMMANDS.iter().any(|s| a == s)) else {
        return Ok(args);
    };
    args.splice(sub + 1..sub + 1, flags);
    Ok(args)
}

fn sink(out: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a, false),
        Command::FreeEntropy(a) => sweep(a, true),
        Command::Boundary(a) => boundary(a),
        Command::PhaseDiagram(a) => phase_diagram(a),
    }
}

fn check_resolved(records: &[SweepRecord]) -> Result<(), Failure> {
    let bad = export::unresolved_gammas(records);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Unconverged(format!("no branch converged at gamma = {bad:?}")))
    }
}

fn solve(a: SolveArgs) -> Result<(), Failure> {
    let p = a.model.params(a.gamma)?;
    let quad = a.numerics.quadrature()?;
    let opts = a.numerics.options()?;
    if p.alpha <= p.rho {
        eprintln!("note: alpha <= rho (region III); there is no success branch");
    }
    let records = export::branch_records(&p, &quad, &opts);
    let mut w = sink(None)?;
    match a.format {
        Format::Csv => export::write_sweep(&mut w, &records)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &records).map_err(|e| Failure::Other(e.to_string()))?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    check_resolved(&records)
}

fn sweep(a: SweepArgs, phi_only: bool) -> Result<(), Failure> {
    let gammas = export::gamma_grid(a.gamma_min, a.gamma_max, a.steps)?;
    let base = a.model.params(gammas[0])?;
    let quad = a.numerics.quadrature()?;
    let opts = a.numerics.options()?;
    let records = export::sweep(&base, &gammas, &quad, &opts)?;
    let mut w = sink(a.out.as_deref())?;
    if phi_only {
        export::write_free_entropy(&mut w, &records)?;
    } else {
        export::write_sweep(&mut w, &records)?;
    }
    w.flush()?;
    check_resolved(&records)
}

fn boundary(a: BoundaryArgs) -> Result<(), Failure> {
    let one = |v: Option<f64>, range: &Option<Grid>, name: &str| -> Result<Vec<f64>, Failure> {
        match (v, range) {
            (Some(x), None) => Ok(vec![x]),
            (None, Some(r)) => Ok(r.0.clone()),
            _ => Err(Failure::Usage(format!("--which needs --{name} or --{name}-range"))),
        }
    };
    let mut search = BoundarySearch::with_quadrature(a.numerics.quadrature()?);
    search.solve = a.numerics.options()?;
    search.sigma_x2 = a.sigma_x2;
    search.gamma_cap = a.gamma_cap;
    if !(a.boundary_tol > 0.0) {
        return Err(Failure::Usage("boundary-tol must be positive".into()));
    }
    let rows: Vec<BoundaryRow> = match a.which {
        Which::GammaF => one(a.alpha, &a.alpha_range, "alpha")?
            .into_iter()
            .map(|alpha| BoundaryRow::from_closed_form(alpha, gamma_f(alpha)))
            .collect(),
        Which::GammaS => {
            let alpha = a.alpha.ok_or_else(|| Failure::Usage("gamma-s needs --alpha".into()))?;
            one(a.rho, &a.rho_range, "rho")?
                .into_iter()
                .map(|rho| BoundaryRow::from_closed_form(rho, gamma_s(alpha, rho)))
                .collect()
        }
        Which::GammaM => {
            let alpha = a.alpha.ok_or_else(|| Failure::Usage("gamma-m needs --alpha".into()))?;
            one(a.rho, &a.rho_range, "rho")?
                .par_iter()
                .map(|&rho| match search.gamma_m(alpha, rho, a.boundary_tol) {
                    Ok(r) => Ok(BoundaryRow::new(rho, &r)),
                    Err(Error::Undefined(_)) => {
                        Ok(BoundaryRow::from_closed_form(rho, Err(Error::Undefined(String::new()))))
                    }
                    Err(e) => Err(e),
                })
                .collect::<Result<_, Error>>()?
        }
        Which::RhoM => one(a.alpha, &a.alpha_range, "alpha")?
            .par_iter()
            .map(|&alpha| search.rho_m(alpha, a.boundary_tol).map(|r| BoundaryRow::new(alpha, &r)))
            .collect::<Result<_, Error>>()?,
    };
    let mut w = sink(a.out.as_deref())?;
    export::write_boundaries(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

fn phase_diagram(a: PhaseArgs) -> Result<(), Failure> {
    let mut search = BoundarySearch::with_quadrature(a.numerics.quadrature()?);
    search.solve = a.numerics.options()?;
    search.sigma_x2 = a.sigma_x2;
    let regions = export::phase_diagram(&search, &a.alpha_grid.0, &a.rho_grid.0)?;
    let polyline = export::alpha_m_polyline(&search, &a.rho_grid.0, a.boundary_tol, a.alpha_max)?;
    let poly_path = a.alpha_m_out.clone().unwrap_or_else(|| {
        let stem = a
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        a.out.with_file_name(format!("{stem}_alpha_m.csv"))
    });
    let mut w = sink(Some(&a.out))?;
    export::write_phase_diagram(&mut w, &regions)?;
    w.flush()?;
    let mut w = sink(Some(&poly_path))?;
    export::write_alpha_m(&mut w, &polyline)?;
    w.flush()?;
    Ok(())
}
