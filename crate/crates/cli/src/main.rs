use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polyimage::certify::{self, Certificate};
use polyimage::hierarchy::{self, Backend, RunConfig, CONTAINMENT_TOL};
use polyimage::model::Method;
use polyimage::pareto::{pareto_scale, ParetoScaling};
use polyimage::problem::{parse_problem, ProblemSpec};
use polyimage::sdp;

/// Certified outer approximations of polynomial images of semi-algebraic sets.
#[derive(Parser)]
#[command(name = "polyimage", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the SDPA program of every order without solving.
    Build {
        problem: PathBuf,
        #[command(flatten)]
        hierarchy: HierarchyArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Solve every order, check the certificates and write the artifacts.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        hierarchy: HierarchyArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Containment and volume checks of a stored certificate.
    Verify {
        problem: PathBuf,
        certificate: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Evaluate a stored certificate on a grid and print CSV.
    Grid {
        problem: PathBuf,
        certificate: PathBuf,
        #[arg(long, default_value = "101x101", value_parser = parse_grid)]
        grid: (usize, usize),
        /// `lo1,lo2,hi1,hi2`
        #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
        window: Option<([f64; 2], [f64; 2])>,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Rescale a bicriteria problem so that its image lies in the unit disk.
    ParetoScale {
        problem: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Write the scaled problem here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
}

#[derive(Args)]
struct HierarchyArgs {
    #[arg(long, default_value = "method1")]
    method: Method,
    #[arg(long, default_value_t = 1)]
    order_min: usize,
    #[arg(long)]
    order_max: Option<usize>,
    #[arg(long)]
    force_low_order: bool,
    /// Use the clique structure of the problem (method1 only).
    #[arg(long)]
    sparse: bool,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = sdp::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = sdp::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value = "internal")]
    solver: Backend,
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Option<([f64; 2], [f64; 2])>,
}

#[derive(Args)]
struct SamplingArgs {
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Relaxation order of the bounds used for Pareto scaling.
    #[arg(long, default_value_t = 2)]
    scale_order: usize,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    Ok((w, h))
}

fn parse_window(s: &str) -> Result<([f64; 2], [f64; 2]), String> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    match v[..] {
        [a, b, c, d] if a < c && b < d => Ok(([a, b], [c, d])),
        [_, _, _, _] => Err("window needs lo < hi in both coordinates".into()),
        _ => Err("expected lo1,lo2,hi1,hi2".into()),
    }
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure { code: 2, msg: e.to_string() }
    }
}

impl From<hierarchy::HierarchyError> for Failure {
    fn from(e: hierarchy::HierarchyError) -> Self {
        Failure::input(e)
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_problem(path: &Path) -> Result<ProblemSpec, Failure> {
    parse_problem(&read(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_certificate(path: &Path) -> Result<Certificate, Failure> {
    Certificate::from_text(&read(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Applies Pareto scaling when the problem asks for it.
fn scaled(spec: ProblemSpec, s: &SamplingArgs) -> Result<(ProblemSpec, Option<ParetoScaling>), Failure> {
    if !spec.pareto {
        return Ok((spec, None));
    }
    let (spec, scaling) = pareto_scale(&spec, s.scale_order, s.seed).map_err(|e| Failure { code: 3, msg: e.to_string() })?;
    Ok((spec, Some(scaling)))
}

fn write_new(path: &Path, text: &str, overwrite: bool) -> Result<(), Failure> {
    if path.exists() && !overwrite {
        return Err(Failure::input(format!("{} already exists (pass --overwrite to replace it)", path.display())));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Failure::input)?;
    }
    std::fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn run_config(h: &HierarchyArgs, solver: Option<&SolverArgs>) -> RunConfig {
    let mut cfg = RunConfig {
        method: h.method,
        order_min: h.order_min,
        order_max: h.order_max.unwrap_or(h.order_min),
        samples: h.sampling.samples,
        seed: h.sampling.seed,
        force_low_order: h.force_low_order,
        sparse: h.sparse,
        backend: Backend::ExportOnly,
        ..RunConfig::default()
    };
    if let Some(s) = solver {
        cfg.tol = s.tol;
        cfg.max_iter = s.max_iter;
        cfg.backend = s.solver;
        cfg.grid = s.grid;
        cfg.window = s.window;
    }
    cfg
}

fn hierarchy_run(problem: &Path, h: &HierarchyArgs, solver: Option<&SolverArgs>, out: &OutputArgs) -> Result<u8, Failure> {
    let (spec, scaling) = scaled(load_problem(problem)?, &h.sampling)?;
    let cfg = run_config(h, solver);
    let report = hierarchy::run_hierarchy(&spec, &cfg)?;
    if let Some(s) = &scaling {
        let mut text: String = s.to_text().lines().map(|l| format!("# {l}\n")).collect();
        text.push_str(&spec.emit());
        write_new(&out.out.join("scaled.poly"), &text, out.overwrite)?;
    }
    let written = hierarchy::write_artifacts(&report, &out.out, out.overwrite)?;
    print!("{}", report.summary());
    if let Some(rate) = report.sample_acceptance {
        println!("sample acceptance = {rate:.4}");
    }
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(report.exit_code() as u8)
}

fn verify(problem: &Path, cert: &Path, s: &SamplingArgs) -> Result<u8, Failure> {
    let (spec, _) = scaled(load_problem(problem)?, s)?;
    let cert = load_certificate(cert)?;
    let p = spec.to_problem().map_err(Failure::input)?;
    if cert.poly.signature().total() != p.m() {
        return Err(Failure::input(format!("certificate has {} image variables, problem has {}", cert.poly.signature().total(), p.m())));
    }
    let samples = certify::sample_problem(&p, s.samples, s.seed).map_err(Failure::input)?;
    let containment = certify::containment_check(&cert, &p.f, &samples.points, CONTAINMENT_TOL);
    let volume = certify::estimate_volume(&cert, &p.b, s.samples, s.seed.wrapping_add(1));
    println!("method = {}\norder = {}\nresidual = {:e}", cert.method, cert.orders.r, cert.residual);
    print!("[containment]\n{}[volume]\n{}", containment.to_text(), volume.to_text());
    Ok(if containment.violations > 0 { 1 } else { 0 })
}

fn grid(problem: &Path, cert: &Path, (w, h): (usize, usize), window: Option<([f64; 2], [f64; 2])>, s: &SamplingArgs) -> Result<u8, Failure> {
    let (spec, _) = scaled(load_problem(problem)?, s)?;
    let cert = load_certificate(cert)?;
    let b = spec.bounding_set().map_err(Failure::input)?;
    let rows = match window {
        Some((lo, hi)) => certify::grid_evaluate_window(&cert, &b, lo, hi, w, h),
        None => certify::grid_evaluate(&cert, &b, w, h),
    }
    .map_err(Failure::input)?;
    print!("{}", certify::grid_csv(&rows));
    Ok(0)
}

fn pareto(problem: &Path, s: &SamplingArgs, out: Option<&Path>, overwrite: bool) -> Result<u8, Failure> {
    let mut spec = load_problem(problem)?;
    spec.pareto = true;
    let (spec, scaling) = scaled(spec, s)?;
    let scaling = scaling.expect("pareto flag set");
    let mut text: String = scaling.to_text().lines().map(|l| format!("# {l}\n")).collect();
    text.push_str(&spec.emit());
    match out {
        Some(path) => write_new(path, &text, overwrite)?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Build { problem, hierarchy, output } => hierarchy_run(problem, hierarchy, None, output),
        Command::Solve { problem, hierarchy, solver, output } => hierarchy_run(problem, hierarchy, Some(solver), output),
        Command::Verify { problem, certificate, sampling } => verify(problem, certificate, sampling),
        Command::Grid { problem, certificate, grid: g, window, sampling } => grid(problem, certificate, *g, *window, sampling),
        Command::ParetoScale { problem, sampling, out, overwrite } => pareto(problem, sampling, out.as_deref(), *overwrite),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
