//! Runs a relaxation hierarchy over a range of orders and collects the
//! certificates, checks and artifacts of every order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::certify::{self, Certificate, ContainmentReport, Orders, VolumeEstimate};
use crate::model::{minimal_order, ImageProblem, Method};
use crate::problem::{ProblemError, ProblemSpec};
use crate::relax::{self, Method1Orders, RelaxError, Relaxation};
use crate::sdp::{self, Status};

/// Residual above which a usable solve is still not accepted as a certificate.
pub const ACCEPT_RESIDUAL: f64 = 1e-6;
/// Margin tolerance of the containment check.
pub const CONTAINMENT_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum HierarchyError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Certify(#[from] certify::CertifyError),
    #[error("{0} already exists (pass --overwrite to replace it)")]
    Exists(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Internal,
    ExportOnly,
}

impl std::str::FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "internal" => Ok(Backend::Internal),
            "export-only" => Ok(Backend::ExportOnly),
            other => Err(format!("unknown solver '{other}' (expected internal or export-only)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub order_min: usize,
    pub order_max: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub backend: Backend,
    /// Image samples for the containment check and Monte-Carlo volume.
    pub samples: usize,
    pub seed: u64,
    pub grid: Option<(usize, usize)>,
    /// Grid window `[lo, hi]`; defaults to the bounding box of `B`.
    pub window: Option<([f64; 2], [f64; 2])>,
    pub force_low_order: bool,
    pub sparse: bool,
    /// Lifted Method 2 module order minus `r`; defaults to `ceil(deg f / 2)`.
    pub lift_extra: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Method1,
            order_min: 1,
            order_max: 1,
            tol: sdp::DEFAULT_TOL,
            max_iter: sdp::DEFAULT_MAX_ITER,
            backend: Backend::Internal,
            samples: 10_000,
            seed: 1,
            grid: None,
            window: None,
            force_low_order: false,
            sparse: false,
            lift_extra: None,
        }
    }
}

/// Outcome of one order.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderReport {
    pub r: usize,
    pub module: usize,
    pub label: String,
    pub free_vars: usize,
    pub max_side: usize,
    pub scalar_vars: usize,
    pub status: Option<Status>,
    pub objective: Option<f64>,
    pub gap: Option<f64>,
    pub residual: Option<f64>,
    pub iterations: Option<usize>,
    pub containment: Option<ContainmentReport>,
    pub volume: Option<VolumeEstimate>,
    pub accepted: bool,
    pub trace_penalty: f64,
    pub error: Option<String>,
}

impl OrderReport {
    fn empty(r: usize) -> Self {
        OrderReport {
            r,
            module: r,
            label: String::new(),
            free_vars: 0,
            max_side: 0,
            scalar_vars: 0,
            status: None,
            objective: None,
            gap: None,
            residual: None,
            iterations: None,
            containment: None,
            volume: None,
            accepted: false,
            trace_penalty: 0.0,
            error: None,
        }
    }

    pub fn violations(&self) -> usize {
        self.containment.as_ref().map_or(0, |c| c.violations)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "order = {}", self.r);
        let _ = writeln!(out, "module = {}", self.module);
        let _ = writeln!(out, "program = {}", self.label);
        let _ = writeln!(out, "free_vars = {}", self.free_vars);
        let _ = writeln!(out, "scalar_vars = {}", self.scalar_vars);
        let _ = writeln!(out, "max_side = {}", self.max_side);
        if let Some(e) = &self.error {
            let _ = writeln!(out, "error = {e}");
        }
        if let Some(s) = self.status {
            let _ = writeln!(out, "status = {}", s.name());
        }
        let opt = |out: &mut String, key: &str, v: Option<f64>| {
            if let Some(v) = v {
                let _ = writeln!(out, "{key} = {v:e}");
            }
        };
        opt(&mut out, "objective", self.objective);
        opt(&mut out, "gap", self.gap);
        opt(&mut out, "residual", self.residual);
        if let Some(it) = self.iterations {
            let _ = writeln!(out, "iterations = {it}");
        }
        if self.trace_penalty > 0.0 {
            let _ = writeln!(out, "trace_penalty = {:e}", self.trace_penalty);
        }
        let _ = writeln!(out, "accepted = {}", self.accepted);
        if let Some(c) = &self.containment {
            out.push_str("[containment]\n");
            out.push_str(&c.to_text());
        }
        if let Some(v) = &self.volume {
            out.push_str("[volume]\n");
            out.push_str(&v.to_text());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderOutcome {
    pub report: OrderReport,
    pub certificate: Option<Certificate>,
    pub grid_csv: Option<String>,
    pub sdpa: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    pub sample_acceptance: Option<f64>,
    pub orders: Vec<OrderOutcome>,
}

impl RunReport {
    /// 0 on success, 1 if an accepted certificate has violations, 3 if no
    /// order produced a usable solve.
    pub fn exit_code(&self) -> i32 {
        if self.orders.iter().any(|o| o.report.accepted && o.report.violations() > 0) {
            1
        } else if self.orders.iter().any(|o| o.report.status.is_some_and(|s| s.is_usable()) || o.sdpa.is_some()) {
            0
        } else {
            3
        }
    }

    pub fn summary(&self) -> String {
        let mut out = format!("method = {}\nseed = {}\n", self.method, self.seed);
        let _ = writeln!(out, "{:>3} {:>6} {:>14} {:>10} {:>10} {:>10} {:>12} {:>10}  status", "r", "module", "objective", "gap", "residual", "violations", "volume", "std_err");
        let num = |v: Option<f64>, w: usize| v.map_or_else(|| format!("{:>w$}", "-"), |v| format!("{v:>w$.3e}"));
        for o in &self.orders {
            let rep = &o.report;
            let status = match (&rep.error, rep.status) {
                (Some(e), _) => format!("error: {e}"),
                (None, Some(s)) if rep.accepted => s.name().to_string(),
                (None, Some(s)) => format!("{} (not accepted)", s.name()),
                (None, None) => "exported".into(),
            };
            let _ = writeln!(
                out,
                "{:>3} {:>6} {} {} {} {:>10} {} {}  {}",
                rep.r,
                rep.module,
                num(rep.objective, 14),
                num(rep.gap, 10),
                num(rep.residual, 10),
                rep.containment.as_ref().map_or("-".to_string(), |c| c.violations.to_string()),
                num(rep.volume.map(|v| v.estimate), 12),
                num(rep.volume.map(|v| v.std_error), 10),
                status
            );
        }
        out
    }
}

/// Adds the ball constraints the builders need: on `S` unless a sparse run
/// relies on per-clique balls, and on `B`.
pub fn prepare(spec: &ProblemSpec, sparse: bool) -> Result<ImageProblem, ProblemError> {
    let p = spec.to_problem()?;
    Ok(if sparse { p.archimedean_b() } else { p.archimedean(spec.archimedean) })
}

/// Module order of the lifted Method 2 program at order `r`.
pub fn lift_module(p: &ImageProblem, r: usize, extra: Option<usize>) -> usize {
    let min = minimal_order(Method::Method2Lift, &p.s, &p.b, &p.f).unwrap_or(1);
    (r + extra.unwrap_or(p.f.degree().div_ceil(2))).max(min)
}

/// Builds the program of one order for the configured method.
pub fn build_order(
    p: &ImageProblem,
    spec: &ProblemSpec,
    cfg: &RunConfig,
    r: usize,
) -> Result<(Relaxation, Orders), RelaxError> {
    match cfg.method {
        Method::Method1 => {
            let orders = Method1Orders::decoupled(r, p)?;
            let rel = if cfg.sparse {
                let cliques = spec.cliques.as_deref().ok_or(RelaxError::EmptyCliques)?;
                relax::build_method1_sparse(p, cliques, orders)?
            } else {
                relax::build_method1_primal(p, orders)?
            };
            Ok((rel, Orders { r: orders.q, module: orders.module }))
        }
        Method::Method2 => Ok((relax::build_method2_sos(p, r)?, Orders { r, module: r * p.f.degree() })),
        Method::Method2Lift => {
            let module = lift_module(p, r, cfg.lift_extra);
            Ok((relax::build_method2_lifted_with(p, r, module)?, Orders { r, module }))
        }
        Method::Projection => Ok((relax::build_projection(p, r)?, Orders { r, module: r })),
    }
}

fn check_config(p: &ImageProblem, spec: &ProblemSpec, cfg: &RunConfig) -> Result<(), HierarchyError> {
    if cfg.order_min == 0 || cfg.order_min > cfg.order_max {
        return Err(HierarchyError::Config(format!("bad order range {}..{}", cfg.order_min, cfg.order_max)));
    }
    if cfg.sparse && (cfg.method != Method::Method1 || spec.cliques.is_none()) {
        return Err(HierarchyError::Config("--sparse needs method1 and a [cliques] section".into()));
    }
    if !cfg.force_low_order {
        let min = minimal_order(cfg.method, &p.s, &p.b, &p.f).map_err(ProblemError::from)?;
        if cfg.order_min < min {
            return Err(HierarchyError::Config(format!(
                "order {} is below the minimal order {min} for {} (pass --force-low-order to decouple)",
                cfg.order_min, cfg.method
            )));
        }
    }
    if cfg.samples == 0 {
        return Err(HierarchyError::Config("--samples must be positive".into()));
    }
    Ok(())
}

fn run_order(
    p: &ImageProblem,
    spec: &ProblemSpec,
    cfg: &RunConfig,
    samples: Option<&[Vec<f64>]>,
    r: usize,
) -> OrderOutcome {
    let mut report = OrderReport::empty(r);
    let mut outcome = OrderOutcome { report: report.clone(), certificate: None, grid_csv: None, sdpa: None };
    let (rel, orders) = match build_order(p, spec, cfg, r) {
        Ok(built) => built,
        Err(e) => {
            report.error = Some(e.to_string());
            outcome.report = report;
            return outcome;
        }
    };
    report.module = orders.module;
    report.label = rel.layout.label.clone();
    report.free_vars = rel.program.num_free;
    report.max_side = rel.program.max_side();
    report.scalar_vars = rel.program.num_scalar_variables();

    if cfg.backend == Backend::ExportOnly {
        match sdp::sdpa_string(&rel.program) {
            Ok(text) => outcome.sdpa = Some(text),
            Err(e) => report.error = Some(e.to_string()),
        }
        outcome.report = report;
        return outcome;
    }

    let solved = match solve_certified(&rel, orders, cfg.method, cfg.tol, cfg.max_iter) {
        Ok(solved) => solved,
        Err(e) => {
            report.error = Some(e.to_string());
            outcome.report = report;
            return outcome;
        }
    };
    let res = &solved.result;
    report.status = Some(res.status);
    report.objective = Some(solved.objective);
    report.gap = Some(res.residuals.gap);
    report.iterations = Some(res.iterations);
    report.trace_penalty = solved.trace_penalty;
    if let Some(cert) = solved.certificate {
        report.residual = Some(cert.residual);
        report.accepted = cert.residual <= ACCEPT_RESIDUAL;
        if let Some(xs) = samples {
            report.containment = Some(certify::containment_check(&cert, &p.f, xs, CONTAINMENT_TOL));
        }
        report.volume = Some(certify::estimate_volume(&cert, &p.b, cfg.samples, cfg.seed.wrapping_add(1)));
        if let Some((w, h)) = cfg.grid {
            let rows = match cfg.window {
                Some((lo, hi)) => certify::grid_evaluate_window(&cert, &p.b, lo, hi, w, h),
                None => certify::grid_evaluate(&cert, &p.b, w, h),
            };
            match rows {
                Ok(rows) => outcome.grid_csv = Some(certify::grid_csv(&rows)),
                Err(e) => report.error = Some(e.to_string()),
            }
        }
        outcome.certificate = Some(cert);
    }
    outcome.report = report;
    outcome
}

/// Trace penalties tried in turn until a solve converges with an accepted
/// certificate.
pub const TRACE_PENALTIES: [f64; 4] = [0.0, 1e-8, 1e-7, 1e-6];

pub struct Solved {
    pub result: sdp::SolverResult,
    pub certificate: Option<Certificate>,
    /// Objective of the unpenalized program at the returned point.
    pub objective: f64,
    pub trace_penalty: f64,
}

impl Solved {
    pub fn accepted(&self) -> bool {
        self.certificate.as_ref().is_some_and(|c| c.residual <= ACCEPT_RESIDUAL)
    }

    // (accepted, converged, -residual)
    fn rank(&self) -> (bool, bool, std::cmp::Reverse<u64>) {
        let residual = self.certificate.as_ref().map_or(f64::INFINITY, |c| c.residual);
        (self.accepted(), self.result.status == Status::Optimal, std::cmp::Reverse(residual.to_bits()))
    }
}

/// Solves `rel` and extracts its certificate. When the moment side has no
/// interior point the Gram matrices drift and the reconstruction residual
/// stalls; the solve is then repeated with a small trace penalty, which keeps
/// every feasible point a valid certificate but makes the optimum attained.
pub fn solve_certified(
    rel: &Relaxation,
    orders: Orders,
    method: Method,
    tol: f64,
    max_iter: usize,
) -> Result<Solved, sdp::SdpError> {
    let mut fallback: Option<Solved> = None;
    // only the primal-posed (Gram) programs have a primal objective to correct
    let penalties: &[f64] = match rel.program.sense {
        sdp::Sense::Minimize => &TRACE_PENALTIES,
        sdp::Sense::Maximize => &TRACE_PENALTIES[..1],
    };
    for &eps in penalties {
        let prog = if eps > 0.0 { rel.program.with_trace_penalty(eps) } else { rel.program.clone() };
        let result = sdp::solve(&prog, tol, max_iter)?;
        let objective = if eps > 0.0 {
            let trace: f64 = result.x.blocks.iter().map(|x| x.trace()).sum();
            result.primal_objective - eps * trace
        } else {
            result.objective()
        };
        let certificate = certify::extract_certificate(method, orders, rel, &result).ok().map(|mut c| {
            c.objective = objective;
            c
        });
        let solved = Solved { result, certificate, objective, trace_penalty: eps };
        let rank = solved.rank();
        if rank.0 && rank.1 {
            return Ok(solved);
        }
        if fallback.as_ref().map_or(true, |f| rank > f.rank()) {
            fallback = Some(solved);
        }
    }
    Ok(fallback.expect("at least one penalty is tried"))
}

/// Builds, solves and checks every order in `cfg.order_min..=cfg.order_max`.
/// Per-order failures are recorded in the report and do not stop the run.
pub fn run_hierarchy(spec: &ProblemSpec, cfg: &RunConfig) -> Result<RunReport, HierarchyError> {
    let p = prepare(spec, cfg.sparse)?;
    check_config(&p, spec, cfg)?;
    let samples = match cfg.backend {
        Backend::Internal => Some(certify::sample_problem(&spec.to_problem()?, cfg.samples, cfg.seed)?),
        Backend::ExportOnly => None,
    };
    let points = samples.as_ref().map(|s| s.points.as_slice());
    let orders: Vec<usize> = (cfg.order_min..=cfg.order_max).collect();
    let one = |&r: &usize| run_order(&p, spec, cfg, points, r);
    #[cfg(feature = "parallel")]
    let outcomes: Vec<OrderOutcome> = {
        use rayon::prelude::*;
        orders.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<OrderOutcome> = orders.iter().map(one).collect();
    Ok(RunReport {
        method: cfg.method,
        seed: cfg.seed,
        sample_acceptance: samples.as_ref().map(certify::Samples::acceptance_rate),
        orders: outcomes,
    })
}

/// File stem of the artifacts of order `r`.
pub fn artifact_stem(method: Method, r: usize) -> String {
    format!("{}-r{r}", method.name())
}

/// Writes certificates, grids, SDPA files and reports into `dir`. Existing
/// files are an error unless `overwrite` is set; nothing is written then.
pub fn write_artifacts(report: &RunReport, dir: &Path, overwrite: bool) -> Result<Vec<PathBuf>, HierarchyError> {
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    for o in &report.orders {
        let stem = artifact_stem(report.method, o.report.r);
        files.push((dir.join(format!("{stem}.report.txt")), o.report.to_text()));
        if let Some(c) = &o.certificate {
            files.push((dir.join(format!("{stem}.cert")), c.to_text()));
        }
        if let Some(g) = &o.grid_csv {
            files.push((dir.join(format!("{stem}.grid.csv")), g.clone()));
        }
        if let Some(s) = &o.sdpa {
            files.push((dir.join(format!("{stem}.dat-s")), s.clone()));
        }
    }
    files.push((dir.join(format!("{}.summary.txt", report.method.name())), report.summary()));
    if !overwrite {
        if let Some((path, _)) = files.iter().find(|(path, _)| path.exists()) {
            return Err(HierarchyError::Exists(path.clone()));
        }
    }
    std::fs::create_dir_all(dir)?;
    for (path, text) in &files {
        std::fs::write(path, text)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::parse_problem;

    const DISK: &str = "[vars]\nx = 2\n[S]\n1 - x1^2 - x2^2 >= 0\n[B]\nball radius = 1\n[map]\nx1\nx2\n";

    fn disk_projection(order: usize) -> (ProblemSpec, RunConfig) {
        let spec = parse_problem(DISK).unwrap();
        let cfg = RunConfig {
            method: Method::Projection,
            order_min: order,
            order_max: order,
            samples: 2_000,
            grid: Some((4, 3)),
            ..RunConfig::default()
        };
        (spec, cfg)
    }

    #[test]
    fn projection_of_disk_is_certified() {
        let (spec, cfg) = disk_projection(1);
        let run = run_hierarchy(&spec, &cfg).unwrap();
        let rep = &run.orders[0].report;
        assert!(rep.accepted, "{}", rep.to_text());
        assert_eq!(rep.violations(), 0);
        assert_eq!(run.exit_code(), 0);
        assert_eq!(run.orders[0].grid_csv.as_ref().unwrap().lines().count(), 13);
    }

    #[test]
    fn export_only_writes_programs() {
        let (spec, mut cfg) = disk_projection(1);
        cfg.backend = Backend::ExportOnly;
        cfg.order_max = 2;
        let run = run_hierarchy(&spec, &cfg).unwrap();
        assert_eq!(run.orders.len(), 2);
        assert!(run.orders.iter().all(|o| o.sdpa.is_some() && o.certificate.is_none()));
        let dir = tempfile::tempdir().unwrap();
        let written = write_artifacts(&run, dir.path(), false).unwrap();
        assert_eq!(written.iter().filter(|p| p.extension().is_some_and(|e| e == "dat-s")).count(), 2);
        assert!(matches!(write_artifacts(&run, dir.path(), false), Err(HierarchyError::Exists(_))));
        write_artifacts(&run, dir.path(), true).unwrap();
    }

    #[test]
    fn low_orders_need_force() {
        let text = "[vars]\nx = 2\n[S]\n1 - x1^2 - x2^2 >= 0\n[B]\nball radius = 1\n[map]\nx1*x2\nx2^2\n";
        let spec = parse_problem(text).unwrap();
        let mut cfg = RunConfig { order_min: 1, order_max: 1, backend: Backend::ExportOnly, ..RunConfig::default() };
        assert!(matches!(run_hierarchy(&spec, &cfg), Err(HierarchyError::Config(_))));
        cfg.force_low_order = true;
        let run = run_hierarchy(&spec, &cfg).unwrap();
        assert_eq!((run.orders[0].report.r, run.orders[0].report.module), (1, 2));
    }

    #[test]
    fn build_errors_are_recorded_per_order() {
        let text = "[vars]\nx = 2\n[S]\n1 - x1^2 - x2^2 >= 0\n[B]\nball radius = 1\n[map]\nx1*x2\nx2\n";
        let spec = parse_problem(text).unwrap();
        let cfg = RunConfig { method: Method::Projection, backend: Backend::ExportOnly, ..RunConfig::default() };
        let run = run_hierarchy(&spec, &cfg).unwrap();
        assert!(run.orders[0].report.error.is_some());
        assert_eq!(run.exit_code(), 3);
    }
}
