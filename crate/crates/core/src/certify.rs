//! Certificates recovered from solver output, and the sampling checks run on them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{BoundingSet, ImageProblem, Method, PolynomialMap, SampleDomain, SemialgebraicSet};
use crate::poly::{MultiIndex, Polynomial, Signature};
use crate::relax::Relaxation;
use crate::sdp::{SolverResult, Status};

/// Rejection sampling gives up below this acceptance rate...
pub const MIN_ACCEPTANCE: f64 = 1e-4;
/// ...once this many proposals have been drawn.
pub const MAX_PROPOSALS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CertifyError {
    #[error("solver status '{0}' does not carry a usable certificate")]
    NotUsable(&'static str),
    #[error("layout has no payload '{0}'")]
    MissingPayload(&'static str),
    #[error("acceptance rate {rate:.2e} after {proposals} proposals is too low for rejection sampling")]
    ThinSet { rate: f64, proposals: usize },
    #[error("grid evaluation needs a planar image (m = 2), got m = {0}")]
    NotPlanar(usize),
    #[error("grid resolution {0}x{1} is below 2x2")]
    Resolution(usize, usize),
    #[error("{0}")]
    Dimension(String),
    #[error("certificate text, line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Relaxation orders behind a certificate: `r` fixes the payload degree `2r`,
/// `module` the truncation of the quadratic module that certifies it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Orders {
    pub r: usize,
    pub module: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedGram {
    pub membership: String,
    pub name: String,
    pub gram: DMatrix<f64>,
}

/// `F_r = { y in B : poly(y) >= threshold }` together with the data backing it.
#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub method: Method,
    pub orders: Orders,
    pub status: Status,
    /// `q_r` for Method 1, `w_r` otherwise.
    pub poly: Polynomial,
    /// `v_r` (Method 2 only).
    pub v: Option<Polynomial>,
    pub grams: Vec<NamedGram>,
    pub residual: f64,
    pub objective: f64,
}

impl Certificate {
    pub fn threshold(&self) -> f64 {
        self.method.threshold()
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.poly.eval_unchecked(y)
    }

    pub fn margin(&self, y: &[f64]) -> f64 {
        self.value(y) - self.threshold()
    }

    pub fn accepts(&self, y: &[f64]) -> bool {
        self.margin(y) >= 0.0
    }

    fn payload_name(&self) -> &'static str {
        match self.method {
            Method::Method1 => "q",
            _ => "w",
        }
    }

    /// Plain-text form: `key = value` header lines, then one line per
    /// coefficient in graded lexicographic order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method = {}", self.method);
        let _ = writeln!(out, "order = {}", self.orders.r);
        let _ = writeln!(out, "module = {}", self.orders.module);
        let _ = writeln!(out, "status = {}", self.status.name());
        let _ = writeln!(out, "m = {}", self.poly.signature().total());
        let _ = writeln!(out, "objective = {:e}", self.objective);
        let _ = writeln!(out, "residual = {:e}", self.residual);
        let mut write_poly = |name: &str, p: &Polynomial| {
            for (a, c) in p.terms() {
                let _ = writeln!(out, "{name} {a} = {c:e}");
            }
        };
        write_poly(self.payload_name(), &self.poly);
        if let Some(v) = &self.v {
            write_poly("v", v);
        }
        out
    }

    /// Inverse of [`Certificate::to_text`]; Gram matrices are not stored.
    pub fn from_text(text: &str) -> Result<Certificate, CertifyError> {
        let mut header: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut coeffs: Vec<(usize, String, MultiIndex, f64)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |msg: &str| CertifyError::Parse { line, msg: msg.to_string() };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (lhs, rhs) = trimmed.split_once('=').ok_or_else(|| err("expected 'key = value'"))?;
            let (lhs, rhs) = (lhs.trim(), rhs.trim());
            if let Some((name, idx_text)) = lhs.split_once(' ') {
                let inner = idx_text
                    .trim()
                    .strip_prefix('(')
                    .and_then(|s| s.strip_suffix(')'))
                    .ok_or_else(|| err("expected a multi-index like (1,0)"))?;
                let exps = inner
                    .split(',')
                    .map(|e| e.trim().parse::<u32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| err("bad exponent"))?;
                let c = rhs.parse::<f64>().map_err(|_| err("bad coefficient"))?;
                coeffs.push((line, name.to_string(), MultiIndex::new(exps), c));
            } else {
                header.insert(lhs.to_string(), (line, rhs.to_string()));
            }
        }
        let get = |key: &str| -> Result<&(usize, String), CertifyError> {
            header.get(key).ok_or_else(|| CertifyError::Parse { line: 0, msg: format!("missing '{key}'") })
        };
        let parse_usize = |key: &str| -> Result<usize, CertifyError> {
            let (line, v) = get(key)?;
            v.parse().map_err(|_| CertifyError::Parse { line: *line, msg: format!("bad {key}") })
        };
        let parse_f64 = |key: &str| -> Result<f64, CertifyError> {
            let (line, v) = get(key)?;
            v.parse().map_err(|_| CertifyError::Parse { line: *line, msg: format!("bad {key}") })
        };
        let (line, method_text) = get("method")?;
        let method: Method =
            method_text.parse().map_err(|_| CertifyError::Parse { line: *line, msg: "unknown method".into() })?;
        let (line, status_text) = get("status")?;
        let status = Status::from_name(status_text)
            .ok_or_else(|| CertifyError::Parse { line: *line, msg: "unknown status".into() })?;
        let m = parse_usize("m")?;
        let sig = Signature::y_only(m);
        let payload = match method {
            Method::Method1 => "q",
            _ => "w",
        };
        let mut poly: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        let mut v: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (line, name, a, c) in coeffs {
            if a.dim() != m {
                return Err(CertifyError::Parse { line, msg: format!("multi-index {a} has the wrong length") });
            }
            match name.as_str() {
                n if n == payload => poly.insert(a, c),
                "v" if method == Method::Method2 => v.insert(a, c),
                _ => return Err(CertifyError::Parse { line, msg: format!("unexpected payload '{name}'") }),
            };
        }
        Ok(Certificate {
            method,
            orders: Orders { r: parse_usize("order")?, module: parse_usize("module")? },
            status,
            poly: Polynomial::from_terms(sig, poly),
            v: (method == Method::Method2).then(|| Polynomial::from_terms(sig, v)),
            grams: Vec::new(),
            residual: parse_f64("residual")?,
            objective: parse_f64("objective")?,
        })
    }
}

/// Reads the payload and Gram blocks out of a solved relaxation.
pub fn extract_certificate(
    method: Method,
    orders: Orders,
    rel: &Relaxation,
    res: &SolverResult,
) -> Result<Certificate, CertifyError> {
    if !res.status.is_usable() {
        return Err(CertifyError::NotUsable(res.status.name()));
    }
    let layout = &rel.layout;
    let name = match method {
        Method::Method1 => "q",
        _ => "w",
    };
    let free = &res.x.free;
    let poly = layout.payload(name).ok_or(CertifyError::MissingPayload(name))?.polynomial(free);
    let v = match method {
        Method::Method2 => Some(layout.payload("v").ok_or(CertifyError::MissingPayload("v"))?.polynomial(free)),
        _ => None,
    };
    let grams = layout
        .memberships
        .iter()
        .flat_map(|mem| {
            mem.blocks.iter().map(|gb| NamedGram {
                membership: mem.name.clone(),
                name: gb.name.clone(),
                gram: res.x.blocks[gb.block].clone(),
            })
        })
        .collect();
    let residual = layout
        .memberships
        .iter()
        .map(|mem| mem.reconstruction_residual(free, &res.x.blocks))
        .fold(0.0, f64::max);
    Ok(Certificate { method, orders, status: res.status, poly, v, grams, residual, objective: res.objective() })
}

/// Points of a set together with sampling statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub points: Vec<Vec<f64>>,
    pub proposals: usize,
    pub seed: u64,
}

impl Samples {
    pub fn acceptance_rate(&self) -> f64 {
        self.points.len() as f64 / self.proposals.max(1) as f64
    }
}

/// Real roots of `sum_k c[k] t^k`, ascending, refined by a few Newton steps.
pub fn real_roots(c: &[f64]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut deg = c.len();
    while deg > 0 && c[deg - 1].abs() <= 1e-14 * scale {
        deg -= 1;
    }
    if deg <= 1 {
        return Vec::new();
    }
    let c = &c[..deg];
    let n = deg - 1;
    let lead = c[n];
    let mut roots: Vec<f64> = if n == 1 {
        vec![-c[0] / lead]
    } else {
        let mut comp = DMatrix::zeros(n, n);
        for i in 1..n {
            comp[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            comp[(i, n - 1)] = -c[i] / lead;
        }
        comp.complex_eigenvalues()
            .iter()
            .filter(|z| z.im.abs() <= 1e-7 * (1.0 + z.re.abs()))
            .map(|z| z.re)
            .collect()
    };
    let eval = |t: f64| c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck);
    let deriv = |t: f64| c.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, &ck)| acc * t + k as f64 * ck);
    for t in &mut roots {
        for _ in 0..3 {
            let d = deriv(*t);
            if d == 0.0 {
                break;
            }
            *t -= eval(*t) / d;
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    roots
}

// Membership with slack proportional to the size of the terms, for points whose
// lifted coordinates come out of root finding.
fn contains_loosely(set: &SemialgebraicSet, x: &[f64]) -> bool {
    set.constraints().iter().all(|g| {
        let size: f64 = g.terms().map(|(a, c)| (c * a.eval(x)).abs()).sum();
        g.eval_unchecked(x) >= -1e-9 * (1.0 + size)
    })
}

// Completes the lifted coordinates of `x` from the domain equations, trying
// real roots in ascending order; returns the first completion inside `set`.
fn complete_lift(set: &SemialgebraicSet, domain: &SampleDomain, x: &mut Vec<f64>, k: usize) -> bool {
    let n = set.dim();
    if k == n {
        return contains_loosely(set, x);
    }
    let known: Vec<usize> = (0..k).collect();
    let eq = domain.equations.iter().find(|e| {
        let vars = e.variables();
        vars.contains(&k) && vars.iter().all(|&v| v <= k)
    });
    let Some(eq) = eq else { return false };
    let uni = eq.partial_eval(&known, &x[..k]);
    let deg = uni.terms().map(|(a, _)| a.exponents()[k] as usize).max().unwrap_or(0);
    let mut c = vec![0.0; deg + 1];
    for (a, v) in uni.terms() {
        c[a.exponents()[k] as usize] += v;
    }
    for t in real_roots(&c) {
        x.truncate(k);
        x.push(t);
        x.resize(n, 0.0);
        if complete_lift(set, domain, x, k + 1) {
            return true;
        }
    }
    false
}

/// Uniform samples of `set` (in its base coordinates) by rejection from the
/// domain box, with lifted coordinates recovered from the domain equations.
pub fn sample_set(set: &SemialgebraicSet, domain: &SampleDomain, count: usize, seed: u64) -> Result<Samples, CertifyError> {
    let n = set.dim();
    if domain.base_dim > n || domain.lo.len() != domain.base_dim || domain.hi.len() != domain.base_dim {
        return Err(CertifyError::Dimension("sampling domain does not match the set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut proposals = 0usize;
    let lifted = domain.base_dim < n;
    while points.len() < count {
        proposals += 1;
        let mut x: Vec<f64> =
            (0..domain.base_dim).map(|i| rng.random_range(domain.lo[i]..=domain.hi[i])).collect();
        let accepted = if lifted {
            x.resize(n, 0.0);
            complete_lift(set, domain, &mut x, domain.base_dim)
        } else {
            set.contains(&x)
        };
        if accepted {
            points.push(x);
        }
        if proposals >= MAX_PROPOSALS && (points.len() as f64) < MIN_ACCEPTANCE * proposals as f64 {
            return Err(CertifyError::ThinSet { rate: points.len() as f64 / proposals as f64, proposals });
        }
    }
    Ok(Samples { points, proposals, seed })
}

/// Samples of `S` for a problem.
pub fn sample_problem(p: &ImageProblem, count: usize, seed: u64) -> Result<Samples, CertifyError> {
    sample_set(&p.s, &p.domain, count, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContainmentReport {
    pub samples: usize,
    pub violations: usize,
    /// Smallest `value - threshold` seen.
    pub worst_margin: f64,
    pub tol: f64,
}

impl ContainmentReport {
    pub fn to_text(&self) -> String {
        format!(
            "samples = {}\nviolations = {}\nworst_margin = {:e}\ntol = {:e}\n",
            self.samples, self.violations, self.worst_margin, self.tol
        )
    }
}

/// Evaluates the certificate at `f(x)` for every sample `x`.
pub fn containment_check(cert: &Certificate, f: &PolynomialMap, samples: &[Vec<f64>], tol: f64) -> ContainmentReport {
    let margin = |x: &Vec<f64>| cert.margin(&f.eval(x));
    #[cfg(feature = "parallel")]
    let margins: Vec<f64> = {
        use rayon::prelude::*;
        samples.par_iter().map(margin).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let margins: Vec<f64> = samples.iter().map(margin).collect();
    ContainmentReport {
        samples: samples.len(),
        violations: margins.iter().filter(|&&m| m < -tol).count(),
        worst_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
        tol,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeEstimate {
    pub samples: usize,
    pub hits: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub seed: u64,
}

impl VolumeEstimate {
    pub fn from_counts(volume: f64, samples: usize, hits: usize, seed: u64) -> Self {
        let p = hits as f64 / samples as f64;
        VolumeEstimate {
            samples,
            hits,
            estimate: volume * p,
            std_error: volume * (p * (1.0 - p) / samples as f64).sqrt(),
            seed,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "samples = {}\nhits = {}\nestimate = {:e}\nstd_error = {:e}\nseed = {}\n",
            self.samples, self.hits, self.estimate, self.std_error, self.seed
        )
    }
}

/// Monte-Carlo volume of `{ y in B : cert accepts y }`.
pub fn estimate_volume(cert: &Certificate, b: &BoundingSet, samples: usize, seed: u64) -> VolumeEstimate {
    estimate_volume_of(|y| cert.accepts(y), b, samples, seed)
}

/// Monte-Carlo volume of `{ y in B : inside(y) }`.
pub fn estimate_volume_of(inside: impl Fn(&[f64]) -> bool, b: &BoundingSet, samples: usize, seed: u64) -> VolumeEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..samples).filter(|_| inside(&b.sample(&mut rng))).count();
    VolumeEstimate::from_counts(b.volume(), samples, hits, seed)
}

/// Lower bound on `h(y) = sup_{x in S} -|y - f(x)|^2`: best of `count`
/// sampled points, then projected gradient ascent from it.
pub fn empirical_h(y: &[f64], p: &ImageProblem, count: usize, seed: u64) -> Result<f64, CertifyError> {
    if y.len() != p.m() {
        return Err(CertifyError::Dimension(format!("point has {} coordinates, expected {}", y.len(), p.m())));
    }
    let samples = sample_problem(p, count, seed)?;
    Ok(ascend_h(y, p, &samples.points))
}

/// `empirical_h` on a precomputed sample of `S`.
pub fn ascend_h(y: &[f64], p: &ImageProblem, samples: &[Vec<f64>]) -> f64 {
    let h = |x: &[f64]| -> f64 {
        p.f.eval(x).iter().zip(y).map(|(fi, yi)| -(yi - fi) * (yi - fi)).sum()
    };
    let Some(mut x) = samples.iter().max_by(|a, b| h(a).total_cmp(&h(b))).cloned() else {
        return f64::NEG_INFINITY;
    };
    let n = p.n();
    let jac: Vec<Vec<Polynomial>> =
        p.f.components().iter().map(|fj| (0..n).map(|i| fj.derivative(i)).collect()).collect();
    let mut best = h(&x);
    for _ in 0..50 {
        let fx = p.f.eval(&x);
        // grad h = 2 J^T (y - f(x))
        let grad: Vec<f64> = (0..n)
            .map(|i| (0..p.m()).map(|j| 2.0 * (y[j] - fx[j]) * jac[j][i].eval_unchecked(&x)).sum())
            .collect();
        let mut step = 1e-2;
        let mut moved = false;
        for _ in 0..20 {
            let cand: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi + step * gi).collect();
            if p.s.contains(&cand) && h(&cand) > best {
                best = h(&cand);
                x = cand;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRow {
    pub y1: f64,
    pub y2: f64,
    pub value: f64,
    pub inside: bool,
}

/// Evaluates the certificate on a `w x h` grid over the bounding box of `B`.
pub fn grid_evaluate(cert: &Certificate, b: &BoundingSet, w: usize, h: usize) -> Result<Vec<GridRow>, CertifyError> {
    let (lo, hi) = b.bounding_box();
    grid_evaluate_window(cert, b, [lo[0], lo.get(1).copied().unwrap_or(0.0)], [hi[0], hi.get(1).copied().unwrap_or(0.0)], w, h)
}

/// Same as [`grid_evaluate`] over an explicit window `[lo, hi]`.
pub fn grid_evaluate_window(
    cert: &Certificate,
    b: &BoundingSet,
    lo: [f64; 2],
    hi: [f64; 2],
    w: usize,
    h: usize,
) -> Result<Vec<GridRow>, CertifyError> {
    let m = cert.poly.signature().total();
    if m != 2 || b.dim() != 2 {
        return Err(CertifyError::NotPlanar(m.max(b.dim())));
    }
    if w < 2 || h < 2 {
        return Err(CertifyError::Resolution(w, h));
    }
    let coord = |k: usize, steps: usize, axis: usize| lo[axis] + (hi[axis] - lo[axis]) * k as f64 / (steps - 1) as f64;
    let rows = (0..h)
        .flat_map(|j| (0..w).map(move |i| (i, j)))
        .map(|(i, j)| {
            let y = [coord(i, w, 0), coord(j, h, 1)];
            let value = cert.value(&y);
            GridRow { y1: y[0], y2: y[1], value, inside: b.contains(&y) && value >= cert.threshold() }
        })
        .collect();
    Ok(rows)
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("y1,y2,value,inside\n");
    for r in rows {
        let _ = writeln!(out, "{:e},{:e},{:e},{}", r.y1, r.y2, r.value, u8::from(r.inside));
    }
    out
}
