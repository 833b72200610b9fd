//! Standard-form conic programs over free scalars and PSD blocks, a
//! primal-dual interior-point solver for them, and SDPA sparse I/O.
//!
//! The primal/dual pair is
//!
//! ```text
//! (P)  min  c_f.x_f + <C, X>   s.t.  A_f x_f + A(X) = b,  X psd
//! (D)  max  b.y                s.t.  c_f - A_f^T y = 0,  C - A^T(y) psd
//! ```
//!
//! A program is *posed* as one of the two; the solver always handles both.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

#[derive(Debug, thiserror::Error)]
pub enum SdpError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("sdpa parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub side: usize,
    pub name: String,
}

/// One upper-triangle entry `(i <= j)` of a symmetric matrix in block `block`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsdEntry {
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub v: f64,
}

/// One equality row: `sum free + sum <A_block, X_block> = rhs`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Row {
    pub free: Vec<(usize, f64)>,
    pub psd: Vec<PsdEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConicProgram {
    pub sense: Sense,
    pub num_free: usize,
    pub blocks: Vec<Block>,
    pub c_free: Vec<f64>,
    pub c_psd: Vec<PsdEntry>,
    pub rows: Vec<Row>,
    pub rhs: Vec<f64>,
    /// Factor each row was multiplied by during construction.
    pub row_scale: Vec<f64>,
}

impl ConicProgram {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn max_side(&self) -> usize {
        self.blocks.iter().map(|b| b.side).max().unwrap_or(0)
    }

    /// Free scalars plus the upper triangles of every PSD block.
    pub fn num_scalar_variables(&self) -> usize {
        self.num_free + self.blocks.iter().map(|b| b.side * (b.side + 1) / 2).sum::<usize>()
    }

    /// Copy whose primal objective also charges `eps * trace` of every PSD
    /// block, which keeps the primal blocks bounded when the dual has no
    /// interior point.
    pub fn with_trace_penalty(&self, eps: f64) -> ConicProgram {
        let mut out = self.clone();
        for (b, block) in self.blocks.iter().enumerate() {
            for i in 0..block.side {
                match out.c_psd.iter_mut().find(|e| e.block == b && e.i == i && e.j == i) {
                    Some(e) => e.v += eps,
                    None => out.c_psd.push(PsdEntry { block: b, i, j: i, v: eps }),
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let bad = |m: String| Err(SdpError::Malformed(m));
        if self.blocks.is_empty() {
            return bad("no PSD blocks".into());
        }
        if let Some(b) = self.blocks.iter().find(|b| b.side == 0) {
            return bad(format!("block '{}' has side 0", b.name));
        }
        if self.c_free.len() != self.num_free {
            return bad(format!("{} free costs for {} free variables", self.c_free.len(), self.num_free));
        }
        if self.rhs.len() != self.rows.len() || self.row_scale.len() != self.rows.len() {
            return bad("rhs/row_scale length differs from row count".into());
        }
        let check_entry = |e: &PsdEntry| -> Result<(), SdpError> {
            let side = self.blocks.get(e.block).map(|b| b.side);
            match side {
                None => bad(format!("entry references block {}", e.block)),
                Some(s) if e.i > e.j || e.j >= s => bad(format!("entry ({}, {}) outside block {} of side {s}", e.i, e.j, e.block)),
                _ if !e.v.is_finite() => bad("non-finite coefficient".into()),
                _ => Ok(()),
            }
        };
        for e in &self.c_psd {
            check_entry(e)?;
        }
        for (r, row) in self.rows.iter().enumerate() {
            for e in &row.psd {
                check_entry(e)?;
            }
            if let Some((k, _)) = row.free.iter().find(|(k, _)| *k >= self.num_free) {
                return bad(format!("row {r} references free variable {k}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

impl Status {
    pub fn is_usable(&self) -> bool {
        matches!(self, Status::Optimal | Status::NearOptimal)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::NearOptimal => "near_optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::MaxIter => "max_iter",
        }
    }

    pub fn from_name(name: &str) -> Option<Status> {
        [Status::Optimal, Status::NearOptimal, Status::Infeasible, Status::Unbounded, Status::MaxIter]
            .into_iter()
            .find(|s| s.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimalPoint {
    pub free: Vec<f64>,
    pub blocks: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct SolverResult {
    pub status: Status,
    pub sense: Sense,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub x: PrimalPoint,
    pub y: Vec<f64>,
    pub z: Vec<DMatrix<f64>>,
    pub residuals: Residuals,
    pub iterations: usize,
    pub wall_time: std::time::Duration,
}

impl SolverResult {
    /// Objective of the side the program was posed as.
    pub fn objective(&self) -> f64 {
        match self.sense {
            Sense::Minimize => self.primal_objective,
            Sense::Maximize => self.dual_objective,
        }
    }
}

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 200;

// Sparse symmetric matrix as upper-triangle triplets.
type Sparse = Vec<(usize, usize, f64)>;

struct Data {
    m: usize,
    sides: Vec<usize>,
    af: DMatrix<f64>,
    // per block: rows touching it with their entries
    a: Vec<Vec<(usize, Sparse)>>,
    cf: DVector<f64>,
    c: Vec<DMatrix<f64>>,
    b: DVector<f64>,
}

fn merge(entries: impl Iterator<Item = (usize, usize, f64)>) -> Sparse {
    let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, j, v) in entries {
        *map.entry((i, j)).or_insert(0.0) += v;
    }
    map.into_iter().filter(|(_, v)| *v != 0.0).map(|((i, j), v)| (i, j, v)).collect()
}

fn dense(side: usize, entries: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(side, side);
    for &(i, j, v) in entries {
        m[(i, j)] += v;
        if i != j {
            m[(j, i)] += v;
        }
    }
    m
}

fn inner_sparse(entries: &[(usize, usize, f64)], x: &DMatrix<f64>) -> f64 {
    entries
        .iter()
        .map(|&(i, j, v)| if i == j { v * x[(i, i)] } else { v * (x[(i, j)] + x[(j, i)]) })
        .sum()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl Data {
    fn new(p: &ConicProgram) -> Data {
        let m = p.rows.len();
        let nb = p.blocks.len();
        let mut af = DMatrix::zeros(m, p.num_free);
        let mut a: Vec<Vec<(usize, Sparse)>> = vec![Vec::new(); nb];
        for (r, row) in p.rows.iter().enumerate() {
            for &(k, v) in &row.free {
                af[(r, k)] += v;
            }
            for blk in 0..nb {
                let entries = merge(row.psd.iter().filter(|e| e.block == blk).map(|e| (e.i, e.j, e.v)));
                if !entries.is_empty() {
                    a[blk].push((r, entries));
                }
            }
        }
        let c = p
            .blocks
            .iter()
            .enumerate()
            .map(|(blk, b)| {
                let entries: Sparse = p.c_psd.iter().filter(|e| e.block == blk).map(|e| (e.i, e.j, e.v)).collect();
                dense(b.side, &entries)
            })
            .collect();
        Data {
            m,
            sides: p.blocks.iter().map(|b| b.side).collect(),
            af,
            a,
            cf: DVector::from_column_slice(&p.c_free),
            c,
            b: DVector::from_column_slice(&p.rhs),
        }
    }

    fn apply_a(&self, xs: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (blk, rows) in self.a.iter().enumerate() {
            for (r, entries) in rows {
                out[*r] += inner_sparse(entries, &xs[blk]);
            }
        }
        out
    }

    fn apply_at(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.a
            .iter()
            .zip(&self.sides)
            .map(|(rows, &side)| {
                let mut out = DMatrix::zeros(side, side);
                for (r, entries) in rows {
                    let yr = y[*r];
                    if yr == 0.0 {
                        continue;
                    }
                    for &(i, j, v) in entries {
                        out[(i, j)] += v * yr;
                        if i != j {
                            out[(j, i)] += v * yr;
                        }
                    }
                }
                out
            })
            .collect()
    }

    // M_ik = sum_b tr(A_i X A_k Z^-1)
    fn schur(&self, xs: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.m, self.m);
        for (blk, rows) in self.a.iter().enumerate() {
            let x = &xs[blk];
            let zi = &zinv[blk];
            let n = self.sides[blk];
            let mut g = DMatrix::zeros(n, n);
            let mut xa_cols: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
            for (pos, (ri, ei)) in rows.iter().enumerate() {
                // columns of X A_i: column q gets v X[:, p] and column p gets v X[:, q]
                xa_cols.clear();
                for &(p, q, v) in ei {
                    let col_q = xa_cols.entry(q).or_insert_with(|| DVector::zeros(n));
                    col_q.axpy(v, &x.column(p), 1.0);
                    if p != q {
                        let col_p = xa_cols.entry(p).or_insert_with(|| DVector::zeros(n));
                        col_p.axpy(v, &x.column(q), 1.0);
                    }
                }
                g.fill(0.0);
                for (c, col) in &xa_cols {
                    // G += col * Zinv[c, :]
                    g.ger(1.0, col, &zi.row(*c).transpose(), 1.0);
                }
                for (rk, ek) in &rows[pos..] {
                    let val: f64 = ek
                        .iter()
                        .map(|&(s, t, v)| if s == t { v * g[(s, s)] } else { v * (g[(s, t)] + g[(t, s)]) })
                        .sum();
                    m[(*ri, *rk)] += val;
                    if ri != rk {
                        m[(*rk, *ri)] += val;
                    }
                }
            }
        }
        m
    }
}

fn frob(ms: &[DMatrix<f64>]) -> f64 {
    ms.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Largest `alpha` with `X + alpha dX` psd (infinite if none binds).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(t) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(w) = l.solve_lower_triangular(&t.transpose()) else {
        return 0.0;
    };
    let lmin = SymmetricEigen::new(sym(&w)).eigenvalues.min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn inverse_spd(z: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(z.clone()).map(|c| sym(&c.inverse()))
}

// Solves [M A_f; A_f^T 0][dy; dxf] = [r1; r2].
enum KktFactor {
    Chol { m: Cholesky<f64, nalgebra::Dyn>, minv_af: DMatrix<f64>, s: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> },
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl KktFactor {
    fn new(mut m: DMatrix<f64>, af: &DMatrix<f64>) -> KktFactor {
        let nf = af.ncols();
        let scale = m.diagonal().amax().max(1e-300);
        let mut chol = Cholesky::new(m.clone());
        if chol.is_none() {
            for i in 0..m.nrows() {
                m[(i, i)] += 1e-13 * scale;
            }
            chol = Cholesky::new(m.clone());
        }
        match chol {
            Some(c) if nf == 0 => KktFactor::Chol { m: c, minv_af: DMatrix::zeros(af.nrows(), 0), s: None },
            Some(c) => {
                let minv_af = c.solve(af);
                let s = af.transpose() * &minv_af;
                KktFactor::Chol { m: c, minv_af, s: Some(s.lu()) }
            }
            None => KktFactor::full(&m, af),
        }
    }

    fn full(m: &DMatrix<f64>, af: &DMatrix<f64>) -> KktFactor {
        let (n, nf) = (m.nrows(), af.ncols());
        let mut k = DMatrix::zeros(n + nf, n + nf);
        k.view_mut((0, 0), (n, n)).copy_from(m);
        k.view_mut((0, n), (n, nf)).copy_from(af);
        k.view_mut((n, 0), (nf, n)).copy_from(&af.transpose());
        KktFactor::Lu(k.lu())
    }

    fn solve(&self, af: &DMatrix<f64>, r1: &DVector<f64>, r2: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        match self {
            KktFactor::Chol { m, minv_af, s } => {
                let t = m.solve(r1);
                match s {
                    None => Some((t, DVector::zeros(0))),
                    Some(s) => {
                        let dxf = s.solve(&(af.transpose() * &t - r2))?;
                        let dy = t - minv_af * &dxf;
                        Some((dy, dxf))
                    }
                }
            }
            KktFactor::Lu(lu) => {
                let n = r1.len();
                let mut rhs = DVector::zeros(n + r2.len());
                rhs.rows_mut(0, n).copy_from(r1);
                rhs.rows_mut(n, r2.len()).copy_from(r2);
                let sol = lu.solve(&rhs)?;
                Some((sol.rows(0, n).into_owned(), sol.rows(n, r2.len()).into_owned()))
            }
        }
    }
}

// Jacobi-scaled KKT system with iterative refinement.
struct Kkt {
    scale: DVector<f64>,
    m: DMatrix<f64>,
    af: DMatrix<f64>,
    factor: KktFactor,
}

impl Kkt {
    fn new(m: &DMatrix<f64>, af: &DMatrix<f64>) -> Kkt {
        let scale = m.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 });
        let mut ms = m.clone();
        for i in 0..ms.nrows() {
            for j in 0..ms.ncols() {
                ms[(i, j)] *= scale[i] * scale[j];
            }
        }
        let mut afs = af.clone();
        for i in 0..afs.nrows() {
            afs.row_mut(i).scale_mut(scale[i]);
        }
        let factor = KktFactor::new(ms.clone(), &afs);
        Kkt { scale, m: ms, af: afs, factor }
    }

    fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let r1 = r1.component_mul(&self.scale);
        let refined = |factor: &KktFactor| -> Option<(DVector<f64>, DVector<f64>)> {
            let (mut u, mut dxf) = factor.solve(&self.af, &r1, r2)?;
            for _ in 0..3 {
                let e1 = &r1 - &self.m * &u - &self.af * &dxf;
                let e2 = r2 - self.af.transpose() * &u;
                let (cu, cf) = factor.solve(&self.af, &e1, &e2)?;
                u += cu;
                dxf += cf;
            }
            Some((u, dxf)).filter(|(u, f)| u.iter().chain(f.iter()).all(|v| v.is_finite()))
        };
        let error = |(u, dxf): &(DVector<f64>, DVector<f64>)| -> f64 {
            let e1 = &r1 - &self.m * u - &self.af * dxf;
            let e2 = r2 - self.af.transpose() * u;
            (e1.norm_squared() + e2.norm_squared()).sqrt()
        };
        let mut sol = refined(&self.factor);
        // a rank-deficient Schur matrix can still give a regular bordered
        // system; eliminating through it then loses the free-variable rows
        if let KktFactor::Chol { s: Some(_), .. } = self.factor {
            let rhs_norm = (r1.norm_squared() + r2.norm_squared()).sqrt();
            if sol.as_ref().is_none_or(|s| error(s) > 1e-10 * (1.0 + rhs_norm)) {
                let alt = refined(&KktFactor::full(&self.m, &self.af));
                sol = match (sol, alt) {
                    (Some(a), Some(b)) => Some(if error(&b) < error(&a) { b } else { a }),
                    (a, b) => a.or(b),
                };
            }
        }
        let (u, dxf) = sol?;
        Some((u.component_mul(&self.scale), dxf))
    }
}

struct Snapshot {
    residuals: Residuals,
    pobj: f64,
    dobj: f64,
    xs: Vec<DMatrix<f64>>,
    xf: DVector<f64>,
    y: DVector<f64>,
    zs: Vec<DMatrix<f64>>,
}

struct Direction {
    dxf: DVector<f64>,
    dx: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
    dz: Vec<DMatrix<f64>>,
}

/// Solves the program with a Mehrotra predictor-corrector on the HKM direction.
pub fn solve(prog: &ConicProgram, tol: f64, max_iter: usize) -> Result<SolverResult, SdpError> {
    prog.validate()?;
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(SdpError::Malformed(format!("tolerance {tol} outside (0, 1e-2]")));
    }
    let start = Instant::now();
    let d = Data::new(prog);
    let nf = prog.num_free;
    let nb = d.sides.len();
    let total_side: f64 = d.sides.iter().sum::<usize>() as f64;

    let b_norm = d.b.norm();
    let c_norm = (frob(&d.c).powi(2) + d.cf.norm_squared()).sqrt();

    // SDPA-style starting point
    let mut xs = Vec::with_capacity(nb);
    let mut zs = Vec::with_capacity(nb);
    for blk in 0..nb {
        let n = d.sides[blk] as f64;
        let mut a_max: f64 = 0.0;
        let mut ratio: f64 = 0.0;
        for (r, e) in &d.a[blk] {
            let fro = (e.iter().map(|&(i, j, v)| if i == j { v * v } else { 2.0 * v * v }).sum::<f64>()).sqrt();
            a_max = a_max.max(fro);
            ratio = ratio.max((1.0 + d.b[*r].abs()) / (1.0 + fro));
        }
        let xi = 10f64.max(n.sqrt()).max(n.sqrt() * ratio);
        let eta = 10f64.max(n.sqrt()).max(d.c[blk].norm()).max(a_max);
        xs.push(DMatrix::identity(d.sides[blk], d.sides[blk]) * xi);
        zs.push(DMatrix::identity(d.sides[blk], d.sides[blk]) * eta);
    }
    let mut xf = DVector::zeros(nf);
    let mut y = DVector::zeros(d.m);

    let mut status = Status::MaxIter;
    let mut residuals;
    let mut pobj;
    let mut dobj;
    let mut iterations = 0;
    let mut stalls = 0;
    let mut best: Option<Snapshot> = None;
    let mut since_best = 0;

    loop {
        // residuals
        let rp = &d.b - &d.af * &xf - d.apply_a(&xs);
        let rdf = &d.cf - d.af.transpose() * &y;
        let aty = d.apply_at(&y);
        let rd: Vec<DMatrix<f64>> = (0..nb).map(|k| &d.c[k] - &aty[k] - &zs[k]).collect();
        pobj = d.cf.dot(&xf) + inner(&d.c, &xs);
        dobj = d.b.dot(&y);
        let mu = inner(&xs, &zs) / total_side;
        residuals = Residuals {
            primal: rp.norm() / (1.0 + b_norm),
            dual: (frob(&rd).powi(2) + rdf.norm_squared()).sqrt() / (1.0 + c_norm),
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        };
        if residuals.max() <= tol {
            status = Status::Optimal;
            break;
        }
        if best.as_ref().is_none_or(|b| residuals.max() < b.residuals.max()) {
            best = Some(Snapshot { residuals, pobj, dobj, xs: xs.clone(), xf: xf.clone(), y: y.clone(), zs: zs.clone() });
            since_best = 0;
        } else {
            since_best += 1;
        }
        if iterations >= 3 {
            let rd_norm = frob(&rd) + rdf.norm();
            if dobj > 0.0 && (c_norm + rd_norm) / dobj < tol {
                status = Status::Infeasible;
                break;
            }
            if pobj < 0.0 && (b_norm + rp.norm()) / -pobj < tol {
                status = Status::Unbounded;
                break;
            }
        }
        if iterations >= max_iter || stalls >= 5 || since_best >= 8 {
            break;
        }
        iterations += 1;

        let Some(zinv) = zs.iter().map(inverse_spd).collect::<Option<Vec<_>>>() else {
            break;
        };
        let schur = d.schur(&xs, &zinv);
        let kkt = Kkt::new(&schur, &d.af);

        // X Rd Z^-1, shared by predictor and corrector
        let x_rd_zi: Vec<DMatrix<f64>> = (0..nb).map(|k| sym(&(&xs[k] * &rd[k] * &zinv[k]))).collect();
        let direction = |rc: &[DMatrix<f64>]| -> Option<Direction> {
            let tmp: Vec<DMatrix<f64>> = (0..nb).map(|k| &rc[k] - &x_rd_zi[k]).collect();
            let r1 = &rp - d.apply_a(&tmp);
            let (dy, dxf) = kkt.solve(&r1, &rdf)?;
            let atdy = d.apply_at(&dy);
            let dz: Vec<DMatrix<f64>> = (0..nb).map(|k| &rd[k] - &atdy[k]).collect();
            let dx: Vec<DMatrix<f64>> =
                (0..nb).map(|k| &rc[k] - sym(&(&xs[k] * &dz[k] * &zinv[k]))).collect();
            Some(Direction { dxf, dx, dy, dz })
        };
        let steps = |dir: &Direction| -> (f64, f64) {
            let ap = (0..nb).map(|k| max_step(&xs[k], &dir.dx[k])).fold(f64::INFINITY, f64::min);
            let ad = (0..nb).map(|k| max_step(&zs[k], &dir.dz[k])).fold(f64::INFINITY, f64::min);
            (ap, ad)
        };

        let rc_aff: Vec<DMatrix<f64>> = xs.iter().map(|x| -x).collect();
        let Some(aff) = direction(&rc_aff) else { break };
        let (ap, ad) = steps(&aff);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff: f64 = (0..nb)
            .map(|k| (&xs[k] + &aff.dx[k] * ap).dot(&(&zs[k] + &aff.dz[k] * ad)))
            .sum::<f64>()
            / total_side;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        let rc: Vec<DMatrix<f64>> = (0..nb)
            .map(|k| &zinv[k] * (sigma * mu) - &xs[k] - sym(&(&aff.dx[k] * &aff.dz[k] * &zinv[k])))
            .collect();
        let Some(dir) = direction(&rc) else { break };
        let (ap, ad) = steps(&dir);
        let gamma = 0.98;
        // equal steps keep primal and dual infeasibility shrinking together
        let alpha = (gamma * ap.min(ad)).min(1.0);
        if alpha < 1e-10 {
            stalls += 1;
        }
        let (ap, ad) = (alpha, alpha);
        xf.axpy(ap, &dir.dxf, 1.0);
        y.axpy(ad, &dir.dy, 1.0);
        for k in 0..nb {
            xs[k] = sym(&(&xs[k] + &dir.dx[k] * ap));
            zs[k] = sym(&(&zs[k] + &dir.dz[k] * ad));
        }
    }

    if status == Status::MaxIter {
        // rounding can spoil late iterates; fall back to the most accurate one
        if let Some(b) = best.filter(|b| b.residuals.max() < residuals.max()) {
            (residuals, pobj, dobj, xs, xf, y, zs) = (b.residuals, b.pobj, b.dobj, b.xs, b.xf, b.y, b.zs);
        }
    }
    if status == Status::MaxIter && residuals.max() <= 1e3 * tol {
        status = Status::NearOptimal;
    }
    Ok(SolverResult {
        status,
        sense: prog.sense,
        primal_objective: pobj,
        dual_objective: dobj,
        x: PrimalPoint { free: xf.iter().copied().collect(), blocks: xs },
        y: y.iter().copied().collect(),
        z: zs,
        residuals,
        iterations,
        wall_time: start.elapsed(),
    })
}

/// Row violations and per-block minimum eigenvalues of a candidate point.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    pub max_row_violation: f64,
    pub min_eigenvalues: Vec<f64>,
}

impl FeasibilityReport {
    pub fn worst(&self) -> f64 {
        let eig = self.min_eigenvalues.iter().fold(0.0f64, |m, &e| m.max(-e));
        self.max_row_violation.max(eig)
    }
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym(m)).eigenvalues.min()
}

/// Checks `A_f x_f + A(X) = b` and `X psd` for a primal point.
pub fn certify_feasibility(prog: &ConicProgram, point: &PrimalPoint) -> Result<FeasibilityReport, SdpError> {
    prog.validate()?;
    if point.free.len() != prog.num_free || point.blocks.len() != prog.blocks.len() {
        return Err(SdpError::Dimension("point layout does not match program".into()));
    }
    for (b, x) in prog.blocks.iter().zip(&point.blocks) {
        if x.nrows() != b.side || x.ncols() != b.side {
            return Err(SdpError::Dimension(format!("block '{}' expects side {}", b.name, b.side)));
        }
    }
    let d = Data::new(prog);
    let xf = DVector::from_column_slice(&point.free);
    let r = &d.b - &d.af * &xf - d.apply_a(&point.blocks);
    Ok(FeasibilityReport {
        max_row_violation: r.amax(),
        min_eigenvalues: point.blocks.iter().map(min_eig).collect(),
    })
}

/// Checks `c_f = A_f^T y` and `C - A^T(y) psd` for a dual point.
pub fn certify_dual_feasibility(prog: &ConicProgram, y: &[f64]) -> Result<FeasibilityReport, SdpError> {
    prog.validate()?;
    if y.len() != prog.rows.len() {
        return Err(SdpError::Dimension(format!("expected {} multipliers, got {}", prog.rows.len(), y.len())));
    }
    let d = Data::new(prog);
    let yv = DVector::from_column_slice(y);
    let rf = &d.cf - d.af.transpose() * &yv;
    let aty = d.apply_at(&yv);
    Ok(FeasibilityReport {
        max_row_violation: if rf.is_empty() { 0.0 } else { rf.amax() },
        min_eigenvalues: d.c.iter().zip(&aty).map(|(c, a)| min_eig(&(c - a))).collect(),
    })
}

/// Feasibility of the posed side of a solver result.
pub fn certify_result(prog: &ConicProgram, res: &SolverResult) -> Result<FeasibilityReport, SdpError> {
    match prog.sense {
        Sense::Minimize => certify_feasibility(prog, &res.x),
        Sense::Maximize => certify_dual_feasibility(prog, &res.y),
    }
}

const SDPA_TAG: &str = "\"polyimage";

/// Writes the program in SDPA sparse format. Free variables become a diagonal
/// block of size `2 * num_free` (split into positive and negative parts) placed
/// last; a leading comment line records how to undo the split.
pub fn export_sdpa(prog: &ConicProgram, out: &mut impl std::io::Write) -> Result<(), SdpError> {
    out.write_all(sdpa_string(prog)?.as_bytes())?;
    Ok(())
}

pub fn sdpa_string(prog: &ConicProgram) -> Result<String, SdpError> {
    prog.validate()?;
    let nf = prog.num_free;
    let sense = match prog.sense {
        Sense::Minimize => "min",
        Sense::Maximize => "max",
    };
    let mut s = String::new();
    writeln!(s, "{SDPA_TAG} free={nf} sense={sense}").unwrap();
    for b in &prog.blocks {
        writeln!(s, "\"block {}", b.name).unwrap();
    }
    let nblocks = prog.blocks.len() + usize::from(nf > 0);
    writeln!(s, "{}", prog.rows.len()).unwrap();
    writeln!(s, "{nblocks}").unwrap();
    let mut sizes: Vec<String> = prog.blocks.iter().map(|b| b.side.to_string()).collect();
    if nf > 0 {
        sizes.push(format!("-{}", 2 * nf));
    }
    writeln!(s, "{}", sizes.join(" ")).unwrap();
    let c: Vec<String> = prog.rhs.iter().map(|v| format!("{v:.16e}")).collect();
    writeln!(s, "{}", c.join(" ")).unwrap();

    let free_blk = prog.blocks.len() + 1;
    let mut entries: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
    // F_0 = -C
    for e in &prog.c_psd {
        *entries.entry((0, e.block + 1, e.i + 1, e.j + 1)).or_insert(0.0) -= e.v;
    }
    for (k, &cf) in prog.c_free.iter().enumerate() {
        *entries.entry((0, free_blk, k + 1, k + 1)).or_insert(0.0) -= cf;
        *entries.entry((0, free_blk, nf + k + 1, nf + k + 1)).or_insert(0.0) += cf;
    }
    for (r, row) in prog.rows.iter().enumerate() {
        for e in &row.psd {
            *entries.entry((r + 1, e.block + 1, e.i + 1, e.j + 1)).or_insert(0.0) += e.v;
        }
        for &(k, v) in &row.free {
            *entries.entry((r + 1, free_blk, k + 1, k + 1)).or_insert(0.0) += v;
            *entries.entry((r + 1, free_blk, nf + k + 1, nf + k + 1)).or_insert(0.0) -= v;
        }
    }
    for ((mat, blk, i, j), v) in entries {
        if v != 0.0 {
            writeln!(s, "{mat} {blk} {i} {j} {v:.16e}").unwrap();
        }
    }
    Ok(s)
}

/// Reads a file written by [`export_sdpa`] (or any SDPA sparse file, in which
/// case every diagonal block is treated as a PSD block).
pub fn import_sdpa(text: &str) -> Result<ConicProgram, SdpError> {
    let mut nf = 0usize;
    let mut sense = Sense::Minimize;
    let mut names: Vec<String> = Vec::new();
    let mut header: Vec<(usize, String)> = Vec::new();
    let mut body: Vec<(usize, &str)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix(SDPA_TAG) {
            for kv in rest.split_whitespace() {
                match kv.split_once('=') {
                    Some(("free", v)) => nf = v.parse().map_err(|_| SdpError::Parse { line: ln, msg: "bad free count".into() })?,
                    Some(("sense", "max")) => sense = Sense::Maximize,
                    Some(("sense", _)) => sense = Sense::Minimize,
                    _ => {}
                }
            }
            continue;
        }
        if let Some(name) = t.strip_prefix("\"block ") {
            names.push(name.to_string());
            continue;
        }
        if t.starts_with('"') || t.starts_with('*') {
            continue;
        }
        if header.len() < 4 {
            header.push((ln, t.replace([',', '{', '}', '(', ')'], " ")));
        } else {
            body.push((ln, t));
        }
    }
    if header.len() < 4 {
        return Err(SdpError::Parse { line: text.lines().count(), msg: "truncated header".into() });
    }
    let perr = |line: usize, msg: &str| SdpError::Parse { line, msg: msg.to_string() };
    let first = |(ln, s): &(usize, String)| -> Result<usize, SdpError> {
        s.split_whitespace().next().and_then(|w| w.parse().ok()).ok_or_else(|| perr(*ln, "expected an integer"))
    };
    let m = first(&header[0])?;
    let nblocks = first(&header[1])?;
    let sizes: Vec<i64> = header[2]
        .1
        .split_whitespace()
        .map(|w| w.parse::<i64>())
        .collect::<Result<_, _>>()
        .map_err(|_| perr(header[2].0, "bad block sizes"))?;
    if sizes.len() != nblocks {
        return Err(perr(header[2].0, "block count mismatch"));
    }
    let rhs: Vec<f64> = header[3]
        .1
        .split_whitespace()
        .map(|w| w.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| perr(header[3].0, "bad objective vector"))?;
    if rhs.len() != m {
        return Err(perr(header[3].0, "objective length mismatch"));
    }
    let has_free = nf > 0;
    if has_free && sizes.last() != Some(&-(2 * nf as i64)) {
        return Err(perr(header[2].0, "free-variable block missing"));
    }
    let psd_blocks = if has_free { nblocks - 1 } else { nblocks };
    let blocks: Vec<Block> = (0..psd_blocks)
        .map(|k| Block {
            side: sizes[k].unsigned_abs() as usize,
            name: names.get(k).cloned().unwrap_or_else(|| format!("block{}", k + 1)),
        })
        .collect();
    let mut rows = vec![Row::default(); m];
    let mut c_psd = Vec::new();
    let mut c_free = vec![0.0; nf];
    for (ln, t) in body {
        let w: Vec<&str> = t.split_whitespace().collect();
        if w.len() != 5 {
            return Err(perr(ln, "expected 5 fields"));
        }
        let ints: Vec<usize> = w[..4]
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| perr(ln, "bad index"))?;
        let v: f64 = w[4].parse().map_err(|_| perr(ln, "bad value"))?;
        let (mat, blk, i, j) = (ints[0], ints[1], ints[2], ints[3]);
        if mat > m || blk == 0 || blk > nblocks || i == 0 || j == 0 {
            return Err(perr(ln, "index out of range"));
        }
        let (i, j) = (i.min(j) - 1, i.max(j) - 1);
        if has_free && blk == nblocks {
            if i != j {
                return Err(perr(ln, "off-diagonal entry in free block"));
            }
            if i < nf {
                if mat == 0 {
                    c_free[i] = -v;
                } else {
                    rows[mat - 1].free.push((i, v));
                }
            }
            continue;
        }
        let e = PsdEntry { block: blk - 1, i, j, v };
        if mat == 0 {
            c_psd.push(PsdEntry { v: -v, ..e });
        } else {
            rows[mat - 1].psd.push(e);
        }
    }
    let prog = ConicProgram { sense, num_free: nf, blocks, c_free, c_psd, rows, rhs, row_scale: vec![1.0; m] };
    prog.validate()?;
    Ok(prog)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(block: usize, i: usize, j: usize, v: f64) -> PsdEntry {
        PsdEntry { block, i, j, v }
    }

    // min x  s.t. [[x,1],[1,x]] psd, written in dual form:
    // max -x  s.t.  [[0,1],[1,0]] - x * (-I) psd  ->  C = [[0,1],[1,0]], A_1 = -I, b = -1
    fn two_by_two() -> ConicProgram {
        ConicProgram {
            sense: Sense::Maximize,
            num_free: 0,
            blocks: vec![Block { side: 2, name: "m".into() }],
            c_free: vec![],
            c_psd: vec![entry(0, 0, 1, 1.0)],
            rows: vec![Row { free: vec![], psd: vec![entry(0, 0, 0, -1.0), entry(0, 1, 1, -1.0)] }],
            rhs: vec![-1.0],
            row_scale: vec![1.0],
        }
    }

    #[test]
    fn eigenvalue_condition() {
        let r = solve(&two_by_two(), 1e-8, 100).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective() + 1.0).abs() < 1e-6, "{}", r.objective());
        assert!((r.y[0] - 1.0).abs() < 1e-6);
    }

    fn one_by_one(c: f64) -> ConicProgram {
        ConicProgram {
            sense: Sense::Minimize,
            num_free: 0,
            blocks: vec![Block { side: 1, name: "x".into() }],
            c_free: vec![],
            c_psd: vec![entry(0, 0, 0, c)],
            rows: vec![],
            rhs: vec![],
            row_scale: vec![],
        }
    }

    #[test]
    fn nonnegative_scalar() {
        let p = one_by_one(2.0);
        let r = solve(&p, 1e-9, 100).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!(r.objective().abs() < 1e-8);
        let rep = certify_feasibility(&p, &r.x).unwrap();
        assert!(rep.max_row_violation <= 1e-10 && rep.min_eigenvalues[0] >= 0.0);
    }

    // x1 free, X psd 2x2:  min x1 s.t. x1 - X00 = 1, X01 = 1  (needs X00 >= 1/X11; inf at X11 -> inf)
    // plus X11 = 4  => X00 >= 1/4, x1 = 1 + X00 >= 1.25
    #[test]
    fn free_variables_native() {
        let p = ConicProgram {
            sense: Sense::Minimize,
            num_free: 1,
            blocks: vec![Block { side: 2, name: "g".into() }],
            c_free: vec![1.0],
            c_psd: vec![],
            rows: vec![
                Row { free: vec![(0, 1.0)], psd: vec![entry(0, 0, 0, -1.0)] },
                Row { free: vec![], psd: vec![entry(0, 0, 1, 0.5)] },
                Row { free: vec![], psd: vec![entry(0, 1, 1, 1.0)] },
            ],
            rhs: vec![1.0, 1.0, 4.0],
            row_scale: vec![1.0; 3],
        };
        let r = solve(&p, 1e-9, 100).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective() - 1.25).abs() < 1e-7, "{}", r.objective());
        assert!(r.primal_objective >= r.dual_objective - 1e-8);
    }

    #[test]
    fn detects_infeasibility() {
        // X00 = 0, 2 X01 = 1: impossible for psd X
        let p = ConicProgram {
            sense: Sense::Minimize,
            num_free: 0,
            blocks: vec![Block { side: 2, name: "g".into() }],
            c_free: vec![],
            c_psd: vec![],
            rows: vec![
                Row { free: vec![], psd: vec![entry(0, 0, 0, 1.0)] },
                Row { free: vec![], psd: vec![entry(0, 0, 1, 1.0)] },
                Row { free: vec![], psd: vec![entry(0, 1, 1, 1.0)] },
            ],
            rhs: vec![0.0, 1.0, 0.0],
            row_scale: vec![1.0; 3],
        };
        let r = solve(&p, 1e-8, 200).unwrap();
        assert_eq!(r.status, Status::Infeasible);
    }

    #[test]
    fn detects_unboundedness() {
        // min -x1 s.t. x1 - X00 = 0
        let p = ConicProgram {
            sense: Sense::Minimize,
            num_free: 1,
            blocks: vec![Block { side: 1, name: "g".into() }],
            c_free: vec![-1.0],
            c_psd: vec![],
            rows: vec![Row { free: vec![(0, 1.0)], psd: vec![entry(0, 0, 0, -1.0)] }],
            rhs: vec![0.0],
            row_scale: vec![1.0],
        };
        let r = solve(&p, 1e-8, 200).unwrap();
        assert_eq!(r.status, Status::Unbounded);
    }

    #[test]
    fn rejects_bad_references() {
        let mut p = one_by_one(1.0);
        p.rows.push(Row { free: vec![], psd: vec![entry(3, 0, 0, 1.0)] });
        p.rhs.push(0.0);
        p.row_scale.push(1.0);
        assert!(matches!(solve(&p, 1e-7, 10), Err(SdpError::Malformed(_))));
        let mut q = one_by_one(1.0);
        q.rows.push(Row { free: vec![], psd: vec![entry(0, 1, 0, 1.0)] });
        q.rhs.push(0.0);
        q.row_scale.push(1.0);
        assert!(q.validate().is_err());
    }

    #[test]
    fn deterministic() {
        let a = solve(&two_by_two(), 1e-8, 100).unwrap();
        let b = solve(&two_by_two(), 1e-8, 100).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.primal_objective.to_bits(), b.primal_objective.to_bits());
        assert_eq!(a.dual_objective.to_bits(), b.dual_objective.to_bits());
    }

    #[test]
    fn sdpa_small_layout() {
        let text = sdpa_string(&two_by_two()).unwrap();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('"')).collect();
        assert_eq!(lines[0], "1");
        assert_eq!(lines[1], "1");
        assert_eq!(lines[2], "2");
        assert_eq!(lines.len(), 4 + 3);
        assert_eq!(import_sdpa(&text).unwrap(), two_by_two());
    }

    #[test]
    fn zero_point_on_homogeneous_program() {
        let mut p = one_by_one(0.0);
        p.rows.push(Row { free: vec![], psd: vec![entry(0, 0, 0, 1.0)] });
        p.rhs.push(0.0);
        p.row_scale.push(1.0);
        let rep = certify_feasibility(&p, &PrimalPoint { free: vec![], blocks: vec![DMatrix::zeros(1, 1)] }).unwrap();
        assert_eq!(rep.max_row_violation, 0.0);
        assert_eq!(rep.min_eigenvalues, vec![0.0]);
    }
}
