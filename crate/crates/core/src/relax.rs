//! Builders that turn image-approximation problems into conic programs.
//!
//! SOS memberships `target + sum_k x_k P_k in Q_r(A)` are encoded one row per
//! reachable monomial `alpha`:
//!
//! ```text
//! sum_j <A_{j,alpha}, G_j> - sum_k P_k[alpha] x_k = target[alpha]
//! ```
//!
//! where `A_{j,alpha}[a, b]` is the coefficient of `x^alpha` in
//! `g_j * x^(b_a + b_b)`. Moment programs are posed as the maximization side of
//! the same primal/dual pair, so certificates can be read off either form.

use std::collections::BTreeMap;

use crate::model::{
    graph_constraints, half_degree, minimal_order, ImageProblem, Method, ModelError, MomentVector,
    PolynomialMap, SemialgebraicSet,
};
use crate::poly::{binomial, build_h_f, enumerate_multi_indices, MultiIndex, PolyError, Polynomial, Signature, COEFF_EPS};
use crate::sdp::{self, Block, ConicProgram, PsdEntry, Row, Sense, SolverResult};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RelaxError {
    #[error("order {order} is below the minimal order {minimum} for {method}")]
    OrderTooSmall { method: Method, order: usize, minimum: usize },
    #[error("{0} has no Archimedean ball constraint")]
    NotArchimedean(&'static str),
    #[error("target degree {degree} exceeds 2r = {}", 2 * order)]
    DegreeOverflow { degree: usize, order: usize },
    #[error("membership '{membership}' is infeasible: monomial {monomial} is unreachable but has a nonzero target coefficient")]
    Unreachable { membership: String, monomial: MultiIndex },
    #[error("sparsity assumption violated: {0}")]
    Sparsity(String),
    #[error("clique list is empty")]
    EmptyCliques,
    #[error("the map is not the projection onto the first {0} coordinates")]
    NotProjection(usize),
    #[error("program exceeds its size bound: {0}")]
    SizeBound(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// An unknown polynomial whose coefficients are free variables `offset..offset+basis.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct PayloadPoly {
    pub name: String,
    pub sig: Signature,
    pub basis: Vec<MultiIndex>,
    pub offset: usize,
}

impl PayloadPoly {
    pub fn polynomial(&self, free: &[f64]) -> Polynomial {
        Polynomial::from_terms(
            self.sig,
            self.basis.iter().enumerate().map(|(i, b)| (b.clone(), free[self.offset + i])),
        )
    }
}

/// One Gram block `s_j = b^T G_j b` multiplying `g_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramBlock {
    pub block: usize,
    pub name: String,
    pub basis: Vec<MultiIndex>,
    pub g: Polynomial,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MembershipLayout {
    pub name: String,
    pub sig: Signature,
    pub target: Polynomial,
    pub free_terms: Vec<(usize, Polynomial)>,
    pub blocks: Vec<GramBlock>,
    /// Monomial of each emitted row (rows are moment variables in moment programs).
    pub rows: Vec<(MultiIndex, usize)>,
}

impl MembershipLayout {
    /// `sum_j g_j b^T G_j b` for the given Gram matrices (indexed by program block).
    pub fn sos_part(&self, grams: &[nalgebra::DMatrix<f64>]) -> Polynomial {
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for gb in &self.blocks {
            let g = &grams[gb.block];
            let n = gb.basis.len();
            let mut s: BTreeMap<MultiIndex, f64> = BTreeMap::new();
            for a in 0..n {
                for b in 0..n {
                    *s.entry(gb.basis[a].add(&gb.basis[b])).or_insert(0.0) += g[(a, b)];
                }
            }
            for (mono, c) in s {
                for (gamma, gc) in gb.g.terms() {
                    *acc.entry(mono.add(gamma)).or_insert(0.0) += c * gc;
                }
            }
        }
        Polynomial::from_terms(self.sig, acc)
    }

    /// `target + sum_k x_k P_k`.
    pub fn lhs(&self, free: &[f64]) -> Polynomial {
        let mut p = self.target.clone();
        for (k, pk) in &self.free_terms {
            p = &p + &pk.scale(free[*k]);
        }
        p
    }

    /// Largest coefficient gap between the two sides of the membership.
    pub fn reconstruction_residual(&self, free: &[f64], grams: &[nalgebra::DMatrix<f64>]) -> f64 {
        self.lhs(free).max_coeff_gap(&self.sos_part(grams))
    }
}

/// Everything needed to map solver output back to polynomials.
#[derive(Clone, Debug, PartialEq)]
pub struct GramLayout {
    pub label: String,
    pub sense: Sense,
    pub payload: Vec<PayloadPoly>,
    pub memberships: Vec<MembershipLayout>,
}

impl GramLayout {
    pub fn payload(&self, name: &str) -> Option<&PayloadPoly> {
        self.payload.iter().find(|p| p.name == name)
    }

    /// Pseudo-moments attached to a membership: the rows' dual variables, with
    /// the sign and scaling undone.
    pub fn moments(&self, prog: &ConicProgram, res: &SolverResult, membership: usize) -> MomentVector {
        let mem = &self.memberships[membership];
        let sign = match self.sense {
            Sense::Minimize => -1.0,
            Sense::Maximize => 1.0,
        };
        let values: BTreeMap<MultiIndex, f64> = mem
            .rows
            .iter()
            .map(|(a, r)| (a.clone(), sign * prog.row_scale[*r] * res.y[*r]))
            .collect();
        let max_deg = values.keys().map(|a| a.degree() as usize).max().unwrap_or(0);
        MomentVector::from_values(mem.sig.total(), max_deg, values)
    }
}

#[derive(Clone, Debug)]
pub struct Relaxation {
    pub program: ConicProgram,
    pub layout: GramLayout,
}

/// Orders for Method 1: `q` is the half-degree of the certificate, `module`
/// the truncation of the quadratic module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Method1Orders {
    pub q: usize,
    pub module: usize,
}

impl Method1Orders {
    /// `module = max(q, minimal order)`, allowing `q` below the minimal order.
    pub fn decoupled(q: usize, p: &ImageProblem) -> Result<Self, RelaxError> {
        let r_min = minimal_order(Method::Method1, &p.s, &p.b, &p.f)?;
        let hf_half = p.f.degree().max(1);
        Ok(Method1Orders { q: q.max(1), module: q.max(1).max(r_min).max(hf_half) })
    }

    pub fn uniform(r: usize, p: &ImageProblem) -> Result<Self, RelaxError> {
        let r_min = minimal_order(Method::Method1, &p.s, &p.b, &p.f)?;
        if r < r_min {
            return Err(RelaxError::OrderTooSmall { method: Method::Method1, order: r, minimum: r_min });
        }
        Ok(Method1Orders { q: r, module: r })
    }
}

// ---------------------------------------------------------------------------
// SOS side

struct Assembler {
    sense: Sense,
    blocks: Vec<Block>,
    c_free: Vec<f64>,
    rows: Vec<Row>,
    rhs: Vec<f64>,
    row_scale: Vec<f64>,
    payload: Vec<PayloadPoly>,
    memberships: Vec<MembershipLayout>,
}

struct Multiplier {
    name: String,
    g: Polynomial,
    basis: Vec<MultiIndex>,
}

impl Assembler {
    fn new() -> Self {
        Assembler {
            sense: Sense::Minimize,
            blocks: Vec::new(),
            c_free: Vec::new(),
            rows: Vec::new(),
            rhs: Vec::new(),
            row_scale: Vec::new(),
            payload: Vec::new(),
            memberships: Vec::new(),
        }
    }

    fn free_poly(&mut self, name: &str, sig: Signature, basis: Vec<MultiIndex>, cost: impl Fn(&MultiIndex) -> f64) -> PayloadPoly {
        let offset = self.c_free.len();
        self.c_free.extend(basis.iter().map(&cost));
        let p = PayloadPoly { name: name.to_string(), sig, basis, offset };
        self.payload.push(p.clone());
        p
    }

    fn free_scalar(&mut self, cost: f64) -> usize {
        self.c_free.push(cost);
        self.c_free.len() - 1
    }

    /// Adds `target + sum_k x_k P_k = sum_j g_j s_j`.
    fn membership(
        &mut self,
        name: &str,
        sig: Signature,
        target: Polynomial,
        free_terms: Vec<(usize, Polynomial)>,
        multipliers: Vec<Multiplier>,
        order: usize,
    ) -> Result<(), RelaxError> {
        let degree = free_terms.iter().map(|(_, p)| p.degree()).chain([target.degree()]).max().unwrap_or(0);
        if degree > 2 * order {
            return Err(RelaxError::DegreeOverflow { degree, order });
        }
        let mut psd: BTreeMap<MultiIndex, BTreeMap<(usize, usize, usize), f64>> = BTreeMap::new();
        let mut blocks = Vec::with_capacity(multipliers.len());
        for mult in multipliers {
            let blk = self.blocks.len();
            self.blocks.push(Block { side: mult.basis.len(), name: format!("{name}/{}", mult.name) });
            let n = mult.basis.len();
            for a in 0..n {
                for b in a..n {
                    let mono = mult.basis[a].add(&mult.basis[b]);
                    for (gamma, c) in mult.g.terms() {
                        *psd.entry(mono.add(gamma)).or_default().entry((blk, a, b)).or_insert(0.0) += c;
                    }
                }
            }
            blocks.push(GramBlock { block: blk, name: mult.name, basis: mult.basis, g: mult.g });
        }
        let mut free: BTreeMap<MultiIndex, BTreeMap<usize, f64>> = BTreeMap::new();
        for (k, p) in &free_terms {
            for (alpha, c) in p.terms() {
                *free.entry(alpha.clone()).or_default().entry(*k).or_insert(0.0) -= c;
            }
        }
        let mut monomials: Vec<&MultiIndex> = psd.keys().chain(free.keys()).chain(target.terms().map(|(a, _)| a)).collect();
        monomials.sort();
        monomials.dedup();
        let mut rows_out = Vec::new();
        for alpha in monomials {
            let row = Row {
                free: free
                    .get(alpha)
                    .map(|m| m.iter().filter(|(_, v)| **v != 0.0).map(|(k, v)| (*k, *v)).collect())
                    .unwrap_or_default(),
                psd: psd
                    .get(alpha)
                    .map(|m| {
                        m.iter()
                            .filter(|(_, v)| **v != 0.0)
                            .map(|(&(block, i, j), &v)| PsdEntry { block, i, j, v })
                            .collect()
                    })
                    .unwrap_or_default(),
            };
            let t = target.coeff(alpha);
            if row.free.is_empty() && row.psd.is_empty() {
                if t.abs() > COEFF_EPS {
                    return Err(RelaxError::Unreachable { membership: name.to_string(), monomial: alpha.clone() });
                }
                continue;
            }
            rows_out.push((alpha.clone(), self.push_row(row, t)));
        }
        self.memberships.push(MembershipLayout { name: name.to_string(), sig, target, free_terms, blocks, rows: rows_out });
        Ok(())
    }

    fn push_row(&mut self, mut row: Row, rhs: f64) -> usize {
        let scale = row
            .free
            .iter()
            .map(|(_, v)| v.abs())
            .chain(row.psd.iter().map(|e| e.v.abs()))
            .fold(0.0, f64::max);
        let rho = 1.0 / scale;
        row.free.iter_mut().for_each(|(_, v)| *v *= rho);
        row.psd.iter_mut().for_each(|e| e.v *= rho);
        self.rows.push(row);
        self.rhs.push(rhs * rho);
        self.row_scale.push(rho);
        self.rows.len() - 1
    }

    fn finish(self, label: String) -> Relaxation {
        Relaxation {
            program: ConicProgram {
                sense: self.sense,
                num_free: self.c_free.len(),
                blocks: self.blocks,
                c_free: self.c_free,
                c_psd: Vec::new(),
                rows: self.rows,
                rhs: self.rhs,
                row_scale: self.row_scale,
            },
            layout: GramLayout { label, sense: self.sense, payload: self.payload, memberships: self.memberships },
        }
    }
}

/// Multipliers `1, g_1, ..., g_k` of a dense truncated quadratic module.
fn dense_multipliers(set: &SemialgebraicSet, order: usize, prefix: &str) -> Result<Vec<Multiplier>, RelaxError> {
    let dim = set.dim();
    let one = Polynomial::constant(set.signature(), 1.0);
    let mut out = vec![Multiplier { name: "s0".into(), g: one, basis: enumerate_multi_indices(dim, order)? }];
    for (j, (g, &rj)) in set.constraints().iter().zip(set.half_degrees()).enumerate() {
        if rj > order {
            return Err(RelaxError::DegreeOverflow { degree: g.degree(), order });
        }
        out.push(Multiplier {
            name: format!("s_{prefix}{}", j + 1),
            g: g.clone(),
            basis: enumerate_multi_indices(dim, order - rj)?,
        });
    }
    Ok(out)
}

fn y_basis(m: usize, order: usize) -> Result<Vec<MultiIndex>, RelaxError> {
    Ok(enumerate_multi_indices(m, 2 * order)?)
}

fn check_bounds(prog: &ConicProgram, what: &str, max_vars: usize, max_side: usize) -> Result<(), RelaxError> {
    if prog.num_rows() > max_vars || prog.num_free > max_vars || prog.max_side() > max_side {
        return Err(RelaxError::SizeBound(format!(
            "{what}: {} rows, {} free, side {} vs bounds {max_vars}, {max_side}",
            prog.num_rows(),
            prog.num_free,
            prog.max_side()
        )));
    }
    Ok(())
}

fn require_archimedean(p: &ImageProblem) -> Result<(), RelaxError> {
    if !p.s.is_archimedean() {
        return Err(RelaxError::NotArchimedean("S"));
    }
    if !p.b.set().is_archimedean() {
        return Err(RelaxError::NotArchimedean("B"));
    }
    Ok(())
}

/// Feasibility program for `target in Q_r(A)`.
pub fn sos_membership_rows(target: &Polynomial, set: &SemialgebraicSet, r: usize) -> Result<Relaxation, RelaxError> {
    if target.signature() != set.signature() {
        return Err(PolyError::SignatureMismatch { left: target.signature(), right: set.signature() }.into());
    }
    if target.degree() > 2 * r {
        return Err(RelaxError::DegreeOverflow { degree: target.degree(), order: r });
    }
    let mut asm = Assembler::new();
    let mults = dense_multipliers(set, r, "")?;
    asm.membership("membership", set.signature(), target.clone(), Vec::new(), mults, r)?;
    Ok(asm.finish(format!("sos membership r={r}")))
}

fn embedded_y_monomials(basis: &[MultiIndex], sig: Signature) -> Vec<Polynomial> {
    basis
        .iter()
        .map(|b| Polynomial::monomial(sig, b.embed(sig.total(), sig.nx), 1.0))
        .collect()
}

/// `min int q dlambda_B  s.t.  q - h_f in Q_r(S x B)`.
pub fn build_method1_primal(p: &ImageProblem, orders: Method1Orders) -> Result<Relaxation, RelaxError> {
    require_archimedean(p)?;
    let (n, m) = (p.n(), p.m());
    let sig = Signature::new(n, m);
    let hf = build_h_f(&p.f)?;
    let k = crate::model::make_product_set(&p.s, &p.b);
    let z_b = p.b.lebesgue_moments(2 * orders.q);

    let mut asm = Assembler::new();
    let q = asm.free_poly("q", Signature::y_only(m), y_basis(m, orders.q)?, |b| z_b.get(b));
    let terms = embedded_y_monomials(&q.basis, sig)
        .into_iter()
        .enumerate()
        .map(|(i, mono)| (q.offset + i, mono))
        .collect();
    let mults = k_multipliers(&k, n, orders.module)?;
    asm.membership("q-h_f", sig, -&hf, terms, mults, orders.module)?;
    let rel = asm.finish(format!("method1 rq={} r={}", orders.q, orders.module));
    method1_bounds(&rel.program, n, m, orders.module)?;
    Ok(rel)
}

fn k_multipliers(k: &SemialgebraicSet, n: usize, order: usize) -> Result<Vec<Multiplier>, RelaxError> {
    let mut mults = dense_multipliers(k, order, "")?;
    // name the S and B multipliers separately for readability
    let n_s = k.constraints().iter().filter(|g| g.variables().iter().all(|&v| v < n)).count();
    for (j, mult) in mults.iter_mut().skip(1).enumerate() {
        mult.name = if j < n_s { format!("s_S{}", j + 1) } else { format!("s_B{}", j + 1 - n_s) };
    }
    Ok(mults)
}

fn method1_bounds(prog: &ConicProgram, n: usize, m: usize, r: usize) -> Result<(), RelaxError> {
    check_bounds(prog, "method1", binomial(n + m + 2 * r, 2 * r), binomial(n + m + r, r))
}

// ---------------------------------------------------------------------------
// Moment side

/// Entries of the localizing matrix `M(g z)` over `basis`: for each `(a, b)`
/// with `a <= b`, the moments it involves and their coefficients.
pub fn localizing_matrix(g: &Polynomial, basis: &[MultiIndex]) -> Vec<((usize, usize), Vec<(MultiIndex, f64)>)> {
    let mut out = Vec::new();
    for a in 0..basis.len() {
        for b in a..basis.len() {
            let shift = basis[a].add(&basis[b]);
            let entry = g.terms().map(|(gamma, c)| (shift.add(gamma), c)).collect();
            out.push(((a, b), entry));
        }
    }
    out
}

struct MomentSlot {
    name: String,
    sig: Signature,
    /// membership name used for certificate extraction
    membership: String,
    localizers: Vec<Multiplier>,
}

struct Equality {
    cost: f64,
    entries: Vec<(usize, MultiIndex, f64)>,
}

/// Assembles `max sum b z  s.t.  localizing matrices psd, equalities` with
/// moment variables as rows.
fn moment_program(
    label: String,
    slots: Vec<MomentSlot>,
    objective: Vec<(usize, MultiIndex, f64)>,
    payload: Vec<(String, Signature, Vec<MultiIndex>)>,
    equalities: Vec<Equality>,
) -> Relaxation {
    let mut blocks = Vec::new();
    let mut var: BTreeMap<(usize, MultiIndex), Row> = BTreeMap::new();
    let mut slot_blocks: Vec<Vec<GramBlock>> = Vec::new();
    for (s, slot) in slots.iter().enumerate() {
        let mut gbs = Vec::new();
        for mult in &slot.localizers {
            let blk = blocks.len();
            blocks.push(Block { side: mult.basis.len(), name: format!("{}/M({})", slot.name, mult.name) });
            for ((a, b), entry) in localizing_matrix(&mult.g, &mult.basis) {
                for (alpha, c) in entry {
                    var.entry((s, alpha)).or_default().psd.push(PsdEntry { block: blk, i: a, j: b, v: -c });
                }
            }
            gbs.push(GramBlock { block: blk, name: mult.name.clone(), basis: mult.basis.clone(), g: mult.g.clone() });
        }
        slot_blocks.push(gbs);
    }
    let mut offsets = Vec::new();
    let mut c_free = Vec::new();
    let mut payload_out = Vec::new();
    for (name, sig, basis) in payload {
        offsets.push(c_free.len());
        payload_out.push(PayloadPoly { name, sig, offset: c_free.len(), basis: basis.clone() });
        c_free.extend(std::iter::repeat_n(0.0, basis.len()));
    }
    // equality k is the k-th free column, in payload order
    debug_assert_eq!(equalities.len(), c_free.len());
    for (k, eq) in equalities.iter().enumerate() {
        c_free[k] = eq.cost;
        for (s, alpha, c) in &eq.entries {
            var.entry((*s, alpha.clone())).or_default().free.push((k, *c));
        }
    }
    let mut b_map: BTreeMap<(usize, MultiIndex), f64> = BTreeMap::new();
    for (s, alpha, c) in objective {
        var.entry((s, alpha.clone())).or_default();
        *b_map.entry((s, alpha)).or_insert(0.0) += c;
    }

    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut row_scale = Vec::new();
    let mut slot_rows: Vec<Vec<(MultiIndex, usize)>> = vec![Vec::new(); slots.len()];
    let mut unscaled: Vec<(usize, MultiIndex, Row, f64)> = Vec::new();
    for ((s, alpha), mut row) in var {
        row.psd = merge_entries(&row.psd);
        let b = b_map.get(&(s, alpha.clone())).copied().unwrap_or(0.0);
        unscaled.push((s, alpha.clone(), row.clone(), b));
        let scale = row.free.iter().map(|(_, v)| v.abs()).chain(row.psd.iter().map(|e| e.v.abs())).fold(0.0, f64::max);
        if scale == 0.0 {
            continue;
        }
        let rho = 1.0 / scale;
        row.free.iter_mut().for_each(|(_, v)| *v *= rho);
        row.psd.iter_mut().for_each(|e| e.v *= rho);
        slot_rows[s].push((alpha, rows.len()));
        rows.push(row);
        rhs.push(b * rho);
        row_scale.push(rho);
    }

    // Certificate view: target = -b, P_k[alpha] = A_f[alpha, k] per slot.
    let memberships = slots
        .iter()
        .enumerate()
        .map(|(s, slot)| {
            let mut target = BTreeMap::new();
            let mut free_terms: BTreeMap<usize, BTreeMap<MultiIndex, f64>> = BTreeMap::new();
            for (_, alpha, row, b) in unscaled.iter().filter(|u| u.0 == s) {
                if *b != 0.0 {
                    target.insert(alpha.clone(), -b);
                }
                for (k, v) in &row.free {
                    *free_terms.entry(*k).or_default().entry(alpha.clone()).or_insert(0.0) += v;
                }
            }
            MembershipLayout {
                name: slot.membership.clone(),
                sig: slot.sig,
                target: Polynomial::from_terms(slot.sig, target),
                free_terms: free_terms.into_iter().map(|(k, t)| (k, Polynomial::from_terms(slot.sig, t))).collect(),
                blocks: slot_blocks[s].clone(),
                rows: slot_rows[s].clone(),
            }
        })
        .collect();

    Relaxation {
        program: ConicProgram {
            sense: Sense::Maximize,
            num_free: c_free.len(),
            blocks,
            c_free,
            c_psd: Vec::new(),
            rows,
            rhs,
            row_scale,
        },
        layout: GramLayout { label, sense: Sense::Maximize, payload: payload_out, memberships },
    }
}

fn merge_entries(entries: &[PsdEntry]) -> Vec<PsdEntry> {
    let mut map: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for e in entries {
        *map.entry((e.block, e.i, e.j)).or_insert(0.0) += e.v;
    }
    map.into_iter()
        .filter(|(_, v)| *v != 0.0)
        .map(|((block, i, j), v)| PsdEntry { block, i, j, v })
        .collect()
}

fn localizers(set: &SemialgebraicSet, order: usize, prefix: &str) -> Result<Vec<Multiplier>, RelaxError> {
    dense_multipliers(set, order, prefix)
}

/// `max L_z(h_f)  s.t.  M(z), M(g_j z) psd,  L_z(y^beta) = z^B_beta`.
pub fn build_method1_dual(p: &ImageProblem, orders: Method1Orders) -> Result<Relaxation, RelaxError> {
    require_archimedean(p)?;
    let (n, m) = (p.n(), p.m());
    let sig = Signature::new(n, m);
    let hf = build_h_f(&p.f)?;
    if hf.degree() > 2 * orders.module {
        return Err(RelaxError::DegreeOverflow { degree: hf.degree(), order: orders.module });
    }
    let k = crate::model::make_product_set(&p.s, &p.b);
    let z_b = p.b.lebesgue_moments(2 * orders.q);
    let slot = MomentSlot {
        name: "z".into(),
        sig,
        membership: "q-h_f".into(),
        localizers: k_multipliers(&k, n, orders.module)?,
    };
    let objective = hf.terms().map(|(a, c)| (0, a.clone(), c)).collect();
    let basis = y_basis(m, orders.q)?;
    let equalities = basis
        .iter()
        .map(|beta| Equality { cost: z_b.get(beta), entries: vec![(0, beta.embed(n + m, n), 1.0)] })
        .collect();
    let rel = moment_program(
        format!("method1-dual rq={} r={}", orders.q, orders.module),
        vec![slot],
        objective,
        vec![("q".into(), Signature::y_only(m), basis)],
        equalities,
    );
    method1_bounds(&rel.program, n, m, orders.module)?;
    Ok(rel)
}

fn method2_order_check(p: &ImageProblem, method: Method, r: usize) -> Result<(), RelaxError> {
    let minimum = minimal_order(method, &p.s, &p.b, &p.f)?;
    if r < minimum {
        return Err(RelaxError::OrderTooSmall { method, order: r, minimum });
    }
    Ok(())
}

/// Compositions `f^beta` for every `beta` in `basis`.
fn pushforward_monomials(f: &PolynomialMap, basis: &[MultiIndex]) -> Result<Vec<Polynomial>, RelaxError> {
    let ysig = Signature::y_only(f.m());
    basis
        .iter()
        .map(|b| Ok(Polynomial::monomial(ysig, b.clone(), 1.0).compose(f.components())?))
        .collect()
}

/// `min int w dlambda_B  s.t.  v o f in Q_rd(S),  w - 1 - v in Q_r(B),  w in Q_r(B)`.
pub fn build_method2_sos(p: &ImageProblem, r: usize) -> Result<Relaxation, RelaxError> {
    require_archimedean(p)?;
    method2_order_check(p, Method::Method2, r)?;
    let (n, m, d) = (p.n(), p.m(), p.f.degree());
    let ysig = Signature::y_only(m);
    let z_b = p.b.lebesgue_moments(2 * r);
    let basis = y_basis(m, r)?;

    let mut asm = Assembler::new();
    let w = asm.free_poly("w", ysig, basis.clone(), |b| z_b.get(b));
    let v = asm.free_poly("v", ysig, basis.clone(), |_| 0.0);
    let vf: Vec<(usize, Polynomial)> = pushforward_monomials(&p.f, &basis)?
        .into_iter()
        .enumerate()
        .map(|(i, c)| (v.offset + i, c))
        .collect();
    let xsig = p.s.signature();
    asm.membership("v.f", xsig, Polynomial::zero(xsig), vf, dense_multipliers(&p.s, r * d, "S")?, r * d)?;

    let mono = |i: usize| Polynomial::monomial(ysig, basis[i].clone(), 1.0);
    let wv: Vec<(usize, Polynomial)> = (0..basis.len())
        .flat_map(|i| [(w.offset + i, mono(i)), (v.offset + i, -&mono(i))])
        .collect();
    asm.membership("w-1-v", ysig, Polynomial::constant(ysig, -1.0), wv, dense_multipliers(p.b.set(), r, "B")?, r)?;
    let ww: Vec<(usize, Polynomial)> = (0..basis.len()).map(|i| (w.offset + i, mono(i))).collect();
    asm.membership("w", ysig, Polynomial::zero(ysig), ww, dense_multipliers(p.b.set(), r, "B")?, r)?;
    let rel = asm.finish(format!("method2 r={r}"));
    method2_bounds(&rel.program, n, m, r, d)?;
    Ok(rel)
}

fn method2_bounds(prog: &ConicProgram, n: usize, m: usize, r: usize, d: usize) -> Result<(), RelaxError> {
    let rd = r * d;
    check_bounds(
        prog,
        "method2",
        binomial(n + 2 * rd, 2 * rd) + 2 * binomial(m + 2 * r, 2 * r),
        binomial(n + rd, rd).max(binomial(m + r, r)),
    )
}

/// `max z1_0  s.t.  z1 + z1hat = z^B,  L_z0(f^beta) = z1_beta,  localizing matrices psd`.
pub fn build_method2_moment(p: &ImageProblem, r: usize) -> Result<Relaxation, RelaxError> {
    require_archimedean(p)?;
    method2_order_check(p, Method::Method2, r)?;
    let (n, m, d) = (p.n(), p.m(), p.f.degree());
    let ysig = Signature::y_only(m);
    let z_b = p.b.lebesgue_moments(2 * r);
    let basis = y_basis(m, r)?;
    let slots = vec![
        MomentSlot { name: "z0".into(), sig: p.s.signature(), membership: "v.f".into(), localizers: localizers(&p.s, r * d, "S")? },
        MomentSlot { name: "z1".into(), sig: ysig, membership: "w-1-v".into(), localizers: localizers(p.b.set(), r, "B")? },
        MomentSlot { name: "z1hat".into(), sig: ysig, membership: "w".into(), localizers: localizers(p.b.set(), r, "B")? },
    ];
    let mut equalities: Vec<Equality> = basis
        .iter()
        .map(|beta| Equality {
            cost: z_b.get(beta),
            entries: vec![(1, beta.clone(), 1.0), (2, beta.clone(), 1.0)],
        })
        .collect();
    for (beta, fb) in basis.iter().zip(pushforward_monomials(&p.f, &basis)?) {
        let mut entries: Vec<(usize, MultiIndex, f64)> = fb.terms().map(|(a, c)| (0, a.clone(), c)).collect();
        entries.push((1, beta.clone(), -1.0));
        equalities.push(Equality { cost: 0.0, entries });
    }
    let rel = moment_program(
        format!("method2-moment r={r}"),
        slots,
        vec![(1, MultiIndex::zero(m), 1.0)],
        vec![("w".into(), ysig, basis.clone()), ("v".into(), ysig, basis)],
        equalities,
    );
    method2_bounds(&rel.program, n, m, r, d)?;
    Ok(rel)
}

/// `min int w dlambda_B  s.t.  w - 1 in Q_r(S_lift),  w in Q_r(B)`, with
/// `S_lift` generated by the constraints of `S` and the graph constraints.
pub fn build_method2_lifted(p: &ImageProblem, r: usize) -> Result<Relaxation, RelaxError> {
    build_method2_lifted_with(p, r, r)
}

/// Lifted Method 2 with `deg w = 2 r` and the lifted module truncated at
/// `module >= r`.
pub fn build_method2_lifted_with(p: &ImageProblem, r: usize, module: usize) -> Result<Relaxation, RelaxError> {
    require_archimedean(p)?;
    method2_order_check(p, Method::Method2Lift, module)?;
    if module < r {
        return Err(RelaxError::OrderTooSmall { method: Method::Method2Lift, order: module, minimum: r });
    }
    let (n, m) = (p.n(), p.m());
    let sig = Signature::new(n, m);
    let ysig = Signature::y_only(m);
    let z_b = p.b.lebesgue_moments(2 * r);
    let basis = y_basis(m, r)?;

    let mut constraints: Vec<Polynomial> = p.s.constraints().iter().map(|g| g.embed(sig, 0)).collect();
    constraints.extend(graph_constraints(&p.f));
    let s_lift = SemialgebraicSet::new(sig, constraints)?;

    let mut asm = Assembler::new();
    let w = asm.free_poly("w", ysig, basis.clone(), |b| z_b.get(b));
    let lifted_terms = embedded_y_monomials(&basis, sig)
        .into_iter()
        .enumerate()
        .map(|(i, mono)| (w.offset + i, mono))
        .collect();
    let mut mults = dense_multipliers(&s_lift, module, "")?;
    let n_s = p.s.len();
    for (j, mult) in mults.iter_mut().skip(1).enumerate() {
        mult.name = if j < n_s { format!("s_S{}", j + 1) } else { format!("s_graph{}", j + 1 - n_s) };
    }
    asm.membership("w-1", sig, Polynomial::constant(sig, -1.0), lifted_terms, mults, module)?;
    let ww = basis.iter().enumerate().map(|(i, b)| (w.offset + i, Polynomial::monomial(ysig, b.clone(), 1.0))).collect();
    asm.membership("w", ysig, Polynomial::zero(ysig), ww, dense_multipliers(p.b.set(), r, "B")?, r)?;
    let rel = asm.finish(format!("method2-lift r={r} module={module}"));
    check_bounds(
        &rel.program,
        "method2-lift",
        binomial(n + m + 2 * module, 2 * module) + binomial(m + 2 * r, 2 * r),
        binomial(n + m + module, module),
    )?;
    Ok(rel)
}

/// Projection onto the first `m` coordinates: `w` lives in `x_1..x_m`, so no
/// lifting variables are needed.
pub fn build_projection(p: &ImageProblem, r: usize) -> Result<Relaxation, RelaxError> {
    let (n, m) = (p.n(), p.m());
    if m > n || !p.f.is_projection() {
        return Err(RelaxError::NotProjection(m));
    }
    require_archimedean(p)?;
    method2_order_check(p, Method::Projection, r)?;
    let xsig = p.s.signature();
    let ysig = Signature::y_only(m);
    let z_b = p.b.lebesgue_moments(2 * r);
    let basis = y_basis(m, r)?;

    let mut asm = Assembler::new();
    let w = asm.free_poly("w", ysig, basis.clone(), |b| z_b.get(b));
    let in_x = basis
        .iter()
        .enumerate()
        .map(|(i, b)| (w.offset + i, Polynomial::monomial(xsig, b.embed(n, 0), 1.0)))
        .collect();
    asm.membership("w-1", xsig, Polynomial::constant(xsig, -1.0), in_x, dense_multipliers(&p.s, r, "S")?, r)?;
    let ww = basis.iter().enumerate().map(|(i, b)| (w.offset + i, Polynomial::monomial(ysig, b.clone(), 1.0))).collect();
    asm.membership("w", ysig, Polynomial::zero(ysig), ww, dense_multipliers(p.b.set(), r, "B")?, r)?;
    let rel = asm.finish(format!("projection r={r}"));
    check_bounds(
        &rel.program,
        "projection",
        binomial(n + 2 * r, 2 * r) + binomial(m + 2 * r, 2 * r),
        binomial(n + r, r).max(binomial(m + r, r)),
    )?;
    Ok(rel)
}

// ---------------------------------------------------------------------------
// Sparsity

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rip {
    Holds,
    /// `I_{j+1}` meets the earlier cliques outside any single one of them
    /// (`j` is the zero-based index of the offending clique).
    FailsAt(usize),
}

/// Running intersection property of zero-based cliques over `0..n`.
pub fn check_rip(cliques: &[Vec<usize>], n: usize) -> Result<Rip, RelaxError> {
    if cliques.is_empty() {
        return Err(RelaxError::EmptyCliques);
    }
    if let Some(bad) = cliques.iter().flatten().find(|&&i| i >= n) {
        return Err(RelaxError::Sparsity(format!("clique index {} exceeds dimension {n}", bad + 1)));
    }
    let mut seen = vec![false; n];
    for &i in &cliques[0] {
        seen[i] = true;
    }
    for j in 1..cliques.len() {
        let overlap: Vec<usize> = cliques[j].iter().copied().filter(|&i| seen[i]).collect();
        if !cliques[..j].iter().any(|c| overlap.iter().all(|i| c.contains(i))) {
            return Ok(Rip::FailsAt(j));
        }
        for &i in &cliques[j] {
            seen[i] = true;
        }
    }
    Ok(Rip::Holds)
}

fn clique_basis(positions: &[usize], dim: usize, order: usize) -> Result<Vec<MultiIndex>, RelaxError> {
    Ok(enumerate_multi_indices(positions.len(), order)?
        .into_iter()
        .map(|a| a.scatter(dim, positions))
        .collect())
}

/// Method 1 with multipliers restricted to the extended cliques `I_j + {y}`.
/// `s` must be the un-augmented source set: the per-clique ball constraints
/// replace a global one.
pub fn build_method1_sparse(
    p: &ImageProblem,
    cliques: &[Vec<usize>],
    orders: Method1Orders,
) -> Result<Relaxation, RelaxError> {
    let (n, m) = (p.n(), p.m());
    if let Rip::FailsAt(j) = check_rip(cliques, n)? {
        return Err(RelaxError::Sparsity(format!("running intersection property fails at clique {}", j + 1)));
    }
    let mut covered = vec![false; n];
    for &i in cliques.iter().flatten() {
        covered[i] = true;
    }
    if let Some(i) = covered.iter().position(|c| !c) {
        return Err(RelaxError::Sparsity(format!("variable x{} is in no clique", i + 1)));
    }
    let home = |vars: &[usize]| cliques.iter().position(|c| vars.iter().all(|v| c.contains(v)));
    for (j, fj) in p.f.components().iter().enumerate() {
        if home(&fj.variables()).is_none() {
            return Err(RelaxError::Sparsity(format!("f{} is not supported on a single clique", j + 1)));
        }
    }
    let mut assignment = Vec::new();
    for (j, g) in p.s.constraints().iter().enumerate() {
        match home(&g.variables()) {
            Some(c) => assignment.push(c),
            None => return Err(RelaxError::Sparsity(format!("constraint g{} of S spans several cliques", j + 1))),
        }
    }
    for (c, clique) in cliques.iter().enumerate() {
        let mut sorted = clique.clone();
        sorted.sort_unstable();
        let has_ball = p
            .s
            .constraints()
            .iter()
            .any(|g| crate::model::ball_like(g).is_some_and(|b| b.support == sorted));
        if !has_ball {
            return Err(RelaxError::Sparsity(format!("clique {} has no ball constraint over its variables", c + 1)));
        }
    }
    if !p.b.set().is_archimedean() {
        return Err(RelaxError::NotArchimedean("B"));
    }

    let sig = Signature::new(n, m);
    let dim = n + m;
    let hf = build_h_f(&p.f)?;
    let z_b = p.b.lebesgue_moments(2 * orders.q);
    let r = orders.module;
    let single = cliques.len() == 1;
    let positions: Vec<Vec<usize>> = cliques
        .iter()
        .map(|c| {
            let mut pos = c.clone();
            pos.sort_unstable();
            pos.extend(n..n + m);
            pos
        })
        .collect();

    let mut mults = Vec::new();
    for (c, pos) in positions.iter().enumerate() {
        mults.push(Multiplier {
            name: if single { "s0".into() } else { format!("s0.c{}", c + 1) },
            g: Polynomial::constant(sig, 1.0),
            basis: clique_basis(pos, dim, r)?,
        });
    }
    for (j, (g, &c)) in p.s.constraints().iter().zip(&assignment).enumerate() {
        let rj = half_degree(g);
        if rj > r {
            return Err(RelaxError::DegreeOverflow { degree: g.degree(), order: r });
        }
        mults.push(Multiplier { name: format!("s_S{}", j + 1), g: g.embed(sig, 0), basis: clique_basis(&positions[c], dim, r - rj)? });
    }
    for (j, g) in p.b.set().constraints().iter().enumerate() {
        let rj = half_degree(g);
        mults.push(Multiplier { name: format!("s_B{}", j + 1), g: g.embed(sig, n), basis: clique_basis(&positions[0], dim, r - rj)? });
    }

    let mut asm = Assembler::new();
    let q = asm.free_poly("q", Signature::y_only(m), y_basis(m, orders.q)?, |b| z_b.get(b));
    let terms = embedded_y_monomials(&q.basis, sig)
        .into_iter()
        .enumerate()
        .map(|(i, mono)| (q.offset + i, mono))
        .collect();
    asm.membership("q-h_f", sig, -&hf, terms, mults, r)?;
    let rel = asm.finish(format!("method1-sparse rq={} r={r}", orders.q));
    method1_bounds(&rel.program, n, m, r)?;
    Ok(rel)
}

// ---------------------------------------------------------------------------
// Bounds of polynomials on sets

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBound {
    /// Lasserre bound; `+inf` when the set is empty at this order.
    pub value: f64,
    pub unbounded: bool,
    /// First-order pseudo-moments, a minimizer when the moment matrix has rank one.
    pub candidate: Option<Vec<f64>>,
    pub status: sdp::Status,
}

/// `max lambda  s.t.  p - lambda in Q_r(S)`.
pub fn build_lower_bound(poly: &Polynomial, set: &SemialgebraicSet, r: usize) -> Result<Relaxation, RelaxError> {
    if poly.signature() != set.signature() {
        return Err(PolyError::SignatureMismatch { left: poly.signature(), right: set.signature() }.into());
    }
    if poly.degree() > 2 * r {
        return Err(RelaxError::DegreeOverflow { degree: poly.degree(), order: r });
    }
    let sig = set.signature();
    let mut asm = Assembler::new();
    let lambda = asm.free_scalar(-1.0);
    asm.membership(
        "p-lambda",
        sig,
        poly.clone(),
        vec![(lambda, Polynomial::constant(sig, -1.0))],
        dense_multipliers(set, r, "")?,
        r,
    )?;
    Ok(asm.finish(format!("lower bound r={r}")))
}

pub fn lower_bound_on_set(
    poly: &Polynomial,
    set: &SemialgebraicSet,
    r: usize,
    tol: f64,
    max_iter: usize,
) -> Result<LowerBound, RelaxError> {
    if !set.is_archimedean() && !set.is_empty() {
        return Err(RelaxError::NotArchimedean("S"));
    }
    let rel = build_lower_bound(poly, set, r)?;
    let res = sdp::solve(&rel.program, tol, max_iter).map_err(|e| RelaxError::Solver(e.to_string()))?;
    if matches!(res.status, sdp::Status::Unbounded | sdp::Status::Infeasible) {
        return Ok(LowerBound { value: f64::INFINITY, unbounded: true, candidate: None, status: res.status });
    }
    let z = rel.layout.moments(&rel.program, &res, 0);
    let dim = set.dim();
    let z0 = z.get(&MultiIndex::zero(dim));
    let candidate = (z0.abs() > 1e-9).then(|| (0..dim).map(|i| z.get(&MultiIndex::unit(dim, i)) / z0).collect());
    Ok(LowerBound { value: -res.primal_objective, unbounded: false, candidate, status: res.status })
}
