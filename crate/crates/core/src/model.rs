//! Problem data: the source set `S`, the bounding set `B`, the map `f`, and
//! the derived sets `K = S x B` and `S_lift`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::poly::{enumerate_multi_indices, MultiIndex, PolyError, Polynomial, Signature};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("constraint {index} has signature {found}, expected {expected}")]
    ConstraintSignature { index: usize, found: Signature, expected: Signature },
    #[error("map components must be polynomials in x only")]
    MapSignature,
    #[error("invalid bounding set: {0}")]
    InvalidBound(String),
    #[error("minimal order undefined: the map has degree 0")]
    ConstantMap,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("set is unbounded along coordinate {0}; add bounds or a ball constraint")]
    Unbounded(usize),
}

/// `ceil(deg g / 2)`, the half-degree used to size localizing matrices.
pub fn half_degree(g: &Polynomial) -> usize {
    g.degree().div_ceil(2)
}

/// A basic semi-algebraic set `{ g_j >= 0 }`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemialgebraicSet {
    sig: Signature,
    constraints: Vec<Polynomial>,
    half_degrees: Vec<usize>,
    ball: Option<f64>,
}

impl SemialgebraicSet {
    pub fn new(sig: Signature, constraints: Vec<Polynomial>) -> Result<Self, ModelError> {
        for (index, g) in constraints.iter().enumerate() {
            if g.signature() != sig {
                return Err(ModelError::ConstraintSignature { index, found: g.signature(), expected: sig });
            }
        }
        let half_degrees = constraints.iter().map(half_degree).collect();
        let ball = constraints.iter().find_map(centered_ball_constant);
        Ok(SemialgebraicSet { sig, constraints, half_degrees, ball })
    }

    /// The whole space (no constraints).
    pub fn free(sig: Signature) -> Self {
        SemialgebraicSet { sig, constraints: Vec::new(), half_degrees: Vec::new(), ball: None }
    }

    pub fn signature(&self) -> Signature {
        self.sig
    }

    pub fn dim(&self) -> usize {
        self.sig.total()
    }

    pub fn constraints(&self) -> &[Polynomial] {
        &self.constraints
    }

    pub fn half_degrees(&self) -> &[usize] {
        &self.half_degrees
    }

    pub fn max_half_degree(&self) -> usize {
        self.half_degrees.iter().copied().max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// The `N` of a constraint of the exact form `N - ||.||^2`, if any.
    pub fn ball_constant(&self) -> Option<f64> {
        self.ball
    }

    /// True when some constraint is a (possibly translated, scaled) ball over
    /// every variable, which puts `N - ||.||^2` in the quadratic module.
    pub fn is_archimedean(&self) -> bool {
        let all: Vec<usize> = (0..self.dim()).collect();
        self.constraints
            .iter()
            .any(|g| ball_like(g).is_some_and(|b| b.support == all))
    }

    pub fn push(&mut self, g: Polynomial) -> Result<(), ModelError> {
        if g.signature() != self.sig {
            return Err(ModelError::ConstraintSignature {
                index: self.constraints.len(),
                found: g.signature(),
                expected: self.sig,
            });
        }
        if self.ball.is_none() {
            self.ball = centered_ball_constant(&g);
        }
        self.half_degrees.push(half_degree(&g));
        self.constraints.push(g);
        Ok(())
    }

    /// Appends `n - ||.||^2` unless the set already has a ball constraint.
    pub fn ensure_archimedean(&self, n: f64) -> SemialgebraicSet {
        assert!(n > 0.0, "ball constant must be positive");
        let mut out = self.clone();
        if !self.is_archimedean() {
            out.push(ball_polynomial(self.sig, n)).expect("same signature");
        }
        out
    }

    /// Minimum constraint value at `point`; nonnegative iff the point is in the set.
    pub fn margin(&self, point: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|g| g.eval_unchecked(point))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.constraints.iter().all(|g| g.eval_unchecked(point) >= 0.0)
    }

    /// Coordinate box implied by ball-like constraints (including single-variable
    /// bounds of the form `(hi - x)(x - lo) >= 0`). Unconstrained coordinates get
    /// infinite bounds.
    pub fn implied_box(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for g in &self.constraints {
            if let Some(b) = ball_like(g) {
                for &i in &b.support {
                    lo[i] = lo[i].max(b.center[i] - b.radius);
                    hi[i] = hi[i].min(b.center[i] + b.radius);
                }
            }
        }
        (lo, hi)
    }
}

/// `n - sum x_i^2` in the given signature.
pub fn ball_polynomial(sig: Signature, n: f64) -> Polynomial {
    let mut p = Polynomial::constant(sig, n);
    for i in 0..sig.total() {
        p = &p - &Polynomial::var(sig, i).pow(2);
    }
    p
}

/// A constraint `a (rho^2 - ||x_I - c_I||^2)` with `a > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallLike {
    pub support: Vec<usize>,
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Recognizes degree-2 constraints whose quadratic part is `-a * sum_{i in I} x_i^2`.
pub fn ball_like(g: &Polynomial) -> Option<BallLike> {
    if g.degree() != 2 {
        return None;
    }
    let n = g.signature().total();
    let mut quad = vec![0.0; n];
    let mut lin = vec![0.0; n];
    let mut cst = 0.0;
    for (alpha, c) in g.terms() {
        let e = alpha.exponents();
        match alpha.degree() {
            0 => cst = c,
            1 => lin[alpha.support().next()?] = c,
            _ => {
                let i = alpha.support().next()?;
                if e[i] != 2 {
                    return None;
                }
                quad[i] = c;
            }
        }
    }
    let support: Vec<usize> = (0..n).filter(|&i| quad[i] != 0.0).collect();
    let a = -quad[support[0]];
    if a <= 0.0 || support.iter().any(|&i| (quad[i] + a).abs() > 1e-12 * a) {
        return None;
    }
    if (0..n).any(|i| quad[i] == 0.0 && lin[i] != 0.0) {
        return None;
    }
    let center: Vec<f64> = lin.iter().map(|l| l / (2.0 * a)).collect();
    let rho2 = cst / a + center.iter().map(|c| c * c).sum::<f64>();
    if rho2 < 0.0 {
        return None;
    }
    Some(BallLike { support, center, radius: rho2.sqrt() })
}

fn centered_ball_constant(g: &Polynomial) -> Option<f64> {
    let b = ball_like(g)?;
    let n = g.signature().total();
    let exact = b.support.len() == n
        && b.center.iter().all(|&c| c == 0.0)
        && b.support.iter().all(|&i| g.coeff(&MultiIndex::new(unit2(n, i))) == -1.0);
    exact.then(|| g.coeff(&MultiIndex::zero(n)))
}

fn unit2(n: usize, i: usize) -> Vec<u32> {
    let mut e = vec![0; n];
    e[i] = 2;
    e
}

/// A polynomial map `f: R^n -> R^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialMap {
    nx: usize,
    components: Vec<Polynomial>,
    degree: usize,
}

impl PolynomialMap {
    pub fn new(components: Vec<Polynomial>) -> Result<Self, ModelError> {
        let first = components.first().ok_or(PolyError::EmptyMap)?;
        let sig = first.signature();
        if sig.ny != 0 || components.iter().any(|c| c.signature() != sig) {
            return Err(ModelError::MapSignature);
        }
        let degree = components.iter().map(Polynomial::degree).max().unwrap_or(0);
        Ok(PolynomialMap { nx: sig.nx, components, degree })
    }

    /// `x -> (x_1, ..., x_m)`.
    pub fn projection(n: usize, m: usize) -> Result<Self, ModelError> {
        if m == 0 || m > n {
            return Err(ModelError::Dimension(format!("cannot project R^{n} onto {m} coordinates")));
        }
        let sig = Signature::x_only(n);
        PolynomialMap::new((0..m).map(|i| Polynomial::var(sig, i)).collect())
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn m(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval_unchecked(x)).collect()
    }

    /// True when component `j` is `x_j` for `j < m`.
    pub fn is_projection(&self) -> bool {
        let sig = Signature::x_only(self.nx);
        self.components
            .iter()
            .enumerate()
            .all(|(j, c)| j < self.nx && *c == Polynomial::var(sig, j))
    }
}

/// A "simple" bounding set with closed-form Lebesgue moments.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundKind {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundingSet {
    kind: BoundKind,
    set: SemialgebraicSet,
}

impl BoundingSet {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, ModelError> {
        if center.is_empty() {
            return Err(ModelError::InvalidBound("empty center".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ModelError::InvalidBound(format!("radius must be positive, got {radius}")));
        }
        let sig = Signature::y_only(center.len());
        let mut g = Polynomial::constant(sig, radius * radius);
        for (i, &c) in center.iter().enumerate() {
            let d = &Polynomial::var(sig, i) - &Polynomial::constant(sig, c);
            g = &g - &(&d * &d);
        }
        let set = SemialgebraicSet::new(sig, vec![g])?;
        Ok(BoundingSet { kind: BoundKind::Ball { center, radius }, set })
    }

    pub fn unit_ball(m: usize) -> Self {
        BoundingSet::ball(vec![0.0; m], 1.0).expect("valid unit ball")
    }

    pub fn box_(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ModelError> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(ModelError::InvalidBound("box bounds must have equal nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(ModelError::InvalidBound("box needs lo < hi in every coordinate".into()));
        }
        let sig = Signature::y_only(lo.len());
        let constraints = lo
            .iter()
            .zip(&hi)
            .enumerate()
            .map(|(i, (&l, &h))| {
                let y = Polynomial::var(sig, i);
                &(&Polynomial::constant(sig, h) - &y) * &(&y - &Polynomial::constant(sig, l))
            })
            .collect();
        let set = SemialgebraicSet::new(sig, constraints)?;
        Ok(BoundingSet { kind: BoundKind::Box { lo, hi }, set })
    }

    pub fn kind(&self) -> &BoundKind {
        &self.kind
    }

    pub fn set(&self) -> &SemialgebraicSet {
        &self.set
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            BoundKind::Ball { center, .. } => center.len(),
            BoundKind::Box { lo, .. } => lo.len(),
        }
    }

    /// Smallest coordinate rectangle containing the set.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            BoundKind::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            BoundKind::Box { lo, hi } => (lo.clone(), hi.clone()),
        }
    }

    /// Squared distance from the origin to the farthest point of the set.
    pub fn max_norm_sq(&self) -> f64 {
        match &self.kind {
            BoundKind::Ball { center, radius } => {
                let c = center.iter().map(|c| c * c).sum::<f64>().sqrt();
                (c + radius).powi(2)
            }
            BoundKind::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| (l * l).max(h * h)).sum(),
        }
    }

    /// The default Archimedean constant: 1.1 times [`Self::max_norm_sq`].
    pub fn default_ball_constant(&self) -> f64 {
        1.1 * self.max_norm_sq()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        match &self.kind {
            BoundKind::Ball { center, radius } => {
                y.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>() <= radius * radius
            }
            BoundKind::Box { lo, hi } => y.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| l <= v && v <= h),
        }
    }

    pub fn volume(&self) -> f64 {
        match &self.kind {
            BoundKind::Ball { center, radius } => {
                let m = center.len();
                unit_ball_moment(&vec![0; m]) * radius.powi(m as i32)
            }
            BoundKind::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| h - l).product(),
        }
    }

    /// A uniform point of the set (rejection from the bounding box for balls).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let (lo, hi) = self.bounding_box();
        loop {
            let y: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect();
            if self.contains(&y) {
                return y;
            }
        }
    }

    /// Lebesgue moments `int_B y^beta dy` for `|beta| <= max_deg`.
    pub fn lebesgue_moments(&self, max_deg: usize) -> MomentVector {
        let dim = self.dim();
        let values = enumerate_multi_indices(dim, max_deg)
            .expect("bounding sets have dim >= 1")
            .into_iter()
            .map(|beta| {
                let v = match &self.kind {
                    BoundKind::Box { lo, hi } => box_moment(lo, hi, beta.exponents()),
                    BoundKind::Ball { center, radius } => ball_moment(center, *radius, beta.exponents()),
                };
                (beta, v)
            })
            .collect();
        MomentVector { dim, max_deg, values }
    }
}

fn box_moment(lo: &[f64], hi: &[f64], beta: &[u32]) -> f64 {
    beta.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&k, (&l, &h))| {
            let k1 = k as i32 + 1;
            (h.powi(k1) - l.powi(k1)) / k1 as f64
        })
        .product()
}

/// `Gamma(k / 2)` for a positive integer `k`.
pub fn gamma_half(k: u32) -> f64 {
    assert!(k > 0, "gamma pole at 0");
    let (mut acc, mut x) = if k % 2 == 0 { (1.0, 1.0) } else { (std::f64::consts::PI.sqrt(), 0.5) };
    let target = k as f64 / 2.0;
    while x < target {
        acc *= x;
        x += 1.0;
    }
    acc
}

/// Moment of the unit ball centered at the origin.
pub fn unit_ball_moment(beta: &[u32]) -> f64 {
    if beta.iter().any(|b| b % 2 == 1) {
        return 0.0;
    }
    let m = beta.len() as u32;
    let total: u32 = beta.iter().sum();
    let num: f64 = beta.iter().map(|&b| gamma_half(b + 1)).product();
    num / gamma_half(total + m + 2)
}

// int_{c + rho U} y^beta = rho^m sum_{gamma <= beta} prod_i C(beta_i, gamma_i) c_i^(beta_i-gamma_i) rho^|gamma| z^U_gamma
fn ball_moment(center: &[f64], radius: f64, beta: &[u32]) -> f64 {
    let m = beta.len();
    let mut total = 0.0;
    let mut gamma = vec![0u32; m];
    loop {
        let z = unit_ball_moment(&gamma);
        if z != 0.0 {
            let mut w = z * radius.powi(gamma.iter().sum::<u32>() as i32);
            for i in 0..m {
                w *= crate::poly::binomial(beta[i] as usize, gamma[i] as usize) as f64
                    * center[i].powi((beta[i] - gamma[i]) as i32);
            }
            total += w;
        }
        // odometer over gamma <= beta
        let mut i = 0;
        while i < m && gamma[i] == beta[i] {
            gamma[i] = 0;
            i += 1;
        }
        if i == m {
            break;
        }
        gamma[i] += 1;
    }
    total * radius.powi(m as i32)
}

/// A truncated (pseudo-)moment sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentVector {
    dim: usize,
    max_deg: usize,
    values: BTreeMap<MultiIndex, f64>,
}

impl MomentVector {
    pub fn from_values(dim: usize, max_deg: usize, values: BTreeMap<MultiIndex, f64>) -> Self {
        MomentVector { dim, max_deg, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_deg(&self) -> usize {
        self.max_deg
    }

    /// Value at `beta`; zero outside the stored range.
    pub fn get(&self, beta: &MultiIndex) -> f64 {
        self.values.get(beta).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> + '_ {
        self.values.iter().map(|(k, v)| (k, *v))
    }

    /// Riesz functional `L_z(p) = sum_beta p_beta z_beta`.
    pub fn integrate(&self, p: &Polynomial) -> f64 {
        p.terms().map(|(a, c)| c * self.get(a)).sum()
    }
}

/// `K = S x B` in signature `(n, m)`, `S` constraints first.
pub fn make_product_set(s: &SemialgebraicSet, b: &BoundingSet) -> SemialgebraicSet {
    product(s, b.set())
}

fn product(s: &SemialgebraicSet, b: &SemialgebraicSet) -> SemialgebraicSet {
    let n = s.dim();
    let sig = Signature::new(n, b.dim());
    let constraints = s
        .constraints()
        .iter()
        .map(|g| g.embed(sig, 0))
        .chain(b.constraints().iter().map(|g| g.embed(sig, n)))
        .collect();
    SemialgebraicSet::new(sig, constraints).expect("embedded constraints share the joint signature")
}

/// The `2m` graph constraints `y_j - f_j(x) >= 0` and `f_j(x) - y_j >= 0`, interleaved per `j`.
pub fn graph_constraints(f: &PolynomialMap) -> Vec<Polynomial> {
    let n = f.nx();
    let sig = Signature::new(n, f.m());
    f.components()
        .iter()
        .enumerate()
        .flat_map(|(j, fj)| {
            let d = &Polynomial::var(sig, n + j) - &fj.embed(sig, 0);
            let neg = -&d;
            [d, neg]
        })
        .collect()
}

/// `S_lift`: the constraints of `K` followed by the graph constraints.
pub fn make_lifted_set(
    s: &SemialgebraicSet,
    f: &PolynomialMap,
    b: &BoundingSet,
) -> Result<SemialgebraicSet, ModelError> {
    if s.dim() != f.nx() || b.dim() != f.m() {
        return Err(ModelError::Dimension(format!(
            "S in R^{}, B in R^{}, f: R^{} -> R^{}",
            s.dim(),
            b.dim(),
            f.nx(),
            f.m()
        )));
    }
    let mut out = make_product_set(s, b);
    for g in graph_constraints(f) {
        out.push(g)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Method1,
    Method2,
    Method2Lift,
    Projection,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Method1 => "method1",
            Method::Method2 => "method2",
            Method::Method2Lift => "method2-lift",
            Method::Projection => "projection",
        }
    }

    /// Certificate threshold: `q >= 0` or `w >= 1`.
    pub fn threshold(&self) -> f64 {
        match self {
            Method::Method1 => 0.0,
            _ => 1.0,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "method1" | "m1" => Ok(Method::Method1),
            "method2" | "m2" => Ok(Method::Method2),
            "method2-lift" | "m2-lift" | "lift" => Ok(Method::Method2Lift),
            "projection" | "proj" => Ok(Method::Projection),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Smallest relaxation order for which the method's program is well-posed.
pub fn minimal_order(
    method: Method,
    s: &SemialgebraicSet,
    b: &BoundingSet,
    f: &PolynomialMap,
) -> Result<usize, ModelError> {
    let d = f.degree();
    let rs = s.max_half_degree();
    let rb = b.set().max_half_degree();
    let r = match method {
        Method::Method1 => d.max(rs).max(rb),
        Method::Method2 => {
            if d == 0 {
                return Err(ModelError::ConstantMap);
            }
            let from_s = s.half_degrees().iter().map(|r| r.div_ceil(d)).max().unwrap_or(0);
            from_s.max(rb)
        }
        Method::Method2Lift => d.div_ceil(2).max(rs).max(rb),
        Method::Projection => rs.max(rb),
    };
    Ok(r.max(1))
}

/// How to draw uniform points of `S`: rejection over `lo..hi` on the first
/// `base_dim` coordinates, then the remaining (lifted) coordinates are
/// recovered from polynomial equations.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub base_dim: usize,
    pub equations: Vec<Polynomial>,
}

impl SampleDomain {
    /// Plain rejection box with no lifted coordinates.
    pub fn from_box(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let base_dim = lo.len();
        SampleDomain { lo, hi, base_dim, equations: Vec::new() }
    }
}

/// A complete problem: approximate `f(S)` inside `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageProblem {
    pub s: SemialgebraicSet,
    pub b: BoundingSet,
    pub f: PolynomialMap,
    pub domain: SampleDomain,
}

impl ImageProblem {
    /// Builds a problem without lifted variables; the sampling box is taken from
    /// the ball-like constraints of `S`.
    pub fn new(s: SemialgebraicSet, b: BoundingSet, f: PolynomialMap) -> Result<Self, ModelError> {
        let (lo, hi) = s.implied_box();
        let domain = SampleDomain { lo, hi, base_dim: s.dim(), equations: Vec::new() };
        ImageProblem::with_domain(s, b, f, domain)
    }

    pub fn with_domain(
        s: SemialgebraicSet,
        b: BoundingSet,
        f: PolynomialMap,
        domain: SampleDomain,
    ) -> Result<Self, ModelError> {
        if s.dim() != f.nx() {
            return Err(ModelError::Dimension(format!("S lives in R^{} but f takes {} inputs", s.dim(), f.nx())));
        }
        if b.dim() != f.m() {
            return Err(ModelError::Dimension(format!("B lives in R^{} but f has {} components", b.dim(), f.m())));
        }
        if domain.lo.len() != domain.base_dim || domain.hi.len() != domain.base_dim || domain.base_dim > s.dim() {
            return Err(ModelError::Dimension("sampling box does not match the base variables".into()));
        }
        if let Some(i) = (0..domain.base_dim).find(|&i| !(domain.lo[i].is_finite() && domain.hi[i].is_finite())) {
            return Err(ModelError::Unbounded(i));
        }
        Ok(ImageProblem { s, b, f, domain })
    }

    pub fn n(&self) -> usize {
        self.s.dim()
    }

    pub fn m(&self) -> usize {
        self.f.m()
    }

    /// Ball constant used when `S` lacks one: 1.1 times the squared norm of the
    /// farthest corner of the sampling box (lifted coordinates are bounded by
    /// sampling the graph).
    pub fn default_s_ball_constant(&self) -> f64 {
        let corner: f64 = self
            .domain
            .lo
            .iter()
            .zip(&self.domain.hi)
            .map(|(l, h)| (l * l).max(h * h))
            .sum();
        1.1 * corner.max(1.0)
    }

    /// Copy with an Archimedean ball constraint on `B` only.
    pub fn archimedean_b(&self) -> ImageProblem {
        let mut out = self.clone();
        out.b.set = self.b.set.ensure_archimedean(self.b.default_ball_constant());
        out
    }

    /// Copy with Archimedean ball constraints on both `S` and `B`.
    pub fn archimedean(&self, lifted_bound: Option<f64>) -> ImageProblem {
        let n_s = lifted_bound.unwrap_or_else(|| self.default_s_ball_constant());
        let mut out = self.clone();
        out.s = self.s.ensure_archimedean(n_s);
        out.b.set = self.b.set.ensure_archimedean(self.b.default_ball_constant());
        out
    }
}
