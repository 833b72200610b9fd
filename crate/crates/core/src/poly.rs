//! Sparse multivariate polynomials over an `x` block and a `y` block of
//! variables, with graded-lex multi-indices.
//!
//! Every polynomial carries a [`Signature`] `(nx, ny)`; its monomials are
//! exponent vectors of length `nx + ny` with the `x` exponents first. Sets
//! that live purely in the image space use signature `(0, m)`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::model::PolynomialMap;

/// Coefficients smaller than this in magnitude are dropped after arithmetic.
pub const COEFF_EPS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolyError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("signature mismatch: {left} vs {right}")]
    SignatureMismatch { left: Signature, right: Signature },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("polynomial map is empty")]
    EmptyMap,
}

/// A monomial exponent vector. Ordered graded-lexicographically: lower total
/// degree first, then larger leading exponents first, so `(0,0) < (1,0) <
/// (0,1) < (2,0) < (1,1) < (0,2)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exps: Vec<u32>,
    degree: u32,
}

impl MultiIndex {
    pub fn new(exps: Vec<u32>) -> Self {
        let degree = exps.iter().sum();
        MultiIndex { exps, degree }
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex { exps: vec![0; dim], degree: 0 }
    }

    /// The exponent vector of the `i`-th coordinate variable.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut exps = vec![0; dim];
        exps[i] = 1;
        MultiIndex { exps, degree: 1 }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exps
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.exps.len()
    }

    pub fn is_zero(&self) -> bool {
        self.degree == 0
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.dim(), other.dim());
        MultiIndex {
            exps: self.exps.iter().zip(&other.exps).map(|(a, b)| a + b).collect(),
            degree: self.degree + other.degree,
        }
    }

    /// Copies the exponents into a zero vector of length `dim` starting at `offset`.
    pub fn embed(&self, dim: usize, offset: usize) -> MultiIndex {
        let mut exps = vec![0; dim];
        exps[offset..offset + self.dim()].copy_from_slice(&self.exps);
        MultiIndex { exps, degree: self.degree }
    }

    /// Exponents restricted to `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> MultiIndex {
        MultiIndex::new(self.exps[range].to_vec())
    }

    /// Places the exponents at the given coordinate positions of a zero vector.
    pub fn scatter(&self, dim: usize, positions: &[usize]) -> MultiIndex {
        let mut exps = vec![0; dim];
        for (e, &p) in self.exps.iter().zip(positions) {
            exps[p] = *e;
        }
        MultiIndex { exps, degree: self.degree }
    }

    /// Indices of variables with a nonzero exponent.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.exps.iter().enumerate().filter(|(_, &e)| e > 0).map(|(i, _)| i)
    }

    /// Evaluates the monomial at `point`.
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.exps
            .iter()
            .zip(point)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree
            .cmp(&other.degree)
            .then_with(|| other.exps.cmp(&self.exps))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.exps.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// All multi-indices of dimension `dim` with total degree at most `max_deg`,
/// in graded-lex order. The result has `binomial(dim + max_deg, max_deg)` entries.
pub fn enumerate_multi_indices(dim: usize, max_deg: usize) -> Result<Vec<MultiIndex>, PolyError> {
    if dim == 0 {
        return Err(PolyError::ZeroDimension);
    }
    let mut out = Vec::with_capacity(binomial(dim + max_deg, max_deg));
    let mut buf = vec![0u32; dim];
    for d in 0..=max_deg as u32 {
        compositions(d, 0, &mut buf, &mut out);
    }
    Ok(out)
}

// Fills `buf[pos..]` with every composition of `rest`, leading exponents descending.
fn compositions(rest: u32, pos: usize, buf: &mut [u32], out: &mut Vec<MultiIndex>) {
    if pos + 1 == buf.len() {
        buf[pos] = rest;
        out.push(MultiIndex::new(buf.to_vec()));
        return;
    }
    for e in (0..=rest).rev() {
        buf[pos] = e;
        compositions(rest - e, pos + 1, buf, out);
    }
    buf[pos] = 0;
}

/// Binomial coefficient, saturating on overflow.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    usize::try_from(acc).unwrap_or(usize::MAX)
}

/// Block layout of a polynomial's variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Signature {
    pub nx: usize,
    pub ny: usize,
}

impl Signature {
    pub fn new(nx: usize, ny: usize) -> Self {
        Signature { nx, ny }
    }

    pub fn x_only(nx: usize) -> Self {
        Signature { nx, ny: 0 }
    }

    pub fn y_only(ny: usize) -> Self {
        Signature { nx: 0, ny }
    }

    pub fn total(&self) -> usize {
        self.nx + self.ny
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(x:{}, y:{})", self.nx, self.ny)
    }
}

/// A real polynomial stored as a map from multi-index to coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    sig: Signature,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(sig: Signature) -> Self {
        Polynomial { sig, terms: BTreeMap::new() }
    }

    pub fn constant(sig: Signature, c: f64) -> Self {
        let mut p = Polynomial::zero(sig);
        p.add_term(MultiIndex::zero(sig.total()), c);
        p
    }

    /// The coordinate variable with global index `i` (x block first).
    pub fn var(sig: Signature, i: usize) -> Self {
        Polynomial::monomial(sig, MultiIndex::unit(sig.total(), i), 1.0)
    }

    pub fn monomial(sig: Signature, alpha: MultiIndex, c: f64) -> Self {
        assert_eq!(alpha.dim(), sig.total(), "monomial length does not match signature");
        let mut p = Polynomial::zero(sig);
        p.add_term(alpha, c);
        p
    }

    pub fn from_terms(sig: Signature, terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        let mut p = Polynomial::zero(sig);
        for (alpha, c) in terms {
            assert_eq!(alpha.dim(), sig.total(), "monomial length does not match signature");
            p.add_term(alpha, c);
        }
        p.prune();
        p
    }

    pub fn signature(&self) -> Signature {
        self.sig
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> + '_ {
        self.terms.iter().map(|(k, v)| (k, *v))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> usize {
        self.terms.keys().map(|a| a.degree() as usize).max().unwrap_or(0)
    }

    /// Highest degree in the `x` block alone.
    pub fn x_degree(&self) -> usize {
        let nx = self.sig.nx;
        self.terms
            .keys()
            .map(|a| a.exponents()[..nx].iter().sum::<u32>() as usize)
            .max()
            .unwrap_or(0)
    }

    /// Global indices of the variables that occur in some term.
    pub fn variables(&self) -> Vec<usize> {
        let mut used = vec![false; self.sig.total()];
        for alpha in self.terms.keys() {
            for i in alpha.support() {
                used[i] = true;
            }
        }
        used.iter().enumerate().filter(|(_, &u)| u).map(|(i, _)| i).collect()
    }

    fn add_term(&mut self, alpha: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        *self.terms.entry(alpha).or_insert(0.0) += c;
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= COEFF_EPS);
    }

    fn check(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.sig != other.sig {
            return Err(PolyError::SignatureMismatch { left: self.sig, right: other.sig });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (alpha, c) in &other.terms {
            out.add_term(alpha.clone(), *c);
        }
        out.prune();
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (alpha, c) in &other.terms {
            out.add_term(alpha.clone(), -c);
        }
        out.prune();
        Ok(out)
    }

    pub fn checked_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = Polynomial::zero(self.sig);
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                out.add_term(a.add(b), ca * cb);
            }
        }
        out.prune();
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.sig);
        for (a, c) in &self.terms {
            out.add_term(a.clone(), c * s);
        }
        out.prune();
        out
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::constant(self.sig, 1.0);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                acc = &acc * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    /// Partial derivative with respect to variable `i`.
    pub fn derivative(&self, i: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.sig);
        for (a, c) in &self.terms {
            let e = a.exponents()[i];
            if e > 0 {
                let mut exps = a.exponents().to_vec();
                exps[i] -= 1;
                out.add_term(MultiIndex::new(exps), c * e as f64);
            }
        }
        out.prune();
        out
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.sig.total() {
            return Err(PolyError::LengthMismatch { expected: self.sig.total(), got: point.len() });
        }
        Ok(self.eval_unchecked(point))
    }

    /// Evaluation without the length check; `point` must match the signature.
    pub fn eval_unchecked(&self, point: &[f64]) -> f64 {
        self.terms.iter().map(|(a, c)| c * a.eval(point)).sum()
    }

    /// Moves the polynomial into a larger signature, placing its variables at
    /// global offset `offset`.
    pub fn embed(&self, sig: Signature, offset: usize) -> Polynomial {
        assert!(offset + self.sig.total() <= sig.total(), "embedding out of range");
        Polynomial {
            sig,
            terms: self
                .terms
                .iter()
                .map(|(a, c)| (a.embed(sig.total(), offset), *c))
                .collect(),
        }
    }

    /// Reinterprets the variables under a new block split with the same total count.
    pub fn with_signature(&self, sig: Signature) -> Polynomial {
        assert_eq!(sig.total(), self.sig.total(), "total variable count must match");
        Polynomial { sig, terms: self.terms.clone() }
    }

    /// Substitutes `x_i <- values[i]` for the listed variables, keeping the signature.
    pub fn partial_eval(&self, vars: &[usize], values: &[f64]) -> Polynomial {
        let mut out = Polynomial::zero(self.sig);
        for (a, c) in &self.terms {
            let mut exps = a.exponents().to_vec();
            let mut coef = *c;
            for (&v, &val) in vars.iter().zip(values) {
                coef *= val.powi(exps[v] as i32);
                exps[v] = 0;
            }
            out.add_term(MultiIndex::new(exps), coef);
        }
        out.prune();
        out
    }

    /// Substitutes `y_j <- components[j]` for every variable of `self`.
    ///
    /// `self` must have exactly as many variables as there are components;
    /// the result lives in the components' signature.
    pub fn compose(&self, components: &[Polynomial]) -> Result<Polynomial, PolyError> {
        if components.is_empty() {
            return Err(PolyError::EmptyMap);
        }
        if self.sig.total() != components.len() {
            return Err(PolyError::LengthMismatch { expected: self.sig.total(), got: components.len() });
        }
        let target = components[0].sig;
        for c in components {
            if c.sig != target {
                return Err(PolyError::SignatureMismatch { left: target, right: c.sig });
            }
        }
        // powers[j][k] = components[j]^k, filled lazily.
        let mut powers: Vec<Vec<Polynomial>> =
            components.iter().map(|_| vec![Polynomial::constant(target, 1.0)]).collect();
        let mut out = Polynomial::zero(target);
        for (alpha, c) in &self.terms {
            let mut term = Polynomial::constant(target, *c);
            for (j, &e) in alpha.exponents().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                while powers[j].len() <= e as usize {
                    let next = powers[j].last().unwrap() * &components[j];
                    powers[j].push(next);
                }
                term = &term * &powers[j][e as usize];
            }
            for (a, tc) in term.terms {
                out.add_term(a, tc);
            }
        }
        out.prune();
        Ok(out)
    }

    /// Largest absolute coefficient difference against `other`.
    pub fn max_coeff_gap(&self, other: &Polynomial) -> f64 {
        let mut gap: f64 = 0.0;
        for (a, c) in &self.terms {
            gap = gap.max((c - other.coeff(a)).abs());
        }
        for (a, c) in &other.terms {
            if !self.terms.contains_key(a) {
                gap = gap.max(c.abs());
            }
        }
        gap
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Renders the polynomial as an expression over the given variable names.
    /// Coefficients are printed in shortest round-trip form.
    pub fn to_expr(&self, names: &[String]) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (alpha, c)) in self.terms.iter().enumerate() {
            let (sign, mag) = if *c < 0.0 { ("-", -c) } else { ("+", *c) };
            if i == 0 {
                if sign == "-" {
                    out.push('-');
                }
            } else {
                out.push_str(&format!(" {sign} "));
            }
            let mut factors: Vec<String> = Vec::new();
            if mag != 1.0 || alpha.is_zero() {
                factors.push(format!("{mag:?}"));
            }
            for (v, &e) in alpha.exponents().iter().enumerate() {
                match e {
                    0 => {}
                    1 => factors.push(names[v].clone()),
                    _ => factors.push(format!("{}^{}", names[v], e)),
                }
            }
            out.push_str(&factors.join("*"));
        }
        out
    }
}

impl std::ops::Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.checked_add(rhs).expect("polynomial signature mismatch")
    }
}

impl std::ops::Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.checked_sub(rhs).expect("polynomial signature mismatch")
    }
}

impl std::ops::Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.checked_mul(rhs).expect("polynomial signature mismatch")
    }
}

impl std::ops::Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// `-||y - f(x)||^2` in signature `(n, m)`: nonpositive, zero exactly on the graph of `f`.
pub fn build_h_f(f: &PolynomialMap) -> Result<Polynomial, PolyError> {
    let comps = f.components();
    if comps.is_empty() {
        return Err(PolyError::EmptyMap);
    }
    let n = f.nx();
    let m = comps.len();
    let sig = Signature::new(n, m);
    let mut h = Polynomial::zero(sig);
    for (j, fj) in comps.iter().enumerate() {
        let diff = &Polynomial::var(sig, n + j) - &fj.embed(sig, 0);
        h = &h - &(&diff * &diff);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig2() -> Signature {
        Signature::x_only(2)
    }

    #[test]
    fn enumerate_small_cases() {
        let one = enumerate_multi_indices(1, 1).unwrap();
        assert_eq!(one, vec![MultiIndex::new(vec![0]), MultiIndex::new(vec![1])]);

        let two = enumerate_multi_indices(2, 2).unwrap();
        assert_eq!(two.len(), 6);
        assert_eq!(two[0], MultiIndex::new(vec![0, 0]));
        assert_eq!(two[5], MultiIndex::new(vec![0, 2]));
        assert!(two.windows(2).all(|w| w[0] < w[1]));

        assert_eq!(enumerate_multi_indices(0, 3), Err(PolyError::ZeroDimension));
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let s = sig2();
        let x1 = Polynomial::var(s, 0);
        let x2 = Polynomial::var(s, 1);
        let p = &(&x1.pow(3) * &x2) - &x2.pow(2).scale(2.0);
        let d1 = p.derivative(0);
        assert_eq!(d1, (&x1.pow(2) * &x2).scale(3.0));
        let pt = [0.3, -0.7];
        let h = 1e-6;
        let fd = (p.eval_unchecked(&[pt[0], pt[1] + h]) - p.eval_unchecked(&[pt[0], pt[1] - h])) / (2.0 * h);
        assert!((p.derivative(1).eval_unchecked(&pt) - fd).abs() < 1e-8);
        assert!(Polynomial::constant(s, 4.0).derivative(1).is_zero());
    }

    // Independent count: number of exponent vectors by recursion on the first coordinate.
    fn count_recursive(dim: usize, max_deg: usize) -> usize {
        if dim == 1 {
            return max_deg + 1;
        }
        (0..=max_deg).map(|e| count_recursive(dim - 1, max_deg - e)).sum()
    }

    #[test]
    fn enumerate_matches_recursive_count() {
        assert_eq!(count_recursive(4, 3), 35);
        assert_eq!(enumerate_multi_indices(4, 3).unwrap().len(), 35);
        for dim in 1..=6 {
            for r in 0..=8 {
                let list = enumerate_multi_indices(dim, r).unwrap();
                assert_eq!(list.len(), binomial(dim + r, r));
                assert_eq!(list.len(), count_recursive(dim, r));
                let distinct: std::collections::HashSet<_> = list.iter().collect();
                assert_eq!(distinct.len(), list.len());
            }
        }
    }

    #[test]
    fn multiply_basic() {
        let s = Signature::x_only(1);
        let x = Polynomial::var(s, 0);
        let one = Polynomial::constant(s, 1.0);
        let p = &(&x + &one) * &(&x - &one);
        let expected = Polynomial::from_terms(
            s,
            [(MultiIndex::new(vec![2]), 1.0), (MultiIndex::new(vec![0]), -1.0)],
        );
        assert_eq!(p, expected);
        assert!((&p * &Polynomial::zero(s)).is_zero());
    }

    #[test]
    fn cube_of_sum_matches_binomial_expansion() {
        let s = sig2();
        let sum = &Polynomial::var(s, 0) + &Polynomial::var(s, 1);
        let cube = sum.pow(3);
        for k in 0..=3u32 {
            let alpha = MultiIndex::new(vec![3 - k, k]);
            assert_eq!(cube.coeff(&alpha), binomial(3, k as usize) as f64);
        }
        assert_eq!(cube.num_terms(), 4);
    }

    #[test]
    fn mul_signature_mismatch_is_rejected() {
        let a = Polynomial::constant(sig2(), 1.0);
        let b = Polynomial::constant(Signature::new(1, 1), 1.0);
        assert!(matches!(a.checked_mul(&b), Err(PolyError::SignatureMismatch { .. })));
    }

    #[test]
    fn eval_cases() {
        let s = sig2();
        let p = &Polynomial::var(s, 0).pow(2) + &Polynomial::var(s, 1);
        assert_eq!(p.eval(&[2.0, 3.0]).unwrap(), 7.0);
        assert_eq!(Polynomial::zero(s).eval(&[0.3, -1.0]).unwrap(), 0.0);
        assert_eq!(p.eval(&[1.0]), Err(PolyError::LengthMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn zero_polynomial_has_degree_zero() {
        assert_eq!(Polynomial::zero(sig2()).degree(), 0);
    }

    #[test]
    fn tiny_coefficients_are_dropped() {
        let s = Signature::x_only(1);
        let a = Polynomial::from_terms(s, [(MultiIndex::new(vec![1]), 1.0)]);
        let b = Polynomial::from_terms(s, [(MultiIndex::new(vec![1]), 1.0 + 1e-15)]);
        assert!((&a - &b).is_zero());
    }

    #[test]
    fn to_expr_is_readable() {
        let s = sig2();
        let names = vec!["x1".to_string(), "x2".to_string()];
        let p = &(&Polynomial::var(s, 0).pow(2).scale(0.5) - &Polynomial::var(s, 1))
            + &Polynomial::constant(s, -1.0);
        assert_eq!(p.to_expr(&names), "-1.0 - x2 + 0.5*x1^2");
    }
}
