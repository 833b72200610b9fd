//! Rescaling of bicriteria objectives so that their image lies in the unit disk.

use std::fmt::Write as _;

use crate::certify::{self, CertifyError};
use crate::problem::{ProblemError, ProblemSpec};
use crate::poly::{MultiIndex, Polynomial};
use crate::relax::{lower_bound_on_set, LowerBound, RelaxError};
use crate::sdp;

/// Samples used to check the scaled image against the unit disk.
pub const CHECK_SAMPLES: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum ParetoError {
    #[error("pareto scaling needs exactly two objectives, found {0}")]
    NotBicriteria(usize),
    #[error("objective f{index} is degenerate on S: upper bound {upper} - lower bound {lower} < 1e-9")]
    Degenerate { index: usize, lower: f64, upper: f64 },
    #[error("lower bound of f{index} is not finite (S may be empty)")]
    NoBound { index: usize },
    #[error("{outside} of {samples} scaled samples lie outside the unit disk (largest norm {worst})")]
    Escaped { outside: usize, samples: usize, worst: f64 },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

/// `f~_j = (f_j - lower_j) / ((upper_j - lower_j) * shrink)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParetoScaling {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Extra uniform factor (>= 1) applied when the affine step alone leaves
    /// the image outside the unit disk.
    pub shrink: f64,
    /// Certified upper bound on `|f~|^2` over `S` before shrinking.
    pub norm_sq_bound: f64,
    /// Largest norm of the scaled image over the check samples.
    pub max_sample_norm: f64,
}

impl ParetoScaling {
    /// Maps a point of the scaled image back to the original objectives.
    pub fn unscale(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(j, v)| self.lower[j] + v * self.shrink * (self.upper[j] - self.lower[j]))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for j in 0..self.lower.len() {
            let _ = writeln!(out, "lower{} = {:e}", j + 1, self.lower[j]);
            let _ = writeln!(out, "upper{} = {:e}", j + 1, self.upper[j]);
        }
        let _ = writeln!(out, "shrink = {:e}", self.shrink);
        let _ = writeln!(out, "norm_sq_bound = {:e}", self.norm_sq_bound);
        let _ = writeln!(out, "max_sample_norm = {:e}", self.max_sample_norm);
        out
    }
}

/// Scales the two objectives of `spec` by bounds computed at relaxation order
/// `r_scale`: the lower bound of `f_j` on `S`, and `f_j` at an approximate
/// minimizer of the other objective (or the sampled maximum of `f_j` when no
/// minimizer can be read off the moments).
pub fn pareto_scale(spec: &ProblemSpec, r_scale: usize, seed: u64) -> Result<(ProblemSpec, ParetoScaling), ParetoError> {
    let m = spec.m();
    if m != 2 {
        return Err(ParetoError::NotBicriteria(m));
    }
    let plain = spec.to_problem()?;
    let p = plain.archimedean(spec.archimedean);
    let samples = certify::sample_problem(&plain, CHECK_SAMPLES, seed)?;
    let tol = 1e-9;
    let loosely_in_s = |x: &[f64]| plain.s.constraints().iter().all(|g| g.eval_unchecked(x) >= -1e-6);
    let order = |deg: usize| r_scale.max(deg.div_ceil(2)).max(p.s.max_half_degree()).max(1);

    let bounds = spec
        .map
        .iter()
        .map(|fj| match fj.degree() {
            // exact, so a constant objective is reported as degenerate
            0 => Ok(LowerBound { value: fj.coeff(&MultiIndex::zero(fj.signature().total())), unbounded: false, candidate: None, status: sdp::Status::Optimal }),
            d => lower_bound_on_set(fj, &p.s, order(d), sdp::DEFAULT_TOL, sdp::DEFAULT_MAX_ITER),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    for j in 0..m {
        let lb = &bounds[j];
        if lb.unbounded || !lb.value.is_finite() {
            return Err(ParetoError::NoBound { index: j + 1 });
        }
        let other = &bounds[1 - j];
        let fj = &spec.map[j];
        let at_candidate = other
            .candidate
            .as_deref()
            .filter(|x| loosely_in_s(x))
            .map(|x| fj.eval_unchecked(x));
        let b = at_candidate.unwrap_or_else(|| {
            samples.points.iter().map(|x| fj.eval_unchecked(x)).fold(f64::NEG_INFINITY, f64::max)
        });
        if !(b - lb.value >= tol) {
            return Err(ParetoError::Degenerate { index: j + 1, lower: lb.value, upper: b });
        }
        lower.push(lb.value);
        upper.push(b);
    }

    let affine: Vec<_> = (0..m)
        .map(|j| {
            let shifted = &spec.map[j] - &Polynomial::constant(spec.map[j].signature(), lower[j]);
            shifted.scale(1.0 / (upper[j] - lower[j]))
        })
        .collect();
    let norm_sq = affine.iter().fold(Polynomial::zero(affine[0].signature()), |acc, g| &acc + &(g * g));
    let neg = -&norm_sq;
    let nb = lower_bound_on_set(&neg, &p.s, order(neg.degree()), sdp::DEFAULT_TOL, sdp::DEFAULT_MAX_ITER)?;
    let norm_sq_bound = if nb.unbounded { 0.0 } else { (-nb.value).max(0.0) };
    let shrink = if norm_sq_bound > 1.0 + 1e-6 { norm_sq_bound.sqrt() * (1.0 + 1e-9) } else { 1.0 };
    let map: Vec<_> = affine.iter().map(|g| g.scale(1.0 / shrink)).collect();

    let max_sample_norm = samples
        .points
        .iter()
        .map(|x| map.iter().map(|g| g.eval_unchecked(x).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let outside = samples
        .points
        .iter()
        .filter(|x| map.iter().map(|g| g.eval_unchecked(x).powi(2)).sum::<f64>().sqrt() > 1.0 + 1e-6)
        .count();
    if outside > 0 {
        return Err(ParetoError::Escaped { outside, samples: samples.points.len(), worst: max_sample_norm });
    }

    let mut scaled = spec.clone();
    scaled.map = map;
    scaled.pareto = false;
    Ok((scaled, ParetoScaling { lower, upper, shrink, norm_sq_bound, max_sample_norm }))
}
