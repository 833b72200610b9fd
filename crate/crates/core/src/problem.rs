//! Sectioned text format for image problems.
//!
//! ```text
//! [vars]
//! x = 2
//! [S]
//! 1 - x1^2 - x2^2 >= 0
//! [B]
//! ball radius = 1
//! [map]
//! (x1 + x1*x2) / 2
//! (x2 - x1^3) / 2
//! ```
//!
//! Optional sections: `[lift]` (extra variables `x_{n+1}..` declared with
//! `lift = k` under `[vars]`, constrained by `==`, `>=` or `<=` lines),
//! `[cliques]` (one 1-based index list per line) and `[options]`
//! (`archimedean = N`, `pareto = true`).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::model::{BoundKind, BoundingSet, ImageProblem, ModelError, PolynomialMap, SampleDomain, SemialgebraicSet};
use crate::poly::{Polynomial, Signature};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("missing section [{0}]")]
    MissingSection(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ProblemError {
    ProblemError::Syntax { line, col, msg: msg.into() }
}

/// A constraint normalized to `g >= 0` or `h == 0`.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    Ge(Polynomial),
    Eq(Polynomial),
}

impl Constraint {
    /// Inequalities of the constraint (`h == 0` becomes `h >= 0, -h >= 0`).
    pub fn inequalities(&self) -> Vec<Polynomial> {
        match self {
            Constraint::Ge(g) => vec![g.clone()],
            Constraint::Eq(h) => vec![h.clone(), -h],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    /// Number of original variables `x_1..x_n`.
    pub n: usize,
    /// Number of lifted variables appended after them.
    pub n_lift: usize,
    pub s: Vec<Constraint>,
    pub lift: Vec<Constraint>,
    pub b: BoundKind,
    pub map: Vec<Polynomial>,
    /// Zero-based cliques over the original variables.
    pub cliques: Option<Vec<Vec<usize>>>,
    pub archimedean: Option<f64>,
    pub pareto: bool,
}

impl ProblemSpec {
    pub fn total_vars(&self) -> usize {
        self.n + self.n_lift
    }

    pub fn m(&self) -> usize {
        self.map.len()
    }

    pub fn var_names(&self) -> Vec<String> {
        (1..=self.total_vars()).map(|i| format!("x{i}")).collect()
    }

    pub fn bounding_set(&self) -> Result<BoundingSet, ModelError> {
        match &self.b {
            BoundKind::Ball { center, radius } => BoundingSet::ball(center.clone(), *radius),
            BoundKind::Box { lo, hi } => BoundingSet::box_(lo.clone(), hi.clone()),
        }
    }

    /// The problem as stated; lifted coordinates are sampled by solving the
    /// `[lift]` equations.
    pub fn to_problem(&self) -> Result<ImageProblem, ProblemError> {
        let sig = Signature::x_only(self.total_vars());
        let constraints: Vec<Polynomial> = self.s.iter().chain(&self.lift).flat_map(Constraint::inequalities).collect();
        let s = SemialgebraicSet::new(sig, constraints)?;
        let f = PolynomialMap::new(self.map.clone())?;
        let b = self.bounding_set()?;
        let (lo, hi) = s.implied_box();
        let equations = self
            .s
            .iter()
            .chain(&self.lift)
            .filter_map(|c| match c {
                Constraint::Eq(h) => Some(h.clone()),
                Constraint::Ge(_) => None,
            })
            .collect();
        let domain = SampleDomain { lo: lo[..self.n].to_vec(), hi: hi[..self.n].to_vec(), base_dim: self.n, equations };
        Ok(ImageProblem::with_domain(s, b, f, domain)?)
    }

    /// Text that [`parse_problem`] reads back into the same spec.
    pub fn emit(&self) -> String {
        let names = self.var_names();
        let mut out = String::new();
        let _ = writeln!(out, "[vars]\nx = {}", self.n);
        if self.n_lift > 0 {
            let _ = writeln!(out, "lift = {}", self.n_lift);
        }
        let constraint = |c: &Constraint| match c {
            Constraint::Ge(g) => format!("{} >= 0", g.to_expr(&names)),
            Constraint::Eq(h) => format!("{} == 0", h.to_expr(&names)),
        };
        out.push_str("\n[S]\n");
        for c in &self.s {
            let _ = writeln!(out, "{}", constraint(c));
        }
        if !self.lift.is_empty() {
            out.push_str("\n[lift]\n");
            for c in &self.lift {
                let _ = writeln!(out, "{}", constraint(c));
            }
        }
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        out.push_str("\n[B]\n");
        match &self.b {
            BoundKind::Ball { center, radius } => {
                let _ = writeln!(out, "ball center = {} radius = {radius:?}", list(center));
            }
            BoundKind::Box { lo, hi } => {
                let _ = writeln!(out, "box lo = {} hi = {}", list(lo), list(hi));
            }
        }
        out.push_str("\n[map]\n");
        for fj in &self.map {
            let _ = writeln!(out, "{}", fj.to_expr(&names));
        }
        if let Some(cliques) = &self.cliques {
            out.push_str("\n[cliques]\n");
            for c in cliques {
                let _ = writeln!(out, "{}", c.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" "));
            }
        }
        if self.archimedean.is_some() || self.pareto {
            out.push_str("\n[options]\n");
            if let Some(n) = self.archimedean {
                let _ = writeln!(out, "archimedean = {n:?}");
            }
            if self.pareto {
                out.push_str("pareto = true\n");
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Expressions

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Var(usize),
    Op(char),
    Rel(&'static str),
}

struct Lexed {
    toks: Vec<(Tok, usize)>,
    end_col: usize,
}

fn lex(text: &str, line: usize, col0: usize, nvars: usize) -> Result<Lexed, ProblemError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = col0 + i;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| syntax(line, col, format!("bad number '{s}'")))?;
            toks.push((Tok::Num(v), col));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let name: String = chars[start..i].iter().collect();
            let idx = name
                .strip_prefix('x')
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|&k| k >= 1 && k <= nvars)
                .ok_or_else(|| syntax(line, col, format!("unknown variable '{name}' (expected x1..x{nvars})")))?;
            toks.push((Tok::Var(idx - 1), col));
        } else if "+-*/^()".contains(c) {
            toks.push((Tok::Op(c), col));
            i += 1;
        } else if c == '>' || c == '<' || c == '=' {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let rel = match two.as_str() {
                ">=" => ">=",
                "<=" => "<=",
                "==" => "==",
                _ => return Err(syntax(line, col, format!("unexpected '{c}'"))),
            };
            toks.push((Tok::Rel(rel), col));
            i += 2;
        } else {
            return Err(syntax(line, col, format!("unexpected character '{c}'")));
        }
    }
    Ok(Lexed { toks, end_col: col0 + chars.len() })
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    line: usize,
    end_col: usize,
    sig: Signature,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.1)
    }

    fn err(&self, msg: impl Into<String>) -> ProblemError {
        syntax(self.line, self.col(), msg)
    }

    fn expr(&mut self) -> Result<Polynomial, ProblemError> {
        let mut acc = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let c = *c;
            self.pos += 1;
            let rhs = self.term()?;
            acc = if c == '+' { &acc + &rhs } else { &acc - &rhs };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Polynomial, ProblemError> {
        let mut acc = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let c = *c;
            let col = self.col();
            self.pos += 1;
            let rhs = self.unary()?;
            if c == '*' {
                acc = &acc * &rhs;
            } else {
                let divisor = constant_value(&rhs)
                    .ok_or_else(|| syntax(self.line, col, "division by a non-constant is not polynomial"))?;
                if divisor == 0.0 {
                    return Err(syntax(self.line, col, "division by zero"));
                }
                acc = acc.scale(1.0 / divisor);
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Polynomial, ProblemError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(-&self.unary()?)
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Polynomial, ProblemError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            match self.peek() {
                Some(Tok::Num(e)) if e.fract() == 0.0 && *e >= 0.0 && *e <= 64.0 => {
                    let e = *e as u32;
                    self.pos += 1;
                    Ok(base.pow(e))
                }
                _ => Err(self.err("exponent must be a nonnegative integer literal")),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Polynomial, ProblemError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Polynomial::constant(self.sig, v))
            }
            Some(Tok::Var(i)) => {
                self.pos += 1;
                Ok(Polynomial::var(self.sig, i))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::Op(')')) {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(t) => Err(self.err(format!("unexpected {}", describe(&t)))),
            None => Err(self.err("unexpected end of expression")),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Var(i) => format!("variable x{}", i + 1),
        Tok::Op(c) => format!("'{c}'"),
        Tok::Rel(r) => format!("'{r}'"),
    }
}

fn constant_value(p: &Polynomial) -> Option<f64> {
    match p.num_terms() {
        0 => Some(0.0),
        1 => p.terms().next().filter(|(a, _)| a.is_zero()).map(|(_, c)| c),
        _ => None,
    }
}

/// Parses a polynomial expression in `x1..x_nvars`.
pub fn parse_expr(text: &str, nvars: usize) -> Result<Polynomial, ProblemError> {
    parse_expr_at(text, nvars, 1, 1)
}

fn parse_expr_at(text: &str, nvars: usize, line: usize, col0: usize) -> Result<Polynomial, ProblemError> {
    let lexed = lex(text, line, col0, nvars)?;
    if let Some((t, col)) = lexed.toks.iter().find(|(t, _)| matches!(t, Tok::Rel(_))) {
        return Err(syntax(line, *col, format!("unexpected {}", describe(t))));
    }
    let mut p = Parser { toks: &lexed.toks, pos: 0, line, end_col: lexed.end_col, sig: Signature::x_only(nvars) };
    let out = p.expr()?;
    if p.pos < lexed.toks.len() {
        return Err(p.err(format!("unexpected {}", describe(&lexed.toks[p.pos].0))));
    }
    Ok(out)
}

fn parse_constraint(text: &str, nvars: usize, line: usize, col0: usize) -> Result<Constraint, ProblemError> {
    let lexed = lex(text, line, col0, nvars)?;
    let rels: Vec<(usize, &'static str)> = lexed
        .toks
        .iter()
        .enumerate()
        .filter_map(|(k, (t, _))| match t {
            Tok::Rel(r) => Some((k, *r)),
            _ => None,
        })
        .collect();
    let (k, rel) = match rels.as_slice() {
        [one] => *one,
        [] => return Err(syntax(line, lexed.end_col, "expected '>=', '<=' or '=='")),
        [_, (k2, _), ..] => return Err(syntax(line, lexed.toks[*k2].1, "only one relation per constraint")),
    };
    let sig = Signature::x_only(nvars);
    let side = |toks: &[(Tok, usize)], end_col: usize| -> Result<Polynomial, ProblemError> {
        let mut p = Parser { toks, pos: 0, line, end_col, sig };
        let out = p.expr()?;
        if p.pos < toks.len() {
            return Err(p.err(format!("unexpected {}", describe(&toks[p.pos].0))));
        }
        Ok(out)
    };
    let lhs = side(&lexed.toks[..k], lexed.toks[k].1)?;
    let rhs = side(&lexed.toks[k + 1..], lexed.end_col)?;
    Ok(match rel {
        ">=" => Constraint::Ge(&lhs - &rhs),
        "<=" => Constraint::Ge(&rhs - &lhs),
        _ => Constraint::Eq(&lhs - &rhs),
    })
}

// ---------------------------------------------------------------------------
// Sections

const SECTIONS: [&str; 7] = ["vars", "S", "lift", "B", "map", "cliques", "options"];

struct Line<'a> {
    no: usize,
    col: usize,
    text: &'a str,
}

fn strip_comment(raw: &str) -> &str {
    raw.split_once('#').map_or(raw, |(a, _)| a)
}

fn key_value<'a>(l: &Line<'a>) -> Result<(&'a str, &'a str, usize), ProblemError> {
    let (k, v) = l.text.split_once('=').ok_or_else(|| syntax(l.no, l.col, "expected 'key = value'"))?;
    let vcol = l.col + k.len() + 1 + (v.len() - v.trim_start().len());
    Ok((k.trim(), v.trim(), vcol))
}

fn parse_list(text: &str, line: usize, col: usize) -> Result<Vec<f64>, ProblemError> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| syntax(line, col, format!("bad number '{}'", t.trim()))))
        .collect()
}

fn parse_bound(l: &Line) -> Result<BoundKind, ProblemError> {
    let text = l.text.trim();
    let (kind, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
    // split "key = value key = value" on the known keys
    let keys: &[&str] = match kind {
        "ball" => &["center", "radius"],
        "box" => &["lo", "hi"],
        _ => return Err(syntax(l.no, l.col, format!("unknown bounding set '{kind}' (expected ball or box)"))),
    };
    let mut found: BTreeMap<&str, (String, usize)> = BTreeMap::new();
    let mut spans: Vec<(usize, &str)> = keys.iter().filter_map(|k| find_key(rest, k).map(|p| (p, *k))).collect();
    spans.sort();
    let base_col = l.col + (l.text.len() - l.text.trim_start().len()) + kind.len() + 1;
    for (idx, &(p, k)) in spans.iter().enumerate() {
        let end = spans.get(idx + 1).map_or(rest.len(), |s| s.0);
        let seg = &rest[p + k.len()..end];
        let Some(v) = seg.trim_start().strip_prefix('=') else {
            return Err(syntax(l.no, base_col + p, format!("expected '=' after '{k}'")));
        };
        found.insert(k, (v.trim().to_string(), base_col + p));
    }
    let get = |k: &str| found.get(k);
    match kind {
        "ball" => {
            let (r, rcol) = get("radius").ok_or_else(|| syntax(l.no, l.col, "ball needs 'radius = ...'"))?;
            let radius = r.parse::<f64>().map_err(|_| syntax(l.no, *rcol, format!("bad radius '{r}'")))?;
            let center = match get("center") {
                Some((c, ccol)) => parse_list(c, l.no, *ccol)?,
                None => Vec::new(),
            };
            Ok(BoundKind::Ball { center, radius })
        }
        _ => {
            let (lo, locol) = get("lo").ok_or_else(|| syntax(l.no, l.col, "box needs 'lo = ...'"))?;
            let (hi, hicol) = get("hi").ok_or_else(|| syntax(l.no, l.col, "box needs 'hi = ...'"))?;
            Ok(BoundKind::Box { lo: parse_list(lo, l.no, *locol)?, hi: parse_list(hi, l.no, *hicol)? })
        }
    }
}

fn find_key(s: &str, key: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut from = 0;
    while let Some(off) = s[from..].find(key) {
        let p = from + off;
        let before_ok = p == 0 || !bytes[p - 1].is_ascii_alphanumeric();
        let after = s[p + key.len()..].trim_start();
        if before_ok && after.starts_with('=') {
            return Some(p);
        }
        from = p + key.len();
    }
    None
}

/// Parses the sectioned problem format.
pub fn parse_problem(text: &str) -> Result<ProblemSpec, ProblemError> {
    let mut sections: BTreeMap<&str, Vec<Line>> = BTreeMap::new();
    let mut current: Option<&str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        let body = strip_comment(raw);
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let col = body.len() - body.trim_start().len() + 1;
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = SECTIONS
                .iter()
                .find(|s| **s == name.trim())
                .ok_or_else(|| syntax(no, col, format!("unknown section [{name}]")))?;
            if sections.contains_key(name) {
                return Err(syntax(no, col, format!("duplicate section [{name}]")));
            }
            sections.insert(name, Vec::new());
            current = Some(name);
            continue;
        }
        let Some(sec) = current else {
            return Err(syntax(no, col, "content before the first section"));
        };
        sections.get_mut(sec).expect("section exists").push(Line { no, col, text: body.trim_end() });
    }

    let vars = sections.get("vars").ok_or(ProblemError::MissingSection("vars"))?;
    let (mut n, mut n_lift) = (None, 0usize);
    for l in vars {
        let (k, v, vcol) = key_value(l)?;
        let count = v.parse::<usize>().map_err(|_| syntax(l.no, vcol, format!("bad count '{v}'")))?;
        match k {
            "x" => n = Some(count),
            "lift" => n_lift = count,
            _ => return Err(syntax(l.no, l.col, format!("unknown key '{k}' in [vars]"))),
        }
    }
    let n = n.filter(|&n| n > 0).ok_or_else(|| syntax(vars.first().map_or(1, |l| l.no), 1, "[vars] needs 'x = n' with n >= 1"))?;
    let total = n + n_lift;

    let constraints = |name: &str| -> Result<Vec<Constraint>, ProblemError> {
        sections
            .get(name)
            .map(|ls| ls.iter().map(|l| parse_constraint(l.text.trim_start(), total, l.no, l.col)).collect())
            .unwrap_or(Ok(Vec::new()))
    };
    if !sections.contains_key("S") {
        return Err(ProblemError::MissingSection("S"));
    }
    let s = constraints("S")?;
    let lift = constraints("lift")?;
    if n_lift > 0 && !sections.contains_key("lift") {
        return Err(ProblemError::MissingSection("lift"));
    }

    let map_lines = sections.get("map").ok_or(ProblemError::MissingSection("map"))?;
    let map = map_lines
        .iter()
        .map(|l| parse_expr_at(l.text.trim_start(), total, l.no, l.col))
        .collect::<Result<Vec<_>, _>>()?;
    if map.is_empty() {
        return Err(ProblemError::MissingSection("map"));
    }
    let m = map.len();

    let b_lines = sections.get("B").ok_or(ProblemError::MissingSection("B"))?;
    let [b_line] = b_lines.as_slice() else {
        return Err(syntax(b_lines.first().map_or(1, |l| l.no), 1, "[B] takes exactly one line"));
    };
    let mut b = parse_bound(b_line)?;
    if let BoundKind::Ball { center, .. } = &mut b {
        if center.is_empty() {
            *center = vec![0.0; m];
        }
    }
    let b_dim = match &b {
        BoundKind::Ball { center, .. } => center.len(),
        BoundKind::Box { lo, hi } => lo.len().max(hi.len()),
    };
    if b_dim != m {
        return Err(syntax(b_line.no, b_line.col, format!("B has dimension {b_dim} but the map has {m} components")));
    }

    let cliques = match sections.get("cliques") {
        None => None,
        Some(ls) => Some(
            ls.iter()
                .map(|l| {
                    l.text
                        .split_whitespace()
                        .map(|t| {
                            t.parse::<usize>()
                                .ok()
                                .filter(|&i| i >= 1 && i <= n)
                                .map(|i| i - 1)
                                .ok_or_else(|| syntax(l.no, l.col, format!("bad clique index '{t}' (expected 1..{n})")))
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };

    let (mut archimedean, mut pareto) = (None, false);
    for l in sections.get("options").map(Vec::as_slice).unwrap_or_default() {
        let (k, v, vcol) = key_value(l)?;
        match k {
            "archimedean" => {
                let val = v.parse::<f64>().ok().filter(|x| *x > 0.0);
                archimedean = Some(val.ok_or_else(|| syntax(l.no, vcol, format!("bad ball constant '{v}'")))?);
            }
            "pareto" => {
                pareto = v.parse::<bool>().map_err(|_| syntax(l.no, vcol, format!("expected true or false, got '{v}'")))?;
            }
            _ => return Err(syntax(l.no, l.col, format!("unknown option '{k}'"))),
        }
    }

    Ok(ProblemSpec { n, n_lift, s, lift, b, map, cliques, archimedean, pareto })
}
