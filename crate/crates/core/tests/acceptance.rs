//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (bypassing the test harness capture) before asserting.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::sync::OnceLock;

use polyimage::certify::{self, Certificate, Orders};
use polyimage::fixtures;
use polyimage::hierarchy::{self, prepare, run_hierarchy, solve_certified, RunConfig, RunReport};
use polyimage::model::{BoundingSet, ImageProblem, Method};
use polyimage::pareto::pareto_scale;
use polyimage::poly::{Polynomial, Signature};
use polyimage::relax::{self, check_rip, Method1Orders, Rip};
use polyimage::sdp::{self, ConicProgram};

const SEED: u64 = 20_240_601;

fn verdict(n: u32, ok: bool, detail: &str) {
    let line = format!("criterion {n:>2}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n} failed: {detail}");
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn run(name: &str, method: Method, lo: usize, hi: usize) -> RunReport {
    let cfg = RunConfig {
        method,
        order_min: lo,
        order_max: hi,
        force_low_order: true,
        samples: 10_000,
        seed: SEED,
        ..RunConfig::default()
    };
    run_hierarchy(&fixtures::load(name), &cfg).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn disk_cubic_m1() -> &'static RunReport {
    static RUN: OnceLock<RunReport> = OnceLock::new();
    RUN.get_or_init(|| run("disk_cubic", Method::Method1, 1, 4))
}

fn two_holes_projection() -> &'static RunReport {
    static RUN: OnceLock<RunReport> = OnceLock::new();
    RUN.get_or_init(|| run("two_holes", Method::Projection, 2, 4))
}

fn min_abs_lift() -> &'static RunReport {
    static RUN: OnceLock<RunReport> = OnceLock::new();
    RUN.get_or_init(|| run("disk_min_abs", Method::Method2Lift, 1, 2))
}

struct Pair {
    r: usize,
    direct: Certificate,
    lifted: Certificate,
}

fn matched_method2() -> &'static Vec<Pair> {
    static PAIRS: OnceLock<Vec<Pair>> = OnceLock::new();
    PAIRS.get_or_init(|| {
        let p = prepare(&fixtures::load("disk_cubic"), false).unwrap();
        (1..=3)
            .map(|r| {
                let direct = relax::build_method2_sos(&p, r).unwrap();
                let module = hierarchy::lift_module(&p, r, None);
                let lifted = relax::build_method2_lifted_with(&p, r, module).unwrap();
                let solve = |rel, orders, method| {
                    solve_certified(rel, orders, method, sdp::DEFAULT_TOL, sdp::DEFAULT_MAX_ITER)
                        .unwrap()
                        .certificate
                        .expect("usable solve")
                };
                Pair {
                    r,
                    direct: solve(&direct, Orders { r, module: 3 * r }, Method::Method2),
                    lifted: solve(&lifted, Orders { r, module }, Method::Method2Lift),
                }
            })
            .collect()
    })
}

// Independent membership oracle for the image of the unit disk under
// ((x1 + x1 x2)/2, (x2 - x1^3)/2): x2 = 2 y2 + x1^3 turns the first equation
// into the quartic x1^4 + (1 + 2 y2) x1 - 2 y1 = 0, and |x1| <= 1 on the disk.
fn in_disk_cubic_image(y: &[f64]) -> bool {
    let quartic = |t: f64| t.powi(4) + (1.0 + 2.0 * y[1]) * t - 2.0 * y[0];
    let fits = |t: f64| {
        let x2 = 2.0 * y[1] + t.powi(3);
        t * t + x2 * x2 <= 1.0
    };
    let steps = 256;
    let mut a = -1.0;
    let mut fa = quartic(a);
    if fa == 0.0 && fits(a) {
        return true;
    }
    for k in 1..=steps {
        let b = -1.0 + 2.0 * k as f64 / steps as f64;
        let fb = quartic(b);
        if fb == 0.0 && fits(b) {
            return true;
        }
        if fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let fm = quartic(mid);
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            if fits(0.5 * (lo + hi)) {
                return true;
            }
        }
        a = b;
        fa = fb;
    }
    false
}

#[test]
fn c01_duality_gap() {
    let start = std::time::Instant::now();
    let p = prepare(&fixtures::load("disk_cubic"), false).unwrap();
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for q in 1..=4 {
        let orders = Method1Orders::decoupled(q, &p).unwrap();
        let primal = relax::build_method1_primal(&p, orders).unwrap();
        let dual = relax::build_method1_dual(&p, orders).unwrap();
        let a = sdp::solve(&primal.program, sdp::DEFAULT_TOL, sdp::DEFAULT_MAX_ITER).unwrap();
        let b = sdp::solve(&dual.program, sdp::DEFAULT_TOL, sdp::DEFAULT_MAX_ITER).unwrap();
        assert!(a.status.is_usable() && b.status.is_usable(), "q={q}: {:?} {:?}", a.status, b.status);
        let d = rel_diff(a.objective(), b.objective());
        worst = worst.max(d);
        detail.push(format!("q={q} {:.7}/{:.7}", a.objective(), b.objective()));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 1e-5 && secs <= 300.0;
    verdict(1, ok, &format!("max relative gap {worst:.2e} in {secs:.1}s ({})", detail.join(", ")));
}

#[test]
fn c02_containment() {
    let cases = [
        ("disk_cubic", disk_cubic_m1()),
        ("two_holes", two_holes_projection()),
        ("disk_min_abs", min_abs_lift()),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, run) in cases {
        let p = fixtures::load(name).to_problem().unwrap();
        let samples = certify::sample_problem(&p, 10_000, SEED ^ 0x5eed).unwrap();
        let accepted: Vec<_> = run.orders.iter().filter(|o| o.report.accepted).collect();
        ok &= !accepted.is_empty();
        for o in accepted {
            let cert = o.certificate.as_ref().unwrap();
            let rep = certify::containment_check(cert, &p.f, &samples.points, 1e-6);
            ok &= rep.violations == 0 && rep.worst_margin >= -1e-6;
            detail.push(format!("{name} r={} worst {:.1e}", o.report.r, rep.worst_margin));
        }
        let skipped: Vec<_> = run.orders.iter().filter(|o| !o.report.accepted).map(|o| o.report.r).collect();
        if !skipped.is_empty() {
            detail.push(format!("{name} not accepted at r={skipped:?}"));
        }
    }
    verdict(2, ok, &detail.join(", "));
}

#[test]
fn c03_volume_monotone() {
    let run = disk_cubic_m1();
    let b = BoundingSet::unit_ball(2);
    let n = 1_000_000;
    let image = certify::estimate_volume_of(in_disk_cubic_image, &b, n, SEED);
    let vols: Vec<_> = run
        .orders
        .iter()
        .map(|o| certify::estimate_volume(o.certificate.as_ref().expect("certificate"), &b, n, SEED))
        .collect();
    let mut ok = vols.len() == 4;
    for w in vols.windows(2) {
        let sigma = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        ok &= w[1].estimate <= w[0].estimate + 3.0 * sigma;
    }
    for v in &vols {
        let sigma = (v.std_error.powi(2) + image.std_error.powi(2)).sqrt();
        ok &= v.estimate >= image.estimate - 3.0 * sigma;
    }
    let list: Vec<String> = vols.iter().map(|v| format!("{:.4}", v.estimate)).collect();
    verdict(3, ok, &format!("volumes r=1..4 [{}], image {:.4} +- {:.4}", list.join(", "), image.estimate, image.std_error));
}

#[test]
fn c04_method_equivalence() {
    let mut ok = true;
    let mut detail = Vec::new();
    for pair in matched_method2() {
        let d = rel_diff(pair.direct.objective, pair.lifted.objective);
        let gap = pair.direct.poly.max_coeff_gap(&pair.lifted.poly);
        ok &= d <= 1e-4 && gap <= 1e-3;
        detail.push(format!(
            "r={} {:.6}/{:.6} rel {d:.1e} coeff {gap:.1e}",
            pair.r, pair.direct.objective, pair.lifted.objective
        ));
    }
    verdict(4, ok, &detail.join(", "));
}

fn random_sos(rng: &mut impl FnMut() -> f64, nvars: usize, half: usize) -> Polynomial {
    let sig = Signature::x_only(nvars);
    let basis = polyimage::poly::enumerate_multi_indices(nvars, half).unwrap();
    let mut total = Polynomial::zero(sig);
    for _ in 0..basis.len() {
        let terms = basis.iter().map(|a| (a.clone(), rng()));
        let p = Polynomial::from_terms(sig, terms);
        total = &total + &(&p * &p);
    }
    total
}

#[test]
fn c05_sos_reconstruction() {
    let mut ok = true;
    let mut worst_cert = 0.0f64;
    let runs = [disk_cubic_m1(), two_holes_projection(), min_abs_lift()];
    for cert in runs.iter().flat_map(|r| r.orders.iter()).filter_map(|o| o.certificate.as_ref()) {
        worst_cert = worst_cert.max(cert.residual);
    }
    for pair in matched_method2() {
        worst_cert = worst_cert.max(pair.direct.residual).max(pair.lifted.residual);
    }
    ok &= worst_cert <= 1e-6;

    let free = |n| polyimage::model::SemialgebraicSet::free(Signature::x_only(n));
    let x = Polynomial::var(Signature::x_only(1), 0);
    let square = (&x + &Polynomial::constant(Signature::x_only(1), 1.0)).pow(2);
    let solve = |target: &Polynomial, n: usize, r: usize| {
        let rel = relax::sos_membership_rows(target, &free(n), r).unwrap();
        let res = sdp::solve(&rel.program, 1e-9, sdp::DEFAULT_MAX_ITER).unwrap();
        let resid = res.status.is_usable().then(|| rel.layout.memberships[0].reconstruction_residual(&res.x.free, &res.x.blocks));
        (res.status, resid)
    };
    let (st, resid) = solve(&square, 1, 1);
    ok &= st.is_usable() && resid.is_some_and(|r| r <= 1e-8);
    let (st, _) = solve(&x, 1, 1);
    ok &= st == sdp::Status::Infeasible;

    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut rng = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let mut worst_random = 0.0f64;
    let mut feasible = 0;
    for k in 0..20 {
        let nvars = 1 + k % 3;
        let half = 1 + (k / 3) % 3;
        let target = random_sos(&mut rng, nvars, half);
        let (st, resid) = solve(&target, nvars, half);
        if st.is_usable() {
            feasible += 1;
        }
        worst_random = worst_random.max(resid.unwrap_or(f64::INFINITY));
    }
    ok &= feasible == 20 && worst_random <= 1e-7;
    verdict(5, ok, &format!("certificate residual <= {worst_cert:.1e}, random suite {feasible}/20 feasible, residual <= {worst_random:.1e}"));
}

fn polar_moment(a: u32, b: u32) -> f64 {
    let k = 20_000;
    let h = 2.0 * std::f64::consts::PI / k as f64;
    let angular: f64 = (0..k)
        .map(|i| {
            let t = (i as f64 + 0.5) * h;
            t.cos().powi(a as i32) * t.sin().powi(b as i32)
        })
        .sum::<f64>()
        * h;
    angular / (a + b + 2) as f64
}

#[test]
fn c06_lebesgue_moments() {
    let mut ok = true;
    for m in 1..=3 {
        let b = BoundingSet::box_(vec![0.0; m], vec![1.0; m]).unwrap();
        for (beta, v) in b.lebesgue_moments(8).iter() {
            let exact: f64 = beta.exponents().iter().map(|&k| 1.0 / (k as f64 + 1.0)).product();
            ok &= v == exact;
        }
    }
    let mut worst = 0.0f64;
    for (beta, v) in BoundingSet::unit_ball(2).lebesgue_moments(8).iter() {
        let e = beta.exponents();
        let oracle = polar_moment(e[0], e[1]);
        if oracle.abs() < 1e-12 {
            ok &= v.abs() < 1e-12;
        } else {
            worst = worst.max(rel_diff(v, oracle));
        }
    }
    ok &= worst <= 1e-9;
    verdict(6, ok, &format!("unit box exact, disk max relative error {worst:.1e}"));
}

#[test]
fn c07_sparsity() {
    let positive: [&[&[usize]]; 3] = [&[&[0, 1], &[1, 2]], &[&[0, 1, 2], &[1, 2, 3], &[2, 3, 4]], &[&[0, 1], &[1, 2], &[1, 3]]];
    let negative: [(&[&[usize]], usize); 3] = [
        (&[&[0, 1], &[2, 3], &[0, 2]], 2),
        (&[&[0, 1], &[1, 2], &[0, 2]], 2),
        (&[&[0, 1, 2], &[2, 3], &[3, 4], &[0, 4]], 3),
    ];
    let owned = |c: &[&[usize]]| c.iter().map(|v| v.to_vec()).collect::<Vec<_>>();
    let dim = |c: &[&[usize]]| c.iter().flat_map(|v| v.iter()).max().unwrap() + 1;
    let mut ok = positive.iter().all(|c| check_rip(&owned(c), dim(c)).unwrap() == Rip::Holds);
    ok &= negative.iter().all(|(c, j)| check_rip(&owned(c), dim(c)).unwrap() == Rip::FailsAt(*j));

    let spec = fixtures::load("chain_sparse");
    let cliques = spec.cliques.clone().unwrap();
    let sparse_p = prepare(&spec, true).unwrap();
    let dense_p = prepare(&spec, false).unwrap();
    let sparse = relax::build_method1_sparse(&sparse_p, &cliques, Method1Orders::decoupled(3, &sparse_p).unwrap()).unwrap();
    let dense = relax::build_method1_primal(&dense_p, Method1Orders::decoupled(3, &dense_p).unwrap()).unwrap();
    let (nv_s, nv_d) = (sparse.program.num_scalar_variables(), dense.program.num_scalar_variables());
    let orders = Orders { r: 3, module: 3 };
    let solve = |rel| solve_certified(rel, orders, Method::Method1, sdp::DEFAULT_TOL, sdp::DEFAULT_MAX_ITER).unwrap();
    let (s, d) = (solve(&sparse), solve(&dense));
    ok &= nv_s < nv_d && s.objective >= d.objective - 1e-5;
    let cert = s.certificate.expect("sparse certificate");
    let samples = certify::sample_problem(&spec.to_problem().unwrap(), 10_000, SEED).unwrap();
    let rep = certify::containment_check(&cert, &sparse_p.f, &samples.points, 1e-6);
    ok &= cert.residual <= 1e-6 && rep.violations == 0;
    verdict(
        7,
        ok,
        &format!(
            "rip suite, scalars {nv_s} < {nv_d}, value {:.7} vs dense {:.7}, {} violations",
            s.objective, d.objective, rep.violations
        ),
    );
}

fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128) as usize
}

#[test]
fn c08_size_bounds() {
    let mut ok = true;
    let mut count = 0;
    let mut check = |name: &str, method: Method, r: usize, p: &ImageProblem, built: Result<(relax::Relaxation, Orders), relax::RelaxError>| {
        let (rel, orders) = match built {
            Ok(b) => b,
            Err(e) => {
                ok = false;
                eprintln!("{name} {method} r={r}: {e}");
                return;
            }
        };
        let (n, m, d) = (p.n(), p.m(), p.f.degree());
        let k = orders.module;
        let (vars, side) = match method {
            Method::Method1 => (binom(n + m + 2 * k, 2 * k), binom(n + m + k, k)),
            Method::Method2 => (binom(n + 2 * r * d, 2 * r * d) + 2 * binom(m + 2 * r, 2 * r), binom(n + r * d, r * d).max(binom(m + r, r))),
            Method::Method2Lift => (binom(n + m + 2 * k, 2 * k) + binom(m + 2 * r, 2 * r), binom(n + m + k, k)),
            Method::Projection => (binom(n + 2 * r, 2 * r) + binom(m + 2 * r, 2 * r), binom(n + r, r).max(binom(m + r, r))),
        };
        let prog = &rel.program;
        let fits = prog.num_rows() <= vars && prog.num_free <= vars && prog.max_side() <= side;
        if !fits {
            eprintln!("{name} {method} r={r}: rows {} free {} side {} vs {vars} {side}", prog.num_rows(), prog.num_free, prog.max_side());
        }
        ok &= fits;
        count += 1;
    };
    let plan: [(&str, Method, &[usize]); 9] = [
        ("disk_cubic", Method::Method1, &[1, 3, 4]),
        ("disk_cubic", Method::Method2, &[1, 2, 3]),
        ("disk_cubic", Method::Method2Lift, &[1, 2]),
        ("two_holes", Method::Projection, &[2, 3, 4]),
        ("two_holes", Method::Method1, &[2]),
        ("disk_min_abs", Method::Method2Lift, &[1, 2]),
        ("constant_map", Method::Method1, &[1, 2]),
        ("flat_disk", Method::Projection, &[1, 2, 3]),
        ("bicriteria", Method::Method1, &[2]),
    ];
    for (name, method, orders) in plan {
        let spec = fixtures::load(name);
        let p = prepare(&spec, false).unwrap();
        for &r in orders {
            let cfg = RunConfig { method, ..RunConfig::default() };
            check(name, method, r, &p, hierarchy::build_order(&p, &spec, &cfg, r));
        }
    }
    let spec = fixtures::load("chain_sparse");
    let p = prepare(&spec, true).unwrap();
    let cfg = RunConfig { sparse: true, ..RunConfig::default() };
    check("chain_sparse", Method::Method1, 3, &p, hierarchy::build_order(&p, &spec, &cfg, 3));
    verdict(8, ok, &format!("{count} programs within their size bounds"));
}

// Entries of a program as `(matrix, block, i, j) -> value` in SDPA numbering,
// with free variables split into two nonnegative diagonal parts.
fn sdpa_entries(prog: &ConicProgram) -> BTreeMap<(usize, usize, usize, usize), f64> {
    let mut out = BTreeMap::new();
    let nf = prog.num_free;
    let fb = prog.blocks.len() + 1;
    let mut add = |k, v: f64| *out.entry(k).or_insert(0.0) += v;
    for e in &prog.c_psd {
        add((0, e.block + 1, e.i + 1, e.j + 1), -e.v);
    }
    for (k, c) in prog.c_free.iter().enumerate() {
        add((0, fb, k + 1, k + 1), -c);
        add((0, fb, nf + k + 1, nf + k + 1), *c);
    }
    for (r, row) in prog.rows.iter().enumerate() {
        for e in &row.psd {
            add((r + 1, e.block + 1, e.i + 1, e.j + 1), e.v);
        }
        for &(k, v) in &row.free {
            add((r + 1, fb, k + 1, k + 1), v);
            add((r + 1, fb, nf + k + 1, nf + k + 1), -v);
        }
    }
    out.retain(|_, v| *v != 0.0);
    out
}

fn parse_sdpa_body(text: &str) -> (Vec<f64>, BTreeMap<(usize, usize, usize, usize), f64>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('"') && !l.trim().is_empty()).skip(3);
    let rhs = lines.next().unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    let entries = lines
        .map(|l| {
            let t: Vec<&str> = l.split_whitespace().collect();
            let idx = |k: usize| t[k].parse::<usize>().unwrap();
            ((idx(0), idx(1), idx(2), idx(3)), t[4].parse::<f64>().unwrap())
        })
        .collect();
    (rhs, entries)
}

#[test]
fn c09_solver_contract() {
    let mut ok = true;
    let mut detail = Vec::new();
    let programs: Vec<(&str, ConicProgram)> = {
        let build = |name: &str, method: Method, r: usize, sparse: bool| {
            let spec = fixtures::load(name);
            let p = prepare(&spec, sparse).unwrap();
            let cfg = RunConfig { method, sparse, ..RunConfig::default() };
            hierarchy::build_order(&p, &spec, &cfg, r).unwrap().0.program
        };
        let bic = fixtures::load("bicriteria").to_problem().unwrap().archimedean(None);
        vec![
            ("disk_cubic", build("disk_cubic", Method::Method1, 1, false)),
            ("two_holes", build("two_holes", Method::Projection, 2, false)),
            ("disk_min_abs", build("disk_min_abs", Method::Method2Lift, 1, false)),
            ("constant_map", build("constant_map", Method::Method1, 1, false)),
            ("flat_disk", build("flat_disk", Method::Projection, 1, false)),
            ("chain_sparse", build("chain_sparse", Method::Method1, 3, true)),
            ("bicriteria", relax::build_lower_bound(&bic.f.components()[1], &bic.s, 2).unwrap().program),
        ]
    };
    for (name, prog) in &programs {
        let res = sdp::solve(prog, sdp::DEFAULT_TOL, sdp::DEFAULT_MAX_ITER).unwrap();
        let (pobj, dobj) = (res.primal_objective, res.dual_objective);
        let weak = dobj <= pobj + 1e-6 * (1.0 + pobj.abs() + dobj.abs());
        ok &= res.status.is_usable() && weak;
        if !weak || !res.status.is_usable() {
            detail.push(format!("{name}: {:?} primal {pobj} dual {dobj}", res.status));
        }

        let text = sdp::sdpa_string(prog).unwrap();
        let back = sdp::import_sdpa(&text).unwrap();
        let (rhs, entries) = parse_sdpa_body(&text);
        let same = sdp::sdpa_string(&back).unwrap() == text && rhs == prog.rhs && entries == sdpa_entries(prog);
        if !same {
            detail.push(format!("{name}: sdpa round trip differs"));
        }
        ok &= same;
    }

    let spec = fixtures::load("disk_cubic");
    let cfg = RunConfig { method: Method::Method1, order_min: 1, order_max: 2, force_low_order: true, grid: Some((24, 24)), samples: 5_000, seed: SEED, ..RunConfig::default() };
    let texts = |run: &RunReport| {
        let mut all = run.summary();
        for o in &run.orders {
            all.push_str(&o.report.to_text());
            all.push_str(o.grid_csv.as_deref().unwrap_or(""));
            all.push_str(&o.certificate.as_ref().map(Certificate::to_text).unwrap_or_default());
        }
        all
    };
    let a = texts(&run_hierarchy(&spec, &cfg).unwrap());
    let b = texts(&run_hierarchy(&spec, &cfg).unwrap());
    ok &= a == b;
    detail.push(format!("{} programs weakly dual and round-tripped, reports {}", programs.len(), if a == b { "identical" } else { "differ" }));
    verdict(9, ok, &detail.join(", "));
}

#[test]
fn c10_pareto_scaling() {
    let spec = fixtures::load("bicriteria");
    let (scaled, scaling) = pareto_scale(&spec, 2, SEED).unwrap();
    let p = spec.to_problem().unwrap();
    let samples = certify::sample_problem(&p, 10_000, SEED + 7).unwrap();
    let worst = samples
        .points
        .iter()
        .map(|x| scaled.map.iter().map(|g| g.eval_unchecked(x).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let ok = samples.points.len() == 10_000 && worst <= 1.0 + 1e-6;
    verdict(
        10,
        ok,
        &format!(
            "largest scaled norm {worst:.6} (lower {:?}, upper {:?}, shrink {:.4})",
            scaling.lower, scaling.upper, scaling.shrink
        ),
    );
}
