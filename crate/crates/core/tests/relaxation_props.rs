use polyimage::fixtures;
use polyimage::hierarchy::prepare;
use polyimage::model::{ball_polynomial, SemialgebraicSet};
use polyimage::poly::{Polynomial, Signature};
use polyimage::relax::{self, lower_bound_on_set, Relaxation};
use polyimage::sdp::{self, Status};

fn objective(rel: &Relaxation) -> f64 {
    let res = sdp::solve(&rel.program, sdp::DEFAULT_TOL, sdp::DEFAULT_MAX_ITER).unwrap();
    assert!(res.status.is_usable(), "{}: {:?}", rel.layout.label, res.status);
    res.objective()
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

#[test]
fn method2_sos_and_moment_programs_agree_and_decrease() {
    let p = prepare(&fixtures::load("disk_cubic"), false).unwrap();
    let mut values = Vec::new();
    for r in 1..=2 {
        let sos = objective(&relax::build_method2_sos(&p, r).unwrap());
        let moment = objective(&relax::build_method2_moment(&p, r).unwrap());
        assert!(rel_diff(sos, moment) <= 1e-5, "r={r}: {sos} vs {moment}");
        values.push(sos);
    }
    assert!(values[1] <= values[0] * (1.0 + 1e-5), "{values:?}");
}

#[test]
fn method1_primal_values_decrease_with_order() {
    let p = prepare(&fixtures::load("disk_cubic"), false).unwrap();
    let values: Vec<f64> = (1..=3)
        .map(|q| {
            let orders = relax::Method1Orders::decoupled(q, &p).unwrap();
            objective(&relax::build_method1_primal(&p, orders).unwrap())
        })
        .collect();
    for w in values.windows(2) {
        assert!(w[1] <= w[0] + 1e-5 * w[0].abs().max(1.0), "{values:?}");
    }
}

#[test]
fn lower_bounds_increase_with_order() {
    let sig = Signature::x_only(2);
    let disk = SemialgebraicSet::new(sig, vec![ball_polynomial(sig, 1.0)]).unwrap();
    let (x1, x2) = (Polynomial::var(sig, 0), Polynomial::var(sig, 1));
    // x1^3 - x1 x2^2 + x2 on the unit disk
    let f = &(&x1.pow(3) - &(&x1 * &x2.pow(2))) + &x2;
    let bounds: Vec<f64> = (2..=4)
        .map(|r| {
            let lb = lower_bound_on_set(&f, &disk, r, sdp::DEFAULT_TOL, sdp::DEFAULT_MAX_ITER).unwrap();
            assert!(lb.status.is_usable());
            lb.value
        })
        .collect();
    for w in bounds.windows(2) {
        assert!(w[1] >= w[0] - 1e-5 * w[0].abs().max(1.0), "{bounds:?}");
    }
    // brute force over the boundary and a polar grid gives an upper bound on the minimum
    let grid_min = (0..400)
        .flat_map(|i| (1..=20).map(move |k| (i, k)))
        .map(|(i, k)| {
            let (t, rho) = (i as f64 * std::f64::consts::TAU / 400.0, k as f64 / 20.0);
            f.eval_unchecked(&[rho * t.cos(), rho * t.sin()])
        })
        .fold(f64::INFINITY, f64::min);
    assert!(bounds[2] <= grid_min + 1e-6, "{bounds:?} vs {grid_min}");
}

#[test]
fn projection_and_lifted_builders_agree() {
    let p = prepare(&fixtures::load("two_holes"), false).unwrap();
    for r in 2..=3 {
        let proj = objective(&relax::build_projection(&p, r).unwrap());
        let lifted = objective(&relax::build_method2_lifted(&p, r).unwrap());
        assert!(rel_diff(proj, lifted) <= 1e-4, "r={r}: {proj} vs {lifted}");
    }
}

#[test]
fn solves_of_fixture_programs_are_feasible() {
    let p = prepare(&fixtures::load("disk_cubic"), false).unwrap();
    let orders = relax::Method1Orders::decoupled(2, &p).unwrap();
    for rel in [relax::build_method1_primal(&p, orders).unwrap(), relax::build_method1_dual(&p, orders).unwrap(), relax::build_method2_sos(&p, 1).unwrap()] {
        let res = sdp::solve(&rel.program, sdp::DEFAULT_TOL, sdp::DEFAULT_MAX_ITER).unwrap();
        assert_eq!(res.status, Status::Optimal, "{}", rel.layout.label);
        let feas = sdp::certify_result(&rel.program, &res).unwrap();
        assert!(feas.worst() <= 10.0 * sdp::DEFAULT_TOL * (1.0 + res.objective().abs()), "{}: {}", rel.layout.label, feas.worst());
    }
}
