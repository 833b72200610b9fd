use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(format!("{name}.poly"))
}

fn polyimage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyimage")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn solve_disk(dir: &Path, extra: &[&str]) -> Output {
    let problem = fixture("disk_cubic");
    let mut args = vec!["solve", problem.to_str().unwrap(), "--force-low-order", "--order-min", "1", "--order-max", "2"];
    args.extend_from_slice(&["--samples", "2000", "--grid", "6x4", "--out", dir.to_str().unwrap()]);
    args.extend_from_slice(extra);
    polyimage(&args)
}

#[test]
fn solve_writes_certificates_reports_and_grids() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_disk(dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.contains("method = method1"), "{summary}");
    for r in 1..=2 {
        for ext in ["cert", "report.txt", "grid.csv"] {
            assert!(dir.path().join(format!("method1-r{r}.{ext}")).exists(), "missing r{r} {ext}");
        }
        let grid = std::fs::read_to_string(dir.path().join(format!("method1-r{r}.grid.csv"))).unwrap();
        assert_eq!(grid.lines().count(), 1 + 6 * 4);
    }
    assert!(dir.path().join("method1.summary.txt").exists());
}

#[test]
fn stored_certificate_verifies_and_grids() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_disk(dir.path(), &[])), 0);
    let problem = fixture("disk_cubic");
    let cert = dir.path().join("method1-r2.cert");
    let out = polyimage(&["verify", problem.to_str().unwrap(), cert.to_str().unwrap(), "--samples", "3000", "--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("violations = 0"), "{text}");

    let out = polyimage(&["grid", problem.to_str().unwrap(), cert.to_str().unwrap(), "--grid", "3x2", "--window", "-0.5,-0.5,0.5,0.5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("y1,y2,value,inside"));
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().nth(1).unwrap().starts_with("-5e-1,-5e-1,"));
}

#[test]
fn rejecting_certificate_is_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("empty.cert");
    std::fs::write(&cert, "method = method1\norder = 1\nmodule = 3\nstatus = optimal\nm = 2\nobjective = 1e0\nresidual = 0e0\nq (0,0) = -1e0\n").unwrap();
    let problem = fixture("disk_cubic");
    let out = polyimage(&["verify", problem.to_str().unwrap(), cert.to_str().unwrap(), "--samples", "500"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn runs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_disk(a.path(), &[])), 0);
    assert_eq!(code(&solve_disk(b.path(), &[])), 0);
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for name in names {
        let x = std::fs::read(a.path().join(&name)).unwrap();
        let y = std::fs::read(b.path().join(&name)).unwrap();
        assert!(x == y, "{name:?} differs");
    }
}

#[test]
fn existing_outputs_need_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_disk(dir.path(), &[])), 0);
    let out = solve_disk(dir.path(), &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--overwrite"));
    assert_eq!(code(&solve_disk(dir.path(), &["--overwrite"])), 0);
}

#[test]
fn build_exports_one_program_per_order() {
    let dir = tempfile::tempdir().unwrap();
    let problem = fixture("disk_cubic");
    let out = polyimage(&["build", problem.to_str().unwrap(), "--method", "method2", "--order-max", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for r in 1..=3 {
        let sdpa = std::fs::read_to_string(dir.path().join(format!("method2-r{r}.dat-s"))).unwrap();
        assert!(!sdpa.trim().is_empty());
        assert!(!dir.path().join(format!("method2-r{r}.cert")).exists());
    }
}

#[test]
fn solver_export_only_matches_build() {
    let dir = tempfile::tempdir().unwrap();
    let problem = fixture("two_holes");
    let out = polyimage(&[
        "solve",
        problem.to_str().unwrap(),
        "--method",
        "projection",
        "--order-min",
        "2",
        "--order-max",
        "3",
        "--solver",
        "export-only",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("projection-r2.dat-s").exists());
    assert!(dir.path().join("projection-r3.dat-s").exists());
}

#[test]
fn parse_errors_report_position_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.poly");
    std::fs::write(&bad, "[vars]\nx = 2\n[S]\nx1 ** x2 >= 0\n[B]\nball radius = 1\n[map]\nx1\nx2\n").unwrap();
    let out = polyimage(&["build", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 4, column 5"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_2() {
    let problem = fixture("disk_cubic");
    assert_eq!(code(&polyimage(&["solve", problem.to_str().unwrap(), "--method", "method9"])), 2);
    assert_eq!(code(&polyimage(&["solve", problem.to_str().unwrap(), "--grid", "7"])), 2);
    // below the minimal Method 1 order without --force-low-order
    let dir = tempfile::tempdir().unwrap();
    let out = polyimage(&["build", problem.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("force-low-order"));
}

#[test]
fn solver_failure_on_every_order_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_disk(dir.path(), &["--max-iter", "2"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn pareto_scale_emits_a_problem_inside_the_unit_disk() {
    let dir = tempfile::tempdir().unwrap();
    let problem = fixture("bicriteria");
    let target = dir.path().join("scaled.poly");
    let out = polyimage(&["pareto-scale", problem.to_str().unwrap(), "--out", target.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&target).unwrap();
    let spec = polyimage::problem::parse_problem(&text).unwrap();
    assert!(!spec.pareto);
    let norm: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("# max_sample_norm = "))
        .and_then(|v| v.parse().ok())
        .unwrap();
    assert!(norm <= 1.0 + 1e-6);
}

#[test]
fn constant_map_cannot_be_pareto_scaled() {
    let problem = fixture("constant_map");
    let out = polyimage(&["pareto-scale", problem.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("degenerate"), "{}", stderr(&out));
}
