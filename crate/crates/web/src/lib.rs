//! Browser bindings: load a bundled problem, scatter its image and solve one
//! relaxation order onto a grid.

use polyimage::certify;
use polyimage::fixtures;
use polyimage::hierarchy::{self, RunConfig};
use polyimage::model::Method;
use polyimage::problem::parse_problem;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Names of the bundled problems as a JSON array.
#[wasm_bindgen]
pub fn fixture_names() -> String {
    json!(fixtures::ALL.iter().map(|(n, _)| *n).collect::<Vec<_>>()).to_string()
}

#[wasm_bindgen]
pub fn fixture_source(name: &str) -> Result<String, JsError> {
    fixtures::source(name).map(str::to_owned).ok_or_else(|| JsError::new(&format!("no fixture named {name}")))
}

#[wasm_bindgen]
pub fn sample_image(problem: &str, count: usize, seed: u64) -> Result<String, JsError> {
    sample_image_json(problem, count, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn solve_order(problem: &str, method: &str, order: usize, width: usize, height: usize) -> Result<String, JsError> {
    solve_order_json(problem, method, order, width, height).map_err(|e| JsError::new(&e))
}

/// `{"points": [[y1, y2], ...], "acceptance": rate, "box": [lo, hi]}` for
/// `count` sampled points of `f(S)`.
pub fn sample_image_json(problem: &str, count: usize, seed: u64) -> Result<String, String> {
    let spec = parse_problem(problem).map_err(|e| e.to_string())?;
    let p = spec.to_problem().map_err(|e| e.to_string())?;
    if p.m() != 2 {
        return Err(format!("only planar images can be drawn (m = {})", p.m()));
    }
    let samples = certify::sample_problem(&p, count, seed).map_err(|e| e.to_string())?;
    let points: Vec<Vec<f64>> = samples.points.iter().map(|x| p.f.eval(x)).collect();
    Ok(json!({
        "points": points,
        "acceptance": samples.acceptance_rate(),
        "box": p.b.bounding_box(),
    })
    .to_string())
}

/// Solves a single order and evaluates the certificate on a
/// `width x height` grid over the bounding box of `B`.
pub fn solve_order_json(problem: &str, method: &str, order: usize, width: usize, height: usize) -> Result<String, String> {
    let spec = parse_problem(problem).map_err(|e| e.to_string())?;
    let method: Method = method.parse()?;
    let cfg = RunConfig {
        method,
        order_min: order,
        order_max: order,
        samples: 2_000,
        force_low_order: true,
        ..RunConfig::default()
    };
    let run = hierarchy::run_hierarchy(&spec, &cfg).map_err(|e| e.to_string())?;
    let outcome = run.orders.into_iter().next().ok_or("no order was run")?;
    let report = outcome.report;
    if let Some(e) = report.error {
        return Err(e);
    }
    let cert = outcome.certificate.ok_or_else(|| format!("no certificate (status {:?})", report.status.map(|s| s.name())))?;
    let b = spec.bounding_set().map_err(|e| e.to_string())?;
    let rows = certify::grid_evaluate(&cert, &b, width, height).map_err(|e| e.to_string())?;
    let (lo, hi) = b.bounding_box();
    Ok(json!({
        "width": width,
        "height": height,
        "lo": lo,
        "hi": hi,
        "values": rows.iter().map(|r| r.value).collect::<Vec<_>>(),
        "inside": rows.iter().map(|r| r.inside).collect::<Vec<_>>(),
        "threshold": cert.threshold(),
        "accepted": report.accepted,
        "objective": cert.objective,
        "residual": cert.residual,
        "violations": report.containment.map(|c| c.violations),
        "volume": report.volume.map(|v| v.estimate),
        "certificate": cert.to_text(),
    })
    .to_string())
}
