//! Example problems shipped with the crate.

use crate::problem::{parse_problem, ProblemSpec};

/// `(name, source)` of every bundled problem.
pub const ALL: [(&str, &str); 7] = [
    ("disk_cubic", include_str!("../fixtures/disk_cubic.poly")),
    ("two_holes", include_str!("../fixtures/two_holes.poly")),
    ("bicriteria", include_str!("../fixtures/bicriteria.poly")),
    ("disk_min_abs", include_str!("../fixtures/disk_min_abs.poly")),
    ("constant_map", include_str!("../fixtures/constant_map.poly")),
    ("flat_disk", include_str!("../fixtures/flat_disk.poly")),
    ("chain_sparse", include_str!("../fixtures/chain_sparse.poly")),
];

pub fn source(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parsed fixture; panics on an unknown name since the set is fixed.
pub fn load(name: &str) -> ProblemSpec {
    let text = source(name).unwrap_or_else(|| panic!("no fixture named {name}"));
    parse_problem(text).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}
