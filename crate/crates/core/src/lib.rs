//! Certified polynomial outer approximations of images of semi-algebraic sets.

pub mod certify;
pub mod fixtures;
pub mod hierarchy;
pub mod model;
pub mod pareto;
pub mod poly;
pub mod problem;
pub mod relax;
pub mod sdp;
