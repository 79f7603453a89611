use thiserror::Error;

use crate::jet::FieldId;
use crate::spectral::Axis;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {left:?} vs {right:?}")]
    GridMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid grid {nx}x{ny}: sizes must be even and at least 4")]
    InvalidGrid { nx: usize, ny: usize },

    #[error("jet order cap {cap} exceeded in monomial `{monomial}`")]
    OrderCapExceeded { monomial: String, cap: u32 },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("field {0:?} is not assigned")]
    Unassigned(FieldId),

    #[error(
        "solvability violated for antiderivative along {axis:?}: mode ({}, {}) carries |c| = {magnitude:e}",
        mode.0, mode.1
    )]
    Solvability {
        axis: Axis,
        mode: (i64, i64),
        magnitude: f64,
    },

    #[error("hierarchy obstruction: resonant modes with energy {modes:?}")]
    HierarchyObstruction { modes: Vec<(i64, i64)> },

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("quadrature did not converge: {nodes} vs {doubled} nodes disagree by {disagreement:e}")]
    Accuracy {
        nodes: usize,
        doubled: usize,
        disagreement: f64,
    },

    #[error("coadjoint action matches neither sign of the bracket pairing (defects {plus:e}, {minus:e})")]
    StructuralSign { plus: f64, minus: f64 },

    #[error("gradient program disagrees with finite differences (relative error {0:e})")]
    GradientMismatch(f64),

    #[error("non-finite field detected; last good t = {last_good_t}")]
    BlowUp { last_good_t: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
