use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by mesh construction, assembly, solution and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("element index {index} out of range 1..={count}")]
    ElementIndex { index: usize, count: usize },

    #[error("basis function index {index} out of range 1..={dim}")]
    BasisIndex { index: usize, dim: usize },

    #[error("coefficient must be positive, got f({x}) = {value}")]
    NonPositiveCoefficient { x: f64, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is numerically singular: pivot {pivot_index} has modulus {modulus:e} (tolerance {tolerance:e})")]
    Singular {
        pivot_index: usize,
        modulus: f64,
        tolerance: f64,
    },

    #[error("point x = {x} lies outside the domain [{a}, {b}]")]
    OutsideDomain { x: f64, a: f64, b: f64 },

    #[error("reference file {path}: {reason}")]
    Reference { path: PathBuf, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
