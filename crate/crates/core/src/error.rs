use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariance model: {0}")]
    InvalidModel(String),

    #[error("kernel index {0} out of range (expected 0, 1 or 2)")]
    KernelIndex(usize),

    #[error("negative measure: {name} = {value}")]
    NegativeMeasure { name: &'static str, value: f64 },

    #[error("dimension {0} out of range (expected 1 or 2)")]
    Dimension(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("circulant embedding of model {model} not positive semidefinite at pad factor {pad}: min eigenvalue {min_eig:.3e}")]
    EmbeddingNotPsd {
        model: String,
        pad: usize,
        min_eig: f64,
    },

    #[error("point ({0}, {1}) outside the evaluator's bounding box")]
    OutOfBox(f64, f64),

    #[error("quadrature failed to converge: achieved relative error {achieved:.3e} (requested {requested:.3e})")]
    QuadratureNoConvergence { achieved: f64, requested: f64 },

    #[error("invalid deformation: {0}")]
    InvalidDeformation(String),

    #[error("non-positive Jacobian determinant {det:.6e} at ({x}, {y})")]
    NonPositiveJacobian { det: f64, x: f64, y: f64 },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("excursion input contains NaN")]
    NanInput,

    #[error("mask too small: {rows}x{cols} (need at least 3x3)")]
    MaskTooSmall { rows: usize, cols: usize },

    #[error("level u = 0 makes the 2-d modified Euler characteristic formula degenerate")]
    DegenerateLevel,

    #[error("identification failed: {0}")]
    Identification(String),

    #[error("table entry missing for {0}")]
    MissingEntry(String),

    #[error("estimator input under-resolved: {0}")]
    UnderResolved(String),

    #[error("regression failed: {0}")]
    Regression(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
