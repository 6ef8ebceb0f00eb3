use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("gmsh parse error (line {line}): {message}")]
    GmshParse { line: usize, message: String },

    #[error("unsupported gmsh element type {0}")]
    UnsupportedElementType(u32),

    #[error("binary MSH files are not supported")]
    BinaryMsh,

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate element {element}: |det B_e| = {det:e}")]
    DegenerateElement { element: usize, det: f64 },

    #[error("unsupported quadrature degree {requested} (max {max})")]
    UnsupportedDegree { requested: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("plan was built for a different mesh")]
    MeshMismatch,

    #[error("assembly target {0} is not part of this plan")]
    MissingTarget(&'static str),

    #[error("state-dependent coefficient requires a state vector")]
    MissingState,

    #[error("explicit tensor requested for n = {n} (limit {limit})")]
    TensorTooLarge { n: usize, limit: usize },

    #[error("point ({x}, {y}) lies outside the mesh")]
    PointOutside { x: f64, y: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("newton failed at step {step} (t = {time}): {reason}")]
    NewtonFailed {
        step: usize,
        time: f64,
        reason: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
