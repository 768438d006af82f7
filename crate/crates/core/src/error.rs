use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Reasons a VVOL byte stream is rejected.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("bad magic: expected \"VVOL1\\0\", found {0:?}")]
    BadMagic(Vec<u8>),
    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("header/dims mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("region out of bounds on {axis} axis: origin {origin} + size {size} > extent {extent}")]
    Bounds {
        axis: char,
        origin: usize,
        size: usize,
        extent: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("VVOL parse error: {0}")]
    Parse(#[from] ParseError),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("skeleton is not thin: solid 2x2x2 block at {0:?}")]
    Thinness([usize; 3]),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("node {node} is not a bifurcation (degree {degree})")]
    NotABifurcation { node: usize, degree: usize },

    #[error("path too short for spline fitting: {0} points (need at least 4)")]
    TooShort(usize),

    #[error("degenerate mixture fit: {0}")]
    DegenerateFit(String),

    #[error("insufficient background: vessel mask covers {0:.1}% of the volume")]
    InsufficientBackground(f64),

    #[error("infeasible noise target: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("degenerate bisector: {0}")]
    DegenerateBisector(String),

    #[error("aneurysm placement error: {0}")]
    Placement(String),

    #[error("aneurysm deformation error: {0}")]
    Deformation(String),

    #[error("volume too small: {0}")]
    Size(String),

    #[error("unsatisfiable label demand: {}", .0.join(", "))]
    Planning(Vec<String>),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image export error: {0}")]
    Image(#[from] image::ImageError),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stage name when the error was produced inside the patch pipeline.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
