use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("triangle {triangle} is degenerate (area {area:e} below 1e-12)")]
    DegenerateTriangle { triangle: usize, area: f64 },

    #[error("triangle {triangle} references vertex {index} but the mesh has {n} vertices")]
    IndexOutOfRange { triangle: usize, index: usize, n: usize },

    #[error("mesh has no symmetry map")]
    MissingSymmetryMap,

    #[error("invalid symmetry map: {0}")]
    InvalidSymmetryMap(String),

    #[error("dimension mismatch: {0}")]
    MismatchedDimensions(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("degenerate camera calibration configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("reference view {0} owns no vertices")]
    NoReferenceCoverage(usize),

    #[error("spectral supports do not overlap")]
    EmptyOverlap,

    #[error("invalid spectral data: {0}")]
    InvalidSpectrum(String),

    #[error("channel {channel} has near-zero response {response:e}")]
    ZeroChannelResponse { channel: usize, response: f64 },

    #[error("spectral sensitivity has rank below 3")]
    RankDeficientSensitivity,

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("value outside the function domain: {0}")]
    DomainError(String),

    #[error("need at least {required} samples, got {got}")]
    InsufficientSamples { required: usize, got: usize },

    #[error("requested {d} components but at most {max} are available")]
    DTooLarge { d: usize, max: usize },

    #[error("least-squares fit is underdetermined: {rows} observed rows for {d} coefficients")]
    LeastSquaresUnderdetermined { rows: usize, d: usize },

    #[error("every vertex is masked")]
    AllMasked,

    #[error("diffuse and specular sample lists are misaligned: {0}")]
    MisalignedSamples(String),

    #[error("region is empty")]
    EmptyRegion,

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid format: {0}")]
    Format(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
