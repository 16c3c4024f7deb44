use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),
    #[error("direction degenerates after projection onto the plane")]
    DegenerateDirection,
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("pixel ({x}, {y}) is outside the {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("no valid depth at pixel ({x}, {y})")]
    InvalidDepth { x: f64, y: f64 },
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("too few points: need more than {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("insufficient neighbors for {count} point(s)")]
    InsufficientNeighbors { count: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point cloud has no normals")]
    MissingNormals,
    #[error("mask has no usable connected component")]
    NoComponent,
    #[error("region is not quadrilateral-like (area grew by {growth:.1}%)")]
    NotQuadrilateralLike { growth: f64 },
    #[error("no segment matches the expected ROI dimensions")]
    NoRoiMatch,

    #[error("registration failed: best score {score:.3} below {min_score:.3}")]
    RegistrationFailed { score: f64, min_score: f64 },
    #[error("no correspondences within {0} m")]
    NoCorrespondences(f64),

    #[error("invalid cuboid spec: {0}")]
    InvalidSpec(String),
    #[error("segment is degenerate or parallel to the face normal")]
    DegenerateSegment,

    #[error("face is out of view ({visible} of {expected:.0} expected pixels visible)")]
    FaceOutOfView { visible: usize, expected: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for malformed input files or configuration, as opposed to a
    /// failure inside one of the processing stages.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Config(_))
    }
}
