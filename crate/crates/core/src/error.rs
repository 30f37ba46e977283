use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: expected a grayscale image, found {found}")]
    NotGrayscale { path: PathBuf, found: String },
    #[error("dimension mismatch: expected {expected_w}x{expected_h}, found {found_w}x{found_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("image contains no rows above the black threshold")]
    AllBlack,
    #[error("inconsistent crop record: {0}")]
    InvalidCrop(String),
    #[error("network spec error: {0}")]
    NetworkSpec(String),
    #[error("weight count mismatch: network demands {expected} floats, blob holds {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid probability map: {0}")]
    InvalidMap(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("column {col} lies outside the boundary span [{start}, {end}]")]
    OutsideSpan { col: usize, start: usize, end: usize },
    #[error("perpendicular ray from column {col} leaves the segmented span before reaching the lower boundary")]
    RoiExceedsSegmentation { col: usize },
    #[error("thickness loci outside the segmented span: {0:?}")]
    LociOutsideSpan(Vec<i64>),
    #[error("fovea column {fovea_col} lies outside an image of width {width}")]
    FoveaOutsideImage { fovea_col: i64, width: usize },
    #[error("fovea location unknown")]
    MissingFovea,
    #[error("statistics: {0}")]
    Stats(String),
    #[error("invalid phantom spec: {0}")]
    InvalidPhantom(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
