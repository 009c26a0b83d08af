use thiserror::Error;

/// Errors surfaced by the fusion library.
#[derive(Debug, Error)]
pub enum Error {
    /// Image construction with unusable geometry (minimum supported size is 3x3).
    #[error("invalid image dimensions {width}x{height} (minimum 3x3, data length must be width*height)")]
    InvalidDimensions { width: usize, height: usize },

    /// Two images that must be co-registered disagree in size.
    #[error("{stage}: dimension mismatch, expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        stage: &'static str,
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    /// An operation that needs at least one element received none.
    #[error("{0}: empty input")]
    EmptyInput(&'static str),

    /// Non-finite pixel data where finite values are required.
    #[error("{0}: non-finite pixel values")]
    NonFinite(&'static str),

    /// A numeric parameter outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Numeric failure inside a solver or transform.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn mismatch(stage: &'static str, expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            stage,
            expected_w: expected.0,
            expected_h: expected.1,
            got_w: got.0,
            got_h: got.1,
        }
    }
}
