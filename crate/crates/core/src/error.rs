use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("pixel buffer length {actual} does not match {width}x{height}")]
    BufferSize {
        width: usize,
        height: usize,
        actual: usize,
    },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("rectangle ({x}, {y}, {w}x{h}) does not fit inside {width}x{height}")]
    OutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("template {template_w}x{template_h} is larger than source {source_w}x{source_h}")]
    TemplateTooLarge {
        template_w: usize,
        template_h: usize,
        source_w: usize,
        source_h: usize,
    },
    #[error("template is uniform; NCC is undefined")]
    UniformTemplate,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("segments do not partition the {width}x{height} template: {reason}")]
    InvalidPartition {
        width: usize,
        height: usize,
        reason: String,
    },
    #[error("FFT preparation is for a {expected_w}x{expected_h} plane, source needs {actual_w}x{actual_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },
    #[error("image encoding failed: {0}")]
    Encode(String),
    #[error("report serialization failed: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, MatchError>;
