use std::path::PathBuf;

/// Errors raised by the toolkit. The `kind` string is stable and used by the
/// CLI for machine-readable error lines.
#[derive(Debug, thiserror::Error)]
pub enum GfdError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("empty split: class '{class}' has no files in '{split}'")]
    EmptySplit { class: String, split: String },
    #[error("duplicate label name: {0}")]
    DuplicateLabel(String),
    #[error("no real class in manifest")]
    NoRealClass,
    #[error("label index {index} out of range for {num_classes} classes")]
    LabelOutOfRange { index: usize, num_classes: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("image too small: {size}px is smaller than the {crop}px crop")]
    ImageTooSmall { size: usize, crop: usize },
    #[error("input size {size} is not divisible by 2^{depth}")]
    NotDivisible { size: usize, depth: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("batch contains no real image to use as a carrier")]
    NoCarrier,
    #[error("zero variance in co-occurrence marginals")]
    ZeroVariance,
    #[error("image {height}x{width} is smaller than offset ({dx}, {dy})")]
    OffsetTooLarge {
        height: usize,
        width: usize,
        dx: i64,
        dy: i64,
    },
    #[error("label taxonomy mismatch: {0}")]
    Taxonomy(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("image decode error: {0}")]
    Image(#[from] image::ImageError),
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("npy error: {0}")]
    Npy(String),
}

impl GfdError {
    pub fn kind(&self) -> &'static str {
        match self {
            GfdError::MissingFile(_) => "missing_file",
            GfdError::Manifest(_) => "manifest",
            GfdError::EmptySplit { .. } => "empty_split",
            GfdError::DuplicateLabel(_) => "duplicate_label",
            GfdError::NoRealClass => "no_real_class",
            GfdError::LabelOutOfRange { .. } => "label_out_of_range",
            GfdError::ShapeMismatch { .. } => "shape_mismatch",
            GfdError::ImageTooSmall { .. } => "image_too_small",
            GfdError::NotDivisible { .. } => "not_divisible",
            GfdError::Config(_) => "config",
            GfdError::NoCarrier => "no_carrier",
            GfdError::ZeroVariance => "zero_variance",
            GfdError::OffsetTooLarge { .. } => "offset_too_large",
            GfdError::Taxonomy(_) => "taxonomy",
            GfdError::Checkpoint(_) => "checkpoint",
            GfdError::Image(_) => "image",
            GfdError::Tensor(_) => "tensor",
            GfdError::Io(_) => "io",
            GfdError::Json(_) => "json",
            GfdError::Npy(_) => "npy",
        }
    }
}

pub type Result<T> = std::result::Result<T, GfdError>;
