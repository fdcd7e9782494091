use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fluorodx_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {reason}")]
    ManifestRow { path: PathBuf, row: usize, reason: String },
    #[error("{path}: {source}")]
    Annotation {
        path: PathBuf,
        #[source]
        source: fluorodx_core::Error,
    },
    #[error("{path}: cannot decode image: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("unsupported color mode {0}; expected RGB or grayscale")]
    ColorMode(String),
    #[error(
        "pretrained weights for {arch} unavailable at {path}: {reason}. Export the torchvision \
         ImageNet weights to safetensors (see README, \"Pretrained weights\") or use a seeded backbone"
    )]
    WeightsUnavailable { arch: String, path: PathBuf, reason: String },
    #[error("checksum mismatch for {path}: expected {expected}, found {actual}")]
    Checksum { path: PathBuf, expected: String, actual: String },
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("training contract violated: {0}")]
    Contract(String),
    #[error("leakage guard: test record `{0}` also appears in a training or validation manifest")]
    Leakage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fold {fold} of {config}: validation side holds a single class")]
    SingleClassFold { config: String, fold: usize },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable snake-case kind for machine-readable reports.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Core(_) => "invalid_input",
            Self::Io { .. } => "io",
            Self::ManifestRow { .. } => "manifest",
            Self::Annotation { .. } => "annotation",
            Self::Decode { .. } | Self::ColorMode(_) => "image_decode",
            Self::WeightsUnavailable { .. } => "weights_unavailable",
            Self::Checksum { .. } => "checksum",
            Self::TensorShape { .. } => "tensor_shape",
            Self::Contract(_) => "contract",
            Self::Leakage(_) => "leakage",
            Self::Config(_) => "config",
            Self::SingleClassFold { .. } => "single_class_fold",
            Self::Tensor(_) => "tensor",
            Self::Json(_) => "json",
            Self::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}
