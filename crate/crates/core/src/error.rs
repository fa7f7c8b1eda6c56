use thiserror::Error;

pub type Result<T, E = LnmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LnmError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("row {row} has every entry at -inf")]
    DegenerateRow { row: usize },
    #[error("label {label} out of range for {k} classes")]
    LabelRange { label: usize, k: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite gradient in layer {layer}")]
    NumericFault { layer: usize },
    #[error("class {class} would be empty")]
    EmptyClass { class: usize },
    #[error("class {class} has {available} samples, needs at least {required} to stratify")]
    Stratification {
        class: usize,
        available: usize,
        required: usize,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("matrix error: {0}")]
    Matrix(String),
    #[error("truncation interval [{lo}, {hi}] has mass {mass:e} under N({mean}, {std}^2)")]
    InfeasibleTruncation {
        mean: f64,
        std: f64,
        lo: f64,
        hi: f64,
        mass: f64,
    },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate mixture fit: all losses are equal")]
    DegenerateFit,
    #[error("transition matrix volume collapsed (|det| = {det:e})")]
    VolumeDegeneracy { det: f64 },
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("rank table incomplete: no score for method {method:?} on setting {setting:?}")]
    IncompleteTable { method: String, setting: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl LnmError {
    pub fn config(msg: impl Into<String>) -> Self {
        LnmError::Config(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        LnmError::Precondition(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        LnmError::Domain(msg.into())
    }
}
