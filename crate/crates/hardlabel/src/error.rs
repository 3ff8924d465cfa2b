use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input has length {got}, expected {expected}")]
    InputShape { expected: usize, got: usize },

    #[error("layer index {layer} out of range (network has {layers} layers)")]
    LayerOutOfRange { layer: usize, layers: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("scaling factor must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("classifier looks degenerate: no label change found in {attempts} attempts")]
    DegenerateClassifier { attempts: usize },

    #[error("boundary patch too small for a {step:.3e} probe step")]
    PatchTooSmall { step: f64 },

    #[error("projection failed: no label change within bracket {bracket:.3e}")]
    ProjectionFailed { bracket: f64 },

    #[error("no bend found within walk distance {walked:.3e}")]
    NoBend { walked: f64 },

    #[error("no dual point found within the retry budget ({attempts} attempts)")]
    NoDualFound { attempts: usize },

    #[error("dual point is degenerate: patch normals are parallel")]
    DegenerateDual,

    #[error("dual spaces too aligned: rank {rank}, need {needed}")]
    InsufficientSpan { rank: usize, needed: usize },

    #[error("neuron {neuron} of layer {layer} starved: no dual points in {attempts} attempts")]
    NeuronStarved {
        layer: usize,
        neuron: usize,
        attempts: usize,
    },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
