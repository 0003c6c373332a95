use std::path::PathBuf;

use crate::graph::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("graph failed validation: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate step (task {task_id:?}, step {step_index}) at manifest line {line}")]
    DuplicateStep {
        task_id: String,
        step_index: u32,
        line: usize,
    },

    #[error("graph contains a cycle through node {0}")]
    CyclicGraph(u64),

    #[error("graph has no logit node")]
    EmptyLogit,

    #[error("node {node} has layer {layer} but the graph declares {num_layers} layers")]
    LayerMismatch {
        node: u64,
        layer: i32,
        num_layers: u32,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("token trace is empty")]
    EmptyTrace,

    #[error("temperature {0} is not in the recorded grid")]
    MissingTemperature(f64),

    #[error("insufficient labels: {0}")]
    InsufficientLabels(String),

    #[error("only one class present ({0})")]
    SingleClass(String),

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("feature manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("intervention target (layer {layer}, position {position}, feature {feature}) does not exist")]
    TargetNotFound {
        layer: usize,
        position: usize,
        feature: usize,
    },

    #[error("no active feature in the traced forward pass")]
    NoActiveFeature,

    #[error("infeasible synthetic knob: {0}")]
    InfeasibleKnob(String),

    #[error("missing input file {0}")]
    MissingInput(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Syntax { .. } => "SyntaxError",
            Error::Schema { .. } => "SchemaError",
            Error::Validation(_) => "ValidationError",
            Error::Io { .. } => "IOError",
            Error::DuplicateStep { .. } => "DuplicateStepError",
            Error::CyclicGraph(_) => "CyclicGraphError",
            Error::EmptyLogit => "EmptyLogitError",
            Error::LayerMismatch { .. } => "LayerMismatchError",
            Error::DegenerateInput(_) => "DegenerateInputError",
            Error::EmptyTrace => "EmptyTraceError",
            Error::MissingTemperature(_) => "MissingTemperatureError",
            Error::InsufficientLabels(_) => "InsufficientLabelsError",
            Error::SingleClass(_) => "SingleClassError",
            Error::NonFinite { .. } => "NonFiniteError",
            Error::ShapeMismatch(_) => "ShapeMismatchError",
            Error::ManifestMismatch(_) => "ManifestMismatchError",
            Error::InvalidConfig(_) => "InvalidConfigError",
            Error::TargetNotFound { .. } => "TargetNotFoundError",
            Error::NoActiveFeature => "NoActiveFeatureError",
            Error::InfeasibleKnob(_) => "InfeasibleKnobError",
            Error::MissingInput(_) => "MissingInputError",
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
