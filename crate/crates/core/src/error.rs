use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}, column `{column}`: value {value} must be strictly positive")]
    NonPositive { row: usize, column: String, value: f64 },
    #[error("duplicate element symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("unknown element symbol `{0}`")]
    UnknownSymbol(String),
    #[error("enthalpy table must be {expected}x{expected}, found {found}")]
    EnthalpyShape { expected: usize, found: String },
    #[error("enthalpy table diagonal entry {index} is {value}, expected 0")]
    DiagonalNonZero { index: usize, value: f64 },
    #[error("enthalpy table is asymmetric at ({i},{j}): {upper} vs {lower}")]
    Asymmetric { i: usize, j: usize, upper: f64, lower: f64 },
    #[error("element index {index} out of range for registry of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("registry has no elements")]
    Empty,
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("composition has {found} components, registry has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("component {index} is {value}; percentages must be non-negative and finite")]
    NegativeComponent { index: usize, value: f64 },
    #[error("composition sums to {sum}, expected 100")]
    BadSum { sum: f64 },
    #[error("degenerate registry: {0} mean is zero")]
    DegenerateRegistry(&'static str),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown element column `{0}`")]
    UnknownElement(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data is empty")]
    EmptyData,
    #[error("targets have zero variance; R² is undefined")]
    ZeroVariance,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("weights must be non-negative and sum to 1, got ({0}, {1})")]
    BadWeights(f64, f64),
    #[error("target temperature must be non-zero")]
    ZeroTarget,
    #[error("surrogate required when lambda1 > 0")]
    MissingSurrogate,
    #[error("surrogate is not differentiable; gradient of f1 is undefined or uninformative")]
    UnsupportedSurrogate,
    #[error("normalizer for objective {0} is zero with a non-zero weight")]
    ZeroNormalizer(usize),
    #[error("tau must be positive, got {0}")]
    BadTau(f64),
    #[error("neighbor index is empty")]
    EmptyIndex,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible start: |sum(x) - {target}| = {violation}")]
    InfeasibleStart { target: f64, violation: f64 },
    #[error("non-finite value at evaluation {0}")]
    NonFinite(usize),
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("no record with temperature {0}")]
    NoSuchTarget(f64),
    #[error("all {0} runs failed: {1}")]
    AllRunsFailed(usize, String),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("need at least two rows, got {0}")]
    TooFewRows(usize),
    #[error("features have zero total variance")]
    ZeroVariance,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
