//! Fruit and tool categories, instance sampling, the utility function, and
//! the in-domain / validation / transfer splits.

mod sample;
mod split;
mod table;
mod utility;

pub use sample::sample_instance;
pub use split::{
    generate_split, read_samples, write_samples, DatasetSplit, SplitCounts, SplitName,
    GENERATOR_VERSION,
};
pub use table::{CategoryTable, FRUIT_FEATURES, TOOL_FEATURES};
pub use utility::{best_tool, UtilityMatrices};

use thiserror::Error;

pub const NUM_FRUIT_FEATURES: usize = 11;
pub const NUM_TOOL_FEATURES: usize = 15;
pub const NUM_FRUIT_CATEGORIES: usize = 31;
pub const NUM_TOOL_CATEGORIES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectKind {
    Fruit,
    Tool,
}

impl ObjectKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectKind::Fruit => "fruit",
            ObjectKind::Tool => "tool",
        }
    }

    pub fn num_features(&self) -> usize {
        match self {
            ObjectKind::Fruit => NUM_FRUIT_FEATURES,
            ObjectKind::Tool => NUM_TOOL_FEATURES,
        }
    }
}

/// How a feature is drawn around its category mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    /// Bernoulli with p = mean.
    Binary,
    /// Uniform on `[mean - 0.1, mean + 0.1]`, clamped to `[0, 1]`.
    Continuous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Category {
    pub name: String,
    pub kind: ObjectKind,
    pub means: Vec<f64>,
    pub kinds: Vec<FeatureKind>,
}

/// One sampled object. `category` indexes the fruit or tool list of the
/// [`CategoryTable`] it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub kind: ObjectKind,
    pub category: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameSample {
    pub fruit: Instance,
    pub tool1: Instance,
    pub tool2: Instance,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invariant(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("category {0}: exclusion group unsatisfiable")]
    ExclusionUnsatisfiable(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
