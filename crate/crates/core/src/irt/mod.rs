//! Generalized partial credit model (GPCM): probabilities, likelihood and
//! gradient-based calibration.
//!
//! For an item with discrimination `a`, difficulty `b` and step parameters
//! `d_0..d_{C-1}`, the probability of score `y` for a student of ability
//! `theta` is
//!
//! ```text
//!             exp( sum_{k<=y} a (theta - b + d_k) )
//! P(y|theta) = ------------------------------------------------
//!             sum_c exp( sum_{k<=c} a (theta - b + d_k) )
//! ```
//!
//! with `d_0 = 0` and `sum_k d_k = 0`. With two categories, `a = 1` and zero
//! steps this is the Rasch model `P(1|theta) = sigmoid(theta - b)`.

mod fit;
mod likelihood;
mod model;
mod persist;

use thiserror::Error;

pub use fit::{fit, FitConfig, FitResult};
pub use likelihood::{log_likelihood, log_likelihood_gradient, ItemGradient, LikelihoodGradient};
pub use model::{predict_score, score_probabilities, AbilityRecord, ItemParams, ScoredResponse};
pub use persist::{params_from_json, params_to_json, read_params, write_params};

#[derive(Debug, Error)]
pub enum IrtError {
    #[error("non-finite value for {0}")]
    NonFinite(String),
    #[error("invalid parameters for item `{item}`: {reason}")]
    InvalidParams { item: String, reason: String },
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("unknown student `{0}`")]
    UnknownStudent(String),
    #[error("score {score} out of range for item `{item}` with {categories} categories")]
    ScoreOutOfRange {
        item: String,
        score: usize,
        categories: usize,
    },
    #[error("degenerate items with a single observed score class: {}", .0.join(", "))]
    DegenerateItems(Vec<String>),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("no responses to fit")]
    NoResponses,
    #[error("malformed parameter document: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
