//! Entity-debiased fake news detection: corpus handling, entity recognition,
//! augmentation, the two-branch model and its training loop, evaluation
//! metrics, and a synthetic entity-bias generator.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod endef;
pub mod error;
pub mod metrics;
pub mod models;
pub mod recognizer;
pub mod synthetic;
pub mod trainer;

pub use corpus::{Corpus, EntitySource, Label, NewsPiece, SplitResult};
pub use endef::{EndefModel, EndefOptions};
pub use error::{Error, Result};
pub use metrics::{EvalReport, Metric, PredictionSet};
pub use trainer::{TrainConfig, TrainOutcome};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
