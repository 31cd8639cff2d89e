//! Sexism identification and categorization over bilingual social-media posts:
//! corpus handling, text preparation and translation, classifier backends,
//! hyperparameter search, ensemble fusion, metrics and the run pipeline.

pub mod backends;
pub mod corpus;
pub mod digest;
pub mod error;
pub mod fusion;
pub mod labels;
pub mod metrics;
pub mod pipeline;
pub mod search;
pub mod synthetic;
pub mod textprep;
pub mod tsv;

pub use backends::{
    fit, predict_labels, predict_scores, BackendKind, BackendSpec, HeadSource, HyperParams, PredictionRecord,
    ScoreVector, TrainedModel,
};
pub use corpus::{Dataset, DatasetRole, Example};
pub use error::{Error, Result};
pub use labels::{LabelSpace, Language, Source, Task, Task1Label, Task2Label};
