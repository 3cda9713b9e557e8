//! Class-conditional metric learning (CCML).
//!
//! Learns a linear embedding `z = A x` under which each point's `k` nearest
//! neighbours of its own class are closer than the `k` nearest neighbours of
//! any other class, and classifies with class-conditional KNN (CCKNN): the
//! class whose `k` nearest members are closest in summed squared distance.
//!
//! The crate also ships the pieces needed to evaluate such a metric: CSV
//! ingestion, the synthetic Sandwich dataset, stratified splitting, PCA
//! preprocessing, an NCA baseline, plain KNN, and nDCG retrieval curves.
//!
//! ```
//! use ccml_core::{ccml, dataset, eval, Embedding};
//!
//! let ds = dataset::generate_sandwich(&dataset::SandwichConfig::default()).unwrap();
//! let cfg = ccml::TrainConfig { k: 1, epochs: 5, ..Default::default() };
//! let (metric, _trace) = ccml::train(&ds, &cfg).unwrap();
//! let z = metric.embed(ds.features().view()).unwrap();
//! let err = eval::loo_knn_error(z.view(), ds.labels(), 1).unwrap();
//! assert!((0.0..=1.0).contains(&err));
//! ```

pub mod ccml;
pub mod classify;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod knn;
pub mod metric;
pub mod nca;
pub mod pipeline;
pub mod preprocess;
mod serde_matrix;
mod sgd;

pub use ccml::{GradientMode, TrainConfig, TrainTrace, Variant};
pub use classify::{CcknnMode, CcknnOptions, ClassScores, Priors};
pub use dataset::{LabeledDataset, MiniBatch, SplitSpec};
pub use error::{Error, Result};
pub use eval::RetrievalCurve;
pub use knn::{Neighbor, NeighborSet};
pub use metric::{Embedding, InitKind, InitSpec, LinearMetric};
pub use pipeline::{FittedModel, Learner, PipelineConfig};
pub use preprocess::{PcaMode, PcaModel, PreprocessConfig, Preprocessor, Standardizer};
pub use sgd::BatchEvaluation;
