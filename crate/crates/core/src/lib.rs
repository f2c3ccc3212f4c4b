//! Lomax delegate racing (LDR) survival models for competing risks.
//!
//! Inference is by a data-augmented Gibbs sampler ([`gibbs`]) or Monte-Carlo
//! MAP ([`map`]). [`eval`] scores fitted models and [`interpret`] turns them
//! into sub-risk profiles and embeddings.

pub mod data;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod gibbs;
pub mod interpret;
pub mod map;
pub mod model;
pub mod rng;
pub mod stats;

pub use data::{
    CsvSchema, Dataset, DatasetMetadata, EventStatus, Generator, ObservationRecord, SyntheticSpec, TimeStatus,
};
pub use error::{LdrError, Result};
pub use eval::{MetricKind, MetricReport};
pub use gibbs::{ChainConfig, Hyperparams, PosteriorSamples};
pub use interpret::{Embedding, SubriskWeights};
pub use map::{MapConfig, MapFit, RPrior};
pub use model::{Atom, LdrParams};
pub use rng::{seeded, substream, LdrRng};
