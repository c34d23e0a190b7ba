//! Latent factor interpretation for matrix-factorization recommenders.
//!
//! The pipeline trains a baseline factor model by alternating least squares,
//! fits one metadata-driven regressor per item latent factor (the *shadow*
//! model), and explains the shadow's ratings with quantitative input
//! influence. The [`synth`] module validates the whole chain on simulated
//! users whose preferences are known.

pub mod als;
pub mod data;
pub mod error;
pub mod influence;
pub mod ingest;
mod linalg;
pub mod regress;
pub mod rng;
pub mod shadow;
pub mod stats;
pub mod sweep;
pub mod synth;

pub use als::{train_als, training_rmse, AlsConfig};
pub use data::{FactorMatrix, FactorModel, IdMap, MetadataMatrix, Rating, RatingsMatrix};
pub use error::{Error, Result};
pub use influence::{explain, InfluenceQuery, InfluenceReport};
pub use shadow::{train_shadow, ShadowConfig, ShadowKind, ShadowModel};


