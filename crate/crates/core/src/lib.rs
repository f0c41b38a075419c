//! Spatially-aware multi-modal embeddings of urban living circles.
//!
//! The pipeline turns per-item feature vectors (community images, circle
//! descriptions, POI reviews and categories) into one embedding per living
//! circle and uses those embeddings to predict elderly chronic-disease
//! counts:
//!
//! 1. [`encoders`] trains a projection head per modality with contrastive
//!    objectives and aggregates the items of each circle;
//! 2. [`spatial`] derives the pairwise autocorrelation matrix from distances
//!    and POI category profiles, and the top-K candidate lists;
//! 3. [`graph`] builds the three-nodes-per-circle graph and its
//!    renormalized adjacency;
//! 4. [`smgcn`] runs the initial-residual GCN and the fused readout, trained
//!    to reconstruct spatial autocorrelation;
//! 5. [`evaluate`] fits downstream regressors under K-fold cross-validation
//!    and provides the analysis tools (streets, similarity, clustering,
//!    PCA, correlation).

pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluate;
pub mod graph;
pub mod linalg;
pub mod modality;
pub mod optim;
pub mod pipeline;
pub mod seed;
pub mod smgcn;
pub mod spatial;

pub use error::{Error, Result};
pub use modality::Modality;
