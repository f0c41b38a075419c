//! Downstream prediction and analysis on fused embeddings.

mod ablation;
mod analysis;
mod metrics;
mod predict;
mod regressor;

pub use ablation::AblationTag;
pub use analysis::{
    aggregate_streets, elbow, kmeans, pca_project, pearson, similar_circles, Correlation, KMeans, Pca,
    Similar, StreetEmbedding,
};
pub use metrics::{metrics, Metrics};
pub use predict::{evaluate_embeddings, predict_disease, DiseaseReport, EvalReport};
pub use regressor::{fit_predict, RegressorConfig};
