//! Projection heads over raw backbone features and their contrastive
//! training objectives.

pub mod aggregate;
pub mod augment;
pub mod head;
pub mod loss;
pub mod train;

pub use aggregate::{aggregate_poi, aggregate_visual, CircleModalFeatures};
pub use augment::augment_feature;
pub use head::{HeadGrad, ProjectionHead};
pub use loss::{
    infonce_grad, infonce_loss, supcon_grad, supcon_loss, triplet_geo_grad, triplet_geo_loss,
    visual_encoder_grad, visual_encoder_loss, VisualBatch,
};
pub use train::{train_encoders, EncoderHeads, EncoderLosses, EncoderOutput, ProjectedFeatures, StageCurve};
