//! Segmentation network, inference helpers and optimizer.

pub mod adam;
pub mod inference;
pub mod model;
pub mod ops;

pub use adam::{apply_gradients, OptimizerState};
pub use inference::{embed_sample, predict_mask, predict_probs, threshold_probs};
pub use model::{ForwardTrace, Gradients, LatentFeatures, Model, ModelConfig, ParamSpec, Prediction};
pub use ops::Activation;
