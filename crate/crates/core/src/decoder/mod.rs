//! SDF decoder, training losses and the trainer.

pub mod losses;
pub mod mlp;
pub mod model;
pub mod train;

pub use losses::{hand_pose_losses, object_center_loss, sdf_losses, LossWeights, ViewReduction};
pub use mlp::{decoder_widths, gradient_check, gradient_check_report, sdf_backward, GradientCheck, sdf_forward, MlpParams};
pub use model::{DecoderModel, ModelHeader};
pub use train::{predict, train, TrainConfig, TrainOutcome, TrainingShape};
