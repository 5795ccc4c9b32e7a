//! Losses, networks used only for training, the optimizer and the training loop.

pub mod adam;
pub mod losses;
pub mod nets;
pub mod train;

pub use adam::Adam;
pub use losses::{
    adversarial_losses, bce_with_logits, content_loss, discriminator_loss, generator_adversarial_loss,
    perceptual_loss, total_loss, LossWeights,
};
pub use nets::{Discriminator, PerceptualNet};
pub use train::{apply_render_keys, train, StepLosses, TrainConfig, TrainOutcome, Trainer};
