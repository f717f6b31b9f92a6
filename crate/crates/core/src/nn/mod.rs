//! Tanh MLPs with hand-written reverse-mode gradients, the Gaussian policy
//! head, Adam and the checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod mlp;
pub mod policy;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use loss::{grad, Objective, PpoCoefs, PpoLoss, PpoLossStats, PpoSamples};
pub use mlp::{Mlp, MlpSpec};
pub use policy::{gaussian_log_prob, PolicyLayout, PolicyOutput, PolicyParams};
