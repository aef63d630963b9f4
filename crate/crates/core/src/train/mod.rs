//! Objective, optimiser and training loop.

pub mod adam;
pub mod losses;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use losses::{
    append_losses, compute_losses, prediction_losses, regress_joints, LossBreakdown, LossContext, LossRecord,
    LossWeights,
};
pub use trainer::{epoch_order, train, LogRecord, StepRecord, TrainConfig, TrainOutcome, TrainOutput};
