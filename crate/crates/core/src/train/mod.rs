//! Loss, optimizer, schedule and the training loop.

mod adam;
mod loss;
mod schedule;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use loss::{combine_losses, dynamic_loss, radar_only_loss, LossBreakdown, DEFAULT_LOSS_EPSILON};
pub use schedule::{cyclic_lr, EarlyStopping, StopDecision};
pub use trainer::{
    load_checkpoint, save_checkpoint, train, validation_loss, write_trace_csv, BatchTargets,
    Budget, TrainConfig, TrainOutcome, TrainingData, TraceRecord,
};
