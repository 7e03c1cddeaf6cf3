//! Loss plumbing, gradient checking and the staged training loop.

pub mod gradcheck;
mod objective;
mod stage;

pub use gradcheck::{gradient_check, relative_error, EntryCheck, GradCheckConfig, GradCheckReport};
pub use objective::{batch_loss, batch_loss_train, initial_weights, loss_and_grad, LossTerms, Sample};
pub use stage::{
    prepare_model, run_curriculum, train_model, train_stage, validate_order, verify_channel_expansion,
    verify_depth_expansion, CurriculumStage, Seeds, StageOutcome, StageSpec, TrainReport, DEFAULT_BATCH,
    DEFAULT_CHECKPOINT_EVERY, DEFAULT_EPOCHS, DEFAULT_LR, TELEMETRY_FILE,
};
