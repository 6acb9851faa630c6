//! Optimizer, schedules, example builders and the training loops.

mod adam;
mod builders;
mod loops;
mod runconfig;
mod schedule;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use builders::{build_classification_example, build_generation_example, GenerationExample};
pub use loops::{
    classification_accuracy, denoising_accuracy, finetune, generation_bleu, generation_exact_match, greedy_outputs,
    predict_labels, pretrain, pretrain_batch, token_accuracy, FinetuneData, FinetuneReport, PretrainData,
    SelectionMetric,
};
pub use runconfig::{RunConfig, PRESETS};
pub use schedule::{dropout_at, lr_at, Mode, TrainConfig};
pub use trainer::{
    find_loss_rise, smoothed_losses, LossRise, RunOutput, StepLog, Trainer, MODEL_FILE, OPTIMIZER_FILE, TRAINER_FILE,
};
