//! Synthetic data generation, dataset files, the optimizer, and the
//! training loop.

pub mod dataset;
pub mod optim;
pub mod synth;
pub mod trainer;

pub use dataset::{load_dataset, write_dataset, Dataset, DatasetManifest};
pub use optim::{clip_gradients, AdamW, GradBuffer, TrainConfig};
pub use synth::{generate_dataset, project, GenParams, SyntheticSample};
pub use trainer::{
    evaluate, load_train_checkpoint, mask_comparison_csv, mean_total_loss, save_train_checkpoint,
    train, train_log_csv, train_step, train_with_callback, EpochLog, TrainLog,
};
