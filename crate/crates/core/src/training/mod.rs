//! Loss, optimizer, data and the training loop.

pub mod config;
pub mod data;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod train;

pub use config::TrainConfig;
pub use data::{extract_targets, generate_toy_dataset, load_dataset_dir, render_toy, ToySample, TrainSample, MANIFEST};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use loss::{batch_loss, compute_loss, LossTargets, LossTerms, LossWeights, PredictionVars};
pub use optim::{clip_grad_norm, grad_norm, lr_at, AdamState, AdamW};
pub use train::{calibrate, loss_targets, sample_loss, train, write_log, LogRow, Trainer};
