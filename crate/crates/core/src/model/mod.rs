//! Contrastive noise encoder, quantification head and their training loops.
//!
//! The encoder maps an image to an embedding that should depend on the noise
//! and not on the content. It is pretrained with InfoNCE on triplets whose
//! anchor and positive share a noise gene (strengths and realization stream)
//! over different clean images. The head is then fitted on a frozen encoder
//! to regress the six strengths.

mod checkpoint;
mod config;
mod gradcheck;
mod loss;
mod network;
mod train;

pub use checkpoint::{
    EncoderCheckpoint, LogEntry, Split, Stage, TrainLog, TrainingMode, TrainingRecord,
};
pub use config::{Activation, EncoderConfig, InputFilter, TransformerReference, VIT_B_REFERENCE};
pub use gradcheck::{
    grad_check, grad_check_contrastive, grad_check_model, grad_check_mse, relative_error, GradCheckReport,
    REL_ERROR_FLOOR, STEP_RANGE,
};
pub use loss::{
    info_nce_loss, info_nce_with_grad, mse_head_loss, mse_with_grad, ContrastiveEmbeddings,
    ContrastiveGrads,
};
pub use network::{EncoderNet, EncoderTrace, HeadNet, HeadTrace};
pub use train::{
    contrastive_objective_grad, encode, finetune, joint_objective, regression_objective, make_contrastive_batch, predict_strengths, pretrain,
    train_joint, train_scratch, BatchMember, ContrastiveItem, Gene, LabeledExample, Origin,
    PairSource, Schedule, TrainOutcome,
};

#[cfg(test)]
mod tests;
