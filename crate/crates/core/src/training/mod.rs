//! Losses, the optimizer and the training loop.

mod losses;
mod objective;
mod optim;
mod train;

pub use losses::{arm_loss, ilm_stop_loss, ilm_token_loss, it_loss, mdm_loss, stop_loss_from_score, LogLinear};
pub use objective::{
    arm_objective, ilm_objective, it_objective, mdm_layout, mdm_noise, mdm_objective, LossParts, MdmExample,
};
pub use optim::{clip_grad_norm, grad_norm, AdamW};
pub use train::{batch_indices, batch_objective, train, train_step, LossReport, TrainConfig, TrainSet, TrainState, MDM_T_MIN};
