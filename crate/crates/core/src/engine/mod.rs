//! Dense-tensor autodiff engine and trainer.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod model;
mod optim;
mod params;
mod tensor;
mod train;

pub use checkpoint::{
    from_bytes as checkpoint_from_bytes, load as load_checkpoint, to_bytes as checkpoint_bytes, MAGIC,
};
pub use gradcheck::{grad_check, grad_check_with, Batch};
pub use layers::{BN_EPS, BN_MOMENTUM};
pub use loss::{cross_entropy, kd_loss, kd_loss_with_grad, softmax, KdConfig};
pub use model::{argmax_rows, Grads, Mode, Model, Tape};
pub use optim::{Schedule, Sgd};
pub use params::{expected_params, is_trainable, param_name, Params};
pub use params::{BETA, BIAS, GAMMA, RUNNING_MEAN, RUNNING_VAR, WEIGHT};
pub use tensor::{Scalar, Tensor};
pub use train::{evaluate, predict, train, EpochRecord, Teacher, TrainConfig, TrainHistory};
