//! Residual convolutional classifier with hand-written backpropagation.
//!
//! Tensors are NCHW. The engine is generic over [`Scalar`] so the same code
//! trains in `f32` and is gradient-checked in `f64`. Per-sample work inside a
//! batch runs on rayon; every cross-sample reduction is summed in sample
//! order, so results do not depend on the thread count.

mod layers;
mod loss;
mod model_io;
mod network;
mod optim;
mod tensor;
mod train;

pub use layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward_inplace, relu_inplace, BatchNorm2d, Conv2d, Linear,
    Param, Slot, BN_EPS, BN_MOMENTUM,
};
pub use loss::{argmax, softmax_cross_entropy, softmax_rows};
pub use model_io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use network::{Mode, Network, NetworkConfig, ResidualBlock};
pub use optim::{LrSchedule, Sgd};
pub use tensor::{Scalar, Tensor};
pub use train::{
    cubes_to_tensor, format_history, train, EpochStats, Model, Normalization, Prediction, TrainConfig, DEFAULT_SEED,
};
