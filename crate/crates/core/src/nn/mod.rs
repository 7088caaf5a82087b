//! Differentiable layers, loss, optimizer and gradient checking.

pub mod activation;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod loss;
pub mod module;
pub mod optim;
pub mod pool;

pub use activation::{Act, Activation};
pub use checkpoint::Checkpoint;
pub use conv::{Conv, ConvGrads, ConvSpec};
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use loss::{softmax_ce_loss, LossOutput, LossWeights};
pub use module::{Module, Param, Sequential};
pub use optim::{sgd_step, Sgd};
pub use pool::{maxpool, maxpool_backward, MaxPool, Pooled};
