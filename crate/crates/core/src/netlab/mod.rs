//! Minimal dense-tensor differentiation lab.
//!
//! Provides toy feedforward and convolutional models over flat `f64`
//! parameter vectors, a seeded SGD trainer, synthetic datasets, and — the
//! part the rest of the toolkit leans on — exact Hessian-vector products
//! computed by forward-over-reverse differentiation. All math is double
//! precision.
//!
//! Model evaluation, gradients, and HVPs never mutate parameters and are safe
//! to call concurrently; the trainer owns its parameter vector for the
//! duration of a run.

pub mod autodiff;
pub mod data;
pub mod model;
pub mod params;
pub mod quad;
pub mod scalar;
pub mod train;

pub use autodiff::{
    forward, grad, hvp, hvp_with_head, loss_and_grad_with_head, CrossEntropyHead, LossHead,
    SquaredErrorHead,
};
pub use data::{Batch, Dataset};
pub use model::{
    batchnorm_apply, conv2d, Act, InputShape, Layer, LayerDef, LayerKind, LayerSpec,
    ModelDescriptor, Network, NetworkDef,
};
pub use params::{Layout, ParamVector, Segment};
pub use quad::QuadraticModel;
pub use scalar::{Dual, Scalar};
pub use train::{evaluate, train, train_with_head, EpochStat, TrainSchedule};
