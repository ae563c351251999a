//! Mixed-precision quantization planning toolkit.
//!
//! The pipeline runs in four stages, each usable on its own:
//!
//! 1. [`netlab`] provides toy differentiable models (dense and convolutional)
//!    with exact Hessian-vector products, a seeded SGD trainer, and synthetic
//!    datasets.
//! 2. [`sensitivity`] estimates per-layer Hessian traces with the Hutchinson
//!    randomized estimator and combines them with the [`quantizer`]'s
//!    perturbation norms into a per-layer, per-bit-width sensitivity table.
//! 3. [`costmodel`] turns an architecture descriptor into per-layer, per-bit
//!    size/BOPs/latency costs, and [`planner`] solves the resulting
//!    multiple-choice knapsack exactly under any subset of budgets.
//!    [`pareto`] sweeps budgets and local bit moves into a trade-off frontier.
//! 4. [`proxy`] searches the quantization hyperparameter space (granularity,
//!    BN folding, [`distill`]ation, clipping) with a low-cost surrogate
//!    regressor instead of exhaustive training.
//!
//! Stage artifacts are plain files (JSON / CSV / JSONL / TOML); every module
//! documents its format so stages can be rerun or replaced independently.

pub mod costmodel;
pub mod distill;
pub mod error;
pub mod modelquant;
pub mod netlab;
pub mod pareto;
pub mod planner;
pub mod proxy;
pub mod quantizer;
pub mod seeds;
pub mod sensitivity;

pub use error::{Error, Result};
pub use netlab::{Batch, Dataset, ModelDescriptor, Network, ParamVector, TrainSchedule};
pub use planner::{BitPlan, IlpInstance};
pub use quantizer::{ClipMethod, Granularity, QuantSpec, Scheme};
pub use sensitivity::SensitivityProfile;

