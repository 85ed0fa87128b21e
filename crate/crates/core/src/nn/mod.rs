//! Dense reverse-mode autodiff, an MLP classifier, and SGD.

pub mod checkpoint;
pub mod mlp;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use mlp::{Dense, Forward, Gradients, MlpModel};
pub use optim::{schedule_step, sgd_step, LrSchedule, OptimizerState, SgdConfig};
pub use tape::{Tape, TapeGrads, Var};
pub use tensor::Tensor;
