//! Dense-network numeric core: parameter vectors, forward and reverse passes,
//! and optimizers.

mod batch;
mod mlp;
mod optim;

pub use batch::Batch;
pub use mlp::{
    backward, backward_tape, finite_diff_grad, forward, forward_batch, forward_tape, init_params,
    HiddenActivation, LayerShape, MlpSpec, OutputActivation, ParamVector, Tape,
};
pub use mlp::sigmoid;
pub use optim::{OptimizerKind, OptimizerState};
