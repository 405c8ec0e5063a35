//! Reverse-mode automatic differentiation over dense tensors, optimizers,
//! seeded randomness and checkpoints.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod rng;
mod store;
mod tensor;

pub use checkpoint::{peek_precision, Checkpoint, CheckpointError};
pub use gradcheck::{check_gradients, relative_error, GradCheckOptions, GradCheckReport, ParamCheck, RELATIVE_ERROR_FLOOR};
pub use graph::{sigmoid, softmax_in_place, Axis, Graph, Mode, NodeGrads, NodeId, OpKind, LOG_CLAMP};
pub use optim::{accumulate_gradients, Adagrad, Adam};
pub use rng::{RngPosition, RngStream};
pub use store::{glorot_uniform, group_of, normal_init, AdamState, Gradients, Parameter, ParameterStore, EMBEDDING_INIT_STD};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: node #{left} {left_shape:?} vs node #{right} {right_shape:?}")]
    ShapeMismatch {
        op: OpKind,
        left: usize,
        left_shape: Vec<usize>,
        right: usize,
        right_shape: Vec<usize>,
    },
    #[error("non-finite output from {op} (node #{node})")]
    NonFinite { op: OpKind, node: usize },
    #[error("output node #{node} is not scalar (shape {shape:?})")]
    NotScalar { node: usize, shape: Vec<usize> },
    #[error("row {index} out of range for node #{node} with {rows} rows")]
    IndexOutOfRange { node: usize, index: usize, rows: usize },
    #[error("cannot reshape node #{node} from {from:?} to {to:?}")]
    BadReshape { node: usize, from: Vec<usize>, to: Vec<usize> },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("gradient supplied for frozen parameter `{0}`")]
    FrozenGradient(String),
    #[error("gradient for `{name}` has shape {got:?}, parameter has {expected:?}")]
    GradientShape { name: String, expected: Vec<usize>, got: Vec<usize> },
}
