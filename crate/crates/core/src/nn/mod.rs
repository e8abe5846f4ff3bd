//! Minimal float64 neural-network kernel: tensors, the layers the fusion
//! models need, explicit reverse-mode gradients and Adam.

mod adam;
mod layers;
mod loss;
mod param;
mod tensor;

pub use adam::Adam;
pub use layers::{
    dense_forward, dropout, relu, relu_backward, Conv1d, ConvCache, Dense, DropoutMask,
    MaxPool1d, PoolCache, Signal,
};
pub use loss::{argmax_rows, softmax_xent, SoftmaxXent};
pub use param::{Param, ParamId, ParamSet};
pub use tensor::Tensor2;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward called without a recorded forward pass")]
    BackwardBeforeForward,
}

impl NnError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        Self::Shape { op, detail }
    }
}

pub type NnResult<T> = Result<T, NnError>;
