//! Minimal dense-tensor computation with reverse-mode differentiation, plus
//! the layers, loss and optimizer the classifiers are assembled from.

mod adam;
mod gradcheck;
mod graph;
mod layers;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub(crate) use gradcheck::test_tensor;
pub use gradcheck::{compare_gradients, gradient_check, GradCheckReport, FD_STEP};
pub use graph::{bce_grad, bce_value, sigmoid, Gradients, Graph, Var, BCE_EPS};
pub(crate) use layers::glorot;
pub use layers::{
    attention_pool, bilstm, dense, dropout, dropout_mask, lstm_cell, rnn_unroll, stack_time_major, AttentionVars,
    BiStates, LstmCellParams, LstmVars, LSTM_PARAM_NAMES,
};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};

/// A named model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            name: name.into(),
            value,
            trainable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            name: name.into(),
            value,
            trainable: false,
        }
    }
}
