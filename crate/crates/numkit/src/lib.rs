//! A small differentiable numerical toolkit: dense tensors, a gradient tape,
//! the layers a query-based multimodal bridge needs, losses, Adam, binary
//! checkpoints and a finite-difference gradient oracle.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use error::{NumError, Result};
pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
pub use layers::{
    attend, gru_step, init_attention, init_gru, init_linear, linear, linear_nobias,
    masked_cross_attention, project_kv, AttentionDims, KeyValues,
};
pub use loss::{cross_entropy, l2_loss, l2_loss_var};
pub use optim::{adam_step, AdamConfig};
pub use params::{Gradients, ParamStore};
pub use tape::{sigmoid, AttnMask, Backward, Tape, Var};
pub use tensor::{matmul, softmax_rows, Tensor};
