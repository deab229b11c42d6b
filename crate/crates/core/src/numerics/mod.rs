//! Dense tensors, a reverse-mode tape, and the AdamW optimizer.

mod adamw;
mod tape;
mod tensor;

pub use adamw::{AdamWConfig, AdamWState};
pub use tape::{
    floor_div_clip, mae, mae_grad, min_ratio_values, BnMode, BnStats, Grads, Tape, Var, BN_EPS,
    BN_MOMENTUM,
};
pub use tensor::{matmul, Tensor};
pub(crate) use tensor::gemm;
