//! Small deterministic numerics: parameter tensors, losses with analytic
//! gradients, Adam, a finite-difference gradient checker and the binary
//! checkpoint format.
//!
//! Everything is `f64` and every reduction runs sequentially over the flat
//! array so results are bit-reproducible across runs.

mod adam;
mod blob;
mod gradcheck;
mod ops;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use blob::{decode_blob, encode_blob, TensorEntry, TensorManifest};
pub use gradcheck::grad_check;
pub use ops::{
    argmax, dot, gelu, gelu_grad, matvec_add, matvec_t_add, mse, outer_add, softmax_cross_entropy,
    softmax_cross_entropy_into, softmax_in_place,
};
pub use tensor::{GradSet, ParamSet, ParamTensor};
