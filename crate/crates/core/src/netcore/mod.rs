//! Minimal differentiable computation: tensors, the layer set the
//! architectures need, reverse-mode gradients, Adam, and checkpointing.
//!
//! Everything runs on a define-by-run tape. Forward code is written once
//! against the [`Exec`] trait and executed either by [`Tape`] (records
//! operations for [`Tape::backward`]) or by [`Evaluator`] (inference only,
//! no recording). Both call the same kernel functions, so a value computed
//! under either executor is bitwise identical.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod real;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointData, MomentData};
pub use gradcheck::{finite_diff_grad, grad_rel_err};
pub use real::Real;
pub use tape::{Evaluator, Exec, ParamId, ParamStore, Tape, H};
pub use tensor::Tensor;
