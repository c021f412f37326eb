//! Matrix arithmetic, tape-based gradients, parameter storage, Adam,
//! finite-difference checking and checkpoint I/O.

mod adam;
mod checkpoint;
mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use adam::{adam_step, adam_step_for, cosine_lr, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, relative_error, GradReport, ParamGradError};
pub use matrix::{matmul, row_softmax, Matrix};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{sigmoid, Tape, Var};
