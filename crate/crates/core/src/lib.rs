//! TaylorNet: two-branch video prediction with Taylor-series recurrent cells
//! and moment-constrained derivative kernels, on a small CPU autodiff engine.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod convlstm;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod moment;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod pde;
pub mod taylor_cell;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
