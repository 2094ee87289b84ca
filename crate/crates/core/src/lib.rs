#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod modal;
pub mod quadrature;
pub mod saturation;
pub(crate) mod serde_matrix;
pub mod simulate;
pub mod spectral;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
