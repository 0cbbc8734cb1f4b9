//! Group-wise weight quantization, selective precision plans and cache-based
//! test-time adaptation. `no_std` with `alloc`.

#![no_std]

extern crate alloc;

pub mod bench;
pub mod error;
pub mod format;
pub mod qlinear;
pub mod quant;
pub mod select;
pub mod tensor;
pub mod tta;

pub use error::{Error, Result};
pub use tensor::Tensor;
