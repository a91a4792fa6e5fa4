//! Binary convolutional networks built from fractal blocks with residual and
//! dense shortcuts.
//!
//! The crate is `no_std` (with `alloc`). It provides a small tensor type and
//! compute-graph engine with reverse-mode gradients, weight and activation
//! binarization with straight-through gradients, a bit-packed XNOR-popcount
//! convolution, fractal architecture generators, the parameter-bit and
//! Flops cost model, and desk-scale training utilities.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod arch;
pub mod binarize;
pub mod bitkernel;
pub mod complexity;
pub mod graph;
pub mod ops;
pub mod tensor;
pub mod train;

pub use tensor::{Shape, Tensor};
