//! Dynamic multi-scale window vision transformer.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: row-major tensors, elementary kernels, a reverse-mode tape
//!   and the `DWT0` tensor file format.
//! - [`window`]: window partition/reverse, cyclic shift, padding, shifted
//!   window masks and relative-position indices.
//! - [`attention`]: windowed multi-head attention and its multi-scale
//!   composition over head groups.
//! - [`dwm`]: the dynamic window module: branch fusion, per-channel branch
//!   weights and the residual combination, in three ablation modes.
//! - [`model`]: patch embedding, stages of alternating plain/shifted blocks,
//!   patch merging, classification head and the reference configurations.
//! - [`analyzer`]: exact parameter and FLOP accounting plus the closed-form
//!   block complexity.
//! - [`oracle`]: brute-force references used by tests and the self test.
//! - [`verify`]: the verification suites behind `selftest` and `gradcheck`.
//! - [`cli`]: the `dwvit` command line.

pub mod error;
pub mod tensor;
pub mod window;
pub mod nn;
pub mod attention;
pub mod dwm;
pub mod model;
pub mod analyzer;
pub mod oracle;
pub mod verify;
pub mod cli;

pub use error::{Error, Result};
pub use tensor::{Element, Precision, Tensor};
