//! Reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles; calling
//! [`Tape::backward`] on a scalar root walks the record in reverse and
//! accumulates gradients for every node that contributed to it. The op set is
//! the minimum needed for encoder-decoder transformers with classification
//! heads: matrix products (plain and batched), layer norm, softmax, embedding
//! lookup, masked mean pooling, and a fused weighted negative-log-likelihood
//! loss.
//!
//! Everything is `f64` and single-threaded on purpose: the tensors involved
//! are small and the gradients must survive central-finite-difference checks
//! at tight tolerances.
//!
//! Shape violations are programmer errors and panic, mirroring `ndarray`'s
//! own conventions. Data-dependent failures (an all-masked pooling row, a
//! zero weight sum in the loss) are the caller's contract to reject before
//! building the node.

pub mod check;
pub mod optim;
pub mod param;
pub mod tape;

pub use optim::Adam;
pub use param::{BoundParams, ParamStore};
pub use tape::{Gradients, NllNorm, Tape, Var};
