//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass; node values are
//! `(length, channels)` arrays of a [`Scalar`] type (f32 for training, f64 for
//! gradient checking). Parameters live outside the graph in a [`ParamStore`]
//! with Adam moments; `backward` accumulates gradients into the store.

mod gradcheck;
mod graph;
mod param;
mod scalar;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use graph::{Graph, GraphMelBank, NodeId};
pub use param::{ParamId, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use scalar::{sc, Scalar};
