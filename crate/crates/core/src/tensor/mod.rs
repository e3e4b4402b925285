//! Dense tensors with a define-by-run computation graph.
//!
//! Values live in [`Array`]; a [`Graph`] records every operation applied to
//! [`Tensor`] handles so that [`Graph::backward`] can sweep the recorded
//! nodes in reverse and accumulate gradients. The numeric width is the
//! graph's type parameter: `f32` for training, `f64` for the verification
//! suites.

mod array;
mod gradcheck;
mod graph;

pub use array::{Array, Element};
pub use gradcheck::{finite_diff_check, finite_diff_check_surrogate, GradCheckReport};
pub use graph::{BackwardRule, Gradients, Graph, NodeId, ReduceKind, Tensor};

/// Splits `shape` around `axis` into `(outer, dim, inner)` extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
