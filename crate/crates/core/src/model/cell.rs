use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng as _;

use crate::rng::Rng;

/// A recurrent cell that can scan a whole sequence forward from the zero
/// state and back-propagate through that scan.
///
/// `scan_backward` adds parameter gradients into `grads` (same shapes as
/// `self`) and returns the gradient with respect to the inputs.
pub trait RecurrentCell: Clone + Debug + Send + Sync + 'static {
    /// Short identifier written into checkpoints ("gru", "lstm").
    const KIND: &'static str;

    type Trace: Clone + Debug + Send + Sync;

    fn zeros(input: usize, hidden: usize) -> Self;

    fn input_dim(&self) -> usize;

    fn hidden_dim(&self) -> usize;

    fn scan(&self, xs: ArrayView2<f64>) -> Self::Trace;

    /// D×hidden matrix of emitted hidden states.
    fn hidden_states(trace: &Self::Trace) -> &Array2<f64>;

    fn scan_backward(
        &self,
        xs: ArrayView2<f64>,
        trace: &Self::Trace,
        d_hidden: ArrayView2<f64>,
        grads: &mut Self,
    ) -> Array2<f64>;

    /// Visits (name, shape, values) in a fixed order.
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    /// Uniform in [−1/√hidden, 1/√hidden] for every tensor.
    fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut cell = Self::zeros(input, hidden);
        let bound = 1.0 / (hidden as f64).sqrt();
        cell.visit_mut(&mut |_, values| {
            for v in values {
                *v = rng.random_range(-bound..=bound);
            }
        });
        cell
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `xs · wᵀ + b` for every row of `xs`.
pub(crate) fn project(xs: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    xs.dot(&w.t()) + b
}

pub(crate) fn slice_of<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

pub(crate) fn slice_of_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are kept in standard layout")
}
