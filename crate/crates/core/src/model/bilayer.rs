use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::cell::RecurrentCell;
use super::gru::GruDirectionParams;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Forward and backward scans over the same sequence; output row i is
/// `h_i(fwd) ⊕ h_i(bwd)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLayerParams<C> {
    pub forward: C,
    pub backward: C,
}

pub type BiGruLayerParams = BiLayerParams<GruDirectionParams>;

#[derive(Debug, Clone)]
pub struct BiTrace<C: RecurrentCell> {
    fwd: C::Trace,
    /// Trace of the backward cell over the time-reversed input.
    bwd: C::Trace,
    pub output: Array2<f64>,
}

fn reversed(a: ArrayView2<f64>) -> Array2<f64> {
    a.slice(s![..;-1, ..]).as_standard_layout().into_owned()
}

impl<C: RecurrentCell> BiLayerParams<C> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiLayerParams {
            forward: C::zeros(input, hidden),
            backward: C::zeros(input, hidden),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let forward = C::init(input, hidden, rng);
        let backward = C::init(input, hidden, rng);
        BiLayerParams { forward, backward }
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden()
    }

    pub fn check(&self) -> Result<()> {
        if self.forward.input_dim() != self.backward.input_dim()
            || self.forward.hidden_dim() != self.backward.hidden_dim()
        {
            return Err(Error::ShapeMismatch(
                "forward and backward directions differ in shape".into(),
            ));
        }
        Ok(())
    }

    pub fn forward_trace(&self, xs: ArrayView2<f64>) -> Result<BiTrace<C>> {
        if xs.nrows() == 0 {
            return Err(Error::Precondition("empty sequence".into()));
        }
        if xs.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "layer expects input width {}, got {}",
                self.input_dim(),
                xs.ncols()
            )));
        }
        let fwd = self.forward.scan(xs);
        let bwd = self.backward.scan(reversed(xs).view());
        let back_states = reversed(C::hidden_states(&bwd).view());
        let output = concatenate(Axis(1), &[C::hidden_states(&fwd).view(), back_states.view()])
            .expect("equal row counts");
        Ok(BiTrace { fwd, bwd, output })
    }

    /// Runs the layer and returns the D×(2·hidden) output only.
    pub fn run(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_trace(xs)?.output)
    }

    /// Accumulates gradients into `grads` and returns d(input).
    pub fn backward_trace(
        &self,
        xs: ArrayView2<f64>,
        trace: &BiTrace<C>,
        d_out: ArrayView2<f64>,
        grads: &mut Self,
    ) -> Array2<f64> {
        let h = self.hidden();
        let dx_fwd = self
            .forward
            .scan_backward(xs, &trace.fwd, d_out.slice(s![.., ..h]), &mut grads.forward);
        let d_bwd = reversed(d_out.slice(s![.., h..]));
        let dx_bwd_rev = self.backward.scan_backward(
            reversed(xs).view(),
            &trace.bwd,
            d_bwd.view(),
            &mut grads.backward,
        );
        dx_fwd + reversed(dx_bwd_rev.view())
    }
}

/// `bigru_layer` over a whole sequence from zero initial states.
pub fn bigru_layer(seq: ArrayView2<f64>, params: &BiGruLayerParams) -> Result<Array2<f64>> {
    params.check()?;
    params.run(seq)
}
