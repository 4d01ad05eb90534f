use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::bilayer::{BiLayerParams, BiTrace};
use super::cell::{sigmoid, RecurrentCell};
use super::gru::GruDirectionParams;
use super::lstm::LstmDirectionParams;
use crate::error::{Error, Result};
use crate::rng::{rng_from, tags};

/// Two stacked bidirectional recurrent layers, dropout on their output,
/// max-pooling over time and a single sigmoid unit.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<C> {
    pub layer1: BiLayerParams<C>,
    pub layer2: BiLayerParams<C>,
    pub dropout_rate: f64,
    /// Classifier weights over the pooled 2·hidden2 vector.
    pub w_out: Array1<f64>,
    pub b_out: f64,
}

pub type GruHead = HeadParams<GruDirectionParams>;
pub type LstmHead = HeadParams<LstmDirectionParams>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShape {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

fn check_dropout(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

impl<C: RecurrentCell> HeadParams<C> {
    pub fn zeros(shape: HeadShape, dropout_rate: f64) -> Self {
        HeadParams {
            layer1: BiLayerParams::zeros(shape.input_dim, shape.hidden1),
            layer2: BiLayerParams::zeros(2 * shape.hidden1, shape.hidden2),
            dropout_rate,
            w_out: Array1::zeros(2 * shape.hidden2),
            b_out: 0.0,
        }
    }

    /// Seeded initialization, uniform in ±1/√fan for every tensor.
    pub fn init(shape: HeadShape, dropout_rate: f64, seed: u64) -> Result<Self> {
        check_dropout(dropout_rate)?;
        if shape.input_dim == 0 || shape.hidden1 == 0 || shape.hidden2 == 0 {
            return Err(Error::InvalidArgument(format!("degenerate head shape {shape:?}")));
        }
        let mut rng = rng_from(seed, tags::INIT);
        let layer1 = BiLayerParams::init(shape.input_dim, shape.hidden1, &mut rng);
        let layer2 = BiLayerParams::init(2 * shape.hidden1, shape.hidden2, &mut rng);
        let bound = 1.0 / ((2 * shape.hidden2) as f64).sqrt();
        let w_out = Array1::from_shape_simple_fn(2 * shape.hidden2, || rng.random_range(-bound..=bound));
        let b_out = rng.random_range(-bound..=bound);
        Ok(HeadParams {
            layer1,
            layer2,
            dropout_rate,
            w_out,
            b_out,
        })
    }

    pub fn shape(&self) -> HeadShape {
        HeadShape {
            input_dim: self.layer1.input_dim(),
            hidden1: self.layer1.hidden(),
            hidden2: self.layer2.hidden(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dropout(self.dropout_rate)?;
        self.layer1.check()?;
        self.layer2.check()?;
        if self.layer2.input_dim() != self.layer1.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "layer2 input {} != 2·layer1 hidden {}",
                self.layer2.input_dim(),
                self.layer1.output_dim()
            )));
        }
        if self.w_out.len() != self.layer2.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "classifier width {} != 2·layer2 hidden {}",
                self.w_out.len(),
                self.layer2.output_dim()
            )));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape(), self.dropout_rate)
    }

    /// Visits every learnable tensor as (dotted name, shape, values).
    pub fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (prefix, cell) in [
            ("layer1.fwd", &self.layer1.forward),
            ("layer1.bwd", &self.layer1.backward),
            ("layer2.fwd", &self.layer2.forward),
            ("layer2.bwd", &self.layer2.backward),
        ] {
            cell.visit(&mut |name, shape, values| f(&format!("{prefix}.{name}"), shape, values));
        }
        f("w_out", self.w_out.shape(), self.w_out.as_slice().expect("standard layout"));
        f("b_out", &[], std::slice::from_ref(&self.b_out));
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (prefix, cell) in [
            ("layer1.fwd", &mut self.layer1.forward),
            ("layer1.bwd", &mut self.layer1.backward),
            ("layer2.fwd", &mut self.layer2.forward),
            ("layer2.bwd", &mut self.layer2.backward),
        ] {
            cell.visit_mut(&mut |name, values| f(&format!("{prefix}.{name}"), values));
        }
        f("w_out", self.w_out.as_slice_mut().expect("standard layout"));
        f("b_out", std::slice::from_mut(&mut self.b_out));
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        let n = self.num_params();
        if values.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n} parameters, got {}",
                values.len()
            )));
        }
        let mut pos = 0;
        self.visit_mut(&mut |_, dst| {
            dst.copy_from_slice(&values[pos..pos + dst.len()]);
            pos += dst.len();
        });
        Ok(())
    }

    /// `self += k · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, k: f64) {
        let flat = other.flatten();
        let mut pos = 0;
        self.visit_mut(&mut |_, dst| {
            for (d, s) in dst.iter_mut().zip(&flat[pos..]) {
                *d += k * s;
            }
            pos += dst.len();
        });
    }
}

/// How dropout is applied to the layer-2 output.
#[derive(Debug, Clone, PartialEq)]
pub enum DropoutMode {
    /// Identity.
    Eval,
    /// Fresh inverted-dropout mask drawn from `seed`.
    Train { seed: u64 },
    /// Explicit multiplier matrix (entries 0 or 1/(1−rate)).
    Mask(Array2<f64>),
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else 1/(1−rate).
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Array2<f64> {
    let mut rng = rng_from(seed, tags::DROPOUT);
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

/// Intermediates of one head evaluation, enough to back-propagate.
#[derive(Debug, Clone)]
pub struct ForwardTrace<C: RecurrentCell> {
    pub input: Array2<f64>,
    pub layer1: BiTrace<C>,
    pub layer2: BiTrace<C>,
    /// `None` when dropout is the identity.
    pub mask: Option<Array2<f64>>,
    pub pooled: Array1<f64>,
    /// Row of the maximum for each pooled channel.
    pub argmax: Vec<usize>,
    pub logit: f64,
    pub p: f64,
}

impl<C: RecurrentCell> ForwardTrace<C> {
    /// The concatenated layer-2 sequence before dropout.
    pub fn h_g(&self) -> &Array2<f64> {
        &self.layer2.output
    }
}

/// Column-wise maximum with the row index of the first maximum.
pub fn adaptive_max_pool(h: ArrayView2<f64>) -> Result<(Array1<f64>, Vec<usize>)> {
    if h.nrows() == 0 {
        return Err(Error::Precondition("cannot pool an empty sequence".into()));
    }
    let mut out = h.row(0).to_owned();
    let mut idx = vec![0usize; h.ncols()];
    for (i, row) in h.axis_iter(Axis(0)).enumerate().skip(1) {
        for (c, &v) in row.iter().enumerate() {
            if v > out[c] {
                out[c] = v;
                idx[c] = i;
            }
        }
    }
    Ok((out, idx))
}

pub fn head_forward<C: RecurrentCell>(
    seq: ArrayView2<f64>,
    params: &HeadParams<C>,
    mode: &DropoutMode,
) -> Result<(f64, ForwardTrace<C>)> {
    params.validate()?;
    let layer1 = params.layer1.forward_trace(seq)?;
    let layer2 = params.layer2.forward_trace(layer1.output.view())?;
    let (d, c) = layer2.output.dim();
    let mask = match mode {
        DropoutMode::Eval => None,
        DropoutMode::Train { .. } if params.dropout_rate == 0.0 => None,
        DropoutMode::Train { seed } => Some(dropout_mask(d, c, params.dropout_rate, *seed)),
        DropoutMode::Mask(m) => {
            if m.dim() != (d, c) {
                return Err(Error::ShapeMismatch(format!(
                    "dropout mask {:?} does not match H_G {:?}",
                    m.dim(),
                    (d, c)
                )));
            }
            Some(m.clone())
        }
    };
    let (pooled, argmax) = match &mask {
        None => adaptive_max_pool(layer2.output.view())?,
        Some(m) => adaptive_max_pool((&layer2.output * m).view())?,
    };
    let logit = params.w_out.dot(&pooled) + params.b_out;
    let p = sigmoid(logit);
    Ok((
        p,
        ForwardTrace {
            input: seq.to_owned(),
            layer1,
            layer2,
            mask,
            pooled,
            argmax,
            logit,
            p,
        },
    ))
}

/// Evaluation-mode probability.
pub fn predict<C: RecurrentCell>(seq: ArrayView2<f64>, params: &HeadParams<C>) -> Result<f64> {
    head_forward(seq, params, &DropoutMode::Eval).map(|(p, _)| p)
}

/// Gradients of a scalar loss L(p) with respect to every parameter and the
/// input sequence.
#[derive(Debug, Clone)]
pub struct HeadGradients<C> {
    pub params: HeadParams<C>,
    pub input: Array2<f64>,
}

pub fn head_backward<C: RecurrentCell>(
    trace: &ForwardTrace<C>,
    dl_dp: f64,
    params: &HeadParams<C>,
) -> Result<HeadGradients<C>> {
    params.validate()?;
    let shape = params.shape();
    let (d, width) = trace.input.dim();
    if width != shape.input_dim
        || trace.layer1.output.ncols() != 2 * shape.hidden1
        || trace.layer2.output.ncols() != 2 * shape.hidden2
        || trace.pooled.len() != params.w_out.len()
    {
        return Err(Error::ShapeMismatch(
            "forward trace was produced by differently shaped parameters".into(),
        ));
    }
    let mut grads = params.zeros_like();

    let d_logit = dl_dp * trace.p * (1.0 - trace.p);
    grads.b_out = d_logit;
    grads.w_out = &trace.pooled * d_logit;

    // pooled gradient lands only on the recorded argmax rows
    let mut d_hg = Array2::<f64>::zeros((d, 2 * shape.hidden2));
    for (c, &row) in trace.argmax.iter().enumerate() {
        d_hg[[row, c]] = d_logit * params.w_out[c];
    }
    if let Some(m) = &trace.mask {
        d_hg *= m;
    }

    let d_l1 = params.layer2.backward_trace(
        trace.layer1.output.view(),
        &trace.layer2,
        d_hg.view(),
        &mut grads.layer2,
    );
    let d_input = params.layer1.backward_trace(
        trace.input.view(),
        &trace.layer1,
        d_l1.view(),
        &mut grads.layer1,
    );
    Ok(HeadGradients {
        params: grads,
        input: d_input,
    })
}
