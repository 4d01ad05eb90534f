use ndarray::{Array1, Array2, ArrayView2, ArrayView3, Axis};
use rand::Rng as _;

use super::{ExtractorKind, ExtractorSpec, SliceFeaturizer, SliceFeatures};
use crate::error::{Error, Result};
use crate::rng::{rng_from, tags};

/// The slice is average-pooled onto this square grid before projection.
pub const STUB_POOL_GRID: usize = 8;
/// Depth of the synthetic attention stack emitted by the stub.
pub const STUB_ATTENTION_LAYERS: usize = 4;

/// Deterministic stand-in for a pretrained encoder:
/// `tanh(P·pool(slice) + b)` in the first E−2 coordinates, followed by the
/// slice mean and standard deviation. The two raw statistics make
/// intensity-separable synthetic volumes linearly separable in feature space.
#[derive(Debug, Clone)]
pub struct StubExtractor {
    spec: ExtractorSpec,
    projection: Array2<f64>,
    bias: Array1<f64>,
}

impl StubExtractor {
    pub fn from_seed(seed: u64, embedding_dim: usize) -> Result<Self> {
        Self::from_spec(ExtractorSpec::stub(seed, embedding_dim))
    }

    pub fn from_spec(spec: ExtractorSpec) -> Result<Self> {
        if spec.kind != ExtractorKind::Stub {
            return Err(Error::InvalidArgument(format!(
                "{} is not a stub spec",
                spec.kind.as_str()
            )));
        }
        spec.validate()?;
        let rows = spec.embedding_dim - 2;
        let cols = STUB_POOL_GRID * STUB_POOL_GRID;
        let mut rng = rng_from(spec.seed, tags::STUB);
        let projection = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..=1.0));
        let bias = Array1::from_shape_simple_fn(rows, || rng.random_range(-1.0..=1.0));
        Ok(StubExtractor {
            spec,
            projection,
            bias,
        })
    }

    /// Same projection with the bias forced to zero.
    pub fn with_zero_bias(mut self) -> Self {
        self.bias.fill(0.0);
        self
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    /// Embedding of a single-channel slice.
    pub fn embed(&self, slice: ArrayView2<f32>) -> Result<Vec<f32>> {
        let pooled = pool(slice)?;
        let (mean, std) = mean_std(slice);
        let mut out: Vec<f32> = (self.projection.dot(&pooled) + &self.bias)
            .iter()
            .map(|&v| v.tanh() as f32)
            .collect();
        out.push(mean as f32);
        out.push(std as f32);
        Ok(out)
    }

    /// Synthetic head-averaged attention over the class token plus the
    /// pooled patch grid. Token affinity decays with squared intensity
    /// difference, sharper in deeper layers.
    pub fn attention(&self, slice: ArrayView2<f32>) -> Result<Vec<Array2<f64>>> {
        let pooled = pool(slice)?;
        let (mean, _) = mean_std(slice);
        let tokens: Vec<f64> = std::iter::once(mean).chain(pooled.iter().copied()).collect();
        let t = tokens.len();
        Ok((0..STUB_ATTENTION_LAYERS)
            .map(|layer| {
                let sharpness = 1.0 + layer as f64;
                let mut a = Array2::from_shape_fn((t, t), |(i, j)| {
                    let d = tokens[i] - tokens[j];
                    (-sharpness * d * d).exp()
                });
                for mut row in a.axis_iter_mut(Axis(0)) {
                    let s = row.sum();
                    row.mapv_inplace(|v| v / s);
                }
                a
            })
            .collect())
    }
}

impl SliceFeaturizer for StubExtractor {
    fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    fn featurize(&self, slice: ArrayView3<f32>) -> Result<SliceFeatures> {
        if slice.dim().0 == 0 {
            return Err(Error::ShapeMismatch("slice has no channels".into()));
        }
        let gray = slice.index_axis(Axis(0), 0);
        Ok(SliceFeatures {
            embedding: self.embed(gray)?,
            attention: if self.spec.emits_attention {
                Some(self.attention(gray)?)
            } else {
                None
            },
        })
    }
}

/// One-shot stub evaluation.
pub fn stub_extract(seed: u64, embedding_dim: usize, slice: ArrayView2<f32>) -> Result<Vec<f32>> {
    StubExtractor::from_seed(seed, embedding_dim)?.embed(slice)
}

/// Row-major 8×8 block means.
fn pool(slice: ArrayView2<f32>) -> Result<Array1<f64>> {
    let (h, w) = slice.dim();
    let g = STUB_POOL_GRID;
    if h < g || w < g {
        return Err(Error::ShapeMismatch(format!(
            "stub needs slices of at least {g}x{g}, got {h}x{w}"
        )));
    }
    let mut out = Array1::zeros(g * g);
    for a in 0..g {
        let (r0, r1) = (a * h / g, (a + 1) * h / g);
        for b in 0..g {
            let (c0, c1) = (b * w / g, (b + 1) * w / g);
            let block = slice.slice(ndarray::s![r0..r1, c0..c1]);
            let sum: f64 = block.iter().map(|&v| v as f64).sum();
            out[a * g + b] = sum / block.len() as f64;
        }
    }
    Ok(out)
}

/// Population mean and standard deviation.
fn mean_std(slice: ArrayView2<f32>) -> (f64, f64) {
    let n = slice.len() as f64;
    let mean = slice.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = slice.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
