use ndarray::{Array2, Array3, ArrayView3, Axis};

use super::{ExtractorSpec, Representation, SliceFeaturizer, SliceFeatures};
use crate::data::bilinear_resize;
use crate::error::{Error, Result};

/// Raw output of an externally supplied encoder for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub class_token: Vec<f32>,
    /// (patches, E); needed only for [`Representation::MeanPatch`].
    pub patch_tokens: Option<Array2<f32>>,
    /// Per-layer head-averaged attention, if the encoder exposes it.
    pub attention: Option<Vec<Array2<f64>>>,
}

/// A frozen pretrained network evaluated on one (3, h, w) image at its
/// native input size. Must be deterministic in evaluation mode.
pub trait SliceEncoder: Send + Sync {
    fn encode(&self, image: ArrayView3<f32>) -> Result<EncoderOutput>;
}

/// Wraps a [`SliceEncoder`]: resizes preprocessed slices to the encoder's
/// input size, selects the configured representation and validates shapes.
pub struct BackboneAdapter {
    spec: ExtractorSpec,
    encoder: Box<dyn SliceEncoder>,
}

impl BackboneAdapter {
    pub fn new(spec: ExtractorSpec, encoder: Box<dyn SliceEncoder>) -> Result<Self> {
        spec.validate()?;
        Ok(BackboneAdapter { spec, encoder })
    }

    fn resize(&self, slice: ArrayView3<f32>) -> Array3<f32> {
        let (c, h, w) = slice.dim();
        let (th, tw) = self.spec.input_size;
        if (h, w) == (th, tw) {
            return slice.to_owned();
        }
        let mut out = Array3::zeros((c, th, tw));
        for (ch, mut dst) in out.axis_iter_mut(Axis(0)).enumerate() {
            let src = slice.index_axis(Axis(0), ch).mapv(f64::from);
            let resized = bilinear_resize(src.view(), th, tw);
            dst.zip_mut_with(&resized, |d, &v| *d = v as f32);
        }
        out
    }
}

/// Checks that every layer is square and row-stochastic within 1e-6.
pub fn check_attention(layers: &[Array2<f64>]) -> Result<()> {
    let t = layers.first().map(|a| a.nrows()).unwrap_or(0);
    for (l, a) in layers.iter().enumerate() {
        if a.dim() != (t, t) {
            return Err(Error::ShapeMismatch(format!(
                "attention layer {l} is {:?}, expected {t}x{t}",
                a.dim()
            )));
        }
        for (i, row) in a.rows().into_iter().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "attention layer {l} row {i} has negative or non-finite entries"
                )));
            }
            let s = row.sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "attention layer {l} row {i} sums to {s}"
                )));
            }
        }
    }
    Ok(())
}

impl SliceFeaturizer for BackboneAdapter {
    fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    fn featurize(&self, slice: ArrayView3<f32>) -> Result<SliceFeatures> {
        let (channels, _, _) = slice.dim();
        let image = match channels {
            3 => self.resize(slice),
            1 => {
                let gray = self.resize(slice);
                ndarray::concatenate(Axis(0), &[gray.view(), gray.view(), gray.view()])
                    .expect("same shapes")
            }
            c => {
                return Err(Error::ShapeMismatch(format!(
                    "backbone input needs 1 or 3 channels, got {c}"
                )))
            }
        };
        let out = self.encoder.encode(image.view())?;
        let embedding = match self.spec.representation {
            Representation::ClassToken => out.class_token,
            Representation::MeanPatch => {
                let patches = out.patch_tokens.ok_or_else(|| {
                    Error::InvalidArgument("encoder returned no patch tokens".into())
                })?;
                patches
                    .mean_axis(Axis(0))
                    .ok_or_else(|| Error::ShapeMismatch("zero patch tokens".into()))?
                    .to_vec()
            }
        };
        if embedding.len() != self.spec.embedding_dim {
            return Err(Error::ShapeMismatch(format!(
                "encoder produced {} features, adapter declares {}",
                embedding.len(),
                self.spec.embedding_dim
            )));
        }
        let attention = if self.spec.emits_attention {
            let layers = out.attention.ok_or_else(|| {
                Error::InvalidArgument("adapter expects attention but encoder gave none".into())
            })?;
            check_attention(&layers)?;
            Some(layers)
        } else {
            None
        };
        Ok(SliceFeatures {
            embedding,
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ExtractorKind;
    use std::sync::{Arc, Mutex};

    /// Test double: embeds summary statistics of the image, uniform attention.
    #[derive(Default)]
    struct FakeVit {
        seen: Arc<Mutex<Vec<(usize, usize, usize)>>>,
    }

    impl SliceEncoder for FakeVit {
        fn encode(&self, image: ArrayView3<f32>) -> Result<EncoderOutput> {
            self.seen.lock().unwrap().push(image.dim());
            let mean = image.mean().unwrap();
            let class_token = (0..1024).map(|i| mean * i as f32).collect();
            let t = 1 + 14 * 14;
            let attention = vec![Array2::from_elem((t, t), 1.0 / t as f64); 24];
            Ok(EncoderOutput {
                class_token,
                patch_tokens: Some(Array2::from_elem((196, 1024), mean)),
                attention: Some(attention),
            })
        }
    }

    fn fake() -> Box<FakeVit> {
        Box::default()
    }

    #[test]
    fn vit_adapter_dims_and_determinism() {
        let spec = ExtractorSpec::vit_large();
        assert_eq!(spec.kind, ExtractorKind::VitLargeRetfound);
        let adapter = BackboneAdapter::new(spec, fake()).unwrap();
        let slice = Array3::from_shape_fn((3, 128, 128), |(c, i, j)| (c + i + j) as f32 / 300.0);
        let a = adapter.featurize(slice.view()).unwrap();
        let b = adapter.featurize(slice.view()).unwrap();
        assert_eq!(a.embedding.len(), 1024);
        assert_eq!(a, b);
        assert_eq!(a.attention.as_ref().unwrap().len(), 24);
    }

    #[test]
    fn adapter_resizes_to_input_size() {
        let enc = fake();
        let seen = Arc::clone(&enc.seen);
        let adapter = BackboneAdapter::new(ExtractorSpec::vit_large(), enc).unwrap();
        adapter.featurize(Array3::zeros((1, 128, 128)).view()).unwrap();
        assert_eq!(*seen.lock().unwrap(), vec![(3, 224, 224)]);
    }

    #[test]
    fn attention_absent_when_not_requested() {
        let spec = ExtractorSpec {
            emits_attention: false,
            ..ExtractorSpec::vit_large()
        };
        let adapter = BackboneAdapter::new(spec, fake()).unwrap();
        let out = adapter.featurize(Array3::zeros((3, 128, 128)).view()).unwrap();
        assert!(out.attention.is_none());
    }

    #[test]
    fn declared_dim_mismatch() {
        let spec = ExtractorSpec {
            embedding_dim: 512,
            ..ExtractorSpec::vit_large()
        };
        let adapter = BackboneAdapter::new(spec, fake()).unwrap();
        assert!(matches!(
            adapter.featurize(Array3::zeros((3, 128, 128)).view()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn mean_patch_representation() {
        let spec = ExtractorSpec {
            representation: Representation::MeanPatch,
            ..ExtractorSpec::vit_large()
        };
        let adapter = BackboneAdapter::new(spec, fake()).unwrap();
        let out = adapter
            .featurize(Array3::from_elem((3, 128, 128), 0.5).view())
            .unwrap();
        assert!(out.embedding.iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn rejects_non_stochastic_attention() {
        let mut bad = Array2::from_elem((3, 3), 1.0 / 3.0);
        bad[[1, 1]] = 0.5;
        assert!(check_attention(&[bad]).is_err());
        assert!(check_attention(&[Array2::eye(5)]).is_ok());
    }
}
