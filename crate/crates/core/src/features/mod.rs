//! Per-slice feature extraction: the extractor contract, a deterministic stub,
//! adapters around externally supplied pretrained encoders, and an on-disk
//! feature cache.

mod backbone;
mod cache;
mod stub;

use std::path::PathBuf;

use ndarray::{Array2, ArrayView3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{preprocess, PreprocessConfig, PreprocessedVolume, VolumeRecord};
use crate::error::{Error, Result};

pub use backbone::{check_attention, BackboneAdapter, EncoderOutput, SliceEncoder};
pub use cache::FeatureCache;
pub use stub::{stub_extract, StubExtractor, STUB_ATTENTION_LAYERS, STUB_POOL_GRID};

/// Row i is the feature vector of slice i.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub volume_id: String,
    pub features: Array2<f32>,
}

impl FeatureSequence {
    pub fn depth(&self) -> usize {
        self.features.nrows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }
}

/// Head-averaged attention of one slice, one T×T row-stochastic matrix per
/// layer, T = 1 + patch tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    pub volume_id: String,
    /// 1-based.
    pub slice_index: usize,
    pub layers: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    VitLargeRetfound,
    Resnet34Imagenet,
    Stub,
}

impl ExtractorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractorKind::VitLargeRetfound => "vit_large_retfound",
            ExtractorKind::Resnet34Imagenet => "resnet34_imagenet",
            ExtractorKind::Stub => "stub",
        }
    }
}

/// Which encoder output becomes the slice embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    ClassToken,
    MeanPatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub embedding_dim: usize,
    pub input_size: (usize, usize),
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub emits_attention: bool,
    #[serde(default)]
    pub representation: Representation,
    /// Location of external weights for adapter kinds.
    #[serde(default)]
    pub weights: Option<PathBuf>,
}

impl ExtractorSpec {
    pub fn stub(seed: u64, embedding_dim: usize) -> Self {
        ExtractorSpec {
            kind: ExtractorKind::Stub,
            embedding_dim,
            input_size: (128, 128),
            seed,
            emits_attention: false,
            representation: Representation::ClassToken,
            weights: None,
        }
    }

    pub fn vit_large() -> Self {
        ExtractorSpec {
            kind: ExtractorKind::VitLargeRetfound,
            embedding_dim: 1024,
            input_size: (224, 224),
            seed: 0,
            emits_attention: true,
            representation: Representation::ClassToken,
            weights: None,
        }
    }

    pub fn resnet34() -> Self {
        ExtractorSpec {
            kind: ExtractorKind::Resnet34Imagenet,
            embedding_dim: 512,
            input_size: (224, 224),
            seed: 0,
            emits_attention: false,
            representation: Representation::ClassToken,
            weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::InvalidArgument("embedding_dim must be positive".into()));
        }
        if self.kind == ExtractorKind::Stub && self.embedding_dim < 8 {
            return Err(Error::InvalidArgument(format!(
                "stub extractor needs embedding_dim >= 8, got {}",
                self.embedding_dim
            )));
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(Error::InvalidArgument("input_size must be nonzero".into()));
        }
        Ok(())
    }

    /// `kind:dim:inputsize:seed:prep-hash`.
    pub fn fingerprint(&self, prep: &PreprocessConfig) -> String {
        let seed = match self.kind {
            ExtractorKind::Stub => self.seed,
            _ => 0,
        };
        format!(
            "{}:{}:{}x{}:{}:{}",
            self.kind.as_str(),
            self.embedding_dim,
            self.input_size.0,
            self.input_size.1,
            seed,
            prep.digest()
        )
    }
}

/// Output of one slice pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceFeatures {
    pub embedding: Vec<f32>,
    pub attention: Option<Vec<Array2<f64>>>,
}

/// A frozen per-slice encoder. Implementations must be pure functions of the
/// slice so rows of a [`FeatureSequence`] are independent of each other.
pub trait SliceFeaturizer: Send + Sync {
    fn spec(&self) -> &ExtractorSpec;

    /// `slice` is (channels, H, W) as produced by preprocessing.
    fn featurize(&self, slice: ArrayView3<f32>) -> Result<SliceFeatures>;
}

/// Instantiates the extractor named by `spec`. Adapter kinds need an encoder
/// runtime that this crate does not bundle; they report
/// [`Error::ExternalUnavailable`] so callers can fall back to the stub.
pub fn build_extractor(spec: &ExtractorSpec) -> Result<Box<dyn SliceFeaturizer>> {
    spec.validate()?;
    match spec.kind {
        ExtractorKind::Stub => Ok(Box::new(StubExtractor::from_spec(spec.clone())?)),
        kind => {
            let detail = match &spec.weights {
                None => "no weights path configured".to_string(),
                Some(p) if !p.exists() => format!("weights file {} not found", p.display()),
                Some(p) => format!(
                    "weights at {} need an external encoder; wrap one with BackboneAdapter::new",
                    p.display()
                ),
            };
            Err(Error::ExternalUnavailable(format!("{}: {detail}", kind.as_str())))
        }
    }
}

pub fn extract_features(
    extractor: &dyn SliceFeaturizer,
    volume: &PreprocessedVolume,
) -> Result<FeatureSequence> {
    let dim = extractor.spec().embedding_dim;
    let rows: Vec<Vec<f32>> = (0..volume.depth())
        .into_par_iter()
        .map(|i| {
            extractor
                .featurize(volume.slices.index_axis(Axis(0), i))
                .map(|f| f.embedding)
        })
        .collect::<Result<_>>()?;
    let mut features = Array2::zeros((rows.len(), dim));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "extractor returned {} features for slice {}, expected {dim}",
                row.len(),
                i + 1
            )));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature {v} in slice {} of `{}`",
                i + 1,
                volume.volume_id
            )));
        }
        features.row_mut(i).assign(&ndarray::ArrayView1::from(row));
    }
    Ok(FeatureSequence {
        volume_id: volume.volume_id.clone(),
        features,
    })
}

/// Features for every loaded record, served from `cache` when an entry with
/// the same fingerprint exists and stored there otherwise.
pub fn extract_dataset(
    records: &[VolumeRecord],
    extractor: &dyn SliceFeaturizer,
    prep: &PreprocessConfig,
    cache: Option<&FeatureCache>,
) -> Result<Vec<FeatureSequence>> {
    let fingerprint = extractor.spec().fingerprint(prep);
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        if let Some(hit) = cache.and_then(|c| c.get(&record.volume_id, &fingerprint)) {
            if hit.depth() == record.depth() && hit.embedding_dim() == extractor.spec().embedding_dim {
                out.push(hit);
                continue;
            }
        }
        let seq = extract_features(extractor, &preprocess(record, prep)?)?;
        if let Some(c) = cache {
            c.put(&fingerprint, &seq)?;
        }
        out.push(seq);
    }
    Ok(out)
}

/// Attention stack for one 1-based slice index.
pub fn extract_attention(
    extractor: &dyn SliceFeaturizer,
    volume: &PreprocessedVolume,
    slice_index: usize,
) -> Result<AttentionStack> {
    if slice_index == 0 || slice_index > volume.depth() {
        return Err(Error::InvalidArgument(format!(
            "slice {slice_index} outside 1..={}",
            volume.depth()
        )));
    }
    let out = extractor.featurize(volume.slices.index_axis(Axis(0), slice_index - 1))?;
    let layers = out.attention.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "extractor {} does not emit attention",
            extractor.spec().kind.as_str()
        ))
    })?;
    Ok(AttentionStack {
        volume_id: volume.volume_id.clone(),
        slice_index,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{preprocess, Label, Laterality, VolumeRecord};
    use ndarray::{s, Array3};
    use rand::{Rng as _, SeedableRng};

    fn volume(vox: Array3<u8>) -> PreprocessedVolume {
        let rec = VolumeRecord {
            volume_id: "v".into(),
            subject_id: "s".into(),
            label: Label::Glaucoma,
            laterality: Laterality::Unknown,
            signal_strength: None,
            relative_path: "v.raw".into(),
            shape: vox.dim(),
            voxels: Some(vox),
        };
        preprocess(&rec, &PreprocessConfig::default()).unwrap()
    }

    fn random_voxels(d: usize, seed: u64) -> Array3<u8> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((d, 16, 24), |_| rng.random())
    }

    #[test]
    fn identical_slices_identical_rows() {
        let mut vox = random_voxels(3, 1);
        let first = vox.slice(s![0, .., ..]).to_owned();
        vox.slice_mut(s![2, .., ..]).assign(&first);
        let ex = build_extractor(&ExtractorSpec::stub(7, 16)).unwrap();
        let f = extract_features(ex.as_ref(), &volume(vox)).unwrap();
        assert_eq!(f.features.row(0), f.features.row(2));
        assert_ne!(f.features.row(0), f.features.row(1));
    }

    #[test]
    fn permuting_slices_permutes_rows() {
        let vox = random_voxels(4, 2);
        let perm = [2usize, 0, 3, 1];
        let mut shuffled = vox.clone();
        for (i, &p) in perm.iter().enumerate() {
            shuffled.slice_mut(s![i, .., ..]).assign(&vox.slice(s![p, .., ..]));
        }
        let ex = build_extractor(&ExtractorSpec::stub(7, 16)).unwrap();
        let a = extract_features(ex.as_ref(), &volume(vox)).unwrap();
        let b = extract_features(ex.as_ref(), &volume(shuffled)).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(b.features.row(i), a.features.row(p));
        }
    }

    #[test]
    fn modifying_one_slice_changes_one_row() {
        let vox = random_voxels(5, 3);
        let mut edited = vox.clone();
        edited.slice_mut(s![3, .., ..]).mapv_inplace(|v| v / 2);
        let ex = build_extractor(&ExtractorSpec::stub(11, 12)).unwrap();
        let a = extract_features(ex.as_ref(), &volume(vox)).unwrap();
        let b = extract_features(ex.as_ref(), &volume(edited)).unwrap();
        for i in 0..5 {
            assert_eq!(a.features.row(i) == b.features.row(i), i != 3);
        }
    }

    #[test]
    fn stub_is_bitwise_deterministic() {
        let v = volume(random_voxels(3, 4));
        let a = extract_features(build_extractor(&ExtractorSpec::stub(7, 32)).unwrap().as_ref(), &v)
            .unwrap();
        let b = extract_features(build_extractor(&ExtractorSpec::stub(7, 32)).unwrap().as_ref(), &v)
            .unwrap();
        let bits = |f: &FeatureSequence| f.features.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn adapters_without_weights_are_unavailable() {
        for spec in [ExtractorSpec::vit_large(), ExtractorSpec::resnet34()] {
            assert!(matches!(
                build_extractor(&spec),
                Err(Error::ExternalUnavailable(_))
            ));
        }
    }

    #[test]
    fn fingerprint_fields() {
        let prep = PreprocessConfig::default();
        let fp = ExtractorSpec::stub(7, 32).fingerprint(&prep);
        assert!(fp.starts_with("stub:32:128x128:7:"), "{fp}");
        assert_ne!(fp, ExtractorSpec::stub(8, 32).fingerprint(&prep));
        let other = PreprocessConfig {
            mean: vec![0.5; 3],
            ..prep.clone()
        };
        assert_ne!(fp, ExtractorSpec::stub(7, 32).fingerprint(&other));
    }
}
