use ndarray::{Array2, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VolumeRecord;
use crate::error::{Error, Result};

/// Conventional ImageNet channel statistics (RGB).
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Output (height, width) of every slice.
    pub target: (usize, usize),
    /// One entry per output channel; the grayscale slice is replicated.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target: (128, 128),
            mean: IMAGENET_MEAN.to_vec(),
            std: IMAGENET_STD.to_vec(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target.0 == 0 || self.target.1 == 0 {
            return Err(Error::InvalidArgument("resize target must be nonzero".into()));
        }
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(Error::InvalidArgument(format!(
                "need matching per-channel mean/std, got {} and {}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some(c) = self.std.iter().position(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "std of channel {c} must be finite and nonzero"
            )));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("mean must be finite".into()));
        }
        Ok(())
    }

    /// Short stable digest of the constants, used in cache fingerprints.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.target.0 as u64).to_le_bytes());
        h.update((self.target.1 as u64).to_le_bytes());
        for v in self.mean.iter().chain(&self.std) {
            h.update(v.to_le_bytes());
        }
        h.finalize()[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedVolume {
    pub volume_id: String,
    /// (D, channels, H, W).
    pub slices: Array4<f32>,
    pub channel_stats_applied: Vec<(f64, f64)>,
}

impl PreprocessedVolume {
    pub fn depth(&self) -> usize {
        self.slices.dim().0
    }
}

/// Corner-aligned bilinear resize: output pixel (i, j) samples the source
/// at (i·(h−1)/(H−1), j·(w−1)/(W−1)), so the four corners map exactly.
pub fn bilinear_resize(src: ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    assert!(h > 0 && w > 0 && out_h > 0 && out_w > 0, "empty resize");
    let scale = |n_in: usize, n_out: usize| {
        if n_out == 1 {
            0.0
        } else {
            (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let (sy, sx) = (scale(h, out_h), scale(w, out_w));

    let axis = |n_in: usize, n_out: usize, s: f64| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let pos = i as f64 * s;
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = axis(h, out_h, sy);
    let xs = axis(w, out_w, sx);

    let mut out = Array2::zeros((out_h, out_w));
    for (i, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (j, &(x0, x1, fx)) in xs.iter().enumerate() {
            let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
            let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
            out[[i, j]] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// Maps intensities to [0, 1], resizes every slice to `cfg.target`, then
/// normalizes each replicated channel with its (mean, std).
pub fn preprocess(volume: &VolumeRecord, cfg: &PreprocessConfig) -> Result<PreprocessedVolume> {
    cfg.validate()?;
    let voxels = volume.voxels.as_ref().ok_or_else(|| {
        Error::Precondition(format!("volume `{}` voxels not loaded", volume.volume_id))
    })?;
    let (d, h, w) = voxels.dim();
    if d == 0 || h == 0 || w == 0 {
        return Err(Error::Precondition(format!(
            "volume `{}` is empty",
            volume.volume_id
        )));
    }
    let (th, tw) = cfg.target;
    let channels = cfg.mean.len();
    let mut slices = Array4::<f32>::zeros((d, channels, th, tw));
    for (i, slice) in voxels.axis_iter(Axis(0)).enumerate() {
        let unit = slice.mapv(|v| v as f64 / 255.0);
        let resized = bilinear_resize(unit.view(), th, tw);
        let mut out = slices.index_axis_mut(Axis(0), i);
        for c in 0..channels {
            let (m, s) = (cfg.mean[c], cfg.std[c]);
            out.index_axis_mut(Axis(0), c)
                .zip_mut_with(&resized, |o, &v| *o = ((v - m) / s) as f32);
        }
    }
    Ok(PreprocessedVolume {
        volume_id: volume.volume_id.clone(),
        slices,
        channel_stats_applied: cfg.mean.iter().copied().zip(cfg.std.iter().copied()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, Laterality};
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn record(voxels: Array3<u8>) -> VolumeRecord {
        VolumeRecord {
            volume_id: "v".into(),
            subject_id: "s".into(),
            label: Label::Normal,
            laterality: Laterality::Unknown,
            signal_strength: None,
            relative_path: "v.raw".into(),
            shape: voxels.dim(),
            voxels: Some(voxels),
        }
    }

    #[test]
    fn constant_white_slice() {
        let rec = record(Array3::from_elem((2, 5, 7), 255));
        let cfg = PreprocessConfig {
            target: (128, 128),
            mean: vec![0.5],
            std: vec![0.5],
        };
        let out = preprocess(&rec, &cfg).unwrap();
        assert_eq!(out.slices.dim(), (2, 1, 128, 128));
        assert!(out.slices.iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn corners_preserved() {
        let src = Array2::from_shape_fn((64, 64), |(i, j)| ((i * 64 + j) % 251) as f64);
        let out = bilinear_resize(src.view(), 128, 128);
        assert_eq!(out[[0, 0]], src[[0, 0]]);
        assert_eq!(out[[0, 127]], src[[0, 63]]);
        assert_eq!(out[[127, 0]], src[[63, 0]]);
        assert_eq!(out[[127, 127]], src[[63, 63]]);
    }

    #[test]
    fn checkerboard_matches_reference() {
        // Frozen values from evaluating the corner-aligned bilinear formula by
        // hand: sample positions are 0, 1/3, 2/3, 1 on both axes.
        let src = array![[1.0, 0.0], [0.0, 1.0]];
        let out = bilinear_resize(src.view(), 4, 4);
        let t = 1.0 / 3.0;
        let f = |y: f64, x: f64| (1.0 - y) * (1.0 - x) + y * x;
        for i in 0..4 {
            for j in 0..4 {
                let want = f(i as f64 * t, j as f64 * t);
                assert!((out[[i, j]] - want).abs() < 1e-12, "({i},{j})");
            }
        }
        assert!((out[[1, 1]] - 5.0 / 9.0).abs() < 1e-12);
        assert!((out[[1, 2]] - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let mut rec = record(Array3::from_elem((1, 2, 2), 3));
        let zero = PreprocessConfig {
            target: (4, 4),
            mean: vec![0.0],
            std: vec![0.0],
        };
        assert!(matches!(preprocess(&rec, &zero), Err(Error::InvalidArgument(_))));
        rec.voxels = Some(Array3::zeros((0, 2, 2)));
        assert!(matches!(
            preprocess(&rec, &PreprocessConfig::default()),
            Err(Error::Precondition(_))
        ));
    }

    proptest! {
        #[test]
        fn finite_and_order_preserving(bytes in proptest::collection::vec(any::<u8>(), 3 * 4 * 5)) {
            let vox = Array3::from_shape_vec((3, 4, 5), bytes).unwrap();
            let rec = record(vox.clone());
            let cfg = PreprocessConfig { target: (6, 9), ..Default::default() };
            let out = preprocess(&rec, &cfg).unwrap();
            prop_assert!(out.slices.iter().all(|v| v.is_finite()));
            // each output slice is the preprocessing of the matching input slice alone
            for d in 0..3 {
                let single = record(vox.slice(ndarray::s![d..d + 1, .., ..]).to_owned());
                let one = preprocess(&single, &cfg).unwrap();
                prop_assert_eq!(one.slices.index_axis(Axis(0), 0), out.slices.index_axis(Axis(0), d));
            }
        }
    }
}
