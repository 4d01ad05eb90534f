use ndarray::Array3;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Label, Laterality, VolumeRecord};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, tags};

/// Generator settings for the synthetic two-class volume set. Intensities
/// are on a 0..1 scale before quantization to 8 bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub mu_neg: f64,
    pub mu_pos: f64,
    pub noise: f64,
    /// Intensity removed from positive volumes inside the band.
    pub band_drop: f64,
    /// Band of slices, as fractions of the depth.
    pub band: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pos: 60,
            n_neg: 30,
            depth: 64,
            height: 32,
            width: 32,
            mu_neg: 0.3,
            mu_pos: 0.6,
            noise: 0.05,
            band_drop: 0.15,
            band: (0.375, 0.625),
            seed: 0,
        }
    }
}

/// Loaded synthetic records, positives first, one subject per volume.
pub fn make_synthetic_dataset(cfg: &SynthConfig) -> Result<Vec<VolumeRecord>> {
    if cfg.n_pos == 0 || cfg.n_neg == 0 {
        return Err(Error::Precondition(format!(
            "synthetic data needs both classes, got {} positive and {} negative",
            cfg.n_pos, cfg.n_neg
        )));
    }
    if cfg.depth == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::InvalidArgument("synthetic volumes need nonzero dimensions".into()));
    }
    let noise = Normal::new(0.0, cfg.noise)
        .map_err(|e| Error::InvalidArgument(format!("noise level {}: {e}", cfg.noise)))?;
    let band_lo = (cfg.band.0 * cfg.depth as f64).floor() as usize;
    let band_hi = (cfg.band.1 * cfg.depth as f64).ceil() as usize;
    let n = cfg.n_pos + cfg.n_neg;
    let width = n.to_string().len().max(4);

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i < cfg.n_pos { Label::Glaucoma } else { Label::Normal };
        let mut rng = rng_from(derive_seed(cfg.seed, i as u64), tags::SYNTH);
        let voxels = Array3::from_shape_fn((cfg.depth, cfg.height, cfg.width), |(d, _, _)| {
            let mu = match label {
                Label::Glaucoma if (band_lo..band_hi).contains(&d) => cfg.mu_pos - cfg.band_drop,
                Label::Glaucoma => cfg.mu_pos,
                Label::Normal => cfg.mu_neg,
            };
            let v = (mu + noise.sample(&mut rng)).clamp(0.0, 1.0);
            (v * 255.0).round() as u8
        });
        let id = format!("synth-{i:0width$}");
        records.push(VolumeRecord {
            volume_id: id.clone(),
            subject_id: id.clone(),
            label,
            laterality: if i % 2 == 0 { Laterality::Right } else { Laterality::Left },
            signal_strength: None,
            relative_path: format!("{id}.raw").into(),
            shape: (cfg.depth, cfg.height, cfg.width),
            voxels: Some(voxels),
        });
    }
    Ok(records)
}
