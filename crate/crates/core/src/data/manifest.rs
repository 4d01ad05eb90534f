use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 9] = [
    "volume_id",
    "subject_id",
    "label",
    "laterality",
    "signal_strength",
    "relative_path",
    "depth",
    "height",
    "width",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal = 0,
    Glaucoma = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Normal),
            1 => Some(Label::Glaucoma),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn is_positive(self) -> bool {
        self == Label::Glaucoma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Laterality {
    Left,
    Right,
    #[default]
    Unknown,
}

impl Laterality {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" | "os" => Some(Laterality::Left),
            "right" | "r" | "od" => Some(Laterality::Right),
            "unknown" | "" => Some(Laterality::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for Laterality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Laterality::Left => "left",
            Laterality::Right => "right",
            Laterality::Unknown => "unknown",
        })
    }
}

/// One volumetric scan. `voxels` is `None` until [`load_voxels`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRecord {
    pub volume_id: String,
    pub subject_id: String,
    pub label: Label,
    pub laterality: Laterality,
    pub signal_strength: Option<i32>,
    pub relative_path: PathBuf,
    /// Declared (depth, height, width).
    pub shape: (usize, usize, usize),
    /// D×H×W intensities, slice-major.
    pub voxels: Option<Array3<u8>>,
}

impl VolumeRecord {
    pub fn depth(&self) -> usize {
        self.shape.0
    }

    pub fn is_loaded(&self) -> bool {
        self.voxels.is_some()
    }

    /// 0-based slice view. Panics if voxels are not loaded.
    pub fn slice(&self, index: usize) -> ArrayView2<'_, u8> {
        self.voxels
            .as_ref()
            .expect("voxels not loaded")
            .index_axis(Axis(0), index)
    }
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    volume_id: String,
    subject_id: String,
    label: String,
    laterality: String,
    signal_strength: String,
    relative_path: String,
    depth: String,
    height: String,
    width: String,
}

fn parse_dim(row: usize, name: &str, raw: &str) -> Result<usize> {
    let v: usize = raw.trim().parse().map_err(|_| Error::ManifestRow {
        row,
        message: format!("{name} `{raw}` is not a non-negative integer"),
    })?;
    if v == 0 {
        return Err(Error::ManifestRow {
            row,
            message: format!("{name} must be at least 1"),
        });
    }
    Ok(v)
}

impl ManifestRow {
    fn into_record(self, row: usize) -> Result<VolumeRecord> {
        let bad = |message: String| Error::ManifestRow { row, message };
        if self.volume_id.trim().is_empty() {
            return Err(bad("empty volume_id".into()));
        }
        if self.subject_id.trim().is_empty() {
            return Err(bad("empty subject_id".into()));
        }
        let label = self
            .label
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| bad(format!("label `{}` must be 0 or 1", self.label)))?;
        let laterality = Laterality::parse(&self.laterality)
            .ok_or_else(|| bad(format!("unknown laterality `{}`", self.laterality)))?;
        let signal_strength = match self.signal_strength.trim() {
            "" => None,
            s => Some(
                s.parse::<i32>()
                    .map_err(|_| bad(format!("signal_strength `{s}` is not an integer")))?,
            ),
        };
        if self.relative_path.trim().is_empty() {
            return Err(bad("empty relative_path".into()));
        }
        Ok(VolumeRecord {
            volume_id: self.volume_id.trim().to_string(),
            subject_id: self.subject_id.trim().to_string(),
            label,
            laterality,
            signal_strength,
            relative_path: PathBuf::from(self.relative_path.trim()),
            shape: (
                parse_dim(row, "depth", &self.depth)?,
                parse_dim(row, "height", &self.height)?,
                parse_dim(row, "width", &self.width)?,
            ),
            voxels: None,
        })
    }
}

/// Reads a manifest CSV. Row numbers in errors are 1-based data rows
/// (the header is row 0).
pub fn load_manifest(path: &Path) -> Result<Vec<VolumeRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader.headers()?.clone();
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let got: Vec<&str> = headers.iter().collect();
    if got != MANIFEST_HEADER {
        return Err(Error::ManifestRow {
            row: 0,
            message: format!(
                "header must be `{}`, found `{}`",
                MANIFEST_HEADER.join(","),
                got.join(",")
            ),
        });
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::ManifestRow {
            row: row_no,
            message: e.to_string(),
        })?;
        let record = row.into_record(row_no)?;
        if !seen.insert(record.volume_id.clone()) {
            return Err(Error::DuplicateVolume(record.volume_id));
        }
        out.push(record);
    }
    Ok(out)
}

/// Populates `record.voxels` from `data_dir/relative_path`. Already-loaded
/// records are returned unchanged.
pub fn load_voxels(mut record: VolumeRecord, data_dir: &Path) -> Result<VolumeRecord> {
    if record.voxels.is_some() {
        return Ok(record);
    }
    let path = data_dir.join(&record.relative_path);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let (d, h, w) = record.shape;
    let expected = d * h * w;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "volume `{}`: declared {d}x{h}x{w} = {expected} bytes, file {} holds {}",
            record.volume_id,
            path.display(),
            bytes.len()
        )));
    }
    let grid = Array3::from_shape_vec((d, h, w), bytes).expect("length checked above");
    record.voxels = Some(grid);
    Ok(record)
}

pub fn write_manifest(path: &Path, records: &[VolumeRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(MANIFEST_HEADER)?;
    for r in records {
        writer.write_record([
            r.volume_id.clone(),
            r.subject_id.clone(),
            r.label.as_u8().to_string(),
            r.laterality.to_string(),
            r.signal_strength.map(|s| s.to_string()).unwrap_or_default(),
            r.relative_path.to_string_lossy().into_owned(),
            r.shape.0.to_string(),
            r.shape.1.to_string(),
            r.shape.2.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes `manifest.csv` plus one raw voxel file per loaded record into `dir`.
pub fn write_dataset(dir: &Path, records: &[VolumeRecord]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in records {
        let voxels = r.voxels.as_ref().ok_or_else(|| {
            Error::Precondition(format!("volume `{}` has no voxels to write", r.volume_id))
        })?;
        let path = dir.join(&r.relative_path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes: Vec<u8> = voxels.iter().copied().collect();
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, records)?;
    Ok(manifest)
}
