use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{Label, VolumeRecord};
use crate::error::{Error, Result};
use crate::model::AnyHead;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EmbeddingSource {
    /// One slice's extractor features (1-based index).
    SliceFeatures { slice_index: usize },
    /// The pooled vector the classifier reads.
    HeadPooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingExport {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    pub rows: Array2<f64>,
    pub source: EmbeddingSource,
    pub fingerprint: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    source: EmbeddingSource,
    fingerprint: String,
    rows: usize,
    cols: usize,
}

fn check_pairing(records: &[VolumeRecord], sequences: &[Array2<f64>]) -> Result<()> {
    if records.len() != sequences.len() || records.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} records but {} feature sequences",
            records.len(),
            sequences.len()
        )));
    }
    Ok(())
}

/// Rows of one slice across volumes.
pub fn slice_feature_embeddings(
    records: &[VolumeRecord],
    sequences: &[Array2<f64>],
    slice_index: usize,
    fingerprint: &str,
) -> Result<EmbeddingExport> {
    check_pairing(records, sequences)?;
    let e = sequences[0].ncols();
    let mut rows = Array2::zeros((records.len(), e));
    for (r, seq) in sequences.iter().enumerate() {
        if slice_index == 0 || slice_index > seq.nrows() || seq.ncols() != e {
            return Err(Error::InvalidArgument(format!(
                "slice {slice_index} unavailable for `{}`",
                records[r].volume_id
            )));
        }
        rows.row_mut(r).assign(&seq.row(slice_index - 1));
    }
    Ok(EmbeddingExport {
        ids: records.iter().map(|r| r.volume_id.clone()).collect(),
        labels: records.iter().map(|r| r.label).collect(),
        rows,
        source: EmbeddingSource::SliceFeatures { slice_index },
        fingerprint: fingerprint.to_string(),
    })
}

/// Pooled head activations in evaluation mode.
pub fn pooled_embeddings(
    records: &[VolumeRecord],
    sequences: &[Array2<f64>],
    head: &AnyHead,
    fingerprint: &str,
) -> Result<EmbeddingExport> {
    check_pairing(records, sequences)?;
    let width = 2 * head.shape().hidden2;
    let mut rows = Array2::zeros((records.len(), width));
    for (r, seq) in sequences.iter().enumerate() {
        rows.row_mut(r).assign(&head.pooled(seq.view())?);
    }
    Ok(EmbeddingExport {
        ids: records.iter().map(|r| r.volume_id.clone()).collect(),
        labels: records.iter().map(|r| r.label).collect(),
        rows,
        source: EmbeddingSource::HeadPooled,
        fingerprint: fingerprint.to_string(),
    })
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

fn write_rows(path: &Path, ids: &[String], labels: &[Label], rows: ArrayView2<f64>) -> Result<()> {
    let mut out = String::from("id,label");
    for j in 0..rows.ncols() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for ((id, l), row) in ids.iter().zip(labels).zip(rows.rows()) {
        if id.contains([',', '"', '\n']) {
            return Err(Error::InvalidArgument(format!("id {id:?} cannot be written unquoted")));
        }
        out.push_str(id);
        out.push_str(&format!(",{}", l.as_u8()));
        for v in row {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// CSV with header `id,label,f0..f{d-1}` (17 significant digits) plus a
/// `<file>.json` sidecar naming the source and extractor fingerprint.
pub fn export_embeddings(export: &EmbeddingExport, path: &Path) -> Result<()> {
    if export.ids.len() != export.rows.nrows() || export.labels.len() != export.rows.nrows() {
        return Err(Error::ShapeMismatch("ids, labels and rows disagree in length".into()));
    }
    write_rows(path, &export.ids, &export.labels, export.rows.view())?;
    let sidecar = Sidecar {
        source: export.source,
        fingerprint: export.fingerprint.clone(),
        rows: export.rows.nrows(),
        cols: export.rows.ncols(),
    };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&sp, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingExport> {
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers()?.clone();
    if header.len() != sidecar.cols + 2 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            message: "unexpected embedding header".into(),
        });
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let bad = |m: String| Error::Corrupt {
            path: path.to_path_buf(),
            message: m,
        };
        ids.push(rec[0].to_string());
        let l: u8 = rec[1].parse().map_err(|_| bad(format!("label {:?}", &rec[1])))?;
        labels.push(Label::from_u8(l).ok_or_else(|| bad(format!("label {l}")))?);
        for field in rec.iter().skip(2) {
            values.push(field.parse::<f64>().map_err(|_| bad(format!("value {field:?}")))?);
        }
    }
    let rows = Array2::from_shape_vec((ids.len(), sidecar.cols), values).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if rows.nrows() != sidecar.rows {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            message: format!("{} rows, sidecar declares {}", rows.nrows(), sidecar.rows),
        });
    }
    Ok(EmbeddingExport {
        ids,
        labels,
        rows,
        source: sidecar.source,
        fingerprint: sidecar.fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CellKind, HeadShape};
    use crate::rng::rng_from;
    use rand::Rng;

    fn records(n: usize) -> Vec<VolumeRecord> {
        (0..n)
            .map(|i| VolumeRecord {
                volume_id: format!("v{i}"),
                subject_id: format!("s{i}"),
                label: if i % 2 == 0 { Label::Glaucoma } else { Label::Normal },
                laterality: crate::data::Laterality::Unknown,
                signal_strength: None,
                relative_path: "x.raw".into(),
                shape: (4, 1, 1),
                voxels: None,
            })
            .collect()
    }

    fn seqs(n: usize, e: usize) -> Vec<Array2<f64>> {
        let mut rng = rng_from(1, 0);
        (0..n)
            .map(|_| Array2::from_shape_simple_fn((4, e), || rng.random_range(-1e3..1e3) * rng.random::<f64>()))
            .collect()
    }

    #[test]
    fn pooled_width_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let head = AnyHead::init(
            CellKind::Gru,
            HeadShape {
                input_dim: 6,
                hidden1: 5,
                hidden2: 3,
            },
            0.3,
            2,
        )
        .unwrap();
        let ex = pooled_embeddings(&records(10), &seqs(10, 6), &head, "fp").unwrap();
        assert_eq!(ex.rows.dim(), (10, 6));
        let path = dir.path().join("pooled.csv");
        export_embeddings(&ex, &path).unwrap();
        assert_eq!(read_embeddings(&path).unwrap(), ex);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,label,f0,f1,f2,f3,f4,f5\n"));
    }

    #[test]
    fn slice_rows_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = seqs(3, 7);
        let ex = slice_feature_embeddings(&records(3), &s, 2, "fp").unwrap();
        assert_eq!(ex.rows.row(1), s[1].row(1));
        let path = dir.path().join("s.csv");
        export_embeddings(&ex, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert!(back.rows.iter().zip(ex.rows.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(slice_feature_embeddings(&records(3), &s, 5, "fp").is_err());
    }
}
