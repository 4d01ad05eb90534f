use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cell::RecurrentCell;
use super::head::{HeadParams, HeadShape};
use crate::error::{Error, Result};

const MAGIC: &str = "SLICEGRU-CHECKPOINT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// The JSON line that precedes the raw parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub cell: String,
    pub shape: HeadShape,
    pub dropout_rate: f64,
    pub tensors: Vec<TensorEntry>,
    /// Free-form provenance (feature fingerprint, epoch, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes a text magic line, a JSON manifest line, then every tensor as
/// little-endian f64 in manifest order. The write is atomic.
pub fn write_checkpoint<C: RecurrentCell>(
    path: &Path,
    params: &HeadParams<C>,
    meta: serde_json::Value,
) -> Result<()> {
    params.validate()?;
    let mut tensors = Vec::new();
    params.visit(&mut |name, shape, _| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
        })
    });
    let header = CheckpointHeader {
        version: VERSION,
        cell: C::KIND.to_string(),
        shape: params.shape(),
        dropout_rate: params.dropout_rate,
        tensors,
        meta,
    };
    let mut buf = Vec::new();
    writeln!(buf, "{MAGIC} v{VERSION}").expect("vec write");
    serde_json::to_writer(&mut buf, &header)?;
    buf.push(b'\n');
    for v in params.flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&buf).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_header(path: &Path) -> Result<(CheckpointHeader, BufReader<std::fs::File>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if line.trim_end() != format!("{MAGIC} v{VERSION}") {
        return Err(corrupt(path, "not a checkpoint file"));
    }
    line.clear();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| corrupt(path, e.to_string()))?;
    Ok((header, reader))
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    read_header(path).map(|(h, _)| h)
}

/// Loads a checkpoint, rejecting any disagreement in cell kind, tensor
/// names, shapes or byte length.
pub fn read_checkpoint<C: RecurrentCell>(path: &Path) -> Result<(HeadParams<C>, CheckpointHeader)> {
    let (header, mut reader) = read_header(path)?;
    if header.cell != C::KIND {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint holds a {} head, expected {}",
            header.cell,
            C::KIND
        )));
    }
    let mut params = HeadParams::<C>::zeros(header.shape, header.dropout_rate);
    let mut expected = Vec::new();
    params.visit(&mut |name, shape, _| {
        expected.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
        })
    });
    if expected != header.tensors {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint tensor manifest does not match a {:?} head",
            header.shape
        )));
    }
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    let n = params.num_params();
    if raw.len() != n * 8 {
        return Err(corrupt(
            path,
            format!("expected {} bytes of parameters, found {}", n * 8, raw.len()),
        ));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    params.assign_flat(&values)?;
    params.validate()?;
    Ok((params, header))
}
