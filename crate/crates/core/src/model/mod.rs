//! The sequence head: stacked bidirectional recurrent layers over slice
//! features, dropout, max-pooling over slices and a sigmoid classifier,
//! with analytic back-propagation. GRU is the default cell; LSTM is the
//! drop-in alternative.

mod bilayer;
mod cell;
mod checkpoint;
mod gru;
mod head;
mod lstm;

pub use bilayer::{bigru_layer, BiGruLayerParams, BiLayerParams, BiTrace};
pub use cell::RecurrentCell;
pub use checkpoint::{read_checkpoint, read_checkpoint_header, write_checkpoint, CheckpointHeader};
pub use gru::{gru_cell, GruDirectionParams, GruTrace};
pub use head::{
    adaptive_max_pool, dropout_mask, head_backward, head_forward, predict, DropoutMode,
    ForwardTrace, GruHead, HeadGradients, HeadParams, HeadShape, LstmHead,
};
pub use lstm::{lstm_cell, LstmDirectionParams, LstmTrace};

use serde::{Deserialize, Serialize};

/// Recurrent cell selector for configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Gru,
    Lstm,
}

/// A trained head of either cell type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyHead {
    Gru(GruHead),
    Lstm(LstmHead),
}

impl AnyHead {
    pub fn init(cell: CellKind, shape: HeadShape, dropout_rate: f64, seed: u64) -> crate::Result<Self> {
        Ok(match cell {
            CellKind::Gru => AnyHead::Gru(HeadParams::init(shape, dropout_rate, seed)?),
            CellKind::Lstm => AnyHead::Lstm(HeadParams::init(shape, dropout_rate, seed)?),
        })
    }

    pub fn cell(&self) -> CellKind {
        match self {
            AnyHead::Gru(_) => CellKind::Gru,
            AnyHead::Lstm(_) => CellKind::Lstm,
        }
    }

    pub fn shape(&self) -> HeadShape {
        match self {
            AnyHead::Gru(p) => p.shape(),
            AnyHead::Lstm(p) => p.shape(),
        }
    }

    /// Evaluation-mode probability.
    pub fn predict(&self, seq: ndarray::ArrayView2<f64>) -> crate::Result<f64> {
        match self {
            AnyHead::Gru(p) => predict(seq, p),
            AnyHead::Lstm(p) => predict(seq, p),
        }
    }

    /// Evaluation-mode pooled vector fed to the classifier.
    pub fn pooled(&self, seq: ndarray::ArrayView2<f64>) -> crate::Result<ndarray::Array1<f64>> {
        Ok(match self {
            AnyHead::Gru(p) => head_forward(seq, p, &DropoutMode::Eval)?.1.pooled,
            AnyHead::Lstm(p) => head_forward(seq, p, &DropoutMode::Eval)?.1.pooled,
        })
    }

    pub fn save(&self, path: &std::path::Path, meta: serde_json::Value) -> crate::Result<()> {
        match self {
            AnyHead::Gru(p) => write_checkpoint(path, p, meta),
            AnyHead::Lstm(p) => write_checkpoint(path, p, meta),
        }
    }

    pub fn load(path: &std::path::Path) -> crate::Result<(Self, CheckpointHeader)> {
        let header = read_checkpoint_header(path)?;
        if header.cell == GruDirectionParams::KIND {
            let (p, h) = read_checkpoint(path)?;
            Ok((AnyHead::Gru(p), h))
        } else if header.cell == LstmDirectionParams::KIND {
            let (p, h) = read_checkpoint(path)?;
            Ok((AnyHead::Lstm(p), h))
        } else {
            Err(crate::Error::Corrupt {
                path: path.to_path_buf(),
                message: format!("unknown cell kind {:?}", header.cell),
            })
        }
    }
}
