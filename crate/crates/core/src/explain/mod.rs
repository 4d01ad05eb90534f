//! Attention rollout heatmaps and embedding export.

mod embeddings;
mod heatmap;
mod rollout;

pub use embeddings::{
    export_embeddings, pooled_embeddings, read_embeddings, slice_feature_embeddings,
    EmbeddingExport, EmbeddingSource,
};
pub use heatmap::{colormap, heatmap_overlay, render_heatmap, upsample_heatmap, OVERLAY_ALPHA};
pub use rollout::{attention_rollout, residual_mix, rollout_product, RolloutMap, STOCHASTIC_TOL};
