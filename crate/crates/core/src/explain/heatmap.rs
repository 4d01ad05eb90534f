use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use ndarray::{Array2, ArrayView2};

use super::rollout::RolloutMap;
use crate::data::bilinear_resize;
use crate::error::{Error, Result};

/// Blend weight of the colour map over the grey slice.
pub const OVERLAY_ALPHA: f64 = 0.5;

/// Blue → cyan → yellow → red ramp over [0, 1].
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let stops = [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
    let x = v * 3.0;
    let i = (x.floor() as usize).min(2);
    let t = x - i as f64;
    let (a, b) = (stops[i], stops[i + 1]);
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// The heatmap bilinearly resized to `h`×`w`.
pub fn upsample_heatmap(map: &RolloutMap, h: usize, w: usize) -> Array2<f64> {
    bilinear_resize(map.heatmap.view(), h, w)
}

/// Colour-mapped heatmap blended over the slice; a pure function of its
/// inputs.
pub fn heatmap_overlay(map: &RolloutMap, slice: ArrayView2<u8>) -> Result<RgbImage> {
    let (h, w) = slice.dim();
    if h == 0 || w == 0 || map.heatmap.is_empty() {
        return Err(Error::InvalidArgument("empty slice or heatmap".into()));
    }
    let heat = upsample_heatmap(map, h, w);
    let mut img = RgbImage::new(w as u32, h as u32);
    for ((r, c), &g) in slice.indexed_iter() {
        let grey = g as f64 / 255.0;
        let col = colormap(heat[[r, c]]);
        let px = col.map(|v| {
            let mixed = (1.0 - OVERLAY_ALPHA) * grey + OVERLAY_ALPHA * v;
            (mixed * 255.0).round().clamp(0.0, 255.0) as u8
        });
        img.put_pixel(c as u32, r as u32, Rgb(px));
    }
    Ok(img)
}

pub fn render_heatmap(map: &RolloutMap, slice: ArrayView2<u8>, path: &Path) -> Result<()> {
    let img = heatmap_overlay(map, slice)?;
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}
