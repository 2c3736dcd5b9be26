//! Colour + edge-orientation histogram features.

use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureParams {
    /// Images are resized to `resolution x resolution` before extraction.
    pub resolution: u32,
    pub color_bins: usize,
    pub edge_bins: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            resolution: 384,
            color_bins: 8,
            edge_bins: 8,
        }
    }
}

impl FeatureParams {
    pub fn len(&self) -> usize {
        3 * self.color_bins + self.edge_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const REFERENCE_RESOLUTION: f64 = 384.0;

/// Concatenates one normalized histogram per colour channel with a
/// magnitude-weighted histogram of unsigned Sobel gradient orientations.
///
/// Colour bins are fractions of pixels (each channel sums to 1). Edge bins
/// hold mean gradient magnitude per pixel, rescaled to the 384-px grid so a
/// sharp edge carries the same mass at any resolution and blur shows as loss.
pub fn extract(img: &RgbImage, params: &FeatureParams) -> Vec<f64> {
    let r = params.resolution;
    let resized;
    let img = if img.width() == r && img.height() == r {
        img
    } else {
        resized = resize(img, r);
        &resized
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = (w * h) as f64;
    let mut out = vec![0.0; params.len()];

    let mut gray = Vec::with_capacity(w * h);
    for p in img.pixels() {
        for c in 0..3 {
            let bin = p.0[c] as usize * params.color_bins / 256;
            out[c * params.color_bins + bin] += 1.0;
        }
        gray.push((0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64) / 255.0);
    }
    for v in &mut out[..3 * params.color_bins] {
        *v /= n;
    }

    let edges = &mut out[3 * params.color_bins..];
    // orientation bin k starts at angle k*pi/B; on [0, pi) the angle passes
    // that boundary exactly when cos(angle) < cos(k*pi/B)
    let bounds: Vec<f64> = (1..params.edge_bins)
        .map(|k| (k as f64 * std::f64::consts::PI / params.edge_bins as f64).cos())
        .collect();
    for y in 1..h.saturating_sub(1) {
        let (up, mid, down) = (&gray[(y - 1) * w..y * w], &gray[y * w..(y + 1) * w], &gray[(y + 1) * w..(y + 2) * w]);
        for x in 1..w - 1 {
            let gx = (up[x + 1] + 2.0 * mid[x + 1] + down[x + 1]) - (up[x - 1] + 2.0 * mid[x - 1] + down[x - 1]);
            let gy = (down[x - 1] + 2.0 * down[x] + down[x + 1]) - (up[x - 1] + 2.0 * up[x] + up[x + 1]);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let cos = if gy < 0.0 || (gy == 0.0 && gx < 0.0) { -gx / mag } else { gx / mag };
            let bin = bounds.iter().take_while(|b| cos < **b).count();
            edges[bin] += mag;
        }
    }
    let scale = r as f64 / REFERENCE_RESOLUTION / n;
    for v in edges.iter_mut() {
        *v *= scale;
    }
    out
}

/// Area-averaging downsample; upsampling falls back to a triangle filter.
fn resize(img: &RgbImage, r: u32) -> RgbImage {
    if img.width() >= r && img.height() >= r {
        imageops::thumbnail(img, r, r)
    } else {
        imageops::resize(img, r, r, FilterType::Triangle)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
