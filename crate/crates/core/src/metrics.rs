//! Image comparison metrics and the colour-centroid segmentation proxy.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{usage_err, Result};

/// Returned by [`psnr`] for identical images.
pub const PSNR_IDENTICAL_DB: f64 = 99.0;

/// Per-class IoU and their mean.
///
/// `per_class[c]` is `None` when class `c` occurs in neither mask; such classes
/// do not enter the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Miou {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn miou(pred: &[u8], gt: &[u8], num_classes: usize) -> Result<Miou> {
    if pred.len() != gt.len() {
        return Err(usage_err!("miou: mask sizes differ ({} vs {})", pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(usage_err!("miou: empty masks"));
    }
    let mut inter = vec![0u64; num_classes];
    let mut union = vec![0u64; num_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p as usize, g as usize);
        if p >= num_classes || g >= num_classes {
            return Err(usage_err!("miou: class id {} out of range 0..{num_classes}", p.max(g)));
        }
        union[p] += 1;
        if p == g {
            inter[p] += 1;
        } else {
            union[g] += 1;
        }
    }
    let per_class: Vec<Option<f64>> =
        inter.iter().zip(&union).map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64)).collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(Miou { per_class, mean })
}

/// Mean absolute difference of two equally sized buffers.
pub fn mean_abs_diff(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(usage_err!("mean_abs_diff: sizes {} and {}", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / a.len() as f64)
}

/// Peak signal-to-noise ratio for values on the `[0, 1]` scale, capped at [`PSNR_IDENTICAL_DB`].
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(usage_err!("psnr: sizes {} and {}", a.len(), b.len()));
    }
    let mse = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL_DB);
    }
    Ok((-10.0 * Float::log10(mse)).min(PSNR_IDENTICAL_DB))
}

/// Labels each RGB pixel with the class whose mean training colour is closest.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    centroids: Vec<Option<[f64; 3]>>,
}

impl NearestCentroid {
    /// `pixels` is interleaved RGB, one label per pixel.
    pub fn fit(pixels: &[f32], labels: &[u8], num_classes: usize) -> Result<Self> {
        if pixels.len() != 3 * labels.len() {
            return Err(usage_err!("centroid fit: {} values for {} labels", pixels.len(), labels.len()));
        }
        let mut sum = vec![[0.0f64; 3]; num_classes];
        let mut count = vec![0u64; num_classes];
        for (px, &l) in pixels.chunks_exact(3).zip(labels) {
            let l = l as usize;
            if l >= num_classes {
                return Err(usage_err!("centroid fit: class id {l} out of range 0..{num_classes}"));
            }
            for c in 0..3 {
                sum[l][c] += px[c] as f64;
            }
            count[l] += 1;
        }
        let centroids: Vec<_> = sum
            .iter()
            .zip(&count)
            .map(|(s, &n)| (n > 0).then(|| s.map(|v| v / n as f64)))
            .collect();
        if centroids.iter().all(Option::is_none) {
            return Err(usage_err!("centroid fit: no training pixels"));
        }
        Ok(Self { centroids })
    }

    pub fn centroids(&self) -> &[Option<[f64; 3]>] {
        &self.centroids
    }

    pub fn predict_pixel(&self, rgb: [f32; 3]) -> u8 {
        let mut best = (f64::INFINITY, 0u8);
        for (k, c) in self.centroids.iter().enumerate() {
            if let Some(c) = c {
                let d: f64 = (0..3).map(|i| (rgb[i] as f64 - c[i]).powi(2)).sum();
                if d < best.0 {
                    best = (d, k as u8);
                }
            }
        }
        best.1
    }

    pub fn predict(&self, pixels: &[f32]) -> Vec<u8> {
        pixels.chunks_exact(3).map(|p| self.predict_pixel([p[0], p[1], p[2]])).collect()
    }
}
