//! MSCN coefficient maps and the 36-dimensional natural-scene-statistics
//! feature vector (two scales, GGD + four orientation AGGDs per scale).

use crate::corpus::ImagePlane;

use super::ggd::{fit_aggd, fit_ggd};
use super::ScorerError;

/// Gaussian window sigma for the 7x7 local statistics kernel.
pub const DEFAULT_WINDOW_SIGMA: f64 = 7.0 / 6.0;
/// Stabilizing constant added to the local deviation, on the [0,255] scale.
pub const DEFAULT_MSCN_C: f64 = 1.0;

const WINDOW_RADIUS: i64 = 3;
pub const NSS_FEATURE_LEN: usize = 36;

/// An ImagePlane-shaped field of unbounded coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl CoefField {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// 36 finite reals: per scale, GGD (alpha, sigma^2) of the MSCN field plus
/// AGGD (alpha, mean, sigma_l, sigma_r) of the H/V/D1/D2 products.
#[derive(Debug, Clone, PartialEq)]
pub struct NssFeatures(pub Vec<f64>);

impl NssFeatures {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Mirror index into [0, n): -1 -> 0, -2 -> 1, n -> n-1 (symmetric, edge
/// pixel duplicated).
#[inline]
pub(crate) fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_window(sigma: f64) -> [f64; 7] {
    let mut w = [0.0; 7];
    let mut total = 0.0;
    for (k, slot) in w.iter_mut().enumerate() {
        let d = k as f64 - WINDOW_RADIUS as f64;
        *slot = (-d * d / (2.0 * sigma * sigma)).exp();
        total += *slot;
    }
    for slot in &mut w {
        *slot /= total;
    }
    w
}

/// Per-pixel (x - mu) / (sigma + c) with mu, sigma the Gaussian-weighted
/// local mean and standard deviation over a 7x7 window, computed on luma
/// rescaled to [0,255]. Borders reflect symmetrically.
///
/// The numerator is evaluated as a weighted sum of differences against the
/// center pixel, so a constant image yields exactly zero everywhere.
pub fn mscn_map(plane: &ImagePlane, window_sigma: f64, c: f64) -> Result<CoefField, ScorerError> {
    let (w, h) = (plane.width(), plane.height());
    if w < 7 || h < 7 {
        return Err(ScorerError::ImageTooSmall {
            min_w: 7,
            min_h: 7,
            w,
            h,
        });
    }
    let win = gaussian_window(window_sigma);
    let luma: Vec<f64> = plane.data().iter().map(|&v| v * 255.0).collect();
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let center = luma[y * w + x];
            let mut mu = 0.0;
            let mut diff = 0.0;
            for (ky, wy) in win.iter().enumerate() {
                let sy = reflect(y as i64 + ky as i64 - WINDOW_RADIUS, h);
                for (kx, wx) in win.iter().enumerate() {
                    let sx = reflect(x as i64 + kx as i64 - WINDOW_RADIUS, w);
                    let weight = wy * wx;
                    let v = luma[sy * w + sx];
                    mu += weight * v;
                    diff += weight * (v - center);
                }
            }
            let mut var = 0.0;
            for (ky, wy) in win.iter().enumerate() {
                let sy = reflect(y as i64 + ky as i64 - WINDOW_RADIUS, h);
                for (kx, wx) in win.iter().enumerate() {
                    let sx = reflect(x as i64 + kx as i64 - WINDOW_RADIUS, w);
                    let d = luma[sy * w + sx] - mu;
                    var += wy * wx * d * d;
                }
            }
            let sigma = var.max(0.0).sqrt();
            let denom = sigma + c;
            data[y * w + x] = if denom > 0.0 { -diff / denom } else { 0.0 };
        }
    }
    Ok(CoefField {
        width: w,
        height: h,
        data,
    })
}

/// Neighbor-product fields of an MSCN map: horizontal, vertical, and both
/// diagonals.
fn orientation_products(field: &CoefField) -> [Vec<f64>; 4] {
    let (w, h) = (field.width, field.height);
    let mut hprod = Vec::with_capacity(h * (w - 1));
    let mut vprod = Vec::with_capacity((h - 1) * w);
    let mut d1 = Vec::with_capacity((h - 1) * (w - 1));
    let mut d2 = Vec::with_capacity((h - 1) * (w - 1));
    for y in 0..h {
        for x in 0..w {
            let c = field.get(x, y);
            if x + 1 < w {
                hprod.push(c * field.get(x + 1, y));
            }
            if y + 1 < h {
                vprod.push(c * field.get(x, y + 1));
            }
            if x + 1 < w && y + 1 < h {
                d1.push(c * field.get(x + 1, y + 1));
            }
            if x >= 1 && y + 1 < h {
                d2.push(c * field.get(x - 1, y + 1));
            }
        }
    }
    [hprod, vprod, d1, d2]
}

fn scale_features(plane: &ImagePlane, out: &mut Vec<f64>) -> Result<(), ScorerError> {
    let field = mscn_map(plane, DEFAULT_WINDOW_SIGMA, DEFAULT_MSCN_C)?;
    let ggd = fit_ggd(&field.data)?;
    out.push(ggd.alpha);
    out.push(ggd.sigma * ggd.sigma);
    for products in orientation_products(&field) {
        let aggd = fit_aggd(&products)?;
        out.push(aggd.alpha);
        out.push(aggd.mean_offset);
        out.push(aggd.sigma_left);
        out.push(aggd.sigma_right);
    }
    Ok(())
}

/// The full 36-feature NSS vector over two scales (native and 2x2-average
/// downsampled).
pub fn nss_features(plane: &ImagePlane) -> Result<NssFeatures, ScorerError> {
    let (w, h) = (plane.width(), plane.height());
    if w < 32 || h < 32 {
        return Err(ScorerError::ImageTooSmall {
            min_w: 32,
            min_h: 32,
            w,
            h,
        });
    }
    let mut values = Vec::with_capacity(NSS_FEATURE_LEN);
    scale_features(plane, &mut values)?;
    let half = plane.downsample2()?;
    scale_features(&half, &mut values)?;
    debug_assert_eq!(values.len(), NSS_FEATURE_LEN);
    Ok(NssFeatures(values))
}

/// Mean of the local deviation map, the patch-sharpness measure used when
/// selecting pristine patches.
pub(crate) fn mean_local_sigma(plane: &ImagePlane) -> Result<f64, ScorerError> {
    let (w, h) = (plane.width(), plane.height());
    if w < 7 || h < 7 {
        return Err(ScorerError::ImageTooSmall {
            min_w: 7,
            min_h: 7,
            w,
            h,
        });
    }
    let win = gaussian_window(DEFAULT_WINDOW_SIGMA);
    let luma: Vec<f64> = plane.data().iter().map(|&v| v * 255.0).collect();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let mut mu = 0.0;
            for (ky, wy) in win.iter().enumerate() {
                let sy = reflect(y as i64 + ky as i64 - WINDOW_RADIUS, h);
                for (kx, wx) in win.iter().enumerate() {
                    let sx = reflect(x as i64 + kx as i64 - WINDOW_RADIUS, w);
                    mu += wy * wx * luma[sy * w + sx];
                }
            }
            let mut var = 0.0;
            for (ky, wy) in win.iter().enumerate() {
                let sy = reflect(y as i64 + ky as i64 - WINDOW_RADIUS, h);
                for (kx, wx) in win.iter().enumerate() {
                    let sx = reflect(x as i64 + kx as i64 - WINDOW_RADIUS, w);
                    let d = luma[sy * w + sx] - mu;
                    var += wy * wx * d * d;
                }
            }
            total += var.max(0.0).sqrt();
        }
    }
    Ok(total / (w * h) as f64)
}
