//! Loss terms for the fine-tuning lab: L1 reconstruction, an edge-map
//! perceptual distance, a differentiable quality proxy (smoothed mean
//! gradient magnitude), the optional external critic hook, and the
//! checkerboard artifact-energy probe.

use crate::corpus::ImagePlane;

use super::TinysrError;

/// Smoothing constant inside the gradient-magnitude quality proxy.
pub const QUALITY_EPSILON: f64 = 1e-6;

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// External critic hook standing in for an adversarial discriminator. It
/// contributes to loss *values* only; there is no gradient path through it.
pub trait Critic {
    fn score(&mut self, img: &ImagePlane) -> Result<f64, TinysrError>;
}

/// Non-negative weights of the combined loss plus the quality term weight
/// used during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_perceptual: f64,
    pub lambda_adversarial: f64,
    pub lambda_quality: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_l1: 1.0,
            lambda_perceptual: 1.0,
            lambda_adversarial: 0.0,
            lambda_quality: 0.05,
        }
    }
}

/// Weighted term values; `total` is their signed sum (quality subtracts).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub perceptual: f64,
    pub critic: f64,
    /// Raw quality proxy of the output (unweighted).
    pub quality: f64,
    /// lambda_quality * quality, the subtracted term.
    pub quality_term: f64,
}

fn check_min(img: &ImagePlane, min: usize) -> Result<(), TinysrError> {
    if img.width() < min || img.height() < min {
        return Err(TinysrError::ImageTooSmall {
            min,
            w: img.width(),
            h: img.height(),
        });
    }
    Ok(())
}

/// Sobel gradient fields over interior pixels; returns (gx, gy) of size
/// (h-2) x (w-2).
pub fn sobel_fields(img: &ImagePlane) -> Result<(Vec<f64>, Vec<f64>), TinysrError> {
    check_min(img, 3)?;
    let (w, h) = (img.width(), img.height());
    let n = (w - 2) * (h - 2);
    let mut gx = Vec::with_capacity(n);
    let mut gy = Vec::with_capacity(n);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for (ky, row) in SOBEL_X.iter().enumerate() {
                for (kx, &kv) in row.iter().enumerate() {
                    let v = img.get(x + kx - 1, y + ky - 1);
                    sx += kv * v;
                    sy += SOBEL_Y[ky][kx] * v;
                }
            }
            gx.push(sx);
            gy.push(sy);
        }
    }
    Ok((gx, gy))
}

/// Forward-difference gradient fields over the (h-1) x (w-1) grid:
/// gx = u(x+1,y) - u(x,y), gy = u(x,y+1) - u(x,y).
///
/// Unlike centered stencils, these keep full gain at the Nyquist rate
/// (|2 sin(w/2)| peaks at w = pi), which is what makes the quality proxy
/// attackable by checkerboard noise.
pub fn diff_fields(img: &ImagePlane) -> Result<(Vec<f64>, Vec<f64>), TinysrError> {
    check_min(img, 3)?;
    let (w, h) = (img.width(), img.height());
    let n = (w - 1) * (h - 1);
    let mut gx = Vec::with_capacity(n);
    let mut gy = Vec::with_capacity(n);
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            gx.push(img.get(x + 1, y) - img.get(x, y));
            gy.push(img.get(x, y + 1) - img.get(x, y));
        }
    }
    Ok((gx, gy))
}

/// Differentiable sharpness score: mean over the forward-difference grid of
/// sqrt(gx^2 + gy^2 + epsilon). Higher is better; a constant image scores
/// exactly sqrt(epsilon).
pub fn quality_proxy(img: &ImagePlane) -> Result<f64, TinysrError> {
    let (gx, gy) = diff_fields(img)?;
    let n = gx.len() as f64;
    let magnitude =
        |i: usize| (gx[i] * gx[i] + gy[i] * gy[i] + QUALITY_EPSILON).sqrt();
    // Mean computed as anchor + mean of differences, so equal per-pixel
    // magnitudes (constant images) reproduce the anchor bit-exactly.
    let anchor = magnitude(0);
    let sum: f64 = (0..gx.len()).map(|i| magnitude(i) - anchor).sum();
    Ok(anchor + sum / n)
}

/// Edge-map perceptual distance: mean absolute difference of the Sobel
/// gradient fields, averaged over both components. Invariant to constant
/// intensity offsets.
fn perceptual_distance(out: &ImagePlane, target: &ImagePlane) -> Result<f64, TinysrError> {
    let (ox, oy) = sobel_fields(out)?;
    let (tx, ty) = sobel_fields(target)?;
    let n = ox.len() as f64;
    let mut sum = 0.0;
    for i in 0..ox.len() {
        sum += (ox[i] - tx[i]).abs() + (oy[i] - ty[i]).abs();
    }
    Ok(sum / (2.0 * n))
}

fn check_dims(out: &ImagePlane, target: &ImagePlane) -> Result<(), TinysrError> {
    if out.width() != target.width() || out.height() != target.height() {
        return Err(TinysrError::DimensionMismatch(
            out.width(),
            out.height(),
            target.width(),
            target.height(),
        ));
    }
    Ok(())
}

/// Combined reconstruction loss: weighted L1 + edge-map perceptual distance
/// + the external critic score when enabled. The returned breakdown's
/// quality fields are zero here; `ft_loss` fills them.
pub fn combined_loss(
    out: &ImagePlane,
    target: &ImagePlane,
    w: &LossWeights,
    mut critic: Option<&mut dyn Critic>,
) -> Result<LossBreakdown, TinysrError> {
    check_dims(out, target)?;
    let n = (out.width() * out.height()) as f64;
    let l1_raw = out
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let l1 = w.lambda_l1 * l1_raw;
    let perceptual = if w.lambda_perceptual > 0.0 {
        w.lambda_perceptual * perceptual_distance(out, target)?
    } else {
        0.0
    };
    let critic_term = if w.lambda_adversarial > 0.0 {
        let hook = critic.as_deref_mut().ok_or(TinysrError::MissingCritic)?;
        w.lambda_adversarial * hook.score(out)?
    } else {
        0.0
    };
    Ok(LossBreakdown {
        total: l1 + perceptual + critic_term,
        l1,
        perceptual,
        critic: critic_term,
        quality: 0.0,
        quality_term: 0.0,
    })
}

/// Fine-tuning loss: combined loss minus lambda_quality times the quality
/// proxy of the output.
pub fn ft_loss(
    out: &ImagePlane,
    target: &ImagePlane,
    w: &LossWeights,
    critic: Option<&mut dyn Critic>,
) -> Result<LossBreakdown, TinysrError> {
    let mut breakdown = combined_loss(out, target, w, critic)?;
    // Recorded even when the weight is zero so trajectories always carry it.
    let quality = quality_proxy(out)?;
    breakdown.quality = quality;
    breakdown.quality_term = w.lambda_quality * quality;
    breakdown.total -= breakdown.quality_term;
    Ok(breakdown)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// ft_loss value and its exact gradient w.r.t. every output pixel.
/// The critic term has no gradient path, so lambda_adversarial must be 0
/// (callers enforce this before training).
pub(super) fn loss_grad_wrt_output(
    out: &ImagePlane,
    target: &ImagePlane,
    w: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>), TinysrError> {
    check_dims(out, target)?;
    check_min(out, 3)?;
    let breakdown = ft_loss(out, target, w, None)?;
    let (width, height) = (out.width(), out.height());
    let n = (width * height) as f64;
    let mut grad = vec![0.0; width * height];

    // L1: (lambda/n) * sign(out - target), subgradient at 0 taken as 0.
    if w.lambda_l1 > 0.0 {
        for (g, (a, b)) in grad.iter_mut().zip(out.data().iter().zip(target.data())) {
            *g += w.lambda_l1 / n * sign(a - b);
        }
    }

    // Perceptual: scatter sign of the Sobel-field difference back through
    // the Sobel taps.
    if w.lambda_perceptual > 0.0 {
        let interior = ((width - 2) * (height - 2)) as f64;
        let (ox, oy) = sobel_fields(out)?;
        let (tx, ty) = sobel_fields(target)?;
        let cx = w.lambda_perceptual / (2.0 * interior);
        let iw = width - 2;
        for iy in 0..height - 2 {
            for ix in 0..iw {
                let idx = iy * iw + ix;
                let sx = cx * sign(ox[idx] - tx[idx]);
                let sy = cx * sign(oy[idx] - ty[idx]);
                if sx == 0.0 && sy == 0.0 {
                    continue;
                }
                for ky in 0..3 {
                    for kx in 0..3 {
                        let p = (iy + ky) * width + (ix + kx);
                        grad[p] += sx * SOBEL_X[ky][kx] + sy * SOBEL_Y[ky][kx];
                    }
                }
            }
        }
    }

    // Quality (subtracted): d/d out of mean sqrt(gx^2 + gy^2 + eps) over
    // the forward-difference grid.
    if w.lambda_quality > 0.0 {
        let (dx, dy) = diff_fields(out)?;
        let grid = ((width - 1) * (height - 1)) as f64;
        let cq = -w.lambda_quality / grid;
        let gw = width - 1;
        for iy in 0..height - 1 {
            for ix in 0..gw {
                let idx = iy * gw + ix;
                let den = (dx[idx] * dx[idx] + dy[idx] * dy[idx] + QUALITY_EPSILON).sqrt();
                let fx = cq * dx[idx] / den;
                let fy = cq * dy[idx] / den;
                let p = iy * width + ix;
                // gx = u(x+1,y) - u(x,y); gy = u(x,y+1) - u(x,y)
                grad[p] -= fx + fy;
                grad[p + 1] += fx;
                grad[p + width] += fy;
            }
        }
    }

    Ok((breakdown, grad))
}

/// Fraction of signal energy in the Nyquist checkerboard band: mean squared
/// response to the 2x2 kernel [[1,-1],[-1,1]]/4 over valid positions,
/// normalized by the per-pixel variance. A perfect checkerboard scores 1, a
/// constant or affine field 0. Clamped to [0,1]; zero-variance images are
/// defined as 0.
pub fn artifact_energy(img: &ImagePlane) -> Result<f64, TinysrError> {
    check_min(img, 4)?;
    let (w, h) = (img.width(), img.height());
    let n = (w * h) as f64;
    let mean = img.data().iter().sum::<f64>() / n;
    let variance = img.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if variance <= 0.0 {
        return Ok(0.0);
    }
    let mut energy = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let r = (img.get(x, y) - img.get(x + 1, y) - img.get(x, y + 1)
                + img.get(x + 1, y + 1))
                / 4.0;
            energy += r * r;
        }
    }
    let mean_sq = energy / ((w - 1) * (h - 1)) as f64;
    Ok((mean_sq / variance).clamp(0.0, 1.0))
}
