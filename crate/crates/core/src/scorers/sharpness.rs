//! Laplacian-variance sharpness, a simple higher-is-better quality proxy.

use crate::corpus::ImagePlane;

use super::ScorerError;

/// Variance of the 3x3 Laplacian response over interior pixels.
///
/// Kernel: 4-neighbor sum minus 4x center. Affine intensity fields (constants
/// and linear ramps) score exactly zero.
pub fn score_sharpness(plane: &ImagePlane) -> Result<f64, ScorerError> {
    let (w, h) = (plane.width(), plane.height());
    if w < 3 || h < 3 {
        return Err(ScorerError::ImageTooSmall {
            min_w: 3,
            min_h: 3,
            w,
            h,
        });
    }
    let n = ((w - 2) * (h - 2)) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let r = plane.get(x, y - 1) + plane.get(x - 1, y) + plane.get(x + 1, y)
                + plane.get(x, y + 1)
                - 4.0 * plane.get(x, y);
            sum += r;
            sum_sq += r * r;
        }
    }
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}
