//! Pristine-corpus NSS model and the NIQE-style distance scorer
//! (lower is better).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, ImagePlane};

use super::nss::{mean_local_sigma, nss_features, NSS_FEATURE_LEN};
use super::ScorerError;

pub const DEFAULT_PATCH_SIZE: usize = 96;
/// Keep patches at or above this percentile of mean local contrast.
const CONTRAST_PERCENTILE: f64 = 0.25;
/// Relative eigenvalue cutoff for the covariance pseudo-inverse.
const PINV_CUTOFF: f64 = 1e-10;

/// Multivariate Gaussian of NSS features fitted to sharp pristine patches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PristineModel {
    pub mean: Vec<f64>,
    /// Row-major 36x36 symmetric covariance.
    pub covariance: Vec<f64>,
    pub patch_size: usize,
    pub corpus_size: usize,
}

impl PristineModel {
    pub fn dim(&self) -> usize {
        NSS_FEATURE_LEN
    }

    pub fn save(&self, path: &Path) -> Result<(), ScorerError> {
        let json = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, json).map_err(|e| {
            ScorerError::Corpus(CorpusError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ScorerError::Corpus(CorpusError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })?;
        let model: PristineModel = serde_json::from_str(&text).map_err(|e| {
            ScorerError::Corpus(CorpusError::SchemaError {
                path: path.to_path_buf(),
                line: 0,
                reason: e.to_string(),
            })
        })?;
        if model.mean.len() != NSS_FEATURE_LEN
            || model.covariance.len() != NSS_FEATURE_LEN * NSS_FEATURE_LEN
        {
            return Err(ScorerError::Corpus(CorpusError::SchemaError {
                path: path.to_path_buf(),
                line: 0,
                reason: "model dimensions are not 36/36x36".into(),
            }));
        }
        Ok(model)
    }
}

/// Disjoint full patches in row-major grid order.
fn grid_patches(plane: &ImagePlane, patch: usize) -> Vec<ImagePlane> {
    let mut out = Vec::new();
    let rows = plane.height() / patch;
    let cols = plane.width() / patch;
    for r in 0..rows {
        for c in 0..cols {
            out.push(
                plane
                    .crop(r * patch, c * patch, patch, patch)
                    .expect("grid patch in bounds"),
            );
        }
    }
    out
}

fn mean_and_covariance(features: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = NSS_FEATURE_LEN;
    let n = features.len();
    // Anchored mean (first vector plus mean of differences) so duplicated
    // inputs reproduce the single-sample model bit-exactly.
    let mut mean = features[0].clone();
    let mut diff = vec![0.0; d];
    for f in features {
        for (s, (v, a)) in diff.iter_mut().zip(f.iter().zip(&features[0])) {
            *s += v - a;
        }
    }
    for (m, s) in mean.iter_mut().zip(&diff) {
        *m += s / n as f64;
    }
    let mut cov = vec![0.0; d * d];
    if n > 1 {
        for f in features {
            for i in 0..d {
                let di = f[i] - mean[i];
                for j in 0..d {
                    cov[i * d + j] += di * (f[j] - mean[j]);
                }
            }
        }
        let denom = (n - 1) as f64;
        for v in &mut cov {
            *v /= denom;
        }
    }
    (mean, cov)
}

/// Fit the pristine model: pool NSS features of all sharp patches (top 75%
/// by mean local contrast across the whole corpus) and return their sample
/// mean and covariance.
pub fn fit_pristine(corpus: &[ImagePlane], patch: usize) -> Result<PristineModel, ScorerError> {
    if corpus.is_empty() {
        return Err(ScorerError::EmptyCorpus);
    }
    let mut candidates: Vec<(ImagePlane, f64)> = Vec::new();
    for plane in corpus {
        let (w, h) = (plane.width(), plane.height());
        if w < patch || h < patch {
            return Err(ScorerError::ImageTooSmall {
                min_w: patch,
                min_h: patch,
                w,
                h,
            });
        }
        for p in grid_patches(plane, patch) {
            let contrast = mean_local_sigma(&p)?;
            candidates.push((p, contrast));
        }
    }
    let mut contrasts: Vec<f64> = candidates.iter().map(|(_, c)| *c).collect();
    contrasts.sort_by(|a, b| a.partial_cmp(b).expect("finite contrast"));
    let idx = (CONTRAST_PERCENTILE * (contrasts.len() - 1) as f64).floor() as usize;
    let threshold = contrasts[idx];

    let mut features = Vec::new();
    for (p, contrast) in &candidates {
        if *contrast < threshold {
            continue;
        }
        // Patches whose fits degenerate (e.g. flat regions) count as rejected.
        if let Ok(f) = nss_features(p) {
            features.push(f.0);
        }
    }
    if features.is_empty() {
        return Err(ScorerError::AllPatchesRejected);
    }
    let (mean, covariance) = mean_and_covariance(&features);
    Ok(PristineModel {
        mean,
        covariance,
        patch_size: patch,
        corpus_size: corpus.len(),
    })
}

/// sqrt((m1-m2)^T ((S1+S2)/2)^+ (m1-m2)) with an eigendecomposition
/// pseudo-inverse (cutoff 1e-10 x max eigenvalue) for rank deficiency.
pub fn gaussian_distance(
    mean1: &[f64],
    cov1: &[f64],
    mean2: &[f64],
    cov2: &[f64],
) -> f64 {
    let d = mean1.len();
    let diff = DVector::from_iterator(d, mean1.iter().zip(mean2).map(|(a, b)| a - b));
    let avg = DMatrix::from_fn(d, d, |i, j| 0.5 * (cov1[i * d + j] + cov2[i * d + j]));
    // Symmetrize against accumulation noise before decomposing.
    let sym = 0.5 * (&avg + avg.transpose());
    let eig = sym.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = PINV_CUTOFF * max_eig;
    // x^T M^+ x = sum over kept eigenpairs of (v_k . x)^2 / lambda_k.
    let mut q = 0.0;
    for k in 0..d {
        let lambda = eig.eigenvalues[k];
        if lambda > cutoff && lambda > 0.0 {
            let proj = eig.eigenvectors.column(k).dot(&diff);
            q += proj * proj / lambda;
        }
    }
    q.max(0.0).sqrt()
}

/// Distance between the test image's patch-feature Gaussian and the
/// pristine model. Lower is better; zero iff the feature mean coincides
/// with the model mean in the pseudo-inverse metric.
pub fn score_niqe_like(plane: &ImagePlane, model: &PristineModel) -> Result<f64, ScorerError> {
    let patch = model.patch_size;
    if plane.width() < patch || plane.height() < patch {
        return Err(ScorerError::ImageTooSmall {
            min_w: patch,
            min_h: patch,
            w: plane.width(),
            h: plane.height(),
        });
    }
    let mut features = Vec::new();
    let mut last_err = None;
    for p in grid_patches(plane, patch) {
        match nss_features(&p) {
            Ok(f) => features.push(f.0),
            Err(e) => last_err = Some(e),
        }
    }
    if features.is_empty() {
        return Err(last_err.unwrap_or(ScorerError::AllPatchesRejected));
    }
    let (mean, cov) = mean_and_covariance(&features);
    Ok(gaussian_distance(
        &model.mean,
        &model.covariance,
        &mean,
        &cov,
    ))
}
