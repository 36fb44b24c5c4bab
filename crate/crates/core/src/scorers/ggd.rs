//! Moment-matching estimators for the (asymmetric) generalized Gaussian
//! distribution, fit to MSCN coefficients and their pairwise products.

use statrs::function::gamma::ln_gamma;

use super::ScorerError;

const MIN_SAMPLES: usize = 16;
const ALPHA_LO: f64 = 0.1;
const ALPHA_HI: f64 = 10.0;
const ALPHA_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GgdParams {
    pub alpha: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggdParams {
    pub alpha: f64,
    pub sigma_left: f64,
    pub sigma_right: f64,
    pub mean_offset: f64,
}

/// rho(alpha) = Gamma(1/a) Gamma(3/a) / Gamma(2/a)^2, the moment ratio
/// E[x^2] / (E|x|)^2 of a zero-mean GGD. Strictly decreasing on the bracket.
pub fn moment_ratio(alpha: f64) -> f64 {
    (ln_gamma(1.0 / alpha) + ln_gamma(3.0 / alpha) - 2.0 * ln_gamma(2.0 / alpha)).exp()
}

/// Bisection solve of moment_ratio(alpha) = target on [ALPHA_LO, ALPHA_HI].
fn solve_alpha(target: f64) -> Result<f64, ScorerError> {
    if !target.is_finite() {
        return Err(ScorerError::DegenerateSample(format!(
            "non-finite moment ratio {target}"
        )));
    }
    let (mut lo, mut hi) = (ALPHA_LO, ALPHA_HI);
    // moment_ratio decreases in alpha: rho(lo) is the max, rho(hi) the min.
    if target > moment_ratio(lo) || target < moment_ratio(hi) {
        return Err(ScorerError::NoBracket(target));
    }
    while hi - lo > ALPHA_TOL {
        let mid = 0.5 * (lo + hi);
        if moment_ratio(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fit a zero-mean generalized Gaussian by matching E[x^2] / (E|x|)^2.
pub fn fit_ggd(samples: &[f64]) -> Result<GgdParams, ScorerError> {
    if samples.len() < MIN_SAMPLES {
        return Err(ScorerError::TooFewSamples {
            got: samples.len(),
            need: MIN_SAMPLES,
        });
    }
    let n = samples.len() as f64;
    let m1 = samples.iter().map(|x| x.abs()).sum::<f64>() / n;
    let m2 = samples.iter().map(|x| x * x).sum::<f64>() / n;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = m2 - mean * mean;
    if m2 <= 0.0 || variance <= 0.0 {
        return Err(ScorerError::DegenerateSample(
            "sample variance is zero".into(),
        ));
    }
    let alpha = solve_alpha(m2 / (m1 * m1))?;
    Ok(GgdParams {
        alpha,
        sigma: m2.sqrt(),
    })
}

/// Fit an asymmetric generalized Gaussian from left/right second moments.
/// Zeros belong to neither side; both sides must be populated.
pub fn fit_aggd(samples: &[f64]) -> Result<AggdParams, ScorerError> {
    if samples.len() < MIN_SAMPLES {
        return Err(ScorerError::TooFewSamples {
            got: samples.len(),
            need: MIN_SAMPLES,
        });
    }
    let mut left_sq = 0.0;
    let mut left_n = 0usize;
    let mut right_sq = 0.0;
    let mut right_n = 0usize;
    for &x in samples {
        if x < 0.0 {
            left_sq += x * x;
            left_n += 1;
        } else if x > 0.0 {
            right_sq += x * x;
            right_n += 1;
        }
    }
    if left_n == 0 {
        return Err(ScorerError::DegenerateSample(
            "no negative samples for sigma_left".into(),
        ));
    }
    if right_n == 0 {
        return Err(ScorerError::DegenerateSample(
            "no positive samples for sigma_right".into(),
        ));
    }
    let sigma_left = (left_sq / left_n as f64).sqrt();
    let sigma_right = (right_sq / right_n as f64).sqrt();

    let n = samples.len() as f64;
    let m1 = samples.iter().map(|x| x.abs()).sum::<f64>() / n;
    let m2 = samples.iter().map(|x| x * x).sum::<f64>() / n;
    if m2 <= 0.0 || m1 <= 0.0 {
        return Err(ScorerError::DegenerateSample(
            "second moment is zero".into(),
        ));
    }
    // Asymmetry-corrected moment ratio (gamma = sigma_l / sigma_r), matched
    // against the same rho(alpha) as the symmetric fit.
    let gamma_hat = sigma_left / sigma_right;
    let r_hat = (m1 * m1) / m2;
    let r_norm = r_hat * (gamma_hat.powi(3) + 1.0) * (gamma_hat + 1.0)
        / (gamma_hat * gamma_hat + 1.0).powi(2);
    let alpha = solve_alpha(1.0 / r_norm)?;

    let g1 = ln_gamma(1.0 / alpha);
    let g2 = ln_gamma(2.0 / alpha);
    let g3 = ln_gamma(3.0 / alpha);
    let mean_offset = (sigma_right - sigma_left) * (g2 - 0.5 * (g1 + g3)).exp();
    Ok(AggdParams {
        alpha,
        sigma_left,
        sigma_right,
        mean_offset,
    })
}
