//! Ground-truth selection policies over quintuplet candidate sets -- UPos,
//! Rand, OrigsOnly, and the quality-weighted SMA / SMP / AMO variants --
//! plus aligned patch extraction and reproducible epoch plans.
//!
//! Candidate indexing everywhere: 0 is the original, 1..=4 the enhanced
//! entries in manifest order.

use std::collections::HashMap;
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_image, CorpusError, ImagePlane, Label, Quintuplet};
use crate::scorers::{normalize_score, ScorerError, ScorerInstance, ScorerSpec};
use crate::util::{derive_seed_epoch, rng_from_seed};

pub const CANDIDATES_PER_SET: usize = 5;
/// Softmax temperature used by SMA and SMP unless overridden.
pub const DEFAULT_TAU: f64 = 10.0;
pub const DEFAULT_PATCH: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("score is not finite: {0}")]
    NonFiniteScore(f64),
    #[error("candidate {0} has no score but the policy needs one")]
    MissingScores(usize),
    #[error("policy support is empty and fallback is disabled")]
    EmptyCandidateSupport,
    #[error("patch {size}x{size}@({top},{left}) out of bounds for {w}x{h}")]
    OutOfBounds {
        top: usize,
        left: usize,
        size: usize,
        w: usize,
        h: usize,
    },
    #[error("candidate dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("candidate {0} has no loaded image")]
    MissingImage(usize),
    #[error("image too small for a {size} patch: {w}x{h}")]
    ImageTooSmall { size: usize, w: usize, h: usize },
    #[error("{id}: {source}")]
    Scorer {
        id: String,
        #[source]
        source: ScorerError,
    },
    #[error("{id}: {source}")]
    Corpus {
        id: String,
        #[source]
        source: CorpusError,
    },
}

/// One of the five candidate ground-truths for an input image.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub path: PathBuf,
    /// None for the original, the human label for enhanced entries.
    pub label: Option<Label>,
    /// Normalized score slot, filled before score-dependent policies run.
    pub score: Option<f64>,
    pub plane: Option<ImagePlane>,
}

/// The original plus its four enhanced candidates.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub id: String,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn from_quintuplet(q: &Quintuplet) -> Self {
        let mut candidates = Vec::with_capacity(CANDIDATES_PER_SET);
        candidates.push(Candidate {
            path: q.original.clone(),
            label: None,
            score: None,
            plane: None,
        });
        for e in &q.enhanced {
            candidates.push(Candidate {
                path: e.path.clone(),
                label: Some(e.label),
                score: None,
                plane: None,
            });
        }
        CandidateSet {
            id: q.id.clone(),
            candidates,
        }
    }

    /// Indices of all candidates (the A_I set).
    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.candidates.len()).collect()
    }

    /// Indices of positive-labeled candidates (the P_I set).
    pub fn positive_indices(&self) -> Vec<usize> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label == Some(Label::Positive))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Temperature of the softmax weighting; the two limit modes realize the
/// uniform and Kronecker-delta ends of the family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Temperature {
    Finite(f64),
    Uniform,
    Argmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Uniform over positives (human baseline).
    UPos,
    /// Uniform over all five candidates.
    Rand,
    /// Always the original.
    OrigsOnly,
    /// Softmax over all candidates' scores.
    Sma,
    /// Softmax over positive candidates' scores.
    Smp,
    /// Patch-level argmax over all candidates.
    Amo,
}

impl PolicyKind {
    pub fn needs_scorer(self) -> bool {
        matches!(self, PolicyKind::Sma | PolicyKind::Smp | PolicyKind::Amo)
    }
}

#[derive(Debug, Clone)]
pub struct SamplingPolicy {
    pub kind: PolicyKind,
    pub temperature: Temperature,
    /// Required for SMA/SMP/AMO; UPos/Rand/OrigsOnly ignore it.
    pub scorer: Option<ScorerSpec>,
    /// When the positive set is empty, SMP/UPos fall back to the original
    /// (flagged) instead of erroring.
    pub fallback_to_original: bool,
}

impl SamplingPolicy {
    pub fn new(kind: PolicyKind) -> Self {
        let temperature = match kind {
            PolicyKind::Amo => Temperature::Argmax,
            PolicyKind::Sma | PolicyKind::Smp => Temperature::Finite(DEFAULT_TAU),
            _ => Temperature::Uniform,
        };
        SamplingPolicy {
            kind,
            temperature,
            scorer: None,
            fallback_to_original: true,
        }
    }

    pub fn with_temperature(mut self, t: Temperature) -> Self {
        // AMO is argmax by definition.
        if self.kind != PolicyKind::Amo {
            self.temperature = t;
        }
        self
    }
}

/// Probabilities over candidate indices; non-negative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub probs: Vec<f64>,
}

impl Weights {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Exp-normalized weights at temperature tau; `Uniform` gives equal
/// weights, `Argmax` a point mass on the (lowest-index) maximum.
pub fn softmax_weights(scores: &[f64], temperature: Temperature) -> Result<Weights, SamplingError> {
    assert!(!scores.is_empty(), "softmax over empty score list");
    for &s in scores {
        if !s.is_finite() {
            return Err(SamplingError::NonFiniteScore(s));
        }
    }
    let probs = match temperature {
        Temperature::Uniform => vec![1.0 / scores.len() as f64; scores.len()],
        Temperature::Argmax => {
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            let mut p = vec![0.0; scores.len()];
            p[best] = 1.0;
            p
        }
        Temperature::Finite(tau) => {
            assert!(tau > 0.0, "temperature must be positive");
            let scaled: Vec<f64> = scores.iter().map(|s| s / tau).collect();
            let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.iter().map(|e| e / total).collect()
        }
    };
    Ok(Weights { probs })
}

/// Inverse-CDF draw over a weight vector; consumes exactly one uniform
/// variate. Ties and zero-weight prefixes resolve to the lowest index with
/// mass.
fn draw_index(weights: &Weights, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, &p) in weights.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u at or past the accumulated total: last supported index.
    weights
        .probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(weights.probs.len() - 1)
}

/// The outcome of one policy draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Chosen candidate index (0 = original).
    pub choice: usize,
    /// Dense weights over all five candidates (zero off-support).
    pub weights: Vec<f64>,
    /// True when an empty positive set forced the original.
    pub fallback: bool,
}

/// Dense per-candidate weights for a policy, plus the fallback flag.
pub fn policy_weights(
    set: &CandidateSet,
    policy: &SamplingPolicy,
) -> Result<(Weights, bool), SamplingError> {
    let n = set.candidates.len();
    let dense = |support: &[usize], probs: &[f64]| {
        let mut w = vec![0.0; n];
        for (&i, &p) in support.iter().zip(probs) {
            w[i] = p;
        }
        Weights { probs: w }
    };
    let support_scores = |support: &[usize]| -> Result<Vec<f64>, SamplingError> {
        support
            .iter()
            .map(|&i| {
                set.candidates[i]
                    .score
                    .ok_or(SamplingError::MissingScores(i))
            })
            .collect()
    };
    match policy.kind {
        PolicyKind::OrigsOnly => {
            let mut w = vec![0.0; n];
            w[0] = 1.0;
            Ok((Weights { probs: w }, false))
        }
        PolicyKind::Rand => {
            let support = set.all_indices();
            let probs = vec![1.0 / support.len() as f64; support.len()];
            Ok((dense(&support, &probs), false))
        }
        PolicyKind::UPos => {
            let support = set.positive_indices();
            if support.is_empty() {
                if !policy.fallback_to_original {
                    return Err(SamplingError::EmptyCandidateSupport);
                }
                let mut w = vec![0.0; n];
                w[0] = 1.0;
                return Ok((Weights { probs: w }, true));
            }
            let probs = vec![1.0 / support.len() as f64; support.len()];
            Ok((dense(&support, &probs), false))
        }
        PolicyKind::Sma | PolicyKind::Amo => {
            let support = set.all_indices();
            let scores = support_scores(&support)?;
            let temperature = if policy.kind == PolicyKind::Amo {
                Temperature::Argmax
            } else {
                policy.temperature
            };
            let w = softmax_weights(&scores, temperature)?;
            Ok((dense(&support, &w.probs), false))
        }
        PolicyKind::Smp => {
            let support = set.positive_indices();
            if support.is_empty() {
                if !policy.fallback_to_original {
                    return Err(SamplingError::EmptyCandidateSupport);
                }
                let mut w = vec![0.0; n];
                w[0] = 1.0;
                return Ok((Weights { probs: w }, true));
            }
            let scores = support_scores(&support)?;
            let w = softmax_weights(&scores, policy.temperature)?;
            Ok((dense(&support, &w.probs), false))
        }
    }
}

/// Draw a ground-truth index for one candidate set. Exactly one generator
/// advance regardless of policy.
pub fn select_gt(
    set: &CandidateSet,
    policy: &SamplingPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Selection, SamplingError> {
    let (weights, fallback) = policy_weights(set, policy)?;
    let choice = draw_index(&weights, rng);
    Ok(Selection {
        choice,
        weights: weights.probs,
        fallback,
    })
}

/// Patch rectangle applied identically to every candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

fn candidate_plane<'a>(set: &'a CandidateSet, idx: usize) -> Result<&'a ImagePlane, SamplingError> {
    set.candidates[idx]
        .plane
        .as_ref()
        .ok_or(SamplingError::MissingImage(idx))
}

/// Pixel-identical crops of every candidate, original first.
pub fn aligned_patches(
    set: &CandidateSet,
    spec: PatchSpec,
) -> Result<Vec<ImagePlane>, SamplingError> {
    let first = candidate_plane(set, 0)?;
    let (w, h) = (first.width(), first.height());
    for i in 1..set.candidates.len() {
        let p = candidate_plane(set, i)?;
        if p.width() != w || p.height() != h {
            return Err(SamplingError::DimensionMismatch(
                w,
                h,
                p.width(),
                p.height(),
            ));
        }
    }
    if spec.left + spec.size > w || spec.top + spec.size > h || spec.size == 0 {
        return Err(SamplingError::OutOfBounds {
            top: spec.top,
            left: spec.left,
            size: spec.size,
            w,
            h,
        });
    }
    let mut out = Vec::with_capacity(set.candidates.len());
    for i in 0..set.candidates.len() {
        let p = candidate_plane(set, i)?;
        out.push(
            p.crop(spec.top, spec.left, spec.size, spec.size)
                .expect("bounds checked above"),
        );
    }
    Ok(out)
}

/// Argmax-online: draw one random patch location, score the aligned patch
/// from every candidate, and keep the best (normalized; ties to the lowest
/// index).
pub fn amo_select(
    set: &CandidateSet,
    size: usize,
    rng: &mut ChaCha8Rng,
    scorer: &mut ScorerInstance,
    higher_is_better: bool,
) -> Result<(usize, PatchSpec, ImagePlane), SamplingError> {
    let first = candidate_plane(set, 0)?;
    let (w, h) = (first.width(), first.height());
    if w < size || h < size {
        return Err(SamplingError::ImageTooSmall { size, w, h });
    }
    let top = rng.gen_range(0..=h - size);
    let left = rng.gen_range(0..=w - size);
    let spec = PatchSpec { top, left, size };
    let patches = aligned_patches(set, spec)?;
    let mut best_idx = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, patch) in patches.iter().enumerate() {
        let raw = scorer
            .score_plane(&format!("{}:{}", set.id, i), patch)
            .map_err(|source| SamplingError::Scorer {
                id: set.id.clone(),
                source,
            })?;
        let norm = normalize_score(raw, higher_is_better);
        if norm > best_score {
            best_score = norm;
            best_idx = i;
        }
    }
    let patch = patches.into_iter().nth(best_idx).expect("index in range");
    Ok((best_idx, spec, patch))
}

/// One sampling decision in an exported epoch plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub id: String,
    pub epoch: u64,
    pub choice: usize,
    pub weights: Vec<f64>,
    pub patch: Option<PatchSpec>,
    pub fallback: bool,
    /// Derived per-row seed; part of the in-memory trail, not the plan file.
    #[serde(skip)]
    pub row_seed: u64,
}

/// Everything `plan_epoch` needs to score candidates for score-dependent
/// policies.
pub struct PlanScorer<'a> {
    pub instance: &'a mut ScorerInstance,
    pub higher_is_better: bool,
}

/// Deterministic sampling plan: one row per (quintuplet, epoch), each row
/// drawn from a generator seeded by (seed, id, epoch) so results are
/// schedule-independent. Whole-image scores are computed once per candidate
/// and cached; AMO scores per-patch instead.
pub fn plan_epoch(
    quints: &[Quintuplet],
    policy: &SamplingPolicy,
    epochs: u64,
    seed: u64,
    scorer: Option<&mut PlanScorer>,
    patch_size: usize,
) -> Result<Vec<PlanRow>, SamplingError> {
    let mut rows = Vec::with_capacity(quints.len() * epochs as usize);
    let mut score_cache: HashMap<PathBuf, f64> = HashMap::new();
    let mut scorer = scorer;

    for q in quints {
        let mut set = CandidateSet::from_quintuplet(q);
        // Whole-image candidate scores, once per candidate.
        if matches!(policy.kind, PolicyKind::Sma | PolicyKind::Smp) {
            let ps = scorer
                .as_deref_mut()
                .ok_or(SamplingError::MissingScores(0))?;
            for idx in 0..set.candidates.len() {
                let path = set.candidates[idx].path.clone();
                let norm = match score_cache.get(&path) {
                    Some(&v) => v,
                    None => {
                        let raw = ps
                            .instance
                            .score_path(&format!("{}:{}", q.id, idx), &path)
                            .map_err(|source| SamplingError::Scorer {
                                id: q.id.clone(),
                                source,
                            })?;
                        let norm = normalize_score(raw, ps.higher_is_better);
                        score_cache.insert(path, norm);
                        norm
                    }
                };
                set.candidates[idx].score = Some(norm);
            }
        }
        if policy.kind == PolicyKind::Amo {
            for idx in 0..set.candidates.len() {
                let path = set.candidates[idx].path.clone();
                let plane = load_image(&path).map_err(|source| SamplingError::Corpus {
                    id: q.id.clone(),
                    source,
                })?;
                set.candidates[idx].plane = Some(plane);
            }
        }

        for epoch in 0..epochs {
            let row_seed = derive_seed_epoch(seed, &q.id, epoch);
            let mut rng = rng_from_seed(row_seed);
            let row = if policy.kind == PolicyKind::Amo {
                let ps = scorer
                    .as_deref_mut()
                    .ok_or(SamplingError::MissingScores(0))?;
                let (choice, spec, _) =
                    amo_select(&set, patch_size, &mut rng, ps.instance, ps.higher_is_better)?;
                let mut weights = vec![0.0; set.candidates.len()];
                weights[choice] = 1.0;
                PlanRow {
                    id: q.id.clone(),
                    epoch,
                    choice,
                    weights,
                    patch: Some(spec),
                    fallback: false,
                    row_seed,
                }
            } else {
                let sel = select_gt(&set, policy, &mut rng)?;
                PlanRow {
                    id: q.id.clone(),
                    epoch,
                    choice: sel.choice,
                    weights: sel.weights,
                    patch: None,
                    fallback: sel.fallback,
                    row_seed,
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}
