//! No-reference quality scorers behind one polarity-aware interface:
//! native NSS (NIQE-style) and sharpness scorers, plus an adapter for
//! external scorer processes speaking the line protocol.

mod external;
mod ggd;
mod niqe;
mod nss;
mod sharpness;

pub use external::{ExternalScorer, Handshake, DEFAULT_TIMEOUT, EXTERNAL_PROTOCOL};
pub use ggd::{fit_aggd, fit_ggd, moment_ratio, AggdParams, GgdParams};
pub use niqe::{
    fit_pristine, gaussian_distance, score_niqe_like, PristineModel, DEFAULT_PATCH_SIZE,
};
pub use nss::{mscn_map, nss_features, CoefField, NssFeatures, DEFAULT_MSCN_C, DEFAULT_WINDOW_SIGMA};
pub use sharpness::score_sharpness;

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::corpus::{load_image, CorpusError, ImagePlane};

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("image too small: need at least {min_w}x{min_h}, got {w}x{h}")]
    ImageTooSmall {
        min_w: usize,
        min_h: usize,
        w: usize,
        h: usize,
    },
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("moment ratio {0} outside the attainable bracket")]
    NoBracket(f64),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("all patches rejected")]
    AllPatchesRejected,
    #[error("failed to spawn external scorer: {0}")]
    SpawnFailure(String),
    #[error("external scorer protocol error: {0}")]
    ProtocolError(String),
    #[error("external scorer timed out after {0:?}")]
    Timeout(Duration),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// How a scorer is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    /// NIQE-style natural-scene-statistics distance against a fitted
    /// pristine model (lower is better).
    NativeNss { model_path: PathBuf },
    /// Laplacian-variance sharpness (higher is better).
    NativeSharpness,
    /// Child process speaking the line protocol; polarity comes from its
    /// handshake, never guessed.
    External { command: String },
}

/// A named scorer with declared polarity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerSpec {
    pub name: String,
    pub higher_is_better: bool,
    pub backend: Backend,
}

impl ScorerSpec {
    pub fn sharpness() -> Self {
        ScorerSpec {
            name: "sharpness".into(),
            higher_is_better: true,
            backend: Backend::NativeSharpness,
        }
    }

    pub fn nss(model_path: PathBuf) -> Self {
        ScorerSpec {
            name: "nss".into(),
            higher_is_better: false,
            backend: Backend::NativeNss { model_path },
        }
    }

    /// Flip lower-is-better scores so that every downstream comparison can
    /// use "greater means preferred".
    pub fn normalize(&self, raw: f64) -> f64 {
        normalize_score(raw, self.higher_is_better)
    }
}

pub fn normalize_score(raw: f64, higher_is_better: bool) -> f64 {
    if higher_is_better {
        raw
    } else {
        -raw
    }
}

/// A ready-to-run scorer instance. Native backends are pure; the external
/// backend owns one serial child-process conversation.
pub enum ScorerInstance {
    Sharpness,
    Nss(Box<PristineModel>),
    External(ExternalScorer),
}

impl ScorerInstance {
    /// Build an instance from a spec. For external backends this spawns the
    /// child and completes the handshake; the returned spec copy carries the
    /// handshake name and polarity.
    pub fn build(spec: &ScorerSpec, timeout: Duration) -> Result<(Self, ScorerSpec), ScorerError> {
        match &spec.backend {
            Backend::NativeSharpness => Ok((ScorerInstance::Sharpness, spec.clone())),
            Backend::NativeNss { model_path } => {
                let model = PristineModel::load(model_path)?;
                Ok((ScorerInstance::Nss(Box::new(model)), spec.clone()))
            }
            Backend::External { command } => {
                let ext = ExternalScorer::spawn(command, timeout)?;
                let resolved = ScorerSpec {
                    name: ext.name().to_string(),
                    higher_is_better: ext.higher_is_better(),
                    backend: spec.backend.clone(),
                };
                Ok((ScorerInstance::External(ext), resolved))
            }
        }
    }

    /// Score an image file. `id` keys the request/response exchange for the
    /// external backend.
    pub fn score_path(&mut self, id: &str, path: &Path) -> Result<f64, ScorerError> {
        match self {
            ScorerInstance::Sharpness => score_sharpness(&load_image(path)?),
            ScorerInstance::Nss(model) => score_niqe_like(&load_image(path)?, model),
            ScorerInstance::External(ext) => ext.score(id, path),
        }
    }

    /// Score an in-memory plane. The external backend round-trips through a
    /// temporary PNG because its protocol is path-based.
    pub fn score_plane(&mut self, id: &str, plane: &ImagePlane) -> Result<f64, ScorerError> {
        match self {
            ScorerInstance::Sharpness => score_sharpness(plane),
            ScorerInstance::Nss(model) => score_niqe_like(plane, model),
            ScorerInstance::External(ext) => {
                let dir = tempfile_dir()?;
                let path = dir.join(format!("{id}.png"));
                crate::corpus::save_png(plane, &path)?;
                let result = ext.score(id, &path);
                let _ = std::fs::remove_file(&path);
                result
            }
        }
    }
}

fn tempfile_dir() -> Result<PathBuf, ScorerError> {
    let dir = std::env::temp_dir().join("percept-forge-scratch");
    std::fs::create_dir_all(&dir).map_err(|e| ScorerError::SpawnFailure(e.to_string()))?;
    Ok(dir)
}
