//! Desk-scale direct-optimization lab: a small convolutional SR network
//! with LoRA adapters, a combined reconstruction/quality loss, hand-rolled
//! reverse-mode gradients, and probes for structured optimization noise.

mod fixtures;
mod loss;
mod net;
mod train;

pub use fixtures::{synthetic_sr_dataset, synthetic_texture};
pub use loss::{
    artifact_energy, combined_loss, diff_fields, ft_loss, quality_proxy, sobel_fields, Critic,
    LossBreakdown, LossWeights, QUALITY_EPSILON,
};
pub use net::{
    backward, forward, ConvLayer, Gradients, LayerGrad, LoraAdapter, LoraGrad, LoraLayer,
    ToyNet, TrainMode, KERNEL_SIZE,
};
pub use train::{
    finetune, load_weights, save_weights, FinetuneConfig, FinetuneResult, TrajectoryStep,
};

#[derive(Debug, thiserror::Error)]
pub enum TinysrError {
    #[error("image too small: need at least {min}x{min}, got {w}x{h}")]
    ImageTooSmall { min: usize, w: usize, h: usize },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("lambda_adversarial > 0 requires a critic hook")]
    MissingCritic,
    #[error("the external critic hook has no gradient; set lambda_adversarial = 0 to train")]
    NonDifferentiableCritic,
    #[error("non-finite loss at step {step}; aborting with partial trajectory")]
    DivergenceDetected {
        step: usize,
        trajectory: Vec<TrajectoryStep>,
    },
    #[error("invalid network: {0}")]
    InvalidNet(String),
    #[error("weights file error: {0}")]
    WeightsFile(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("critic failed: {0}")]
    CriticFailed(String),
}
