//! Plain gradient-descent fine-tuning with deterministic replay, trajectory
//! recording, and the flat-double weights file format.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ImagePlane;

use super::loss::LossWeights;
use super::net::{backward, forward, Gradients, LoraAdapter, ToyNet, TrainMode};
use super::{artifact_energy, TinysrError};

/// One recorded optimization step. Loss terms are evaluated at the
/// pre-update parameters on that step's image; `delta_norm` is the L2
/// distance of the trained parameter set from its initial value, measured
/// after the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub step: usize,
    pub total: f64,
    pub l1: f64,
    pub perceptual: f64,
    pub critic: f64,
    pub quality: f64,
    pub quality_term: f64,
    pub artifact_energy: f64,
    pub delta_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub mode: TrainMode,
    /// Recorded for provenance; the loop itself is deterministic.
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 200,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
            mode: TrainMode::FullTheta,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub net: ToyNet,
    pub adapter: Option<LoraAdapter>,
    pub trajectory: Vec<TrajectoryStep>,
}

/// Fixed-step gradient descent over the fine-tuning loss, batch of one in
/// dataset order, cycling. Any non-finite loss aborts with the partial
/// trajectory attached to the error.
pub fn finetune(
    net: &ToyNet,
    adapter: Option<&LoraAdapter>,
    dataset: &[(ImagePlane, ImagePlane)],
    config: &FinetuneConfig,
) -> Result<FinetuneResult, TinysrError> {
    if dataset.is_empty() {
        return Err(TinysrError::EmptyDataset);
    }
    if config.mode == TrainMode::LoraOnly && adapter.is_none() {
        return Err(TinysrError::InvalidNet(
            "lora-only training requires an adapter".into(),
        ));
    }
    let mut net = net.clone();
    let mut adapter = adapter.cloned();
    let theta0 = net.params();
    let lora0 = adapter.as_ref().map(|a| a.params());
    let mut trajectory = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let (lr_img, target) = &dataset[step % dataset.len()];
        let (grads, breakdown) = backward(
            &net,
            adapter.as_ref(),
            lr_img,
            target,
            &config.weights,
            config.mode,
        )?;
        if !breakdown.total.is_finite() {
            return Err(TinysrError::DivergenceDetected { step, trajectory });
        }
        let out = forward(&net, adapter.as_ref(), lr_img)?;
        let energy = artifact_energy(&out)?;

        match (&grads, config.mode) {
            (Gradients::FullTheta(layer_grads), TrainMode::FullTheta) => {
                for (layer, g) in net.layers.iter_mut().zip(layer_grads) {
                    for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                        *w -= config.learning_rate * gw;
                    }
                    for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                        *b -= config.learning_rate * gb;
                    }
                }
            }
            (Gradients::LoraOnly(lora_grads), TrainMode::LoraOnly) => {
                let ad = adapter.as_mut().expect("checked above");
                for (layer, g) in ad.layers.iter_mut().zip(lora_grads) {
                    for (a, ga) in layer.a.iter_mut().zip(&g.a) {
                        *a -= config.learning_rate * ga;
                    }
                    for (b, gb) in layer.b.iter_mut().zip(&g.b) {
                        *b -= config.learning_rate * gb;
                    }
                }
            }
            _ => unreachable!("backward returns gradients matching the mode"),
        }

        let delta_norm = match config.mode {
            TrainMode::FullTheta => l2_distance(&net.params(), &theta0),
            TrainMode::LoraOnly => l2_distance(
                &adapter.as_ref().expect("checked above").params(),
                lora0.as_ref().expect("checked above"),
            ),
        };
        trajectory.push(TrajectoryStep {
            step,
            total: breakdown.total,
            l1: breakdown.l1,
            perceptual: breakdown.perceptual,
            critic: breakdown.critic,
            quality: breakdown.quality,
            quality_term: breakdown.quality_term,
            artifact_energy: energy,
            delta_norm,
        });
    }
    Ok(FinetuneResult {
        net,
        adapter,
        trajectory,
    })
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsHeader {
    scale: usize,
    layers: Vec<LayerShape>,
    rank: Option<usize>,
    alpha: Option<f64>,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerShape {
    out: usize,
    #[serde(rename = "in")]
    in_channels: usize,
}

/// Write net (and adapter, when present) as a JSON header line followed by
/// a flat little-endian double array: per layer weights then bias, then per
/// adapter layer A then B.
pub fn save_weights(
    net: &ToyNet,
    adapter: Option<&LoraAdapter>,
    path: &Path,
) -> Result<(), TinysrError> {
    let mut values = net.params();
    if let Some(ad) = adapter {
        values.extend(ad.params());
    }
    let header = WeightsHeader {
        scale: net.scale,
        layers: net
            .layers
            .iter()
            .map(|l| LayerShape {
                out: l.out_channels,
                in_channels: l.in_channels,
            })
            .collect(),
        rank: adapter.map(|a| a.layers[0].rank),
        alpha: adapter.map(|a| a.layers[0].alpha),
        count: values.len(),
    };
    let mut file = std::fs::File::create(path)
        .map_err(|e| TinysrError::WeightsFile(format!("{}: {e}", path.display())))?;
    let header_line = serde_json::to_string(&header).expect("header serializes");
    file.write_all(header_line.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(|e| TinysrError::WeightsFile(e.to_string()))?;
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in &values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes)
        .map_err(|e| TinysrError::WeightsFile(e.to_string()))
}

/// Inverse of `save_weights`.
pub fn load_weights(path: &Path) -> Result<(ToyNet, Option<LoraAdapter>), TinysrError> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| TinysrError::WeightsFile(format!("{}: {e}", path.display())))?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)
        .map_err(|e| TinysrError::WeightsFile(e.to_string()))?;
    let newline = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| TinysrError::WeightsFile("missing header line".into()))?;
    let header: WeightsHeader = serde_json::from_slice(&raw[..newline])
        .map_err(|e| TinysrError::WeightsFile(format!("bad header: {e}")))?;
    let body = &raw[newline + 1..];
    if body.len() != header.count * 8 {
        return Err(TinysrError::WeightsFile(format!(
            "expected {} doubles, found {} bytes",
            header.count,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut net = ToyNet {
        scale: header.scale,
        layers: header
            .layers
            .iter()
            .map(|s| super::net::ConvLayer::zeros(s.out, s.in_channels))
            .collect(),
    };
    let theta_len = net.param_count();
    if values.len() < theta_len {
        return Err(TinysrError::WeightsFile("truncated theta block".into()));
    }
    net.set_params(&values[..theta_len]);
    net.validate()?;

    let adapter = match header.rank {
        None => None,
        Some(rank) => {
            let alpha = header.alpha.unwrap_or(rank as f64);
            let mut ad = LoraAdapter {
                layers: net
                    .layers
                    .iter()
                    .map(|l| super::net::LoraLayer {
                        rank,
                        alpha,
                        a: vec![0.0; rank * l.fan_in()],
                        b: vec![0.0; l.out_channels * rank],
                    })
                    .collect(),
            };
            let lora_len = ad.param_count();
            if values.len() != theta_len + lora_len {
                return Err(TinysrError::WeightsFile("truncated adapter block".into()));
            }
            ad.set_params(&values[theta_len..]);
            Some(ad)
        }
    };
    if adapter.is_none() && values.len() != theta_len {
        return Err(TinysrError::WeightsFile(
            "trailing bytes without adapter header".into(),
        ));
    }
    Ok((net, adapter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinysr::fixtures::synthetic_texture;

    fn tiny_dataset() -> Vec<(ImagePlane, ImagePlane)> {
        (0..3)
            .map(|i| {
                let hr = synthetic_texture(16, 16, 100 + i);
                let lr = hr.downsample2().unwrap();
                (lr, hr)
            })
            .collect()
    }

    #[test]
    fn fixed_point_leaves_weights_unchanged() {
        let net = ToyNet::seeded_random(2, &[4], 0.6, 5);
        let lr = synthetic_texture(8, 8, 7);
        let target = forward(&net, None, &lr).unwrap();
        let config = FinetuneConfig {
            steps: 5,
            weights: LossWeights {
                lambda_l1: 1.0,
                lambda_perceptual: 1.0,
                lambda_adversarial: 0.0,
                lambda_quality: 0.0,
            },
            ..FinetuneConfig::default()
        };
        let result = finetune(&net, None, &[(lr, target)], &config).unwrap();
        assert_eq!(result.net.params(), net.params());
        for step in &result.trajectory {
            assert_eq!(step.total, 0.0);
            assert_eq!(step.delta_norm, 0.0);
        }
    }

    #[test]
    fn deterministic_replay_is_bit_identical() {
        let net = ToyNet::seeded_random(2, &[4], 0.6, 9);
        let dataset = tiny_dataset();
        let config = FinetuneConfig {
            steps: 12,
            ..FinetuneConfig::default()
        };
        let a = finetune(&net, None, &dataset, &config).unwrap();
        let b = finetune(&net, None, &dataset, &config).unwrap();
        assert_eq!(a.net.params(), b.net.params());
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn lora_only_never_touches_theta() {
        let net = ToyNet::seeded_random(2, &[4], 0.6, 13);
        let adapter = LoraAdapter::init(&net, 2, 14);
        let dataset = tiny_dataset();
        let config = FinetuneConfig {
            steps: 10,
            mode: TrainMode::LoraOnly,
            ..FinetuneConfig::default()
        };
        let result = finetune(&net, Some(&adapter), &dataset, &config).unwrap();
        let before = net.params();
        let after = result.net.params();
        assert_eq!(before.len(), after.len());
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // the adapter itself must have moved
        assert_ne!(
            result.adapter.as_ref().unwrap().params(),
            adapter.params()
        );
    }

    #[test]
    fn divergence_reports_partial_trajectory() {
        let mut net = ToyNet::seeded_random(2, &[4], 0.6, 21);
        // Poison one weight so the very first forward pass goes non-finite.
        net.layers[0].weights[0] = f64::NAN;
        let dataset = tiny_dataset();
        let config = FinetuneConfig {
            steps: 4,
            ..FinetuneConfig::default()
        };
        match finetune(&net, None, &dataset, &config) {
            Err(TinysrError::DivergenceDetected { step, trajectory }) => {
                assert_eq!(step, 0);
                assert!(trajectory.is_empty());
            }
            other => panic!("expected DivergenceDetected, got {other:?}"),
        }
    }

    #[test]
    fn loss_decomposition_holds_at_every_step() {
        let net = ToyNet::seeded_random(2, &[4], 0.6, 31);
        let dataset = tiny_dataset();
        let config = FinetuneConfig {
            steps: 15,
            ..FinetuneConfig::default()
        };
        let result = finetune(&net, None, &dataset, &config).unwrap();
        assert_eq!(result.trajectory.len(), 15);
        for s in &result.trajectory {
            let recomposed = s.l1 + s.perceptual + s.critic - s.quality_term;
            assert!(
                (s.total - recomposed).abs() < 1e-12,
                "step {}: {} vs {}",
                s.step,
                s.total,
                recomposed
            );
        }
    }

    #[test]
    fn weights_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let net = ToyNet::seeded_random(2, &[5, 3], 0.8, 77);
        let adapter = LoraAdapter::init(&net, 4, 78);
        let path = dir.path().join("weights.bin");
        save_weights(&net, Some(&adapter), &path).unwrap();
        let (net2, adapter2) = load_weights(&path).unwrap();
        assert_eq!(net, net2);
        assert_eq!(Some(adapter), adapter2);

        let bare = dir.path().join("bare.bin");
        save_weights(&net, None, &bare).unwrap();
        let (net3, none) = load_weights(&bare).unwrap();
        assert_eq!(net, net3);
        assert!(none.is_none());
    }
}
