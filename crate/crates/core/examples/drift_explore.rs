//! Scratch exploration of the drift experiment (not part of the product).

use percept_forge_core::tinysr::{
    artifact_energy, finetune, forward, quality_proxy, synthetic_sr_dataset, FinetuneConfig,
    LoraAdapter, LossWeights, ToyNet, TrainMode,
};

fn mean_energy(
    net: &ToyNet,
    adapter: Option<&LoraAdapter>,
    dataset: &[(percept_forge_core::corpus::ImagePlane, percept_forge_core::corpus::ImagePlane)],
) -> f64 {
    dataset
        .iter()
        .map(|(lr, _)| artifact_energy(&forward(net, adapter, lr).unwrap()).unwrap())
        .sum::<f64>()
        / dataset.len() as f64
}

fn main() {
    for base_steps in [0usize, 20] { for seed in 1u64..=8 {
        let dataset = synthetic_sr_dataset(8, 64, seed * 1000);
        let init = ToyNet::seeded_random(2, &[8, 8], 0.8, seed * 1000 + 1);
        let base_cfg = FinetuneConfig {
            steps: base_steps,
            learning_rate: 1e-3,
            weights: LossWeights {
                lambda_l1: 1.0,
                lambda_perceptual: 1.0,
                lambda_adversarial: 0.0,
                lambda_quality: 0.0,
            },
            mode: TrainMode::FullTheta,
            seed,
        };
        let base = finetune(&init, None, &dataset, &base_cfg).unwrap();
        let ascent = FinetuneConfig {
            steps: 200,
            learning_rate: 8e-3,
            weights: LossWeights {
                lambda_l1: 0.0,
                lambda_perceptual: 0.0,
                lambda_adversarial: 0.0,
                lambda_quality: 0.4,
            },
            mode: TrainMode::FullTheta,
            seed,
        };
        let full = finetune(&base.net, None, &dataset, &ascent).unwrap();
        let adapter = LoraAdapter::init(&base.net, 4, seed * 1000 + 2);
        let lora_cfg = FinetuneConfig { mode: TrainMode::LoraOnly, ..ascent.clone() };
        let lora = finetune(&base.net, Some(&adapter), &dataset, &lora_cfg).unwrap();
        let e_full = mean_energy(&full.net, None, &dataset);
        let e_lora = mean_energy(&lora.net, lora.adapter.as_ref(), &dataset);

        // combined run from fresh init, paper-style lambda_q
        let fresh = ToyNet::seeded_random(2, &[8, 8], 0.8, seed * 1000 + 3);
        let combined_cfg = FinetuneConfig {
            steps: 200,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
            mode: TrainMode::FullTheta,
            seed,
        };
        let combined = finetune(&fresh, None, &dataset, &combined_cfg).unwrap();
        let improved = dataset
            .iter()
            .filter(|(lr, _)| {
                let before = quality_proxy(&forward(&fresh, None, lr).unwrap()).unwrap();
                let after = quality_proxy(&forward(&combined.net, None, lr).unwrap()).unwrap();
                after > before
            })
            .count();
        println!(
            "base {base_steps} seed {seed}: full {e_full:.4e} lora {e_lora:.4e} margin {:.2}x ordering {} | combined improved {improved}/8",
            e_full / e_lora,
            e_full > e_lora,
        );
    }
}
}
