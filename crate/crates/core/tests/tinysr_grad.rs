//! Finite-difference verification of the hand-rolled gradients, LoRA
//! identity/isolation contracts, and convolution oracles for the quality
//! proxy and the artifact-energy probe.

use percept_forge_core::corpus::ImagePlane;
use percept_forge_core::tinysr::{
    artifact_energy, backward, forward, ft_loss, quality_proxy, synthetic_texture, LoraAdapter,
    LossWeights, ToyNet, TrainMode, QUALITY_EPSILON,
};
use percept_forge_core::util::rng_from_seed;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-4;

fn random_net(rng: &mut ChaCha8Rng) -> ToyNet {
    let scale = rng.gen_range(1..=2);
    let depth = rng.gen_range(0..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(2..=5)).collect();
    ToyNet::seeded_random(scale, &hidden, 0.7, rng.gen())
}

fn random_weights(rng: &mut ChaCha8Rng) -> LossWeights {
    LossWeights {
        lambda_l1: rng.gen_range(0.0..1.5),
        lambda_perceptual: rng.gen_range(0.0..1.5),
        lambda_adversarial: 0.0,
        lambda_quality: rng.gen_range(0.0..0.3),
    }
}

fn loss_at(
    net: &ToyNet,
    adapter: Option<&LoraAdapter>,
    lr: &ImagePlane,
    target: &ImagePlane,
    w: &LossWeights,
) -> f64 {
    let out = forward(net, adapter, lr).unwrap();
    ft_loss(&out, target, w, None).unwrap().total
}

/// Relative error with an absolute fallback when both values are tiny.
fn grad_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-6 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / denom
    }
}

fn check_mode(
    net: &ToyNet,
    adapter: Option<&LoraAdapter>,
    lr: &ImagePlane,
    target: &ImagePlane,
    w: &LossWeights,
    mode: TrainMode,
    rng: &mut ChaCha8Rng,
    label: &str,
) {
    let (grads, _) = backward(net, adapter, lr, target, w, mode).unwrap();
    let flat = grads.flatten();
    let base_params = match mode {
        TrainMode::FullTheta => net.params(),
        TrainMode::LoraOnly => adapter.unwrap().params(),
    };
    assert_eq!(flat.len(), base_params.len());

    let loss_with = |idx: usize, delta: f64| -> f64 {
        let mut p = base_params.clone();
        p[idx] += delta;
        match mode {
            TrainMode::FullTheta => {
                let mut n = net.clone();
                n.set_params(&p);
                loss_at(&n, adapter, lr, target, w)
            }
            TrainMode::LoraOnly => {
                let mut a = adapter.unwrap().clone();
                a.set_params(&p);
                loss_at(net, Some(&a), lr, target, w)
            }
        }
    };

    // 64 probes whose central difference is self-consistent across two
    // step sizes; coordinates whose FD stencil straddles an L1 or ReLU
    // kink are resampled, since the difference quotient is not a gradient
    // oracle at non-differentiable points.
    let probes = 64.min(base_params.len());
    let mut checked = 0;
    let mut attempts = 0;
    while checked < probes {
        attempts += 1;
        assert!(
            attempts < 1024,
            "{label}: could not find {probes} kink-free probes"
        );
        let idx = rng.gen_range(0..base_params.len());
        let numeric = (loss_with(idx, FD_STEP) - loss_with(idx, -FD_STEP)) / (2.0 * FD_STEP);
        let finer =
            (loss_with(idx, FD_STEP / 10.0) - loss_with(idx, -FD_STEP / 10.0)) / (FD_STEP / 5.0);
        if grad_error(numeric, finer) > 1e-5 {
            continue; // kink inside the stencil
        }
        let err = grad_error(flat[idx], numeric);
        assert!(
            err < FD_TOLERANCE,
            "{label} coord {idx}: analytic {} vs fd {numeric} (err {err})",
            flat[idx]
        );
        checked += 1;
    }
}

#[test]
fn gradients_match_central_differences_over_fuzzed_nets() {
    let mut rng = rng_from_seed(801);
    for case in 0..20 {
        let net = random_net(&mut rng);
        let adapter = LoraAdapter::init(&net, rng.gen_range(2..=3), rng.gen());
        let lr = synthetic_texture(8, 8, rng.gen());
        let out_size = 8 * net.scale;
        let target = synthetic_texture(out_size, out_size, rng.gen());
        let w = random_weights(&mut rng);

        check_mode(
            &net,
            Some(&adapter),
            &lr,
            &target,
            &w,
            TrainMode::FullTheta,
            &mut rng,
            &format!("case {case} full"),
        );
        check_mode(
            &net,
            Some(&adapter),
            &lr,
            &target,
            &w,
            TrainMode::LoraOnly,
            &mut rng,
            &format!("case {case} lora"),
        );
    }
}

#[test]
fn lora_identity_at_init_over_fuzzed_nets() {
    let mut rng = rng_from_seed(802);
    for _ in 0..20 {
        let net = random_net(&mut rng);
        let adapter = LoraAdapter::init(&net, rng.gen_range(1..=4), rng.gen());
        let lr = synthetic_texture(9, 9, rng.gen());
        let base = forward(&net, None, &lr).unwrap();
        let adapted = forward(&net, Some(&adapter), &lr).unwrap();
        for (a, b) in base.data().iter().zip(adapted.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn quality_proxy_checkerboard_matches_convolution_oracle() {
    let mut img = ImagePlane::filled(8, 8, 0.0);
    for y in 0..8 {
        for x in 0..8 {
            img.set(x, y, ((x + y) % 2) as f64);
        }
    }
    // Independent direct convolution with the forward-difference stencils.
    let mut sum = 0.0;
    let mut count = 0.0;
    for y in 0..7 {
        for x in 0..7 {
            let gx = img.get(x + 1, y) - img.get(x, y);
            let gy = img.get(x, y + 1) - img.get(x, y);
            sum += (gx * gx + gy * gy + QUALITY_EPSILON).sqrt();
            count += 1.0;
        }
    }
    let oracle = sum / count;
    let got = quality_proxy(&img).unwrap();
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    // A unit checkerboard alternates both axes everywhere: sqrt(2 + eps).
    assert!((got - (2.0_f64 + QUALITY_EPSILON).sqrt()).abs() < 1e-12);
}

#[test]
fn artifact_energy_checkerboard_is_unit() {
    let mut img = ImagePlane::filled(32, 32, 0.0);
    for y in 0..32 {
        for x in 0..32 {
            img.set(x, y, if (x + y) % 2 == 0 { 1.0 } else { -1.0 });
        }
    }
    // Brute-force convolution oracle for the Nyquist band ratio.
    let mut energy = 0.0;
    for y in 0..31 {
        for x in 0..31 {
            let r = (img.get(x, y) - img.get(x + 1, y) - img.get(x, y + 1)
                + img.get(x + 1, y + 1))
                / 4.0;
            energy += r * r;
        }
    }
    let mean = img.data().iter().sum::<f64>() / 1024.0;
    let var = img.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 1024.0;
    let oracle = (energy / (31.0 * 31.0)) / var;
    assert!((oracle - 1.0).abs() < 1e-9);

    let got = artifact_energy(&img).unwrap();
    assert!((got - 1.0).abs() < 1e-9, "checkerboard energy {got}");
    assert!((got - oracle).abs() < 1e-12);
}

#[test]
fn artifact_energy_stays_in_unit_interval_on_random_fields() {
    let mut rng = rng_from_seed(803);
    for _ in 0..100 {
        let w = rng.gen_range(4..24);
        let h = rng.gen_range(4..24);
        let data: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let img = ImagePlane::new(w, h, data).unwrap();
        let e = artifact_energy(&img).unwrap();
        assert!((0.0..=1.0).contains(&e), "energy {e}");
    }
}
