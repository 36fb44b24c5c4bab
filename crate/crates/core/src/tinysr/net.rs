//! The toy SR network: nearest-neighbor upsample into a 3x3 conv stack with
//! ReLU between layers, optional LoRA deltas on every conv, and exact
//! reverse-mode gradients for both full and adapter-only training.

use rand::distributions::Distribution;
use statrs::distribution::Normal;

use crate::corpus::ImagePlane;
use crate::util::rng_from_seed;

use super::loss::{loss_grad_wrt_output, LossBreakdown, LossWeights};
use super::TinysrError;

pub const KERNEL_SIZE: usize = 3;
const MIN_INPUT: usize = 8;

/// Channel-major float volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }
}

/// 3x3 convolution layer, weights indexed [out][in][ky][kx], plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        ConvLayer {
            out_channels,
            in_channels,
            weights: vec![0.0; out_channels * in_channels * KERNEL_SIZE * KERNEL_SIZE],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * KERNEL_SIZE * KERNEL_SIZE
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * KERNEL_SIZE + ky) * KERNEL_SIZE + kx]
    }
}

/// Small convolutional SR network: upsample by `scale`, then the conv
/// stack. First layer consumes 1 luma channel, last produces 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub scale: usize,
    pub layers: Vec<ConvLayer>,
}

impl ToyNet {
    /// Zero-initialized net with the given hidden channel widths.
    pub fn zeros(scale: usize, hidden: &[usize]) -> Self {
        let mut widths = vec![1usize];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| ConvLayer::zeros(w[1], w[0]))
            .collect();
        ToyNet { scale, layers }
    }

    /// Gaussian init with per-layer std `gain / sqrt(fan_in)` and small
    /// nonzero biases. Zero biases would leave ReLU-dead regions with
    /// pre-activations sitting exactly on the kink, which makes the loss
    /// surface non-differentiable at the starting point.
    pub fn seeded_random(scale: usize, hidden: &[usize], gain: f64, seed: u64) -> Self {
        let mut net = Self::zeros(scale, hidden);
        let mut rng = rng_from_seed(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        for layer in &mut net.layers {
            let std = gain / (layer.fan_in() as f64).sqrt();
            for w in &mut layer.weights {
                *w = std * normal.sample(&mut rng);
            }
            for b in &mut layer.bias {
                *b = 0.05 * normal.sample(&mut rng);
            }
        }
        net
    }

    /// Single identity-like layer: center tap 1 on the only in/out channel.
    pub fn identity(scale: usize) -> Self {
        let mut net = Self::zeros(scale, &[]);
        let c = KERNEL_SIZE / 2;
        net.layers[0].weights[(c * KERNEL_SIZE) + c] = 1.0;
        net
    }

    pub fn validate(&self) -> Result<(), TinysrError> {
        if self.scale == 0 {
            return Err(TinysrError::InvalidNet("scale must be >= 1".into()));
        }
        if self.layers.is_empty() {
            return Err(TinysrError::InvalidNet("no layers".into()));
        }
        if self.layers[0].in_channels != 1 {
            return Err(TinysrError::InvalidNet(
                "first layer must consume 1 channel".into(),
            ));
        }
        if self.layers.last().unwrap().out_channels != 1 {
            return Err(TinysrError::InvalidNet(
                "last layer must produce 1 channel".into(),
            ));
        }
        for pair in self.layers.windows(2) {
            if pair[1].in_channels != pair[0].out_channels {
                return Err(TinysrError::InvalidNet("channel chain broken".into()));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters in flatten order: per layer, weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut i = 0;
        for l in &mut self.layers {
            let wn = l.weights.len();
            l.weights.copy_from_slice(&params[i..i + wn]);
            i += wn;
            let bn = l.bias.len();
            l.bias.copy_from_slice(&params[i..i + bn]);
            i += bn;
        }
    }
}

/// Low-rank delta for one conv layer: effective weight matrix (viewed as
/// out x fan_in) is W + (alpha / rank) * B * A.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer {
    pub rank: usize,
    pub alpha: f64,
    /// rank x fan_in
    pub a: Vec<f64>,
    /// out_channels x rank
    pub b: Vec<f64>,
}

/// LoRA deltas for every layer of a net, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub layers: Vec<LoraLayer>,
}

impl LoraAdapter {
    /// A drawn Gaussian with std 1/sqrt(fan_in), B zero, so the adapter is
    /// exactly the identity at init. Scaling alpha = rank.
    pub fn init(net: &ToyNet, rank: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let layers = net
            .layers
            .iter()
            .map(|layer| {
                let fan_in = layer.fan_in();
                let std = 1.0 / (fan_in as f64).sqrt();
                let a = (0..rank * fan_in)
                    .map(|_| std * normal.sample(&mut rng))
                    .collect();
                LoraLayer {
                    rank,
                    alpha: rank as f64,
                    a,
                    b: vec![0.0; layer.out_channels * rank],
                }
            })
            .collect();
        LoraAdapter { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.a.len() + l.b.len()).sum()
    }

    /// Parameters in flatten order: per layer, A then B.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.a);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut i = 0;
        for l in &mut self.layers {
            let an = l.a.len();
            l.a.copy_from_slice(&params[i..i + an]);
            i += an;
            let bn = l.b.len();
            l.b.copy_from_slice(&params[i..i + bn]);
            i += bn;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    FullTheta,
    LoraOnly,
}

/// Gradient of one conv layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient of one LoRA layer's factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrad {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gradients of the fine-tuning loss for the selected parameter set. In
/// `LoraOnly` mode the base parameters are untouched by construction, which
/// realizes "theta gradients identically zero".
#[derive(Debug, Clone, PartialEq)]
pub enum Gradients {
    FullTheta(Vec<LayerGrad>),
    LoraOnly(Vec<LoraGrad>),
}

impl Gradients {
    /// Flattened in the same order as `ToyNet::params` / `LoraAdapter::params`.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            Gradients::FullTheta(layers) => {
                let mut out = Vec::new();
                for l in layers {
                    out.extend_from_slice(&l.weights);
                    out.extend_from_slice(&l.bias);
                }
                out
            }
            Gradients::LoraOnly(layers) => {
                let mut out = Vec::new();
                for l in layers {
                    out.extend_from_slice(&l.a);
                    out.extend_from_slice(&l.b);
                }
                out
            }
        }
    }
}

#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Per-layer effective weights: base plus the scaled low-rank delta.
fn effective_weights(net: &ToyNet, adapter: Option<&LoraAdapter>) -> Vec<Vec<f64>> {
    net.layers
        .iter()
        .enumerate()
        .map(|(li, layer)| {
            let mut w = layer.weights.clone();
            if let Some(ad) = adapter {
                let lora = &ad.layers[li];
                let fan_in = layer.fan_in();
                let scale = lora.alpha / lora.rank as f64;
                for o in 0..layer.out_channels {
                    for f in 0..fan_in {
                        let mut delta = 0.0;
                        for k in 0..lora.rank {
                            delta += lora.b[o * lora.rank + k] * lora.a[k * fan_in + f];
                        }
                        w[o * fan_in + f] += scale * delta;
                    }
                }
            }
            w
        })
        .collect()
}

fn conv_forward(input: &Tensor3, layer: &ConvLayer, weights: &[f64]) -> Tensor3 {
    let (h, w) = (input.height, input.width);
    let mut out = Tensor3::zeros(layer.out_channels, h, w);
    let r = (KERNEL_SIZE / 2) as i64;
    for o in 0..layer.out_channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = layer.bias[o];
                for i in 0..layer.in_channels {
                    for ky in 0..KERNEL_SIZE {
                        let sy = reflect(y as i64 + ky as i64 - r, h);
                        for kx in 0..KERNEL_SIZE {
                            let sx = reflect(x as i64 + kx as i64 - r, w);
                            let widx = ((o * layer.in_channels + i) * KERNEL_SIZE + ky)
                                * KERNEL_SIZE
                                + kx;
                            acc += weights[widx] * input.at(i, sy, sx);
                        }
                    }
                }
                *out.at_mut(o, y, x) = acc;
            }
        }
    }
    out
}

fn upsample_nearest(plane: &ImagePlane, scale: usize) -> Tensor3 {
    let (h, w) = (plane.height(), plane.width());
    let mut out = Tensor3::zeros(1, h * scale, w * scale);
    for y in 0..h * scale {
        for x in 0..w * scale {
            *out.at_mut(0, y, x) = plane.get(x / scale, y / scale);
        }
    }
    out
}

pub(super) struct ForwardTrace {
    /// Input to each layer; index 0 is the upsampled image.
    pub layer_inputs: Vec<Tensor3>,
    /// Conv output of each layer before activation.
    pub pre_acts: Vec<Tensor3>,
    pub effective: Vec<Vec<f64>>,
    pub output: ImagePlane,
}

pub(super) fn forward_trace(
    net: &ToyNet,
    adapter: Option<&LoraAdapter>,
    lr: &ImagePlane,
) -> Result<ForwardTrace, TinysrError> {
    net.validate()?;
    if lr.width() < MIN_INPUT || lr.height() < MIN_INPUT {
        return Err(TinysrError::ImageTooSmall {
            min: MIN_INPUT,
            w: lr.width(),
            h: lr.height(),
        });
    }
    if let Some(ad) = adapter {
        if ad.layers.len() != net.layers.len() {
            return Err(TinysrError::InvalidNet(
                "adapter layer count does not match net".into(),
            ));
        }
    }
    let effective = effective_weights(net, adapter);
    let mut layer_inputs = Vec::with_capacity(net.layers.len());
    let mut pre_acts = Vec::with_capacity(net.layers.len());
    let mut current = upsample_nearest(lr, net.scale);
    let last = net.layers.len() - 1;
    for (li, layer) in net.layers.iter().enumerate() {
        let pre = conv_forward(&current, layer, &effective[li]);
        layer_inputs.push(current);
        let next = if li < last {
            let mut act = pre.clone();
            for v in &mut act.data {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            act
        } else {
            pre.clone()
        };
        pre_acts.push(pre);
        current = next;
    }
    let output = ImagePlane::new(current.width, current.height, current.data.clone())
        .expect("network output dimensions are valid");
    Ok(ForwardTrace {
        layer_inputs,
        pre_acts,
        effective,
        output,
    })
}

/// Upsample-then-convolve forward pass; the adapter, when present, is
/// folded into the effective weights.
pub fn forward(
    net: &ToyNet,
    adapter: Option<&LoraAdapter>,
    lr: &ImagePlane,
) -> Result<ImagePlane, TinysrError> {
    Ok(forward_trace(net, adapter, lr)?.output)
}

/// Exact reverse-mode gradients of the fine-tuning loss.
///
/// `FullTheta` differentiates w.r.t. every conv weight and bias (the
/// adapter, if any, is held fixed); `LoraOnly` differentiates w.r.t. the
/// A/B factors only. Returns the gradients together with the loss
/// breakdown at the evaluated point.
pub fn backward(
    net: &ToyNet,
    adapter: Option<&LoraAdapter>,
    lr: &ImagePlane,
    target: &ImagePlane,
    w: &LossWeights,
    mode: TrainMode,
) -> Result<(Gradients, LossBreakdown), TinysrError> {
    if w.lambda_adversarial > 0.0 {
        return Err(TinysrError::NonDifferentiableCritic);
    }
    if mode == TrainMode::LoraOnly && adapter.is_none() {
        return Err(TinysrError::InvalidNet(
            "lora-only mode requires an adapter".into(),
        ));
    }
    let trace = forward_trace(net, adapter, lr)?;
    let (breakdown, grad_out) = loss_grad_wrt_output(&trace.output, target, w)?;

    let last = net.layers.len() - 1;
    let mut grad_next = Tensor3 {
        channels: 1,
        height: trace.output.height(),
        width: trace.output.width(),
        data: grad_out,
    };
    let mut layer_grads: Vec<LayerGrad> = Vec::with_capacity(net.layers.len());
    let r = (KERNEL_SIZE / 2) as i64;
    for li in (0..net.layers.len()).rev() {
        let layer = &net.layers[li];
        let input = &trace.layer_inputs[li];
        let pre = &trace.pre_acts[li];
        // ReLU applies after every layer but the last; its subgradient at 0
        // is taken as 0.
        let grad_pre = if li < last {
            let mut g = grad_next.clone();
            for (gv, pv) in g.data.iter_mut().zip(&pre.data) {
                if *pv <= 0.0 {
                    *gv = 0.0;
                }
            }
            g
        } else {
            grad_next.clone()
        };
        let (h, wdt) = (grad_pre.height, grad_pre.width);
        let mut gw = vec![0.0; layer.weights.len()];
        let mut gb = vec![0.0; layer.out_channels];
        let mut ginput = Tensor3::zeros(layer.in_channels, h, wdt);
        for o in 0..layer.out_channels {
            for y in 0..h {
                for x in 0..wdt {
                    let g = grad_pre.at(o, y, x);
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    for i in 0..layer.in_channels {
                        for ky in 0..KERNEL_SIZE {
                            let sy = reflect(y as i64 + ky as i64 - r, h);
                            for kx in 0..KERNEL_SIZE {
                                let sx = reflect(x as i64 + kx as i64 - r, wdt);
                                let widx = ((o * layer.in_channels + i) * KERNEL_SIZE + ky)
                                    * KERNEL_SIZE
                                    + kx;
                                gw[widx] += g * input.at(i, sy, sx);
                                *ginput.at_mut(i, sy, sx) += g * trace.effective[li][widx];
                            }
                        }
                    }
                }
            }
        }
        layer_grads.push(LayerGrad {
            weights: gw,
            bias: gb,
        });
        grad_next = ginput;
    }
    layer_grads.reverse();

    let grads = match mode {
        TrainMode::FullTheta => Gradients::FullTheta(layer_grads),
        TrainMode::LoraOnly => {
            let ad = adapter.expect("checked above");
            let lora_grads = net
                .layers
                .iter()
                .zip(&ad.layers)
                .zip(&layer_grads)
                .map(|((layer, lora), lg)| {
                    let fan_in = layer.fan_in();
                    let scale = lora.alpha / lora.rank as f64;
                    // dA = scale * B^T dW, dB = scale * dW A^T
                    let mut ga = vec![0.0; lora.a.len()];
                    let mut gbm = vec![0.0; lora.b.len()];
                    for o in 0..layer.out_channels {
                        for f in 0..fan_in {
                            let dw = lg.weights[o * fan_in + f];
                            if dw == 0.0 {
                                continue;
                            }
                            for k in 0..lora.rank {
                                ga[k * fan_in + f] += scale * lora.b[o * lora.rank + k] * dw;
                                gbm[o * lora.rank + k] += scale * lora.a[k * fan_in + f] * dw;
                            }
                        }
                    }
                    LoraGrad { a: ga, b: gbm }
                })
                .collect();
            Gradients::LoraOnly(lora_grads)
        }
    };
    Ok((grads, breakdown))
}
