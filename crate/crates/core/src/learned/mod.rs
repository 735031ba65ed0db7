//! Small trainable lossy codec: strided-conv autoencoder with integer
//! latent quantization and a factorized per-channel rate model, trained
//! on the rate-distortion objective distortion + lambda * rate.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{CoreError, Result};
use crate::nn::optim::Adam;
use crate::rng;
use crate::tensor::{bchw, NodeId, Tape, Tensor, Var};

pub const LATENT_CHANNELS: usize = 32;
pub const HIDDEN_CHANNELS: usize = 16;
/// Integer latent bins cover [-32, 32].
pub const RATE_BINS: usize = 65;
pub const RATE_VMIN: f64 = -32.0;

/// Quantized-latent autoencoder. Spatial downsampling x4, 32 latent
/// channels, piecewise-linear per-channel density over integer bins.
#[derive(Debug, Clone)]
pub struct LearnedCodec {
    pub params: Vec<(String, Tensor)>,
    pub lambda: f64,
    pub input_spec: (usize, usize, usize),
    pub trained: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodecTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        CodecTrainConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CodecEpochStats {
    pub epoch: usize,
    pub rate_bits_per_latent: f64,
    pub distortion_mse: f64,
}

enum Quantizer<'t> {
    Hard,
    Smooth,
    Noise(Var<'t>),
}

pub fn build_codec(lambda: f64, input_spec: (usize, usize, usize), seed: u64) -> Result<LearnedCodec> {
    if lambda <= 0.0 {
        return Err(CoreError::invalid("build_codec: lambda must be positive"));
    }
    let (c, h, w) = input_spec;
    if h % 4 != 0 || w % 4 != 0 {
        return Err(CoreError::invalid(format!(
            "build_codec: input {h}x{w} must be divisible by 4"
        )));
    }
    let mut rng = rng::rng_for(seed, &[0x636f64]);
    let mut params = Vec::new();
    let mut weight = |shape: &[usize], fan_in: usize| -> Tensor {
        let limit = (6.0 / fan_in as f64).sqrt();
        let data: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(-limit..limit) as f32 as f64)
            .collect();
        Tensor::new(data, shape.to_vec()).unwrap()
    };
    params.push(("e1.w".into(), weight(&[HIDDEN_CHANNELS, c, 3, 3], c * 9)));
    params.push(("e1.b".into(), Tensor::zeros(&[HIDDEN_CHANNELS])));
    params.push((
        "e2.w".into(),
        weight(&[LATENT_CHANNELS, HIDDEN_CHANNELS, 3, 3], HIDDEN_CHANNELS * 9),
    ));
    params.push(("e2.b".into(), Tensor::zeros(&[LATENT_CHANNELS])));
    params.push((
        "d1.w".into(),
        weight(&[HIDDEN_CHANNELS, LATENT_CHANNELS, 3, 3], LATENT_CHANNELS * 9),
    ));
    params.push(("d1.b".into(), Tensor::zeros(&[HIDDEN_CHANNELS])));
    params.push((
        "d2.w".into(),
        weight(&[c, HIDDEN_CHANNELS, 3, 3], HIDDEN_CHANNELS * 9),
    ));
    params.push(("d2.b".into(), Tensor::zeros(&[c])));
    // broad unimodal initial density over the integer bins
    let logits: Vec<f64> = (0..LATENT_CHANNELS * RATE_BINS)
        .map(|i| {
            let bin = (i % RATE_BINS) as f64 + RATE_VMIN;
            (-0.5 * (bin / 8.0) * (bin / 8.0)) as f32 as f64
        })
        .collect();
    params.push((
        "rate.logits".into(),
        Tensor::new(logits, vec![LATENT_CHANNELS, RATE_BINS]).unwrap(),
    ));
    Ok(LearnedCodec {
        params,
        lambda,
        input_spec,
        trained: false,
    })
}

impl LearnedCodec {
    pub fn param(&self, name: &str) -> &Tensor {
        &self.params.iter().find(|(n, _)| n == name).unwrap().1
    }

    fn insert_params<'t>(
        &self,
        tape: &'t Tape,
        with_grads: bool,
    ) -> (Vec<(String, Var<'t>)>, Vec<(String, NodeId)>) {
        let mut vars = Vec::new();
        let mut ids = Vec::new();
        for (name, t) in &self.params {
            let v = tape.leaf(t.clone(), with_grads);
            vars.push((name.clone(), v));
            ids.push((name.clone(), v.id));
        }
        (vars, ids)
    }

    /// Latent spatial dims for an input (h, w).
    pub fn latent_shape(&self, h: usize, w: usize) -> (usize, usize, usize) {
        (LATENT_CHANNELS, h / 4, w / 4)
    }
}

fn get<'t>(vars: &[(String, Var<'t>)], name: &str) -> Var<'t> {
    vars.iter().find(|(n, _)| n == name).unwrap().1
}

fn encode<'t>(x: Var<'t>, vars: &[(String, Var<'t>)]) -> Result<Var<'t>> {
    x.conv2d(get(vars, "e1.w"), 2, 1)?
        .bias_chan(get(vars, "e1.b"))?
        .relu()?
        .conv2d(get(vars, "e2.w"), 2, 1)?
        .bias_chan(get(vars, "e2.b"))
}

fn decode<'t>(z: Var<'t>, vars: &[(String, Var<'t>)]) -> Result<Var<'t>> {
    z.upsample2x()?
        .conv2d(get(vars, "d1.w"), 1, 1)?
        .bias_chan(get(vars, "d1.b"))?
        .relu()?
        .upsample2x()?
        .conv2d(get(vars, "d2.w"), 1, 1)?
        .bias_chan(get(vars, "d2.b"))?
        .clamp(0.0, 1.0)
}

/// Full codec pass on a tape; returns (reconstruction, quantized latent,
/// bin probabilities). Gradients flow when `smooth` quantization is used.
fn forward_tape<'t>(
    codec: &LearnedCodec,
    tape: &'t Tape,
    x: Var<'t>,
    quant: Quantizer<'t>,
    with_param_grads: bool,
) -> Result<(Var<'t>, Var<'t>, Var<'t>, Vec<(String, NodeId)>)> {
    let (vars, ids) = codec.insert_params(tape, with_param_grads);
    let latent = encode(x, &vars)?;
    let quantized = match quant {
        Quantizer::Hard => latent.round()?,
        Quantizer::Smooth => latent.smooth_round()?,
        Quantizer::Noise(n) => latent.add(n)?,
    };
    let recon = decode(quantized, &vars)?;
    let probs = get(&vars, "rate.logits").softmax()?;
    Ok((recon, quantized, probs, ids))
}

/// Public tape entry point for through-defense gradients.
pub fn codec_forward_tape<'t>(
    codec: &LearnedCodec,
    tape: &'t Tape,
    x: Var<'t>,
    differentiable: bool,
) -> Result<Var<'t>> {
    let quant = if differentiable {
        Quantizer::Smooth
    } else {
        Quantizer::Hard
    };
    let (recon, _, _, _) = forward_tape(codec, tape, x, quant, false)?;
    Ok(recon)
}

/// Eager encode/quantize/decode. Eval mode (differentiable = false)
/// quantizes latents to exact integers.
pub fn codec_forward(codec: &LearnedCodec, images: &Tensor, differentiable: bool) -> Result<Tensor> {
    let (_, c, h, w) = bchw(images, "codec_forward")?;
    let (sc, sh, sw) = codec.input_spec;
    if (c, h, w) != (sc, sh, sw) {
        return Err(CoreError::BadShape {
            op: "codec_forward",
            expected: format!("(batch, {sc}, {sh}, {sw})"),
            got: images.shape().to_vec(),
        });
    }
    let tape = Tape::new();
    let x = tape.constant(images.clone());
    Ok(codec_forward_tape(codec, &tape, x, differentiable)?.value())
}

/// Quantized (or smooth-quantized) latents for a batch; the eval-mode
/// invariant is that `differentiable = false` yields exact integers.
pub fn codec_latents(
    codec: &LearnedCodec,
    images: &Tensor,
    differentiable: bool,
) -> Result<Tensor> {
    let tape = Tape::new();
    let x = tape.constant(images.clone());
    let quant = if differentiable {
        Quantizer::Smooth
    } else {
        Quantizer::Hard
    };
    let (_, quantized, _, _) = forward_tape(codec, &tape, x, quant, false)?;
    Ok(quantized.value())
}

/// Estimated bits-per-pixel: total -log2 p(quantized latent) divided by
/// pixel count, mean over the batch.
pub fn codec_rate(codec: &LearnedCodec, images: &Tensor) -> Result<f64> {
    if !codec.trained {
        return Err(CoreError::invalid(
            "codec_rate: rate model is untrained; train_codec first",
        ));
    }
    let (b, _, h, w) = bchw(images, "codec_rate")?;
    let tape = Tape::new();
    let x = tape.constant(images.clone());
    let (_, quantized, probs, _) = forward_tape(codec, &tape, x, Quantizer::Hard, false)?;
    let bits = quantized.bin_rate(probs, RATE_VMIN)?.item();
    Ok(bits / (b * h * w) as f64)
}

/// Rate-distortion training with additive-uniform-noise quantizer
/// relaxation. History records the two loss terms per epoch.
pub fn train_codec(
    codec: &LearnedCodec,
    corpus: &LabeledDataset,
    cfg: &CodecTrainConfig,
) -> Result<(LearnedCodec, Vec<CodecEpochStats>)> {
    if corpus.is_empty() {
        return Err(CoreError::invalid("train_codec: empty corpus"));
    }
    if cfg.learning_rate <= 0.0 || cfg.batch_size == 0 {
        return Err(CoreError::invalid("train_codec: invalid config"));
    }
    let mut codec = codec.clone();
    let mut history = Vec::new();
    if cfg.epochs == 0 {
        return Ok((codec, history));
    }
    let mut optims: Vec<Adam> = codec
        .params
        .iter()
        .map(|(_, t)| Adam::new(cfg.learning_rate, t.numel()))
        .collect();
    let n = corpus.len();
    let lambda = codec.lambda;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::rng_for(cfg.seed, &[0x6c63, epoch as u64]));
        let mut rate_sum = 0.0;
        let mut dist_sum = 0.0;
        let mut batches = 0usize;
        let mut noise_rng = rng::rng_for(cfg.seed, &[0x6e6f69, epoch as u64]);
        for chunk in order.chunks(cfg.batch_size) {
            let (images, _) = corpus.select(chunk);
            let tape = Tape::new();
            let x = tape.constant(images);
            let (lc, lh, lw) = codec.latent_shape(codec.input_spec.1, codec.input_spec.2);
            let noise_data: Vec<f64> = (0..chunk.len() * lc * lh * lw)
                .map(|_| noise_rng.gen_range(-0.5..0.5))
                .collect();
            let noise = tape.constant(Tensor::new(noise_data, vec![chunk.len(), lc, lh, lw])?);
            let (recon, noisy, probs, ids) =
                forward_tape(&codec, &tape, x, Quantizer::Noise(noise), true)?;
            let diff = recon.sub(x)?;
            let distortion = diff.mul(diff)?.mean()?;
            let num_latents = (chunk.len() * lc * lh * lw) as f64;
            let rate = noisy
                .bin_rate(probs, RATE_VMIN)?
                .mul_scalar(1.0 / num_latents)?;
            let loss = distortion.add(rate.mul_scalar(lambda)?)?;
            let loss_val = loss.item();
            if !loss_val.is_finite() {
                return Err(CoreError::Diverged { epoch });
            }
            rate_sum += rate.item();
            dist_sum += distortion.item();
            batches += 1;
            let grads = tape.backward(loss)?;
            for (i, (name, id)) in ids.iter().enumerate() {
                if let Some(g) = grads.get_id(*id) {
                    let g = g.data().to_vec();
                    let param = codec
                        .params
                        .iter_mut()
                        .find(|(n, _)| n == name)
                        .map(|(_, t)| t)
                        .unwrap();
                    optims[i].step(param.data_mut(), &g);
                }
            }
        }
        history.push(CodecEpochStats {
            epoch,
            rate_bits_per_latent: rate_sum / batches.max(1) as f64,
            distortion_mse: dist_sum / batches.max(1) as f64,
        });
    }
    for (_, t) in &mut codec.params {
        t.snap_f32();
    }
    codec.trained = true;
    Ok((codec, history))
}
