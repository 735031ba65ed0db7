//! Carlini-Wagner L2 attack with tanh box parametrization.

use super::{per_sample_norms, AttackConfig, AttackResult, Pipeline};
use crate::error::Result;
use crate::nn::argmax_rows;
use crate::nn::optim::Adam;
use crate::tensor::{Tape, Tensor};

const MARGIN_MASK: f64 = -1e9;
const TANH_EPS: f64 = 1e-6;

/// Optimize w with x' = (tanh(w)+1)/2, minimizing
/// ||x'-x||_2^2 + c * max(logit_y - max_{j!=y} logit_j, -kappa).
/// Keeps the lowest-L2 successful iterate seen across all steps; samples
/// never successfully attacked return the final iterate.
pub fn cw(
    pipeline: &dyn Pipeline,
    images: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate(images, labels)?;
    let b = images.shape()[0];
    let plane = images.numel() / b;
    let k = pipeline.num_classes();

    // stationary initialization: w = atanh(2x - 1)
    let mut w: Vec<f64> = images
        .data()
        .iter()
        .map(|&x| {
            let x = x.clamp(TANH_EPS, 1.0 - TANH_EPS);
            (2.0 * x - 1.0).atanh()
        })
        .collect();

    // -inf mask at the true label so row_max picks the best other class
    let mut mask = vec![0.0; b * k];
    for (i, &l) in labels.iter().enumerate() {
        mask[i * k + l] = MARGIN_MASK;
    }
    let mask = Tensor::new(mask, vec![b, k])?;

    let mut optim = Adam::new(cfg.lr, w.len());
    let mut best: Vec<Option<(f64, Vec<f64>)>> = vec![None; b];
    let mut final_adv = images.data().to_vec();

    for step in 0..=cfg.steps {
        let tape = Tape::new();
        let wv = tape.leaf(Tensor::new(w.clone(), images.shape().to_vec())?, true);
        let xprime = wv.tanh_act()?.add_scalar(1.0)?.mul_scalar(0.5)?;
        let x0 = tape.constant(images.clone());
        let diff = xprime.sub(x0)?;
        let dist = diff.mul(diff)?.sum()?;
        let logits = pipeline.forward_tape(&tape, xprime)?;
        let zy = logits.select_labels(labels)?;
        let zother = logits.add(tape.constant(mask.clone()))?.row_max()?;
        let margin = zy.sub(zother)?.clamp(-cfg.kappa, f64::MAX)?;
        let objective = dist.add(margin.sum()?.mul_scalar(cfg.c)?)?;

        // track best-so-far per sample at the current iterate
        let adv = xprime.value();
        let preds = argmax_rows(&logits.value());
        for i in 0..b {
            if preds[i] != labels[i] {
                let row = &adv.data()[i * plane..(i + 1) * plane];
                let l2: f64 = row
                    .iter()
                    .zip(&images.data()[i * plane..(i + 1) * plane])
                    .map(|(a, x)| (a - x) * (a - x))
                    .sum::<f64>()
                    .sqrt();
                if best[i].as_ref().map_or(true, |(bl2, _)| l2 < *bl2) {
                    best[i] = Some((l2, row.to_vec()));
                }
            }
        }
        final_adv.copy_from_slice(adv.data());
        if step == cfg.steps {
            break;
        }

        let grads = tape.backward(objective)?;
        if let Some(g) = grads.get(wv) {
            optim.step(&mut w, g.data());
        }
    }

    let mut out = final_adv;
    for (i, slot) in best.iter().enumerate() {
        if let Some((_, row)) = slot {
            out[i * plane..(i + 1) * plane].copy_from_slice(row);
        }
    }
    let adversarial = Tensor::new(out, images.shape().to_vec())?;
    let (linf, l2) = per_sample_norms(images, &adversarial);
    let success = super::success_flags(pipeline, &adversarial, labels)?;
    Ok(AttackResult {
        adversarial,
        linf,
        l2,
        success,
        iterations: cfg.steps,
    })
}
