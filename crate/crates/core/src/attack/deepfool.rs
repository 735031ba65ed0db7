//! DeepFool: iterative linearization toward the nearest decision
//! boundary, processed one sample at a time.

use super::{per_sample_norms, AttackConfig, AttackResult, Pipeline};
use crate::error::Result;
use crate::nn::argmax_rows;
use crate::tensor::{Tape, Tensor};

const DEGENERATE_NORM: f64 = 1e-12;

fn one_sample(images: &Tensor, index: usize) -> Tensor {
    let plane = images.numel() / images.shape()[0];
    let mut shape = images.shape().to_vec();
    shape[0] = 1;
    Tensor::new(
        images.data()[index * plane..(index + 1) * plane].to_vec(),
        shape,
    )
    .unwrap()
}

/// Per-sample outcome: (final adversarial image, steps used, degenerate
/// gradient flag).
fn attack_one(
    pipeline: &dyn Pipeline,
    x: &Tensor,
    label: usize,
    overshoot: f64,
    max_steps: usize,
) -> Result<(Tensor, usize, bool)> {
    let k = pipeline.num_classes();
    let orig_pred = argmax_rows(&pipeline.logits(x)?)[0];
    if orig_pred != label {
        // already misclassified: zero steps, input returned verbatim
        return Ok((x.clone(), 0, false));
    }
    let mut r_total = vec![0.0; x.numel()];
    let mut cur = x.clone();
    let mut steps = 0usize;
    let mut degenerate = false;

    while steps < max_steps {
        let tape = Tape::new();
        let xv = tape.leaf(cur.clone(), true);
        let logits = pipeline.forward_tape(&tape, xv)?;
        let z = logits.value();
        let khat = argmax_rows(&z)[0];
        if khat != orig_pred {
            break;
        }
        // linearize every competing class against the current class
        let mut best: Option<(f64, f64, Vec<f64>)> = None; // (|f|/||w||, |f|, w)
        for j in 0..k {
            if j == khat {
                continue;
            }
            let fj = logits
                .select_labels(&[j])?
                .sub(logits.select_labels(&[khat])?)?
                .sum()?;
            let grads = tape.backward(fj)?;
            let w = match grads.get(xv) {
                Some(g) => g.data().to_vec(),
                None => continue,
            };
            let wnorm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if wnorm <= DEGENERATE_NORM {
                continue;
            }
            let f = (z.data()[j] - z.data()[khat]).abs();
            let ratio = f / wnorm;
            if best.as_ref().map_or(true, |(r, _, _)| ratio < *r) {
                best = Some((ratio, f, w));
            }
        }
        let Some((_, f, w)) = best else {
            degenerate = true;
            break;
        };
        let wsq: f64 = w.iter().map(|v| v * v).sum();
        for (r, wi) in r_total.iter_mut().zip(&w) {
            *r += (f / wsq) * wi;
        }
        steps += 1;
        let data: Vec<f64> = x
            .data()
            .iter()
            .zip(&r_total)
            .map(|(xi, ri)| xi + (1.0 + overshoot) * ri)
            .collect();
        cur = Tensor::new(data, x.shape().to_vec())?;
    }

    let mut adv = cur;
    for v in adv.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok((adv, steps, degenerate))
}

/// Untargeted DeepFool over a batch. A degenerate gradient (no class
/// direction with nonzero norm) marks that sample failed; it does not
/// abort the batch.
pub fn deepfool(
    pipeline: &dyn Pipeline,
    images: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate(images, labels)?;
    let b = images.shape()[0];
    let plane = images.numel() / b;
    let mut out = vec![0.0; images.numel()];
    let mut max_steps_used = 0usize;
    let mut degenerate = vec![false; b];
    for i in 0..b {
        let x = one_sample(images, i);
        let (adv, steps, degen) = attack_one(pipeline, &x, labels[i], cfg.overshoot, cfg.steps)?;
        out[i * plane..(i + 1) * plane].copy_from_slice(adv.data());
        max_steps_used = max_steps_used.max(steps);
        degenerate[i] = degen;
    }
    let adversarial = Tensor::new(out, images.shape().to_vec())?;
    let (linf, l2) = per_sample_norms(images, &adversarial);
    let mut success = super::success_flags(pipeline, &adversarial, labels)?;
    for (s, &d) in success.iter_mut().zip(&degenerate) {
        if d {
            *s = false;
        }
    }
    Ok(AttackResult {
        adversarial,
        linf,
        l2,
        success,
        iterations: max_steps_used,
    })
}
