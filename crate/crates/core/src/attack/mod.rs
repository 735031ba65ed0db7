//! Gradient-based evasion attacks. Every attack takes an arbitrary
//! differentiable [`Pipeline`] — a bare classifier, or defense composed
//! with classifier for white-box attacks through the preprocessing.

mod cw;
mod deepfool;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{argmax_rows, Model};
use crate::rng;
use crate::tensor::{bchw, Tape, Tensor, Var};

/// A differentiable map from image batches to logits. Attacks only ever
/// see this trait, so attacking defense-then-model uses the same code
/// path as attacking the model alone.
pub trait Pipeline {
    fn num_classes(&self) -> usize;
    fn forward_tape<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>>;

    /// Eval-mode logits; no gradients kept.
    fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let x = tape.constant(images.clone());
        Ok(self.forward_tape(&tape, x)?.value())
    }
}

impl Pipeline for Model {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn forward_tape<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward(tape, x, false)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Ifgsm,
    Pgd,
    Cw,
    Deepfool,
}

impl AttackKind {
    pub fn tag(&self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Ifgsm => "ifgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Cw => "cw",
            AttackKind::Deepfool => "deepfool",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "fgsm" => Ok(AttackKind::Fgsm),
            "ifgsm" => Ok(AttackKind::Ifgsm),
            "pgd" => Ok(AttackKind::Pgd),
            "cw" => Ok(AttackKind::Cw),
            "deepfool" => Ok(AttackKind::Deepfool),
            other => Err(CoreError::invalid(format!("unknown attack {other:?}"))),
        }
    }

    /// Whether the attack is parameterized by an L-infinity budget.
    pub fn uses_epsilon(&self) -> bool {
        matches!(self, AttackKind::Fgsm | AttackKind::Ifgsm | AttackKind::Pgd)
    }
}

/// Attack hyperparameters. `new` fills the standard defaults per kind:
/// iterative sign attacks run 10 steps at alpha = epsilon/4; CW uses
/// c=1, kappa=0, 50 steps at lr 0.01; DeepFool 50 steps, overshoot 0.02.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity budget (fgsm/ifgsm/pgd), on the [0,1] pixel scale.
    pub epsilon: f64,
    /// Step size for iterative sign attacks; None means epsilon/4.
    pub alpha: Option<f64>,
    pub steps: usize,
    pub random_start: bool,
    /// CW distance/margin trade-off.
    pub c: f64,
    /// CW confidence margin.
    pub kappa: f64,
    /// CW optimizer learning rate.
    pub lr: f64,
    /// DeepFool overshoot factor.
    pub overshoot: f64,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        AttackConfig {
            kind,
            epsilon,
            alpha: None,
            steps: match kind {
                AttackKind::Fgsm => 1,
                AttackKind::Ifgsm | AttackKind::Pgd => 10,
                AttackKind::Cw | AttackKind::Deepfool => 50,
            },
            random_start: kind == AttackKind::Pgd,
            c: 1.0,
            kappa: 0.0,
            lr: 0.01,
            overshoot: 0.02,
            seed: 0,
        }
    }

    pub fn alpha_value(&self) -> f64 {
        self.alpha.unwrap_or(self.epsilon / 4.0)
    }

    fn validate(&self, images: &Tensor, labels: &[usize]) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(CoreError::invalid("attack: epsilon must be nonnegative"));
        }
        if self.steps == 0 {
            return Err(CoreError::invalid("attack: steps must be at least 1"));
        }
        let (b, _, _, _) = bchw(images, "attack")?;
        if b != labels.len() {
            return Err(CoreError::invalid(format!(
                "attack: {b} images but {} labels",
                labels.len()
            )));
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(CoreError::invalid("attack: images must lie in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: Tensor,
    /// Per-sample L-infinity perturbation norm.
    pub linf: Vec<f64>,
    /// Per-sample L2 perturbation norm.
    pub l2: Vec<f64>,
    /// Per-sample: pipeline misclassifies the adversarial image.
    pub success: Vec<bool>,
    pub iterations: usize,
}

pub(crate) fn per_sample_norms(x: &Tensor, adv: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let b = x.shape()[0];
    let plane = x.numel() / b;
    let mut linf = Vec::with_capacity(b);
    let mut l2 = Vec::with_capacity(b);
    for i in 0..b {
        let xs = &x.data()[i * plane..(i + 1) * plane];
        let as_ = &adv.data()[i * plane..(i + 1) * plane];
        let mut mx = 0.0f64;
        let mut ss = 0.0f64;
        for (a, b) in xs.iter().zip(as_) {
            let d = (a - b).abs();
            mx = mx.max(d);
            ss += d * d;
        }
        linf.push(mx);
        l2.push(ss.sqrt());
    }
    (linf, l2)
}

pub(crate) fn success_flags(
    pipeline: &dyn Pipeline,
    adv: &Tensor,
    labels: &[usize],
) -> Result<Vec<bool>> {
    let preds = argmax_rows(&pipeline.logits(adv)?);
    Ok(preds.iter().zip(labels).map(|(p, l)| p != l).collect())
}

/// Gradient of mean cross-entropy w.r.t. the input batch.
fn input_gradient(
    pipeline: &dyn Pipeline,
    images: &Tensor,
    labels: &[usize],
) -> Result<Tensor> {
    let tape = Tape::new();
    let x = tape.leaf(images.clone(), true);
    let logits = pipeline.forward_tape(&tape, x)?;
    let loss = logits.cross_entropy_mean(labels)?;
    let grads = tape.backward(loss)?;
    Ok(grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(images.shape())))
}

/// Shared iFGSM loop: ascend the loss by alpha * sign(grad) per step,
/// projecting onto the epsilon-ball around `origin` intersected with
/// [0,1] after every step.
fn sign_iterate(
    pipeline: &dyn Pipeline,
    start: Tensor,
    origin: &Tensor,
    labels: &[usize],
    epsilon: f64,
    alpha: f64,
    steps: usize,
) -> Result<Tensor> {
    let mut cur = start;
    for _ in 0..steps {
        let grad = input_gradient(pipeline, &cur, labels)?;
        for ((v, g), o) in cur
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(origin.data())
        {
            let step = alpha * if *g > 0.0 { 1.0 } else if *g < 0.0 { -1.0 } else { 0.0 };
            *v = (*v + step).clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
        }
    }
    Ok(cur)
}

fn finish(
    pipeline: &dyn Pipeline,
    images: &Tensor,
    labels: &[usize],
    adversarial: Tensor,
    iterations: usize,
) -> Result<AttackResult> {
    let (linf, l2) = per_sample_norms(images, &adversarial);
    let success = success_flags(pipeline, &adversarial, labels)?;
    Ok(AttackResult {
        adversarial,
        linf,
        l2,
        success,
        iterations,
    })
}

/// Single-step sign attack: x' = clamp(x + eps * sign(grad), 0, 1).
pub fn fgsm(
    pipeline: &dyn Pipeline,
    images: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate(images, labels)?;
    let adv = sign_iterate(pipeline, images.clone(), images, labels, cfg.epsilon, cfg.epsilon, 1)?;
    finish(pipeline, images, labels, adv, 1)
}

/// Iterative FGSM with per-step ball projection.
pub fn ifgsm(
    pipeline: &dyn Pipeline,
    images: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate(images, labels)?;
    let alpha = cfg.alpha_value();
    if alpha < 0.0 {
        return Err(CoreError::invalid("ifgsm: alpha must be nonnegative"));
    }
    let adv = sign_iterate(
        pipeline,
        images.clone(),
        images,
        labels,
        cfg.epsilon,
        alpha,
        cfg.steps,
    )?;
    finish(pipeline, images, labels, adv, cfg.steps)
}

/// iFGSM initialized at a uniform random point of the epsilon ball.
/// With random_start = false this is bit-identical to [`ifgsm`].
pub fn pgd(
    pipeline: &dyn Pipeline,
    images: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate(images, labels)?;
    let alpha = cfg.alpha_value();
    if alpha < 0.0 {
        return Err(CoreError::invalid("pgd: alpha must be nonnegative"));
    }
    let start = if cfg.random_start && cfg.epsilon > 0.0 {
        let mut r = rng::rng_for(cfg.seed, &[0x706764]);
        let mut s = images.clone();
        for v in s.data_mut() {
            *v = (*v + r.gen_range(-cfg.epsilon..cfg.epsilon)).clamp(0.0, 1.0);
        }
        s
    } else {
        images.clone()
    };
    let adv = sign_iterate(pipeline, start, images, labels, cfg.epsilon, alpha, cfg.steps)?;
    finish(pipeline, images, labels, adv, cfg.steps)
}

pub use cw::cw;
pub use deepfool::deepfool;

/// Dispatch on cfg.kind.
pub fn run_attack(
    pipeline: &dyn Pipeline,
    images: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm(pipeline, images, labels, cfg),
        AttackKind::Ifgsm => ifgsm(pipeline, images, labels, cfg),
        AttackKind::Pgd => pgd(pipeline, images, labels, cfg),
        AttackKind::Cw => cw(pipeline, images, labels, cfg),
        AttackKind::Deepfool => deepfool(pipeline, images, labels, cfg),
    }
}

/// Accuracy as a function of an admissible-perturbation L2 threshold: a
/// sample counts correct at threshold t iff it was clean-correct and the
/// attack either failed or needed a perturbation larger than t.
pub fn thresholded_accuracy(
    result: &AttackResult,
    clean_correct: &[bool],
    thresholds: &[f64],
) -> Result<Vec<f64>> {
    if clean_correct.len() != result.success.len() {
        return Err(CoreError::invalid(
            "thresholded_accuracy: flag count mismatch",
        ));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(CoreError::invalid(
            "thresholded_accuracy: thresholds must be sorted ascending",
        ));
    }
    let n = clean_correct.len().max(1) as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let correct = clean_correct
                .iter()
                .zip(&result.success)
                .zip(&result.l2)
                .filter(|((&clean, &succ), &l2)| clean && (!succ || l2 > t))
                .count();
            correct as f64 / n
        })
        .collect())
}
