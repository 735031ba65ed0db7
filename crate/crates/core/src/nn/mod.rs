//! Desk-scale differentiable classifiers: a small CNN and a tiny
//! patch-transformer, plus training and evaluation.

mod cnn;
pub mod optim;
mod train;
mod vit;

pub use train::{train, EpochStats, OptimizerKind, TrainConfig};

use std::collections::HashMap;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::rng;
use crate::tensor::{NodeId, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Arch {
    SmallCnn,
    TinyVit,
}

impl Arch {
    pub fn tag(&self) -> &'static str {
        match self {
            Arch::SmallCnn => "small_cnn",
            Arch::TinyVit => "tiny_vit",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "small_cnn" => Ok(Arch::SmallCnn),
            "tiny_vit" => Ok(Arch::TinyVit),
            other => Err(CoreError::invalid(format!("unsupported architecture {other:?}"))),
        }
    }
}

pub const VIT_PATCH: usize = 4;
pub const VIT_DIM: usize = 64;
pub const VIT_HEADS: usize = 4;
pub const VIT_BLOCKS: usize = 2;
pub const VIT_MLP_RATIO: usize = 2;
pub const LN_EPS: f64 = 1e-5;

/// A classifier with a named, ordered parameter set. Immutable once
/// trained; concurrent read-only prediction is safe.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Arch,
    pub params: Vec<(String, Tensor)>,
    pub num_classes: usize,
    pub input_spec: (usize, usize, usize),
}

pub(crate) struct ParamVars<'t> {
    map: HashMap<String, Var<'t>>,
    pub ids: Vec<(String, NodeId)>,
}

impl<'t> ParamVars<'t> {
    pub fn get(&self, name: &str) -> Var<'t> {
        self.map[name]
    }
}

impl Model {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub(crate) fn insert_params<'t>(&self, tape: &'t Tape, with_grads: bool) -> ParamVars<'t> {
        let mut map = HashMap::new();
        let mut ids = Vec::new();
        for (name, tensor) in &self.params {
            let v = tape.leaf(tensor.clone(), with_grads);
            map.insert(name.clone(), v);
            ids.push((name.clone(), v.id));
        }
        ParamVars { map, ids }
    }

    /// Forward pass on a tape. `with_param_grads` controls whether the
    /// parameter leaves request gradients (training) or not (attacks and
    /// evaluation, where only the input matters).
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        x: Var<'t>,
        with_param_grads: bool,
    ) -> Result<(Var<'t>, Vec<(String, NodeId)>)> {
        let shape = x.shape();
        let (c, h, w) = self.input_spec;
        if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
            return Err(CoreError::BadShape {
                op: "model_forward",
                expected: format!("(batch, {c}, {h}, {w})"),
                got: shape,
            });
        }
        let params = self.insert_params(tape, with_param_grads);
        let logits = match self.arch {
            Arch::SmallCnn => cnn::forward(self, tape, x, &params)?,
            Arch::TinyVit => vit::forward(self, tape, x, &params)?,
        };
        Ok((logits, params.ids))
    }
}

/// Deterministic seeded construction: identical seeds give bit-identical
/// parameter tensors. Weights use uniform He initialization, biases and
/// norm offsets zero, norm gains one.
pub fn build_model(
    arch: Arch,
    num_classes: usize,
    input_spec: (usize, usize, usize),
    seed: u64,
) -> Result<Model> {
    let (c, h, w) = input_spec;
    if num_classes == 0 {
        return Err(CoreError::invalid("build_model: num_classes must be positive"));
    }
    if h < 16 || w < 16 {
        return Err(CoreError::invalid(format!(
            "build_model: input {h}x{w} too small (minimum 16x16)"
        )));
    }
    if h % 4 != 0 || w % 4 != 0 {
        return Err(CoreError::invalid(format!(
            "build_model: input {h}x{w} must be divisible by 4 ({})",
            match arch {
                Arch::SmallCnn => "two 2x2 pooling stages",
                Arch::TinyVit => "4x4 patch embedding",
            }
        )));
    }
    let mut rng = rng::rng_for(seed, &[arch as u64, 0x6d6f64]);
    let mut params = Vec::new();
    let mut weight = |shape: &[usize], fan_in: usize| -> Tensor {
        let limit = (6.0 / fan_in as f64).sqrt();
        let data: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(-limit..limit) as f32 as f64)
            .collect();
        Tensor::new(data, shape.to_vec()).unwrap()
    };
    match arch {
        Arch::SmallCnn => {
            let flat = 64 * (h / 4) * (w / 4);
            params.push(("conv1.w".into(), weight(&[32, c, 3, 3], c * 9)));
            params.push(("conv1.b".into(), Tensor::zeros(&[32])));
            params.push(("conv2.w".into(), weight(&[64, 32, 3, 3], 32 * 9)));
            params.push(("conv2.b".into(), Tensor::zeros(&[64])));
            params.push(("fc1.w".into(), weight(&[flat, 128], flat)));
            params.push(("fc1.b".into(), Tensor::zeros(&[128])));
            params.push(("fc2.w".into(), weight(&[128, num_classes], 128)));
            params.push(("fc2.b".into(), Tensor::zeros(&[num_classes])));
        }
        Arch::TinyVit => {
            let tokens = (h / VIT_PATCH) * (w / VIT_PATCH);
            let d = VIT_DIM;
            params.push((
                "patch.w".into(),
                weight(&[d, c, VIT_PATCH, VIT_PATCH], c * VIT_PATCH * VIT_PATCH),
            ));
            params.push(("patch.b".into(), Tensor::zeros(&[d])));
            params.push(("pos".into(), weight(&[tokens, d], d)));
            for b in 0..VIT_BLOCKS {
                params.push((format!("blk{b}.ln1.g"), Tensor::full(&[d], 1.0)));
                params.push((format!("blk{b}.ln1.b"), Tensor::zeros(&[d])));
                for proj in ["wq", "wk", "wv", "wo"] {
                    params.push((format!("blk{b}.attn.{proj}"), weight(&[d, d], d)));
                }
                for bias in ["bq", "bk", "bv", "bo"] {
                    params.push((format!("blk{b}.attn.{bias}"), Tensor::zeros(&[d])));
                }
                params.push((format!("blk{b}.ln2.g"), Tensor::full(&[d], 1.0)));
                params.push((format!("blk{b}.ln2.b"), Tensor::zeros(&[d])));
                params.push((format!("blk{b}.mlp.w1"), weight(&[d, VIT_MLP_RATIO * d], d)));
                params.push((format!("blk{b}.mlp.b1"), Tensor::zeros(&[VIT_MLP_RATIO * d])));
                params.push((
                    format!("blk{b}.mlp.w2"),
                    weight(&[VIT_MLP_RATIO * d, d], VIT_MLP_RATIO * d),
                ));
                params.push((format!("blk{b}.mlp.b2"), Tensor::zeros(&[d])));
            }
            params.push(("head.ln.g".into(), Tensor::full(&[d], 1.0)));
            params.push(("head.ln.b".into(), Tensor::zeros(&[d])));
            params.push(("head.w".into(), weight(&[d, num_classes], d)));
            params.push(("head.b".into(), Tensor::zeros(&[num_classes])));
        }
    }
    Ok(Model {
        arch,
        params,
        num_classes,
        input_spec,
    })
}

/// Eval-mode logits for a batch; deterministic, no gradients recorded.
pub fn predict(model: &Model, images: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let x = tape.constant(images.clone());
    let (logits, _) = model.forward(&tape, x, false)?;
    Ok(logits.value())
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}

/// Fraction of samples classified correctly, optionally after a
/// preprocessing step (the defense hook used by the evaluation layer).
pub fn accuracy(
    model: &Model,
    images: &Tensor,
    labels: &[usize],
    preprocess: Option<&dyn Fn(&Tensor) -> Result<Tensor>>,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(CoreError::invalid("accuracy: empty dataset"));
    }
    let mut correct = 0usize;
    // batch to bound peak memory on larger corpora
    let b = images.shape()[0];
    let chunk = 64usize;
    let plane: usize = images.shape()[1..].iter().product();
    let mut start = 0;
    while start < b {
        let end = (start + chunk).min(b);
        let mut batch = Tensor::new(
            images.data()[start * plane..end * plane].to_vec(),
            std::iter::once(end - start)
                .chain(images.shape()[1..].iter().copied())
                .collect(),
        )?;
        if let Some(pre) = preprocess {
            batch = pre(&batch)?;
        }
        let logits = predict(model, &batch)?;
        for (pred, &label) in argmax_rows(&logits).iter().zip(&labels[start..end]) {
            if *pred == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / labels.len() as f64)
}
