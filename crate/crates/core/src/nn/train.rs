use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, Optimizer, SgdMomentum};
use super::Model;
use crate::data::{LabeledDataset, Split};
use crate::error::{CoreError, Result};
use crate::rng;
use crate::tensor::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(CoreError::invalid("train: learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(CoreError::invalid("train: batch_size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Minibatch training with a fixed-seed shuffle per epoch. Returns the
/// trained model and per-epoch loss/train-accuracy history; identical
/// config and seed reproduce the history exactly. Final parameters are
/// snapped to the f32 grid so checkpoints round-trip losslessly.
pub fn train(
    model: &Model,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Model, Vec<EpochStats>)> {
    cfg.validate()?;
    if dataset.split != Split::Train {
        return Err(CoreError::invalid("train: dataset split must be train"));
    }
    if dataset.is_empty() {
        return Err(CoreError::invalid("train: empty dataset"));
    }
    let mut model = model.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok((model, history));
    }
    let mut optims: Vec<Optimizer> = model
        .params
        .iter()
        .map(|(_, t)| match cfg.optimizer {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(cfg.learning_rate, t.numel())),
            OptimizerKind::SgdMomentum => {
                Optimizer::Sgd(SgdMomentum::new(cfg.learning_rate, t.numel()))
            }
        })
        .collect();

    let n = dataset.len();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::rng_for(cfg.seed, &[0x747261, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (images, labels) = dataset.select(chunk);
            let tape = Tape::new();
            let x = tape.constant(images);
            let (logits, param_ids) = model.forward(&tape, x, true)?;
            let loss = logits.cross_entropy_mean(&labels)?;
            let loss_val = loss.item();
            if !loss_val.is_finite() {
                return Err(CoreError::Diverged { epoch });
            }
            loss_sum += loss_val;
            batches += 1;
            let grads = tape.backward(loss)?;
            for (i, (name, id)) in param_ids.iter().enumerate() {
                if let Some(g) = grads.get_id(*id) {
                    let g = g.data().to_vec();
                    let param = model
                        .params
                        .iter_mut()
                        .find(|(n, _)| n == name)
                        .map(|(_, t)| t)
                        .unwrap();
                    optims[i].step(param.data_mut(), &g);
                }
            }
        }
        let accuracy = super::accuracy(&model, &dataset.images, &dataset.labels, None)?;
        history.push(EpochStats {
            epoch,
            loss: loss_sum / batches.max(1) as f64,
            accuracy,
        });
    }
    for (_, t) in &mut model.params {
        t.snap_f32();
    }
    Ok((model, history))
}
