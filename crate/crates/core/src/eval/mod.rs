//! Defense/classifier composition and the evaluation grid: black-box
//! vs. through-the-defense attack wiring, N-fold sequential compression,
//! accuracy sweeps, and latency measurement.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, AttackConfig, Pipeline};
use crate::data::LabeledDataset;
use crate::error::{CoreError, Result};
use crate::jpeg::{self, quant_table, JpegConfig, JpegMode};
use crate::learned::{codec_forward, codec_forward_tape, LearnedCodec};
use crate::nn::{accuracy, Model};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone)]
pub enum DefenseCodec {
    None,
    Jpeg { quality: f64 },
    Learned(Arc<LearnedCodec>),
}

impl std::fmt::Debug for DefenseCodec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DefenseCodec::None => write!(f, "None"),
            DefenseCodec::Jpeg { quality } => write!(f, "Jpeg {{ quality: {quality} }}"),
            DefenseCodec::Learned(c) => write!(f, "Learned {{ lambda: {} }}", c.lambda),
        }
    }
}

/// Preprocessing defense: which codec, how many sequential
/// compress/decompress passes, and whether attackers may differentiate
/// through it (white-box) or must attack the bare model (black-box).
#[derive(Debug, Clone)]
pub struct DefenseConfig {
    pub codec: DefenseCodec,
    pub iterations: usize,
    pub through: bool,
}

impl DefenseConfig {
    pub fn none() -> Self {
        DefenseConfig {
            codec: DefenseCodec::None,
            iterations: 1,
            through: false,
        }
    }

    pub fn jpeg(quality: f64, iterations: usize, through: bool) -> Result<Self> {
        quant_table(quality)?;
        if iterations == 0 {
            return Err(CoreError::invalid("defense: iterations must be at least 1"));
        }
        Ok(DefenseConfig {
            codec: DefenseCodec::Jpeg { quality },
            iterations,
            through,
        })
    }

    pub fn learned(codec: Arc<LearnedCodec>, iterations: usize, through: bool) -> Result<Self> {
        if iterations == 0 {
            return Err(CoreError::invalid("defense: iterations must be at least 1"));
        }
        Ok(DefenseConfig {
            codec: DefenseCodec::Learned(codec),
            iterations,
            through,
        })
    }

    pub fn codec_name(&self) -> &'static str {
        match self.codec {
            DefenseCodec::None => "none",
            DefenseCodec::Jpeg { .. } => "jpeg",
            DefenseCodec::Learned(_) => "learned",
        }
    }

    /// Quality knob for reports: JPEG quality, learned-codec lambda, or
    /// 0 for no defense.
    pub fn quality_value(&self) -> f64 {
        match &self.codec {
            DefenseCodec::None => 0.0,
            DefenseCodec::Jpeg { quality } => *quality,
            DefenseCodec::Learned(c) => c.lambda,
        }
    }
}

/// N-fold codec pass. `differentiable` selects the smooth-round paths
/// (used when crafting through-attacks eagerly); evaluation always uses
/// the exact integer-rounding mode.
pub fn apply_defense(
    images: &Tensor,
    cfg: &DefenseConfig,
    differentiable: bool,
) -> Result<Tensor> {
    match &cfg.codec {
        DefenseCodec::None => Ok(images.clone()),
        DefenseCodec::Jpeg { quality } => {
            let mode = if differentiable {
                JpegMode::Differentiable
            } else {
                JpegMode::BitExact
            };
            let jc = JpegConfig::new(*quality, mode)?;
            let mut out = images.clone();
            for _ in 0..cfg.iterations {
                out = jpeg::jpeg_forward(&out, &jc)?;
            }
            Ok(out)
        }
        DefenseCodec::Learned(codec) => {
            let mut out = images.clone();
            for _ in 0..cfg.iterations {
                out = codec_forward(codec, &out, differentiable)?;
            }
            Ok(out)
        }
    }
}

/// Tape version for through-gradients; always the smooth surrogate.
pub fn apply_defense_tape<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    cfg: &DefenseConfig,
) -> Result<Var<'t>> {
    match &cfg.codec {
        DefenseCodec::None => Ok(x),
        DefenseCodec::Jpeg { quality } => {
            let qt = quant_table(*quality)?;
            let mut v = x;
            for _ in 0..cfg.iterations {
                v = jpeg::jpeg_forward_tape(tape, v, &qt, true)?;
            }
            Ok(v)
        }
        DefenseCodec::Learned(codec) => {
            let mut v = x;
            for _ in 0..cfg.iterations {
                v = codec_forward_tape(codec, tape, v, true)?;
            }
            Ok(v)
        }
    }
}

/// The white-box attack surface: defense then classifier on one tape.
pub struct DefendedPipeline<'a> {
    pub model: &'a Model,
    pub defense: &'a DefenseConfig,
}

impl Pipeline for DefendedPipeline<'_> {
    fn num_classes(&self) -> usize {
        self.model.num_classes
    }

    fn forward_tape<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let defended = apply_defense_tape(tape, x, self.defense)?;
        Ok(self.model.forward(tape, defended, false)?.0)
    }
}

/// Attack-side and evaluation-side wiring for one (model, defense) pair.
/// Evaluation is always predict(apply_defense(x)) with exact rounding;
/// the attacker sees the defended pipeline only when through = true.
pub struct PipelineSet<'a> {
    pub model: &'a Model,
    pub defense: &'a DefenseConfig,
}

pub fn make_pipeline<'a>(model: &'a Model, defense: &'a DefenseConfig) -> PipelineSet<'a> {
    PipelineSet { model, defense }
}

impl<'a> PipelineSet<'a> {
    pub fn attack_pipeline(&self) -> Box<dyn Pipeline + 'a> {
        if self.defense.through {
            Box::new(DefendedPipeline {
                model: self.model,
                defense: self.defense,
            })
        } else {
            Box::new(BareModel(self.model))
        }
    }

    /// Defended accuracy of a (possibly adversarial) batch.
    pub fn defended_accuracy(&self, images: &Tensor, labels: &[usize]) -> Result<f64> {
        let defense = self.defense;
        let pre = move |batch: &Tensor| apply_defense(batch, defense, false);
        accuracy(self.model, images, labels, Some(&pre))
    }
}

struct BareModel<'a>(&'a Model);

impl Pipeline for BareModel<'_> {
    fn num_classes(&self) -> usize {
        self.0.num_classes
    }

    fn forward_tape<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.0.forward(tape, x, false)?.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRow {
    pub model: String,
    pub defense: String,
    pub quality: f64,
    pub iterations: usize,
    pub through: bool,
    pub attack: String,
    /// L-infinity budget on the [0,1] scale; 0 for the clean row.
    pub budget: f64,
    pub accuracy: f64,
    pub mean_l2: f64,
    pub wall_ms: f64,
    /// Fail-soft: a cell that errored carries the message here and NaN
    /// in the numeric fields.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleanRow {
    pub model: String,
    pub defense: String,
    pub quality: f64,
    pub iterations: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BppRow {
    pub quality: f64,
    pub bits_per_pixel: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub dataset: String,
    pub samples: usize,
    pub timestamp_unix: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub meta: ReportMeta,
    pub clean: Vec<CleanRow>,
    pub rows: Vec<GridRow>,
    pub bpp: Vec<BppRow>,
}

impl EvaluationReport {
    pub fn failed_cells(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

fn first_images(dataset: &LabeledDataset, max: usize) -> Vec<Tensor> {
    let n = dataset.len().min(max);
    let (c, h, w) = dataset.image_shape();
    let plane = c * h * w;
    (0..n)
        .map(|i| {
            Tensor::new(
                dataset.images.data()[i * plane..(i + 1) * plane].to_vec(),
                vec![c, h, w],
            )
            .unwrap()
        })
        .collect()
}

fn cell(
    set: &PipelineSet<'_>,
    attack_cfg: &AttackConfig,
    budget: f64,
    dataset: &LabeledDataset,
    cell_seed: u64,
) -> Result<(f64, f64)> {
    if budget == 0.0 && attack_cfg.kind.uses_epsilon() {
        let acc = set.defended_accuracy(&dataset.images, &dataset.labels)?;
        return Ok((acc, 0.0));
    }
    let mut cfg = *attack_cfg;
    cfg.epsilon = budget;
    cfg.seed = cell_seed;
    let attacker = set.attack_pipeline();
    let result = run_attack(attacker.as_ref(), &dataset.images, &dataset.labels, &cfg)?;
    let acc = set.defended_accuracy(&result.adversarial, &dataset.labels)?;
    let mean_l2 = result.l2.iter().sum::<f64>() / result.l2.len().max(1) as f64;
    Ok((acc, mean_l2))
}

/// Full cross-product sweep. Each cell derives its own RNG stream from
/// (seed, cell coordinates), so execution order cannot change results.
/// Cell errors are recorded in the row and the grid keeps going.
pub fn evaluate(
    models: &[(&str, &Model)],
    defenses: &[DefenseConfig],
    attacks: &[AttackConfig],
    budgets: &[f64],
    dataset: &LabeledDataset,
    seed: u64,
) -> Result<EvaluationReport> {
    if models.is_empty() || defenses.is_empty() {
        return Err(CoreError::invalid("evaluate: empty model or defense list"));
    }
    if dataset.is_empty() {
        return Err(CoreError::invalid("evaluate: empty dataset"));
    }
    let mut clean = Vec::new();
    let mut rows = Vec::new();
    for (mi, (mname, model)) in models.iter().enumerate() {
        for (di, defense) in defenses.iter().enumerate() {
            let set = make_pipeline(model, defense);
            let clean_acc = set.defended_accuracy(&dataset.images, &dataset.labels)?;
            clean.push(CleanRow {
                model: mname.to_string(),
                defense: defense.codec_name().to_string(),
                quality: defense.quality_value(),
                iterations: defense.iterations,
                accuracy: clean_acc,
            });
            for (ai, attack_cfg) in attacks.iter().enumerate() {
                for (bi, &budget) in budgets.iter().enumerate() {
                    let cell_seed =
                        rng::derive(seed, &[mi as u64, di as u64, ai as u64, bi as u64]);
                    let start = Instant::now();
                    let outcome = cell(&set, attack_cfg, budget, dataset, cell_seed);
                    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                    let (accuracy, mean_l2, error) = match outcome {
                        Ok((a, l)) => (a, l, None),
                        Err(e) => (f64::NAN, f64::NAN, Some(e.to_string())),
                    };
                    rows.push(GridRow {
                        model: mname.to_string(),
                        defense: defense.codec_name().to_string(),
                        quality: defense.quality_value(),
                        iterations: defense.iterations,
                        through: defense.through,
                        attack: attack_cfg.kind.tag().to_string(),
                        budget,
                        accuracy,
                        mean_l2,
                        wall_ms,
                        error,
                    });
                }
            }
        }
    }
    // JPEG bitrate table over the evaluation corpus, one row per
    // distinct quality in the defense list
    let mut bpp = Vec::new();
    let corpus = first_images(dataset, 32);
    for defense in defenses {
        if let DefenseCodec::Jpeg { quality } = defense.codec {
            if bpp.iter().any(|r: &BppRow| r.quality == quality) {
                continue;
            }
            bpp.push(BppRow {
                quality,
                bits_per_pixel: jpeg::bpp(&corpus, quality)?,
            });
        }
    }
    let timestamp_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(EvaluationReport {
        meta: ReportMeta {
            seed,
            dataset: format!("{:?}/{}", dataset.split, dataset.len()),
            samples: dataset.len(),
            timestamp_unix,
        },
        clean,
        rows,
        bpp,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverheadRow {
    pub defense: String,
    pub quality: f64,
    pub iterations: usize,
    pub per_image_ms: f64,
    pub total_ms: f64,
}

/// Wall-clock cost of defended classification per defense config. One
/// warmup batch runs first and is discarded, so one-time setup cost is
/// excluded from the timings. Each defense is timed three times and the
/// fastest pass is reported, which filters out scheduler noise.
pub fn measure_overhead(
    model: &Model,
    defenses: &[DefenseConfig],
    dataset: &LabeledDataset,
) -> Result<Vec<OverheadRow>> {
    if dataset.is_empty() {
        return Err(CoreError::invalid("measure_overhead: empty dataset"));
    }
    let n = dataset.len();
    let warm_idx: Vec<usize> = (0..n.min(8)).collect();
    let (warm_images, warm_labels) = dataset.select(&warm_idx);
    let mut out = Vec::new();
    for defense in defenses {
        let set = make_pipeline(model, defense);
        set.defended_accuracy(&warm_images, &warm_labels)?; // warmup
        let mut total_ms = f64::INFINITY;
        for _ in 0..3 {
            let start = Instant::now();
            set.defended_accuracy(&dataset.images, &dataset.labels)?;
            total_ms = total_ms.min(start.elapsed().as_secs_f64() * 1e3);
        }
        out.push(OverheadRow {
            defense: defense.codec_name().to_string(),
            quality: defense.quality_value(),
            iterations: defense.iterations,
            per_image_ms: total_ms / n as f64,
            total_ms,
        });
    }
    Ok(out)
}
