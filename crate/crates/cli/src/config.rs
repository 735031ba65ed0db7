//! Experiment configuration: a TOML file fully describing a run.
//!
//! Validation happens up front — every range error and missing file is
//! reported before any training or evaluation starts. A small set of
//! command-line flags (seed, output directory) overrides the file.

use std::path::{Path, PathBuf};

use compressdef_core::attack::{AttackConfig, AttackKind};
use compressdef_core::nn::Arch;
use compressdef_core::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Default L-infinity budget grid, in 1/255 units.
pub const DEFAULT_BUDGETS_255: [f64; 7] = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0];

/// Default quality grid for the bits-per-pixel study.
pub const DEFAULT_BPP_QUALITIES: [f64; 10] =
    [5.0, 15.0, 25.0, 35.0, 45.0, 55.0, 65.0, 75.0, 85.0, 95.0];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub defenses: Vec<DefenseEntry>,
    #[serde(default)]
    pub attacks: Vec<AttackEntry>,
    /// L-infinity budgets on the [0,1] scale. Mutually exclusive with
    /// `budgets_255`.
    #[serde(default)]
    pub budgets: Option<Vec<f64>>,
    /// L-infinity budgets in 1/255 units (the paper's convention).
    #[serde(default)]
    pub budgets_255: Option<Vec<f64>>,
    /// Qualities for the bits-per-pixel table.
    #[serde(default)]
    pub bpp_qualities: Option<Vec<f64>>,
    /// Number of photos in the bits-per-pixel corpus.
    #[serde(default = "default_bpp_photos")]
    pub bpp_photos: usize,
    /// Photo edge length for the bits-per-pixel corpus.
    #[serde(default = "default_bpp_size")]
    pub bpp_size: usize,
}

fn default_bpp_photos() -> usize {
    64
}

fn default_bpp_size() -> usize {
    128
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct DatasetSource {
    /// "synthetic" (built-in glyph corpus), "idx", or "png_dirs".
    pub format: String,
    /// idx: images file; png_dirs: class-directory root.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// idx only: labels file.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// idx: held-out images file; png_dirs: held-out root.
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    /// idx only: held-out labels file.
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    /// synthetic only: training-set size.
    #[serde(default = "default_train_samples")]
    pub train_samples: usize,
    /// synthetic only: held-out set size.
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    /// Cap on samples used for the attack grid (0 = all).
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
}

fn default_train_samples() -> usize {
    900
}

fn default_test_samples() -> usize {
    200
}

fn default_eval_samples() -> usize {
    100
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource {
            format: "synthetic".to_string(),
            path: None,
            labels: None,
            test_path: None,
            test_labels: None,
            train_samples: default_train_samples(),
            test_samples: default_test_samples(),
            eval_samples: default_eval_samples(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Display name; defaults to the architecture tag.
    #[serde(default)]
    pub name: Option<String>,
    /// "small_cnn" or "tiny_vit".
    pub arch: String,
    /// Load instead of training when the file exists; training writes
    /// the checkpoint here.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Fraction of the training set appended again as JPEG q=25
    /// compressed copies (compression-aware training).
    #[serde(default)]
    pub jpeg_augment: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    8
}

fn default_batch_size() -> usize {
    64
}

fn default_learning_rate() -> f64 {
    1e-3
}

impl ModelConfig {
    pub fn arch(&self) -> Result<Arch> {
        Arch::from_tag(&self.arch)
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.arch)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseEntry {
    /// "none", "jpeg", or "learned".
    pub codec: String,
    #[serde(default = "default_quality")]
    pub quality: f64,
    /// learned only: rate-distortion weight.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// learned only: load instead of training when the file exists;
    /// training writes the checkpoint here.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// learned only: training epochs when no checkpoint exists.
    #[serde(default = "default_codec_epochs")]
    pub epochs: usize,
    /// Sequential application count N.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Attack surface: false = attacker sees the bare model, true =
    /// gradients propagate through the (smoothed) defense.
    #[serde(default)]
    pub through: bool,
}

fn default_quality() -> f64 {
    25.0
}

fn default_lambda() -> f64 {
    0.01
}

fn default_codec_epochs() -> usize {
    8
}

fn default_iterations() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEntry {
    /// "fgsm", "ifgsm", "pgd", "cw", or "deepfool".
    pub kind: String,
    #[serde(default)]
    pub steps: Option<usize>,
    /// Step size for iterative sign attacks; default epsilon/4.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub random_start: Option<bool>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub overshoot: Option<f64>,
}

impl AttackEntry {
    pub fn to_attack_config(&self) -> Result<AttackConfig> {
        let kind = AttackKind::from_tag(&self.kind)?;
        let mut cfg = AttackConfig::new(kind, 0.0);
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        cfg.alpha = self.alpha;
        if let Some(r) = self.random_start {
            cfg.random_start = r;
        }
        if let Some(v) = self.c {
            cfg.c = v;
        }
        if let Some(v) = self.kappa {
            cfg.kappa = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.overshoot {
            cfg.overshoot = v;
        }
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CoreError::invalid(format!("config: cannot read {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CoreError::invalid(format!("config: {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// L-infinity budgets on the [0,1] scale.
    pub fn budget_list(&self) -> Vec<f64> {
        if let Some(b) = &self.budgets {
            b.clone()
        } else if let Some(b) = &self.budgets_255 {
            b.iter().map(|v| v / 255.0).collect()
        } else {
            DEFAULT_BUDGETS_255.iter().map(|v| v / 255.0).collect()
        }
    }

    pub fn bpp_quality_list(&self) -> Vec<f64> {
        self.bpp_qualities
            .clone()
            .unwrap_or_else(|| DEFAULT_BPP_QUALITIES.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        match self.dataset.format.as_str() {
            "synthetic" => {
                if self.dataset.train_samples == 0 || self.dataset.test_samples == 0 {
                    return Err(CoreError::invalid(
                        "config: synthetic dataset sizes must be >= 1",
                    ));
                }
            }
            "idx" => {
                for (field, path) in [
                    ("dataset.path", &self.dataset.path),
                    ("dataset.labels", &self.dataset.labels),
                    ("dataset.test_path", &self.dataset.test_path),
                    ("dataset.test_labels", &self.dataset.test_labels),
                ] {
                    let p = path
                        .as_ref()
                        .ok_or_else(|| CoreError::invalid(format!("config: {field} required for idx datasets")))?;
                    require_file(field, p)?;
                }
            }
            "png_dirs" => {
                for (field, path) in [
                    ("dataset.path", &self.dataset.path),
                    ("dataset.test_path", &self.dataset.test_path),
                ] {
                    let p = path.as_ref().ok_or_else(|| {
                        CoreError::invalid(format!("config: {field} required for png_dirs datasets"))
                    })?;
                    if !p.is_dir() {
                        return Err(CoreError::invalid(format!(
                            "config: {field}: {} is not a directory",
                            p.display()
                        )));
                    }
                }
            }
            other => {
                return Err(CoreError::invalid(format!(
                    "config: unknown dataset format {other:?} (expected synthetic, idx, or png_dirs)"
                )));
            }
        }

        if self.models.is_empty() {
            return Err(CoreError::invalid("config: at least one model required"));
        }
        for m in &self.models {
            m.arch()?;
            if m.batch_size == 0 {
                return Err(CoreError::invalid("config: model batch_size must be >= 1"));
            }
            if m.learning_rate <= 0.0 {
                return Err(CoreError::invalid("config: model learning_rate must be > 0"));
            }
            if !(0.0..=1.0).contains(&m.jpeg_augment) {
                return Err(CoreError::invalid("config: jpeg_augment must be in [0,1]"));
            }
        }

        for d in &self.defenses {
            match d.codec.as_str() {
                "none" => {}
                "jpeg" => {
                    if !(1.0..=100.0).contains(&d.quality) {
                        return Err(CoreError::invalid("config: jpeg quality must be in [1,100]"));
                    }
                }
                "learned" => {
                    if d.lambda <= 0.0 {
                        return Err(CoreError::invalid("config: learned lambda must be > 0"));
                    }
                }
                other => {
                    return Err(CoreError::invalid(format!(
                        "config: unknown defense codec {other:?} (expected none, jpeg, or learned)"
                    )));
                }
            }
            if d.iterations == 0 {
                return Err(CoreError::invalid("config: defense iterations must be >= 1"));
            }
        }

        for a in &self.attacks {
            a.to_attack_config()?;
        }

        if self.budgets.is_some() && self.budgets_255.is_some() {
            return Err(CoreError::invalid(
                "config: budgets and budgets_255 are mutually exclusive",
            ));
        }
        if self.budget_list().iter().any(|&b| !(0.0..=1.0).contains(&b)) {
            return Err(CoreError::invalid("config: budgets must lie in [0,1]"));
        }
        for q in self.bpp_quality_list() {
            if !(1.0..=100.0).contains(&q) {
                return Err(CoreError::invalid("config: bpp quality must be in [1,100]"));
            }
        }
        if self.bpp_photos == 0 || self.bpp_size < 8 {
            return Err(CoreError::invalid(
                "config: bpp corpus needs >= 1 photo of edge >= 8",
            ));
        }
        Ok(())
    }
}

fn require_file(field: &str, path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(CoreError::invalid(format!(
            "config: {field}: {} does not exist",
            path.display()
        )));
    }
    Ok(())
}
