//! Experiment orchestration: dataset loading, model/codec preparation,
//! grid evaluation, and artifact emission.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use compressdef_core::attack::AttackConfig;
use compressdef_core::checkpoint::{load_codec, load_model_as, save_codec, save_model};
use compressdef_core::data::{
    augment_jpeg, load_idx, load_png_dirs, synthetic, LabeledDataset, Split,
};
use compressdef_core::eval::{
    evaluate, measure_overhead, DefenseConfig, EvaluationReport,
};
use compressdef_core::jpeg;
use compressdef_core::learned::{build_codec, train_codec, CodecTrainConfig, LearnedCodec};
use compressdef_core::nn::{build_model, train, Model, TrainConfig};
use compressdef_core::rng;
use compressdef_core::{CoreError, Result};

use crate::config::{DefenseEntry, ExperimentConfig, ModelConfig};
use crate::{plot, report};

/// Datasets for one run: the training split and the held-out split.
pub struct Datasets {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let ds = &cfg.dataset;
    match ds.format.as_str() {
        "synthetic" => Ok(Datasets {
            train: synthetic::glyphs(ds.train_samples, cfg.seed, Split::Train),
            test: synthetic::glyphs(ds.test_samples, cfg.seed, Split::Test),
        }),
        "idx" => Ok(Datasets {
            train: load_idx(
                ds.path.as_ref().unwrap(),
                ds.labels.as_ref().unwrap(),
                Split::Train,
            )?,
            test: load_idx(
                ds.test_path.as_ref().unwrap(),
                ds.test_labels.as_ref().unwrap(),
                Split::Test,
            )?,
        }),
        "png_dirs" => Ok(Datasets {
            train: load_png_dirs(ds.path.as_ref().unwrap(), Split::Train)?,
            test: load_png_dirs(ds.test_path.as_ref().unwrap(), Split::Test)?,
        }),
        other => Err(CoreError::invalid(format!("unknown dataset format {other:?}"))),
    }
}

fn ensure_output_dir(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        CoreError::invalid(format!("cannot create {}: {e}", cfg.output_dir.display()))
    })
}

fn checkpoint_path(cfg: &ExperimentConfig, entry: Option<&PathBuf>, default_name: &str) -> PathBuf {
    match entry {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => cfg.output_dir.join(p),
        None => cfg.output_dir.join(default_name),
    }
}

/// Load the model checkpoint if it exists, train (and save) otherwise.
pub fn prepare_model(
    cfg: &ExperimentConfig,
    mc: &ModelConfig,
    data: &Datasets,
    log: &mut dyn FnMut(&str),
) -> Result<Model> {
    let arch = mc.arch()?;
    let path = checkpoint_path(cfg, mc.checkpoint.as_ref(), &format!("{}.rprs", mc.display_name()));
    if path.is_file() {
        log(&format!("loading {} from {}", mc.display_name(), path.display()));
        return load_model_as(&path, arch);
    }
    let (c, h, w) = data.train.image_shape();
    let model = build_model(arch, data.train.num_classes, (c, h, w), rng::derive(cfg.seed, &[mc.seed]))?;
    let train_set = if mc.jpeg_augment > 0.0 {
        augment_jpeg(&data.train, 25.0, mc.jpeg_augment)?
    } else {
        data.train.clone()
    };
    log(&format!(
        "training {} ({} samples, {} epochs)",
        mc.display_name(),
        train_set.len(),
        mc.epochs
    ));
    let tc = TrainConfig {
        epochs: mc.epochs,
        batch_size: mc.batch_size,
        learning_rate: mc.learning_rate,
        seed: rng::derive(cfg.seed, &[mc.seed, 1]),
        ..TrainConfig::default()
    };
    let (trained, history) = train(&model, &train_set, &tc)?;
    for e in &history {
        log(&format!(
            "  epoch {}: loss {:.4}, train accuracy {:.3}",
            e.epoch, e.loss, e.accuracy
        ));
    }
    save_model(&path, &trained)?;
    log(&format!("saved {}", path.display()));
    Ok(trained)
}

/// Load the codec checkpoint if it exists, train (and save) otherwise.
pub fn prepare_codec(
    cfg: &ExperimentConfig,
    entry: &DefenseEntry,
    data: &Datasets,
    log: &mut dyn FnMut(&str),
) -> Result<Arc<LearnedCodec>> {
    let path = checkpoint_path(
        cfg,
        entry.checkpoint.as_ref(),
        &format!("codec-lambda-{}.rprs", entry.lambda),
    );
    if path.is_file() {
        log(&format!("loading codec from {}", path.display()));
        return Ok(Arc::new(load_codec(&path)?));
    }
    let (c, h, w) = data.train.image_shape();
    let codec = build_codec(entry.lambda, (c, h, w), rng::derive(cfg.seed, &[0xc0dec]))?;
    log(&format!(
        "training codec lambda={} ({} epochs)",
        entry.lambda, entry.epochs
    ));
    let tc = CodecTrainConfig {
        epochs: entry.epochs,
        batch_size: 16,
        learning_rate: 1e-3,
        seed: rng::derive(cfg.seed, &[0xc0dec, 1]),
    };
    let (trained, history) = train_codec(&codec, &data.train, &tc)?;
    for e in &history {
        log(&format!(
            "  epoch {}: rate {:.3} bits/latent, mse {:.5}",
            e.epoch, e.rate_bits_per_latent, e.distortion_mse
        ));
    }
    save_codec(&path, &trained)?;
    log(&format!("saved {}", path.display()));
    Ok(Arc::new(trained))
}

pub fn prepare_defenses(
    cfg: &ExperimentConfig,
    data: &Datasets,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<DefenseConfig>> {
    let mut out = Vec::new();
    for entry in &cfg.defenses {
        let d = match entry.codec.as_str() {
            "none" => {
                let mut d = DefenseConfig::none();
                d.iterations = entry.iterations;
                d.through = entry.through;
                d
            }
            "jpeg" => DefenseConfig::jpeg(entry.quality, entry.iterations, entry.through)?,
            "learned" => {
                let codec = prepare_codec(cfg, entry, data, log)?;
                DefenseConfig::learned(codec, entry.iterations, entry.through)?
            }
            other => return Err(CoreError::invalid(format!("unknown codec {other:?}"))),
        };
        out.push(d);
    }
    Ok(out)
}

fn eval_subset(cfg: &ExperimentConfig, data: &Datasets) -> LabeledDataset {
    let cap = cfg.dataset.eval_samples;
    if cap == 0 || cap >= data.test.len() {
        data.test.clone()
    } else {
        data.test.take(cap)
    }
}

pub fn run_evaluate(
    cfg: &ExperimentConfig,
    log: &mut dyn FnMut(&str),
) -> Result<EvaluationReport> {
    ensure_output_dir(cfg)?;
    let data = load_datasets(cfg)?;
    let mut models = Vec::new();
    for mc in &cfg.models {
        models.push((mc.display_name().to_string(), prepare_model(cfg, mc, &data, log)?));
    }
    let defenses = prepare_defenses(cfg, &data, log)?;
    let attacks: Vec<AttackConfig> = cfg
        .attacks
        .iter()
        .map(|a| a.to_attack_config())
        .collect::<Result<_>>()?;
    let budgets = cfg.budget_list();
    let eval_set = eval_subset(cfg, &data);
    let model_refs: Vec<(&str, &Model)> =
        models.iter().map(|(n, m)| (n.as_str(), m)).collect();
    log(&format!(
        "evaluating {} x {} x {} x {} grid on {} samples",
        model_refs.len(),
        defenses.len(),
        attacks.len(),
        budgets.len(),
        eval_set.len()
    ));
    let report = evaluate(&model_refs, &defenses, &attacks, &budgets, &eval_set, cfg.seed)?;

    report::write_atomic(
        &cfg.output_dir.join("report.csv"),
        report::grid_csv(&report).as_bytes(),
    )?;
    report::write_atomic(
        &cfg.output_dir.join("clean.csv"),
        report::clean_csv(&report).as_bytes(),
    )?;
    report::write_atomic(
        &cfg.output_dir.join("report.json"),
        report::report_json(&report)?.as_bytes(),
    )?;
    log(&format!("wrote report.csv, clean.csv, report.json to {}", cfg.output_dir.display()));
    Ok(report)
}

pub fn bpp_table(cfg: &ExperimentConfig) -> Result<Vec<(f64, f64)>> {
    let photos = synthetic::photos(cfg.bpp_photos, cfg.bpp_size, cfg.bpp_size, cfg.seed);
    cfg.bpp_quality_list()
        .iter()
        .map(|&q| Ok((q, jpeg::bpp(&photos, q)?)))
        .collect()
}

pub fn run_bpp(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<()> {
    ensure_output_dir(cfg)?;
    log(&format!(
        "measuring bits per pixel on {} photos of {}x{}",
        cfg.bpp_photos, cfg.bpp_size, cfg.bpp_size
    ));
    let rows = bpp_table(cfg)?;
    report::write_atomic(&cfg.output_dir.join("bpp.csv"), report::bpp_csv(&rows).as_bytes())?;
    if let Some(svg) = plot::bpp_svg(&rows) {
        report::write_atomic(&cfg.output_dir.join("bpp.svg"), svg.as_bytes())?;
    }
    log(&format!("wrote bpp.csv, bpp.svg to {}", cfg.output_dir.display()));
    Ok(())
}

pub fn run_overhead(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<()> {
    ensure_output_dir(cfg)?;
    let data = load_datasets(cfg)?;
    let mc = cfg
        .models
        .first()
        .ok_or_else(|| CoreError::invalid("overhead: at least one model required"))?;
    let model = prepare_model(cfg, mc, &data, log)?;
    let defenses = prepare_defenses(cfg, &data, log)?;
    let eval_set = eval_subset(cfg, &data);
    let rows = measure_overhead(&model, &defenses, &eval_set)?;
    for r in &rows {
        log(&format!(
            "  {} N={}: {:.3} ms/image",
            r.defense, r.iterations, r.per_image_ms
        ));
    }
    report::write_atomic(
        &cfg.output_dir.join("overhead.csv"),
        report::overhead_csv(&rows).as_bytes(),
    )?;
    log(&format!("wrote overhead.csv to {}", cfg.output_dir.display()));
    Ok(())
}

/// Render figures from a previously written report.json.
pub fn run_plot(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<()> {
    let path = cfg.output_dir.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CoreError::invalid(format!("plot: cannot read {} (run evaluate first): {e}", path.display()))
    })?;
    let report: EvaluationReport = serde_json::from_str(&text)
        .map_err(|e| CoreError::invalid(format!("plot: {}: {e}", path.display())))?;
    emit_plots(cfg, &report, log)
}

pub fn emit_plots(
    cfg: &ExperimentConfig,
    report: &EvaluationReport,
    log: &mut dyn FnMut(&str),
) -> Result<()> {
    let mut attacks: Vec<String> = Vec::new();
    for r in &report.rows {
        if !attacks.contains(&r.attack) {
            attacks.push(r.attack.clone());
        }
    }
    let mut wrote = Vec::new();
    for attack in &attacks {
        if let Some(svg) = plot::accuracy_vs_budget_svg(report, attack) {
            let name = format!("accuracy-{attack}.svg");
            report::write_atomic(&cfg.output_dir.join(&name), svg.as_bytes())?;
            wrote.push(name);
        } else {
            log(&format!("note: no plottable rows for {attack}, skipped"));
        }
    }
    if let Some(svg) = plot::sequential_svg(report) {
        report::write_atomic(&cfg.output_dir.join("sequential.svg"), svg.as_bytes())?;
        wrote.push("sequential.svg".to_string());
    }
    let bpp_rows: Vec<(f64, f64)> = report.bpp.iter().map(|b| (b.quality, b.bits_per_pixel)).collect();
    if let Some(svg) = plot::bpp_svg(&bpp_rows) {
        report::write_atomic(&cfg.output_dir.join("bpp-report.svg"), svg.as_bytes())?;
        wrote.push("bpp-report.svg".to_string());
    }
    log(&format!("wrote {} to {}", wrote.join(", "), cfg.output_dir.display()));
    Ok(())
}

/// Train every configured model and learned codec that lacks a
/// checkpoint on disk.
pub fn run_train(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<()> {
    ensure_output_dir(cfg)?;
    let data = load_datasets(cfg)?;
    for mc in &cfg.models {
        prepare_model(cfg, mc, &data, log)?;
    }
    for entry in &cfg.defenses {
        if entry.codec == "learned" {
            prepare_codec(cfg, entry, &data, log)?;
        }
    }
    Ok(())
}

/// Run the configured attacks against the first model without any
/// defense and write attack.csv (same schema as report.csv).
pub fn run_attack_cmd(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<()> {
    ensure_output_dir(cfg)?;
    let data = load_datasets(cfg)?;
    let mc = cfg
        .models
        .first()
        .ok_or_else(|| CoreError::invalid("attack: at least one model required"))?;
    let model = prepare_model(cfg, mc, &data, log)?;
    let attacks: Vec<AttackConfig> = cfg
        .attacks
        .iter()
        .map(|a| a.to_attack_config())
        .collect::<Result<_>>()?;
    if attacks.is_empty() {
        return Err(CoreError::invalid("attack: no attacks configured"));
    }
    let eval_set = eval_subset(cfg, &data);
    let report = evaluate(
        &[(mc.display_name(), &model)],
        &[DefenseConfig::none()],
        &attacks,
        &cfg.budget_list(),
        &eval_set,
        cfg.seed,
    )?;
    for r in &report.rows {
        log(&format!(
            "  {} ε={:.4}: accuracy {:.3}, mean L2 {:.3}",
            r.attack, r.budget, r.accuracy, r.mean_l2
        ));
    }
    report::write_atomic(
        &cfg.output_dir.join("attack.csv"),
        report::grid_csv(&report).as_bytes(),
    )?;
    log(&format!("wrote attack.csv to {}", cfg.output_dir.display()));
    Ok(())
}

/// Write a sample dataset to disk: the glyph corpus in IDX format plus
/// a PNG photo corpus.
pub fn run_gen_data(
    out: &Path,
    train: usize,
    test: usize,
    photos: usize,
    seed: u64,
    log: &mut dyn FnMut(&str),
) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| CoreError::invalid(format!("cannot create {}: {e}", out.display())))?;
    let train_set = synthetic::glyphs(train, seed, Split::Train);
    let test_set = synthetic::glyphs(test, seed, Split::Test);
    compressdef_core::data::write_idx(
        &train_set,
        &out.join("train-images.idx"),
        &out.join("train-labels.idx"),
    )?;
    compressdef_core::data::write_idx(
        &test_set,
        &out.join("test-images.idx"),
        &out.join("test-labels.idx"),
    )?;
    let photo_dir = out.join("photos");
    std::fs::create_dir_all(&photo_dir)
        .map_err(|e| CoreError::invalid(format!("cannot create {}: {e}", photo_dir.display())))?;
    for (i, p) in synthetic::photos(photos, 128, 128, seed).iter().enumerate() {
        compressdef_core::data::save_png(p, &photo_dir.join(format!("photo-{i:03}.png")))?;
    }
    log(&format!(
        "wrote {train}+{test} glyphs (idx) and {photos} photos (png) to {}",
        out.display()
    ));
    Ok(())
}

/// The full pipeline: train, evaluate, bpp, overhead, plots. Returns
/// the number of failed grid cells (nonzero means partial results).
pub fn run_all(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<usize> {
    run_train(cfg, log)?;
    let report = run_evaluate(cfg, log)?;
    run_bpp(cfg, log)?;
    run_overhead(cfg, log)?;
    emit_plots(cfg, &report, log)?;
    let failed = report.failed_cells();
    if failed > 0 {
        log(&format!("warning: {failed} grid cells failed (see report.json)"));
    }
    Ok(failed)
}
