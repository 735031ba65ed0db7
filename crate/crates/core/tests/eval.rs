//! Defense wiring, evaluation grid, overhead measurement, and
//! checkpoint container round trips.

use std::sync::Arc;

use compressdef_core::attack::{AttackConfig, AttackKind};
use compressdef_core::checkpoint::{
    load_codec, load_model, load_model_as, save_codec, save_model,
};
use compressdef_core::data::{synthetic, Split};
use compressdef_core::eval::{
    apply_defense, evaluate, make_pipeline, measure_overhead, DefenseConfig,
};
use compressdef_core::jpeg::{jpeg_forward, JpegConfig, JpegMode};
use compressdef_core::learned::build_codec;
use compressdef_core::nn::{build_model, Arch};

#[test]
fn defense_application() {
    let data = synthetic::glyphs(4, 1, Split::Test);
    let x = &data.images;

    // codec = none: identity, bit-exact
    let none = DefenseConfig::none();
    assert_eq!(apply_defense(x, &none, false).unwrap().data(), x.data());

    // N = 1 equals a single codec forward, bit-exact
    let d1 = DefenseConfig::jpeg(25.0, 1, false).unwrap();
    let via_defense = apply_defense(x, &d1, false).unwrap();
    let direct = jpeg_forward(x, &JpegConfig::new(25.0, JpegMode::BitExact).unwrap()).unwrap();
    assert_eq!(via_defense.data(), direct.data());

    // N = 3 is the threefold composition
    let d3 = DefenseConfig::jpeg(25.0, 3, false).unwrap();
    let mut manual = x.clone();
    for _ in 0..3 {
        manual = jpeg_forward(&manual, &JpegConfig::new(25.0, JpegMode::BitExact).unwrap()).unwrap();
    }
    assert_eq!(apply_defense(x, &d3, false).unwrap().data(), manual.data());

    assert!(DefenseConfig::jpeg(25.0, 0, false).is_err());
    assert!(DefenseConfig::jpeg(0.0, 1, false).is_err());
}

#[test]
fn recompression_stabilizes_on_photos() {
    // ||J^3(x) - J^2(x)|| <= ||J(x) - x|| corpus mean
    let photos = synthetic::photos(6, 32, 32, 3);
    let cfg = JpegConfig::new(25.0, JpegMode::BitExact).unwrap();
    let mut first = 0.0;
    let mut third = 0.0;
    for p in &photos {
        let x = compressdef_core::tensor::Tensor::new(p.data().to_vec(), vec![1, 3, 32, 32]).unwrap();
        let j1 = jpeg_forward(&x, &cfg).unwrap();
        let j2 = jpeg_forward(&j1, &cfg).unwrap();
        let j3 = jpeg_forward(&j2, &cfg).unwrap();
        first += x.mse(&j1).sqrt();
        third += j2.mse(&j3).sqrt();
    }
    assert!(third <= first);
}

#[test]
fn none_defense_through_flag_is_inert() {
    let model = build_model(Arch::SmallCnn, 10, (1, 28, 28), 3).unwrap();
    let data = synthetic::glyphs(16, 5, Split::Test);
    let eps = 4.0 / 255.0;
    let attack = AttackConfig::new(AttackKind::Fgsm, eps);
    let mut accs = Vec::new();
    for through in [false, true] {
        let mut d = DefenseConfig::none();
        d.through = through;
        let report = evaluate(
            &[("small_cnn", &model)],
            &[d],
            &[attack],
            &[eps],
            &data,
            99,
        )
        .unwrap();
        accs.push(report.rows[0].accuracy);
    }
    assert_eq!(accs[0], accs[1]);
}

#[test]
fn grid_shape_and_determinism() {
    let cnn = build_model(Arch::SmallCnn, 10, (1, 28, 28), 3).unwrap();
    let vit = build_model(Arch::TinyVit, 10, (1, 28, 28), 4).unwrap();
    let data = synthetic::glyphs(8, 5, Split::Test);
    let defenses = [
        DefenseConfig::none(),
        DefenseConfig::jpeg(25.0, 1, false).unwrap(),
    ];
    let attacks = [AttackConfig::new(AttackKind::Fgsm, 0.0)];
    let budgets = [0.0, 2.0 / 255.0, 4.0 / 255.0];
    let models: Vec<(&str, &compressdef_core::nn::Model)> =
        vec![("small_cnn", &cnn), ("tiny_vit", &vit)];

    let report = evaluate(&models, &defenses, &attacks, &budgets, &data, 17).unwrap();
    // 2 models x 2 defenses x 1 attack x 3 budgets
    assert_eq!(report.rows.len(), 12);
    assert_eq!(report.clean.len(), 4);
    assert_eq!(report.failed_cells(), 0);
    for row in &report.rows {
        assert!((0.0..=1.0).contains(&row.accuracy));
    }
    // budget 0 rows equal the matching clean accuracy
    for row in report.rows.iter().filter(|r| r.budget == 0.0) {
        let clean = report
            .clean
            .iter()
            .find(|c| c.model == row.model && c.defense == row.defense)
            .unwrap();
        assert_eq!(row.accuracy, clean.accuracy);
    }
    // jpeg defenses produce a bpp table entry
    assert_eq!(report.bpp.len(), 1);

    // same seed, value-identical grid (wall time excluded)
    let again = evaluate(&models, &defenses, &attacks, &budgets, &data, 17).unwrap();
    for (a, b) in report.rows.iter().zip(&again.rows) {
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.mean_l2, b.mean_l2);
    }
}

#[test]
fn overhead_ordering() {
    let model = build_model(Arch::SmallCnn, 10, (1, 28, 28), 3).unwrap();
    let data = synthetic::glyphs(16, 5, Split::Test);
    let defenses = [
        DefenseConfig::none(),
        DefenseConfig::jpeg(25.0, 1, false).unwrap(),
        DefenseConfig::jpeg(25.0, 5, false).unwrap(),
        DefenseConfig::jpeg(25.0, 25, false).unwrap(),
    ];
    let rows = measure_overhead(&model, &defenses, &data).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!(r.per_image_ms.is_finite() && r.per_image_ms > 0.0);
        assert!(r.total_ms >= r.per_image_ms);
    }
    // a single 28x28 jpeg pass is a small fraction of the model forward,
    // so grant generous noise headroom for N = 1; at N = 25 the defense
    // cost dominates and the ordering must hold outright
    assert!(rows[0].per_image_ms <= rows[1].per_image_ms * 1.5);
    assert!(rows[0].per_image_ms < rows[3].per_image_ms);
    // sequential scaling stays roughly linear
    assert!(rows[2].per_image_ms < 6.0 * rows[1].per_image_ms);
}

#[test]
fn pipeline_wiring_black_box_vs_through() {
    // the black-box attack surface must be the bare model regardless of
    // the defense; the through surface must include it
    let model = build_model(Arch::SmallCnn, 10, (1, 28, 28), 3).unwrap();
    let data = synthetic::glyphs(4, 5, Split::Test);
    let black = DefenseConfig::jpeg(25.0, 1, false).unwrap();
    let set = make_pipeline(&model, &black);
    let bare_logits = compressdef_core::attack::Pipeline::logits(&model, &data.images).unwrap();
    let attack_logits = set.attack_pipeline().logits(&data.images).unwrap();
    assert_eq!(bare_logits.data(), attack_logits.data());

    let through = DefenseConfig::jpeg(25.0, 1, true).unwrap();
    let set = make_pipeline(&model, &through);
    let through_logits = set.attack_pipeline().logits(&data.images).unwrap();
    assert!(bare_logits.max_abs_diff(&through_logits) > 0.0);
}

#[test]
fn checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();

    let model = build_model(Arch::TinyVit, 10, (1, 28, 28), 3).unwrap();
    let path = dir.path().join("model.rprs");
    save_model(&path, &model).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.arch, Arch::TinyVit);
    assert_eq!(loaded.num_classes, 10);
    assert_eq!(loaded.input_spec, (1, 28, 28));
    for ((na, ta), (nb, tb)) in model.params.iter().zip(&loaded.params) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data(), "parameter {na} not bit-exact");
    }

    // arch mismatch names both tags
    let err = load_model_as(&path, Arch::SmallCnn).unwrap_err().to_string();
    assert!(err.contains("tiny_vit") && err.contains("small_cnn"), "{err}");

    let codec = build_codec(0.01, (3, 28, 28), 5).unwrap();
    let cpath = dir.path().join("codec.rprs");
    save_codec(&cpath, &codec).unwrap();
    let lc = load_codec(&cpath).unwrap();
    assert_eq!(lc.lambda, codec.lambda);
    assert!(!lc.trained);
    for ((_, ta), (_, tb)) in codec.params.iter().zip(&lc.params) {
        assert_eq!(ta.data(), tb.data());
    }

    // a codec container is not a model and vice versa
    assert!(load_model(&cpath).is_err());
    assert!(load_codec(&path).is_err());

    // bad magic and truncation are named errors
    std::fs::write(dir.path().join("junk.rprs"), b"NOPE").unwrap();
    let err = load_model(&dir.path().join("junk.rprs")).unwrap_err().to_string();
    assert!(err.contains("magic") || err.contains("truncated"), "{err}");

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(dir.path().join("cut.rprs"), &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_model(&dir.path().join("cut.rprs")).is_err());
}

#[test]
fn learned_defense_is_usable() {
    let codec = Arc::new(build_codec(0.01, (1, 28, 28), 5).unwrap());
    let d = DefenseConfig::learned(codec, 1, true).unwrap();
    let data = synthetic::glyphs(2, 5, Split::Test);
    let out = apply_defense(&data.images, &d, false).unwrap();
    assert_eq!(out.shape(), data.images.shape());
    assert_eq!(d.codec_name(), "learned");
    assert_eq!(d.quality_value(), 0.01);
}
