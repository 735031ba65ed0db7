//! Dataset ingestion: IDX round trips, PNG directory layout, and the
//! synthetic corpora used throughout the tests.

use compressdef_core::data::{
    load_idx, load_png_dirs, save_png, synthetic, write_idx, LabeledDataset, Split,
};
use compressdef_core::nn::{accuracy, build_model, train, Arch, TrainConfig};
use compressdef_core::tensor::Tensor;

#[test]
fn idx_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic::glyphs(5, 1, Split::Train);
    let images = dir.path().join("images.idx");
    let labels = dir.path().join("labels.idx");
    write_idx(&data, &images, &labels).unwrap();

    let back = load_idx(&images, &labels, Split::Train).unwrap();
    assert_eq!(back.images.shape(), &[5, 1, 28, 28]);
    assert_eq!(back.labels, data.labels);
    // byte/255 quantization: every value returns on the u8 grid
    assert!(back.images.max_abs_diff(&{
        let mut q = data.images.clone();
        for v in q.data_mut() {
            *v = (*v * 255.0).round() / 255.0;
        }
        q
    }) < 1e-12);
}

#[test]
fn idx_extreme_bytes_map_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = LabeledDataset {
        images: Tensor::new(vec![0.0, 1.0, 128.0 / 255.0, 1.0], vec![1, 1, 2, 2]).unwrap(),
        labels: vec![3],
        split: Split::Test,
        num_classes: 4,
    };
    let images = dir.path().join("i.idx");
    let labels = dir.path().join("l.idx");
    write_idx(&ds, &images, &labels).unwrap();
    let back = load_idx(&images, &labels, Split::Test).unwrap();
    // byte 255 -> exactly 1.0, byte 0 -> exactly 0.0
    assert_eq!(back.images.data(), ds.images.data());
}

#[test]
fn idx_bad_magic_names_file() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.idx");
    std::fs::write(&bad, [0u8; 16]).unwrap();
    let good = dir.path().join("labels.idx");
    let ds = synthetic::glyphs(1, 1, Split::Train);
    write_idx(&ds, dir.path().join("x.idx").as_path(), &good).unwrap();
    let err = load_idx(&bad, &good, Split::Train).unwrap_err().to_string();
    assert!(err.contains("bad.idx"), "error must name the file: {err}");
}

#[test]
fn png_dirs_lexicographic_labels() {
    let dir = tempfile::tempdir().unwrap();
    let photos = synthetic::photos(2, 16, 16, 1);
    std::fs::create_dir(dir.path().join("dog")).unwrap();
    std::fs::create_dir(dir.path().join("cat")).unwrap();
    save_png(&photos[0], &dir.path().join("dog/a.png")).unwrap();
    save_png(&photos[1], &dir.path().join("cat/a.png")).unwrap();

    let ds = load_png_dirs(dir.path(), Split::Test).unwrap();
    assert_eq!(ds.num_classes, 2);
    // cat < dog lexicographically: cat = 0, dog = 1
    assert_eq!(ds.labels, vec![0, 1]);
    assert_eq!(ds.images.shape(), &[2, 3, 16, 16]);
    assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn glyphs_are_learnable_and_balanced() {
    let train_set = synthetic::glyphs(300, 3, Split::Train);
    let mut counts = [0usize; 10];
    for &l in &train_set.labels {
        counts[l] += 1;
    }
    assert!(counts.iter().all(|&c| c == 30), "unbalanced: {counts:?}");

    // a reduced-budget run must already beat chance by a wide margin
    let model = build_model(Arch::SmallCnn, 10, (1, 28, 28), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (trained, _) = train(&model, &train_set, &cfg).unwrap();
    let test_set = synthetic::glyphs(40, 1000, Split::Test);
    let acc = accuracy(&trained, &test_set.images, &test_set.labels, None).unwrap();
    assert!(acc > 0.5, "reduced-budget accuracy only {acc}");
}

#[test]
fn corpora_are_deterministic() {
    let a = synthetic::glyphs(6, 9, Split::Train);
    let b = synthetic::glyphs(6, 9, Split::Train);
    assert_eq!(a.images.data(), b.images.data());
    assert_eq!(a.labels, b.labels);

    let p = synthetic::photos(2, 16, 16, 4);
    let q = synthetic::photos(2, 16, 16, 4);
    assert_eq!(p[0].data(), q[0].data());
    assert_eq!(p[1].data(), q[1].data());
    // different seeds differ
    let r = synthetic::photos(2, 16, 16, 5);
    assert!(p[0].max_abs_diff(&r[0]) > 0.0);
}
