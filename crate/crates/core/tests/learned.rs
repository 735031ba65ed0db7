//! Learned codec contracts: construction, quantization, rate model,
//! and rate-distortion training behavior.

use compressdef_core::data::{synthetic, LabeledDataset, Split};
use compressdef_core::learned::{
    build_codec, codec_forward, codec_latents, codec_rate, train_codec, CodecTrainConfig,
};
use compressdef_core::tensor::Tensor;

fn photo_corpus(count: usize, seed: u64) -> LabeledDataset {
    let photos = synthetic::photos(count, 28, 28, seed);
    let mut data = Vec::new();
    for p in &photos {
        data.extend_from_slice(p.data());
    }
    LabeledDataset {
        images: Tensor::new(data, vec![count, 3, 28, 28]).unwrap(),
        labels: vec![0; count],
        split: Split::Train,
        num_classes: 1,
    }
}

#[test]
fn construction_contract() {
    assert!(build_codec(0.0, (1, 28, 28), 0).is_err());
    assert!(build_codec(-0.1, (1, 28, 28), 0).is_err());
    assert!(build_codec(0.01, (1, 30, 30), 0).is_err());

    // identical seeds give bit-identical parameters
    let a = build_codec(0.01, (3, 28, 28), 5).unwrap();
    let b = build_codec(0.01, (3, 28, 28), 5).unwrap();
    for ((na, ta), (nb, tb)) in a.params.iter().zip(&b.params) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data());
    }
}

#[test]
fn forward_shape_and_quantization() {
    let codec = build_codec(0.01, (3, 28, 28), 1).unwrap();
    let corpus = photo_corpus(2, 3);

    let out = codec_forward(&codec, &corpus.images, false).unwrap();
    assert_eq!(out.shape(), corpus.images.shape());
    assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

    // eval mode is deterministic
    let again = codec_forward(&codec, &corpus.images, false).unwrap();
    assert_eq!(out.data(), again.data());

    // eval-mode latents are exact integers; smooth mode generally not
    let z = codec_latents(&codec, &corpus.images, false).unwrap();
    assert_eq!(z.shape(), &[2, 32, 7, 7]);
    assert!(z.data().iter().all(|v| v.fract() == 0.0));

    // wrong input shape is rejected
    let bad = Tensor::zeros(&[1, 1, 28, 28]);
    assert!(codec_forward(&codec, &bad, false).is_err());
}

#[test]
fn rate_requires_training() {
    let codec = build_codec(0.01, (3, 28, 28), 1).unwrap();
    let corpus = photo_corpus(1, 3);
    assert!(codec_rate(&codec, &corpus.images).is_err());
}

#[test]
fn training_improves_rate_distortion() {
    let codec = build_codec(0.01, (3, 28, 28), 2).unwrap();
    let corpus = photo_corpus(24, 9);
    let cfg = CodecTrainConfig {
        epochs: 4,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 7,
    };
    let (trained, history) = train_codec(&codec, &corpus, &cfg).unwrap();
    assert!(trained.trained);
    assert_eq!(history.len(), 4);

    let first = history.first().unwrap();
    let last = history.last().unwrap();
    let loss0 = first.distortion_mse + codec.lambda * first.rate_bits_per_latent;
    let loss1 = last.distortion_mse + codec.lambda * last.rate_bits_per_latent;
    assert!(loss1 < loss0, "rd loss did not improve: {loss0} -> {loss1}");

    // the trained rate model now prices real batches
    let bpp = codec_rate(&trained, &corpus.images).unwrap();
    assert!(bpp.is_finite() && bpp > 0.0);

    // epochs = 0: unchanged parameters, empty history
    let zero = CodecTrainConfig {
        epochs: 0,
        ..cfg.clone()
    };
    let (same, h) = train_codec(&codec, &corpus, &zero).unwrap();
    assert!(h.is_empty());
    for ((_, a), (_, b)) in same.params.iter().zip(&codec.params) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn training_is_deterministic() {
    let codec = build_codec(0.01, (3, 28, 28), 2).unwrap();
    let corpus = photo_corpus(8, 9);
    let cfg = CodecTrainConfig {
        epochs: 1,
        batch_size: 4,
        learning_rate: 1e-3,
        seed: 11,
    };
    let (a, ha) = train_codec(&codec, &corpus, &cfg).unwrap();
    let (b, hb) = train_codec(&codec, &corpus, &cfg).unwrap();
    assert_eq!(ha.len(), hb.len());
    for ((_, ta), (_, tb)) in a.params.iter().zip(&b.params) {
        assert_eq!(ta.data(), tb.data());
    }
}
