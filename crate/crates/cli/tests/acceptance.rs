//! End-to-end acceptance gate: one check per headline claim, each
//! printed as a PASS/FAIL line. Run with `--nocapture` to watch the
//! lines appear; the test panics at the end if any criterion failed.
//!
//! The grid criteria (4-7, 10) train the standard recipe once and share
//! the model; everything else runs on purpose-built fixtures.

use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use compressdef_core::attack::{
    cw, deepfool, fgsm, ifgsm, pgd, thresholded_accuracy, AttackConfig, AttackKind, Pipeline,
};
use compressdef_core::data::{augment_jpeg, synthetic, Split};
use compressdef_core::error::Result;
use compressdef_core::eval::{evaluate, make_pipeline, DefenseConfig};
use compressdef_core::jpeg::{bpp, huffman_roundtrip, jpeg_forward_tape, quant_table};
use compressdef_core::learned::{
    build_codec, codec_forward, codec_rate, train_codec, CodecTrainConfig, LearnedCodec,
};
use compressdef_core::nn::{accuracy, argmax_rows, build_model, train, Arch, Model, TrainConfig};
use compressdef_core::tensor::finite_diff::{finite_difference_probe, max_rel_err};
use compressdef_core::tensor::{Tape, Tensor, Var};

// The standard training recipe: the synthetic glyph corpus plus
// JPEG-compressed copies of part of the training split.
const TRAIN_SAMPLES: usize = 900;
const TEST_SAMPLES: usize = 200;
const EVAL_SAMPLES: usize = 100;
const CORPUS_SEED: u64 = 3;
const TEST_SEED: u64 = 1000;
const AUGMENT_FRACTION: f64 = 0.55;
const EPOCHS: usize = 8;
const ATTACK_STEPS: usize = 10;
const DEFENSE_LAMBDA: f64 = 0.01;

struct Gate {
    results: Vec<(String, bool)>,
}

impl Gate {
    fn new() -> Self {
        Gate { results: Vec::new() }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {detail}");
        self.results.push((name.to_string(), pass));
    }

    fn finish(self) {
        let failed: Vec<&str> = self
            .results
            .iter()
            .filter(|(_, p)| !p)
            .map(|(n, _)| n.as_str())
            .collect();
        assert!(
            failed.is_empty(),
            "{} of {} acceptance criteria failed: {}",
            failed.len(),
            self.results.len(),
            failed.join(", ")
        );
    }
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| r.gen_range(lo..hi))
        .collect();
    Tensor::new(data, shape.to_vec()).unwrap()
}

/// Max relative error between tape gradients and central differences.
fn gradcheck(
    build: impl for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
    x: &Tensor,
    coords: usize,
    seed: u64,
) -> f64 {
    let tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let loss = build(&tape, xv).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));
    let mut f = |t: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(t.clone());
        Ok(build(&tape, v)?.item())
    };
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<usize> = (0..coords).map(|_| r.gen_range(0..x.numel())).collect();
    let records = finite_difference_probe(&mut f, x, &analytic, &coords, 1e-5).unwrap();
    max_rel_err(&records)
}

/// Flattening linear classifier, the closed-form oracle target.
struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Pipeline for Linear {
    fn num_classes(&self) -> usize {
        self.w.shape()[1]
    }

    fn forward_tape<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let d: usize = shape[1..].iter().product();
        let w = tape.constant(self.w.clone());
        let b = tape.constant(self.b.clone());
        x.reshape(&[shape[0], d])?.matmul(w)?.bias_row(b)
    }
}

fn criterion_1_gradient_fidelity(gate: &mut Gate) {
    let start = Instant::now();
    let model = build_model(Arch::SmallCnn, 10, (1, 28, 28), 7).unwrap();
    let labels = vec![2usize];
    let x = random_tensor(&[1, 1, 28, 28], 0.1, 0.9, 23);

    let clf_err = gradcheck(
        |tape, v| {
            let (logits, _) = model.forward(tape, v, false)?;
            logits.cross_entropy_mean(&labels)
        },
        &x,
        24,
        101,
    );

    let qt = quant_table(25.0).unwrap();
    let def_err = gradcheck(
        |tape, v| {
            let defended = jpeg_forward_tape(tape, v, &qt, true)?;
            let (logits, _) = model.forward(tape, defended, false)?;
            logits.cross_entropy_mean(&labels)
        },
        &x,
        24,
        102,
    );

    let secs = start.elapsed().as_secs_f64();
    gate.check(
        "criterion-01 gradient fidelity",
        clf_err < 1e-3 && def_err < 1e-2 && secs < 60.0,
        format!("classifier rel err {clf_err:.2e} (<1e-3), through-jpeg {def_err:.2e} (<1e-2), {secs:.1}s (<60s)"),
    );
}

fn criterion_2_attack_identities(gate: &mut Gate) {
    let model = build_model(Arch::SmallCnn, 4, (1, 16, 16), 11).unwrap();
    let x = random_tensor(&[3, 1, 16, 16], 0.05, 0.95, 12);
    let labels = [0usize, 1, 2];
    let eps = 8.0 / 255.0;

    let f = fgsm(&model, &x, &labels, &AttackConfig::new(AttackKind::Fgsm, eps)).unwrap();
    let mut one = AttackConfig::new(AttackKind::Ifgsm, eps);
    one.steps = 1;
    one.alpha = Some(eps);
    let i1 = ifgsm(&model, &x, &labels, &one).unwrap();
    let fgsm_matches = f.adversarial.data() == i1.adversarial.data();

    let i = ifgsm(&model, &x, &labels, &AttackConfig::new(AttackKind::Ifgsm, eps)).unwrap();
    let mut quiet = AttackConfig::new(AttackKind::Pgd, eps);
    quiet.random_start = false;
    let p = pgd(&model, &x, &labels, &quiet).unwrap();
    let pgd_matches = i.adversarial.data() == p.adversarial.data();

    gate.check(
        "criterion-02 attack identities",
        fgsm_matches && pgd_matches,
        format!("fgsm==ifgsm(1,eps): {fgsm_matches}, pgd(no-rs)==ifgsm: {pgd_matches} (bit-exact)"),
    );
}

fn criterion_3_budget_invariants(gate: &mut Gate) {
    let mut total = 0usize;
    let mut violations = 0usize;
    let mut r = ChaCha8Rng::seed_from_u64(301);
    for round in 0..5u64 {
        let w = Tensor::new((0..12).map(|_| r.gen_range(-1.0..1.0)).collect(), vec![4, 3]).unwrap();
        let p = Linear { w, b: Tensor::zeros(&[3]) };
        let x = random_tensor(&[70, 1, 2, 2], 0.02, 0.98, 310 + round);
        let labels: Vec<usize> = (0..70).map(|i| i % 3).collect();
        let eps = [2.0, 4.0, 8.0][round as usize % 3] / 255.0;
        for kind in [AttackKind::Fgsm, AttackKind::Ifgsm, AttackKind::Pgd] {
            let cfg = AttackConfig::new(kind, eps);
            let res = compressdef_core::attack::run_attack(&p, &x, &labels, &cfg).unwrap();
            for (a, o) in res.adversarial.data().iter().zip(x.data()) {
                if (a - o).abs() > eps + f64::EPSILON || !(0.0..=1.0).contains(a) {
                    violations += 1;
                }
            }
            total += 70;
        }
    }
    gate.check(
        "criterion-03 budget invariants",
        total >= 1000 && violations == 0,
        format!("{violations} violations over {total} attacked samples (need 0 over >=1000)"),
    );
}

struct GridOutcome {
    model: Model,
    eval_set: compressdef_core::data::LabeledDataset,
    undefended: f64,
}

fn criteria_4_to_7_defense_grid(gate: &mut Gate) -> Option<GridOutcome> {
    let train_set = synthetic::glyphs(TRAIN_SAMPLES, CORPUS_SEED, Split::Train);
    let train_aug = augment_jpeg(&train_set, 25.0, AUGMENT_FRACTION).unwrap();
    let test_set = synthetic::glyphs(TEST_SAMPLES, TEST_SEED, Split::Test);

    let model = build_model(Arch::SmallCnn, 10, (1, 28, 28), 0).unwrap();
    let cfg = TrainConfig { epochs: EPOCHS, batch_size: 64, ..TrainConfig::default() };
    let (model, _) = train(&model, &train_aug, &cfg).unwrap();
    let clean = accuracy(&model, &test_set.images, &test_set.labels, None).unwrap();

    let eps = 8.0 / 255.0;
    let mut attack = AttackConfig::new(AttackKind::Ifgsm, eps);
    attack.steps = ATTACK_STEPS;
    attack.alpha = Some(2.5 * eps / ATTACK_STEPS as f64);
    let eval_set = test_set.take(EVAL_SAMPLES);
    let defenses = [
        DefenseConfig::none(),
        DefenseConfig::jpeg(25.0, 1, false).unwrap(),
        DefenseConfig::jpeg(25.0, 1, true).unwrap(),
        DefenseConfig::jpeg(25.0, 5, true).unwrap(),
    ];
    let start = Instant::now();
    let report = evaluate(
        &[("small_cnn", &model)],
        &defenses,
        &[attack],
        &[eps],
        &eval_set,
        7,
    )
    .unwrap();
    let grid_secs = start.elapsed().as_secs_f64();
    let acc = |d: usize| report.rows[d].accuracy;
    let (undefended, recovery, through, through_n5) = (acc(0), acc(1), acc(2), acc(3));

    gate.check(
        "criterion-04 baseline collapse",
        clean >= 0.97 && undefended <= 0.10 && grid_secs < 300.0,
        format!(
            "clean {clean:.3} (>=0.97), undefended under ifgsm 8/255 {undefended:.3} (<=0.10), grid {grid_secs:.0}s (<300s)"
        ),
    );
    gate.check(
        "criterion-05 black-box recovery",
        recovery >= 0.80,
        format!("jpeg q25 defended accuracy {recovery:.3} (>=0.80)"),
    );
    gate.check(
        "criterion-06 white-box degradation",
        through <= recovery - 0.20,
        format!("through {through:.3} vs black-box {recovery:.3} (>=20 points below)"),
    );

    // baseline (no-attack) drift across sequential depth
    let mut drift: f64 = 0.0;
    let base = report.clean[2].accuracy; // jpeg N=1
    for n in 2..=10 {
        let defense = DefenseConfig::jpeg(25.0, n, false).unwrap();
        let set = make_pipeline(&model, &defense);
        let a = set
            .defended_accuracy(&eval_set.images, &eval_set.labels)
            .unwrap();
        drift = drift.max((a - base).abs());
    }
    gate.check(
        "criterion-07 sequential gain",
        through_n5 >= through + 0.10 && drift < 0.02,
        format!(
            "through N=5 {through_n5:.3} vs N=1 {through:.3} (>=+10 points), clean drift over N<=10 {drift:.4} (<0.02)"
        ),
    );

    if clean >= 0.97 {
        Some(GridOutcome { model, eval_set, undefended })
    } else {
        None
    }
}

fn criterion_8_bpp_sanity(gate: &mut Gate) {
    let photos = synthetic::photos(50, 128, 128, 20);
    let qualities = [5.0, 15.0, 25.0, 35.0, 50.0, 65.0, 80.0, 95.0];
    let rates: Vec<f64> = qualities.iter().map(|&q| bpp(&photos, q).unwrap()).collect();
    let monotone = rates.windows(2).all(|w| w[0] < w[1]);
    let q25 = rates[2];
    let q25_ok = (0.4..=1.2).contains(&q25);

    // Huffman codec exactness on sparse random coefficient blocks
    let mut r = ChaCha8Rng::seed_from_u64(88);
    let blocks: Vec<[i32; 64]> = (0..10_000)
        .map(|_| {
            let mut b = [0i32; 64];
            b[0] = r.gen_range(-1023..=1023);
            for slot in b.iter_mut().skip(1) {
                if r.gen_range(0..4) == 0 {
                    *slot = r.gen_range(-255..=255);
                }
            }
            b
        })
        .collect();
    let exact = huffman_roundtrip(&blocks).unwrap() == blocks;

    gate.check(
        "criterion-08 bpp sanity",
        monotone && q25_ok && exact,
        format!(
            "bpp monotone over q grid: {monotone}, q25 mean {q25:.3} (in [0.4,1.2]), huffman exact on 10k blocks: {exact}"
        ),
    );
}

fn criterion_9_l2_attack_oracles(gate: &mut Gate) {
    // DeepFool single-step closed form on a linear classifier
    let w = Tensor::new(vec![0.9, -0.7, -0.2, 0.6], vec![2, 2]).unwrap();
    let b = Tensor::new(vec![0.0, 0.1], vec![2]).unwrap();
    let p = Linear { w, b };
    let x = Tensor::new(vec![0.6, 0.4], vec![1, 1, 1, 2]).unwrap();
    let z0: f64 = 0.6 * 0.9 + 0.4 * -0.2;
    let z1: f64 = 0.6 * -0.7 + 0.4 * 0.6 + 0.1;
    let f = (z1 - z0).abs();
    let wv = [-0.7 - 0.9, 0.6 - -0.2];
    let wsq = wv[0] * wv[0] + wv[1] * wv[1];
    let expected = [
        0.6 + 1.02 * (f / wsq) * wv[0],
        0.4 + 1.02 * (f / wsq) * wv[1],
    ];
    let r = deepfool(&p, &x, &[0], &AttackConfig::new(AttackKind::Deepfool, 0.0)).unwrap();
    let df_err = r
        .adversarial
        .data()
        .iter()
        .zip(&expected)
        .map(|(a, e)| (a - e).abs() / e.abs().max(1e-8))
        .fold(0.0f64, f64::max);

    // CW thresholded-accuracy curve: monotone with pinned endpoints
    let model = build_model(Arch::SmallCnn, 4, (1, 16, 16), 41).unwrap();
    let x = random_tensor(&[8, 1, 16, 16], 0.05, 0.95, 42);
    let labels: Vec<usize> = argmax_rows(&model.logits(&x).unwrap());
    let clean_correct = vec![true; 8];
    let res = cw(&model, &x, &labels, &AttackConfig::new(AttackKind::Cw, 0.0)).unwrap();
    let thresholds = [0.0, 0.25, 0.5, 1.0, 2.0, 1e9];
    let acc = thresholded_accuracy(&res, &clean_correct, &thresholds).unwrap();
    let post = res.success.iter().filter(|s| !**s).count() as f64 / 8.0;
    let cw_ok = acc[0] == 1.0
        && *acc.last().unwrap() == post
        && acc.windows(2).all(|w| w[0] >= w[1]);

    gate.check(
        "criterion-09 l2 attack oracles",
        df_err < 1e-5 && cw_ok,
        format!(
            "deepfool closed-form rel err {df_err:.2e} (<1e-5), cw thresholded curve monotone with clean/post endpoints: {cw_ok}"
        ),
    );
}

fn criterion_10_learned_codec(gate: &mut Gate, grid: Option<&GridOutcome>) {
    let train_set = synthetic::glyphs(TRAIN_SAMPLES, CORPUS_SEED, Split::Train).take(300);
    let cfg = CodecTrainConfig { epochs: 30, batch_size: 32, learning_rate: 1e-3, seed: 7 };
    let probe = synthetic::glyphs(64, TEST_SEED, Split::Test);

    let mut rates = Vec::new();
    let mut mses = Vec::new();
    let mut defense_codec: Option<LearnedCodec> = None;
    for &lambda in &[0.001, 0.01, 0.1] {
        let codec = build_codec(lambda, (1, 28, 28), 11).unwrap();
        let (trained, _) = train_codec(&codec, &train_set, &cfg).unwrap();
        rates.push(codec_rate(&trained, &probe.images).unwrap());
        let recon = codec_forward(&trained, &probe.images, false).unwrap();
        let mse = recon
            .data()
            .iter()
            .zip(probe.images.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / recon.numel() as f64;
        mses.push(mse);
        if lambda == DEFENSE_LAMBDA {
            defense_codec = Some(trained);
        }
    }
    let bpp_monotone = rates.windows(2).all(|w| w[0] > w[1]);
    let mse_monotone = mses.windows(2).all(|w| w[0] < w[1]);

    let (gain_ok, gain_detail) = match grid {
        Some(g) => {
            let defense =
                DefenseConfig::learned(Arc::new(defense_codec.unwrap()), 1, false).unwrap();
            let eps = 8.0 / 255.0;
            let mut attack = AttackConfig::new(AttackKind::Ifgsm, eps);
            attack.steps = ATTACK_STEPS;
            attack.alpha = Some(2.5 * eps / ATTACK_STEPS as f64);
            let report = evaluate(
                &[("small_cnn", &g.model)],
                &[defense],
                &[attack],
                &[eps],
                &g.eval_set,
                7,
            )
            .unwrap();
            let defended = report.rows[0].accuracy;
            (
                defended >= g.undefended + 0.30,
                format!("defended {defended:.3} vs undefended {:.3} (>=+30 points)", g.undefended),
            )
        }
        None => (false, "skipped: criterion-04 model unavailable".to_string()),
    };

    gate.check(
        "criterion-10 learned-codec contract",
        bpp_monotone && mse_monotone && gain_ok,
        format!(
            "bpp decreasing in lambda: {bpp_monotone} ({rates:.3?}), mse increasing: {mse_monotone}, {gain_detail}"
        ),
    );
}

fn criterion_11_determinism(gate: &mut Gate) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = format!(
        r#"
seed = 17
output_dir = "{}"
budgets_255 = [0.0, 8.0]

[dataset]
format = "synthetic"
train_samples = 60
test_samples = 20
eval_samples = 10

[[models]]
arch = "small_cnn"
epochs = 1
batch_size = 16

[[defenses]]
codec = "none"

[[defenses]]
codec = "jpeg"
quality = 25.0

[[attacks]]
kind = "fgsm"
"#,
        out.display()
    );
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(&cfg_path, body).unwrap();
    let exe = env!("CARGO_BIN_EXE_compdef");

    let run = || {
        let status = Command::new(exe)
            .args(["evaluate", "-c"])
            .arg(&cfg_path)
            .output()
            .unwrap();
        assert!(status.status.success(), "evaluate run failed: {status:?}");
        std::fs::read(out.join("report.csv")).unwrap()
    };
    let first = run();
    // wipe everything, retrain from scratch
    std::fs::remove_dir_all(&out).unwrap();
    let second = run();
    let identical = first == second;
    gate.check(
        "criterion-11 determinism",
        identical,
        format!("full re-run report.csv byte-identical: {identical} ({} bytes)", first.len()),
    );
}

#[test]
fn acceptance_gate() {
    let mut gate = Gate::new();
    criterion_1_gradient_fidelity(&mut gate);
    criterion_2_attack_identities(&mut gate);
    criterion_3_budget_invariants(&mut gate);
    criterion_9_l2_attack_oracles(&mut gate);
    criterion_8_bpp_sanity(&mut gate);
    let grid = criteria_4_to_7_defense_grid(&mut gate);
    criterion_10_learned_codec(&mut gate, grid.as_ref());
    criterion_11_determinism(&mut gate);
    gate.finish();
}
