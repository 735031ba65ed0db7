//! Deterministic synthetic corpora: a 10-class 28x28 grayscale glyph
//! dataset (the classification benchmark) and a textured RGB photo
//! corpus (the bits-per-pixel study).
//!
//! The glyph corpus is engineered around the robust/non-robust feature
//! split that large-scale image models exhibit. Every class pairs a
//! coarse low-frequency shape (the robust feature: it survives JPEG
//! compression and cannot be flipped within a small L-inf budget) with
//! a class-specific high-frequency grating (the non-robust feature: a
//! budget-sized perturbation flips it, and JPEG quantization erases
//! it). A model trained on this corpus leans on the grating the way
//! ImageNet models lean on texture, which is exactly what makes
//! compression work as a defense: the attack spends its budget on a
//! feature the codec throws away.
//!
//! The training split additionally drops the grating on a small
//! fraction of samples and drops the coarse shape on a larger tail
//! fraction (grating-only samples), so both pathways get learned; the
//! test split always carries both features. Grating-only samples are
//! placed at the end of the split so that compression-aware
//! augmentation ([`super::augment_jpeg`] copies a dataset prefix)
//! never produces a compressed grating-only sample, which would be a
//! labeled blank image.

use rand::Rng;
use super::{LabeledDataset, Split};
use crate::rng;
use crate::tensor::Tensor;

pub const GLYPH_CLASSES: usize = 10;
pub const GLYPH_SIZE: usize = 28;

/// Coarse-shape amplitude range (relative to a [0,1] pixel scale).
const AMP_LO: f64 = 0.15;
const AMP_HI: f64 = 0.27;
/// Per-pixel Gaussian noise.
const NOISE_SIGMA: f64 = 0.02;
/// Background level; keeps both features away from the clamp.
const BACKGROUND: f64 = 0.44;
/// Grating amplitude: flippable within eps = 8/255, erased at q = 25.
const GRATING_AMP: f64 = 0.050;
/// Train split: fraction of coarse-bearing samples without a grating.
const GRATING_DROP: f64 = 0.06;
/// Train split: trailing fraction carrying only the grating.
const COARSE_DROP: f64 = 0.45;

/// Per-class grating frequencies, cycles per image along (y, x). All
/// lie in DCT bands whose q=25 quantization step exceeds twice the
/// grating amplitude, so compression removes them entirely.
const GRATING_FREQS: [(f64, f64); GLYPH_CLASSES] = [
    (9.0, 0.0),
    (0.0, 9.0),
    (9.0, 9.0),
    (9.0, -9.0),
    (13.0, 0.0),
    (0.0, 13.0),
    (11.0, 4.0),
    (4.0, 11.0),
    (13.0, -5.0),
    (5.0, -13.0),
];

/// Render one 28x28 glyph template, amplitude 1, centered.
fn template(class: usize, buf: &mut [f64]) {
    buf.fill(0.0);
    let n = GLYPH_SIZE;
    let mut set = |y: isize, x: isize, v: f64| {
        if y >= 0 && x >= 0 && (y as usize) < n && (x as usize) < n {
            let i = y as usize * n + x as usize;
            if v > buf[i] {
                buf[i] = v;
            }
        }
    };
    let c = n as isize / 2;
    match class {
        // ring
        0 => {
            for y in 0..n as isize {
                for x in 0..n as isize {
                    let r = (((y - c) * (y - c) + (x - c) * (x - c)) as f64).sqrt();
                    if (r - 8.0).abs() < 2.2 {
                        set(y, x, 1.0);
                    }
                }
            }
        }
        // vertical bar
        1 => {
            for y in 4..24 {
                for x in -2..=2 {
                    set(y, c + x, 1.0);
                }
            }
        }
        // horizontal bar
        2 => {
            for x in 4..24 {
                for y in -2..=2 {
                    set(c + y, x, 1.0);
                }
            }
        }
        // main diagonal
        3 => {
            for t in 4..24 {
                for d in -2..=2 {
                    set(t, t + d, 1.0);
                }
            }
        }
        // anti-diagonal
        4 => {
            for t in 4..24 {
                for d in -2..=2 {
                    set(t, n as isize - 1 - t + d, 1.0);
                }
            }
        }
        // plus
        5 => {
            for t in 5..23 {
                for d in -2..=2 {
                    set(t, c + d, 1.0);
                    set(c + d, t, 1.0);
                }
            }
        }
        // cross
        6 => {
            for t in 5..23 {
                for d in -2..=2 {
                    set(t, t + d, 1.0);
                    set(t, n as isize - 1 - t + d, 1.0);
                }
            }
        }
        // square outline
        7 => {
            for t in 6..22 {
                for d in 0..3 {
                    set(6 + d, t, 1.0);
                    set(21 - d, t, 1.0);
                    set(t, 6 + d, 1.0);
                    set(t, 21 - d, 1.0);
                }
            }
        }
        // checkerboard
        8 => {
            for y in 4..24 {
                for x in 4..24 {
                    if ((y / 5) + (x / 5)) % 2 == 0 {
                        set(y, x, 1.0);
                    }
                }
            }
        }
        // T shape
        _ => {
            for x in 5..23 {
                for d in 0..3 {
                    set(5 + d, x, 1.0);
                }
            }
            for y in 5..24 {
                for d in -2..=1 {
                    set(y, c + d, 1.0);
                }
            }
        }
    }
}

/// The class grating over the full image, amplitude 1.
fn grating(class: usize) -> Vec<f64> {
    let n = GLYPH_SIZE;
    let (fy, fx) = GRATING_FREQS[class];
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let t = 2.0 * std::f64::consts::PI * (fy * y as f64 + fx * x as f64) / n as f64;
            out[y * n + x] = t.sin();
        }
    }
    out
}

/// Balanced glyph dataset: `count` samples, classes cycling 0..10.
pub fn glyphs(count: usize, seed: u64, split: Split) -> LabeledDataset {
    let n = GLYPH_SIZE;
    let (grating_drop, coarse_drop) = match split {
        Split::Train => (GRATING_DROP, COARSE_DROP),
        Split::Test => (0.0, 0.0),
    };
    let coarse_count = ((count as f64) * (1.0 - coarse_drop)).round() as usize;
    let mut rng = rng::rng_for(seed, &[match split {
        Split::Train => 1,
        Split::Test => 2,
    }]);
    let gratings: Vec<Vec<f64>> = (0..GLYPH_CLASSES).map(grating).collect();
    let mut data = vec![0.0; count * n * n];
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % GLYPH_CLASSES;
        let out = &mut data[i * n * n..(i + 1) * n * n];
        let mut base = vec![0.0; n * n];
        template(class, &mut base);
        let dy = rng.gen_range(-2i32..=2) as isize;
        let dx = rng.gen_range(-2i32..=2) as isize;
        let amp = rng.gen_range(AMP_LO..AMP_HI);
        let u: f64 = rng.gen_range(0.0..1.0);
        let (coarse_on, hf) = if i >= coarse_count {
            (false, GRATING_AMP * rng.gen_range(0.7..1.3))
        } else if u < grating_drop {
            (true, 0.0)
        } else {
            (true, GRATING_AMP * rng.gen_range(0.7..1.3))
        };
        for y in 0..n {
            for x in 0..n {
                let sy = y as isize - dy;
                let sx = x as isize - dx;
                let v = if coarse_on
                    && sy >= 0
                    && sx >= 0
                    && (sy as usize) < n
                    && (sx as usize) < n
                {
                    base[sy as usize * n + sx as usize] * amp
                } else {
                    0.0
                };
                // Box-Muller noise
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let noise = (-2.0 * u1.ln()).sqrt()
                    * (2.0 * std::f64::consts::PI * u2).cos()
                    * NOISE_SIGMA;
                out[y * n + x] =
                    (BACKGROUND + v + hf * gratings[class][y * n + x] + noise).clamp(0.0, 1.0);
            }
        }
        labels.push(class);
    }
    LabeledDataset {
        images: Tensor::new(data, vec![count, 1, n, n]).unwrap(),
        labels,
        split,
        num_classes: GLYPH_CLASSES,
    }
}

/// Textured RGB images standing in for natural photos: multi-octave
/// value noise plus fine grain, calibrated so JPEG bits-per-pixel at
/// mid quality lands in the photographic range.
pub fn photos(count: usize, height: usize, width: usize, seed: u64) -> Vec<Tensor> {
    (0..count)
        .map(|i| photo(height, width, rng::derive(seed, &[0x70686f, i as u64])))
        .collect()
}

fn photo(height: usize, width: usize, seed: u64) -> Tensor {
    let mut rng = rng::rng(seed);
    let plane = height * width;
    let mut luma = vec![0.0f64; plane];
    // octaves of bilinearly interpolated random grids
    for (cell, amp) in [(16usize, 0.5), (8, 0.3), (4, 0.18), (2, 0.08)] {
        let gh = height / cell + 2;
        let gw = width / cell + 2;
        let grid: Vec<f64> = (0..gh * gw).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for y in 0..height {
            let fy = y as f64 / cell as f64;
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            for x in 0..width {
                let fx = x as f64 / cell as f64;
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                let g = |yy: usize, xx: usize| grid[yy * gw + xx];
                let v = g(y0, x0) * (1.0 - ty) * (1.0 - tx)
                    + g(y0, x0 + 1) * (1.0 - ty) * tx
                    + g(y0 + 1, x0) * ty * (1.0 - tx)
                    + g(y0 + 1, x0 + 1) * ty * tx;
                luma[y * width + x] += amp * v;
            }
        }
    }
    // two random color tints mixed by a slow horizontal/vertical ramp
    let tint_a: [f64; 3] = [rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3)];
    let tint_b: [f64; 3] = [rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3)];
    let mut data = vec![0.0; 3 * plane];
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let ramp = (x as f64 / width as f64 + y as f64 / height as f64) / 2.0;
            let grain: f64 = rng.gen_range(-0.035..0.035);
            for ch in 0..3 {
                let tint = tint_a[ch] * (1.0 - ramp) + tint_b[ch] * ramp;
                data[ch * plane + p] =
                    (0.5 + 0.35 * luma[p] + tint - 0.15 + grain).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(data, vec![3, height, width]).unwrap()
}
