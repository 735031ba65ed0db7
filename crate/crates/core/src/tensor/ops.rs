//! Forward computations for tape primitives. Pure functions; shape
//! checks produce errors naming the op and both shapes.

use super::Tensor;
use crate::error::{CoreError, Result};

pub(crate) fn elementwise(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(CoreError::ShapeMismatch {
            op: match op {
                "add" => "add",
                "sub" => "sub",
                "mul" => "mul",
                _ => "div",
            },
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| f(*x, *y))
        .collect();
    Tensor::new(data, a.shape().to_vec())
}

pub(crate) fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    let data = a.data().iter().map(|x| f(*x)).collect();
    Tensor::new(data, a.shape().to_vec())
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        _ => {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        }
    };
    let (k2, n) = match b.shape() {
        [k2, n] => (*k2, *n),
        _ => {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        }
    };
    if k != k2 {
        return Err(CoreError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), m, k, n, &mut out);
    Tensor::new(out, vec![m, n])
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

pub(crate) fn batch_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mismatch = || CoreError::ShapeMismatch {
        op: "batch_matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    let (bn, m, k) = match a.shape() {
        [bn, m, k] => (*bn, *m, *k),
        _ => return Err(mismatch()),
    };
    let (bn2, k2, n) = match b.shape() {
        [bn2, k2, n] => (*bn2, *k2, *n),
        _ => return Err(mismatch()),
    };
    if bn != bn2 || k != k2 {
        return Err(mismatch());
    }
    let mut out = vec![0.0; bn * m * n];
    for i in 0..bn {
        matmul_into(
            &a.data()[i * m * k..(i + 1) * m * k],
            &b.data()[i * k * n..(i + 1) * k * n],
            m,
            k,
            n,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    Tensor::new(out, vec![bn, m, n])
}

pub(crate) fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let mismatch = || CoreError::ShapeMismatch {
        op: "conv2d",
        lhs: x.shape().to_vec(),
        rhs: w.shape().to_vec(),
    };
    let (b, c, h, wd) = match x.shape() {
        [b, c, h, wd] => (*b, *c, *h, *wd),
        _ => return Err(mismatch()),
    };
    let (o, c2, kh, kw) = match w.shape() {
        [o, c2, kh, kw] => (*o, *c2, *kh, *kw),
        _ => return Err(mismatch()),
    };
    if c != c2 || h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(mismatch());
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let xd = x.data();
    let wdat = w.data();
    let mut out = vec![0.0; b * o * oh * ow];
    for bi in 0..b {
        for oi in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for u in 0..kh {
                            let y = (i * stride + u) as isize - pad as isize;
                            if y < 0 || y as usize >= h {
                                continue;
                            }
                            let xrow = ((bi * c + ci) * h + y as usize) * wd;
                            let wrow = ((oi * c + ci) * kh + u) * kw;
                            for v in 0..kw {
                                let xx = (j * stride + v) as isize - pad as isize;
                                if xx < 0 || xx as usize >= wd {
                                    continue;
                                }
                                acc += xd[xrow + xx as usize] * wdat[wrow + v];
                            }
                        }
                    }
                    out[((bi * o + oi) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::new(out, vec![b, o, oh, ow])
}

pub(crate) fn bias_chan(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = super::bchw(x, "bias_chan")?;
    if bias.shape() != [c] {
        return Err(CoreError::ShapeMismatch {
            op: "bias_chan",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let mut out = x.data().to_vec();
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            let bv = bias.data()[ci];
            for v in &mut out[base..base + h * w] {
                *v += bv;
            }
        }
    }
    Tensor::new(out, x.shape().to_vec())
}

pub(crate) fn bias_row(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = *x.shape().last().unwrap_or(&0);
    if bias.shape() != [d] || d == 0 {
        return Err(CoreError::ShapeMismatch {
            op: "bias_row",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let mut out = x.data().to_vec();
    for (i, v) in out.iter_mut().enumerate() {
        *v += bias.data()[i % d];
    }
    Tensor::new(out, x.shape().to_vec())
}

pub(crate) fn max_pool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (b, c, h, w) = super::bchw(x, "max_pool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CoreError::BadShape {
            op: "max_pool2",
            expected: "even height and width".into(),
            got: x.shape().to_vec(),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![0.0; b * c * oh * ow];
    let mut argmax = vec![0usize; b * c * oh * ow];
    for bc in 0..b * c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut besti = 0;
                for du in 0..2 {
                    for dv in 0..2 {
                        let idx = (bc * h + 2 * i + du) * w + 2 * j + dv;
                        if xd[idx] > best {
                            best = xd[idx];
                            besti = idx;
                        }
                    }
                }
                let oidx = (bc * oh + i) * ow + j;
                out[oidx] = best;
                argmax[oidx] = besti;
            }
        }
    }
    Ok((Tensor::new(out, vec![b, c, oh, ow])?, argmax))
}

pub(crate) fn softmax(x: &Tensor) -> Result<Tensor> {
    let d = *x.shape().last().unwrap_or(&0);
    if d == 0 {
        return Err(CoreError::BadShape {
            op: "softmax",
            expected: "nonempty last axis".into(),
            got: x.shape().to_vec(),
        });
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(out, x.shape().to_vec())
}

pub(crate) fn cross_entropy_mean(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = match logits.shape() {
        [b, k] => (*b, *k),
        _ => {
            return Err(CoreError::BadShape {
                op: "cross_entropy_mean",
                expected: "(batch, classes)".into(),
                got: logits.shape().to_vec(),
            })
        }
    };
    if labels.len() != b || labels.iter().any(|&l| l >= k) {
        return Err(CoreError::invalid(format!(
            "cross_entropy_mean: {} labels for batch {b}, classes {k}",
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(Tensor::scalar(total / b.max(1) as f64))
}

pub(crate) fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = *x.shape().last().unwrap_or(&0);
    if d == 0 || gain.shape() != [d] || bias.shape() != [d] {
        return Err(CoreError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain.data()[i] + bias.data()[i];
        }
    }
    Tensor::new(out, x.shape().to_vec())
}

pub(crate) fn mean_tokens(x: &Tensor) -> Result<Tensor> {
    let (b, t, d) = match x.shape() {
        [b, t, d] => (*b, *t, *d),
        _ => {
            return Err(CoreError::BadShape {
                op: "mean_tokens",
                expected: "(batch, tokens, dim)".into(),
                got: x.shape().to_vec(),
            })
        }
    };
    let mut out = vec![0.0; b * d];
    for bi in 0..b {
        for ti in 0..t {
            for di in 0..d {
                out[bi * d + di] += x.data()[(bi * t + ti) * d + di];
            }
        }
    }
    for v in &mut out {
        *v /= t.max(1) as f64;
    }
    Tensor::new(out, vec![b, d])
}

pub(crate) fn permute(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let nd = x.shape().len();
    let mut seen = vec![false; nd];
    if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
        return Err(CoreError::BadShape {
            op: "permute",
            expected: format!("permutation of {nd} axes"),
            got: axes.to_vec(),
        });
    }
    let in_shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let mut out = vec![0.0; x.numel()];
    let mut idx = vec![0usize; nd];
    for slot in out.iter_mut() {
        let mut src = 0;
        for (k, &ax) in axes.iter().enumerate() {
            src += idx[k] * in_strides[ax];
        }
        *slot = x.data()[src];
        for k in (0..nd).rev() {
            idx[k] += 1;
            if idx[k] < out_shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Tensor::new(out, out_shape)
}

/// Orthonormal type-II DCT basis matrix, row k: c_k cos((2n+1)kπ/16).
pub fn dct8_matrix() -> [[f64; 8]; 8] {
    let mut d = [[0.0; 8]; 8];
    for (k, row) in d.iter_mut().enumerate() {
        let ck = if k == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        };
        for (n, v) in row.iter_mut().enumerate() {
            *v = ck * ((2 * n + 1) as f64 * k as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    d
}

/// Y = D X D^T per 8x8 tile (inverse: X = D^T Y D).
pub(crate) fn block_dct(x: &Tensor, inverse: bool) -> Result<Tensor> {
    let (b, c, h, w) = super::bchw(x, "block_dct")?;
    if h % 8 != 0 || w % 8 != 0 {
        return Err(CoreError::BadShape {
            op: if inverse { "block_idct" } else { "block_dct" },
            expected: "height and width multiples of 8".into(),
            got: x.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; x.numel()];
    let d = dct8_matrix();
    for bc in 0..b * c {
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                let mut tile = [[0.0f64; 8]; 8];
                for (i, trow) in tile.iter_mut().enumerate() {
                    for (j, tv) in trow.iter_mut().enumerate() {
                        *tv = x.data()[(bc * h + by + i) * w + bx + j];
                    }
                }
                let res = dct8_apply(&tile, &d, inverse);
                for (i, rrow) in res.iter().enumerate() {
                    for (j, rv) in rrow.iter().enumerate() {
                        out[(bc * h + by + i) * w + bx + j] = *rv;
                    }
                }
            }
        }
    }
    Tensor::new(out, x.shape().to_vec())
}

pub fn dct8_apply(tile: &[[f64; 8]; 8], d: &[[f64; 8]; 8], inverse: bool) -> [[f64; 8]; 8] {
    // forward: D X D^T ; inverse: D^T X D
    let mut tmp = [[0.0f64; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for p in 0..8 {
                acc += if inverse { d[p][i] } else { d[i][p] } * tile[p][j];
            }
            tmp[i][j] = acc;
        }
    }
    let mut out = [[0.0f64; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for p in 0..8 {
                acc += tmp[i][p] * if inverse { d[p][j] } else { d[j][p] };
            }
            out[i][j] = acc;
        }
    }
    out
}

pub(crate) fn pad_replicate(x: &Tensor, th: usize, tw: usize) -> Result<Tensor> {
    let (b, c, h, w) = super::bchw(x, "pad_replicate")?;
    if th < h || tw < w {
        return Err(CoreError::BadShape {
            op: "pad_replicate",
            expected: format!("target at least ({h}, {w})"),
            got: vec![th, tw],
        });
    }
    let mut out = vec![0.0; b * c * th * tw];
    for bc in 0..b * c {
        for y in 0..th {
            let sy = y.min(h - 1);
            for xx in 0..tw {
                let sx = xx.min(w - 1);
                out[(bc * th + y) * tw + xx] = x.data()[(bc * h + sy) * w + sx];
            }
        }
    }
    Tensor::new(out, vec![b, c, th, tw])
}

pub(crate) fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, c, ih, iw) = super::bchw(x, "crop")?;
    if h > ih || w > iw {
        return Err(CoreError::BadShape {
            op: "crop",
            expected: format!("window within ({ih}, {iw})"),
            got: vec![h, w],
        });
    }
    let mut out = vec![0.0; b * c * h * w];
    for bc in 0..b * c {
        for y in 0..h {
            for xx in 0..w {
                out[(bc * h + y) * w + xx] = x.data()[(bc * ih + y) * iw + xx];
            }
        }
    }
    Tensor::new(out, vec![b, c, h, w])
}

// JFIF full-range color matrices on the [0,1] scale; chroma offset 0.5.
pub(crate) const RGB_TO_YCBCR: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168_735_9, -0.331_264_1, 0.5],
    [0.5, -0.418_687_6, -0.081_312_4],
];
pub(crate) const YCBCR_TO_RGB: [[f64; 3]; 3] = [
    [1.0, 0.0, 1.402],
    [1.0, -0.344_136_3, -0.714_136_3],
    [1.0, 1.772, 0.0],
];

pub(crate) fn color_transform(x: &Tensor, inverse: bool) -> Result<Tensor> {
    let (b, c, h, w) = super::bchw(x, "color_transform")?;
    if c != 3 {
        return Err(CoreError::BadShape {
            op: if inverse { "ycbcr_to_rgb" } else { "rgb_to_ycbcr" },
            expected: "3 channels".into(),
            got: x.shape().to_vec(),
        });
    }
    let m = if inverse { &YCBCR_TO_RGB } else { &RGB_TO_YCBCR };
    let plane = h * w;
    let mut out = vec![0.0; x.numel()];
    for bi in 0..b {
        let base = bi * 3 * plane;
        for p in 0..plane {
            let mut v = [
                x.data()[base + p],
                x.data()[base + plane + p],
                x.data()[base + 2 * plane + p],
            ];
            if inverse {
                v[1] -= 0.5;
                v[2] -= 0.5;
            }
            for (ch, row) in m.iter().enumerate() {
                let mut acc = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
                if !inverse && ch > 0 {
                    acc += 0.5;
                }
                out[base + ch * plane + p] = acc;
            }
        }
    }
    Tensor::new(out, x.shape().to_vec())
}

pub(crate) fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = super::bchw(x, "upsample2x")?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; b * c * oh * ow];
    for bc in 0..b * c {
        for y in 0..oh {
            for xx in 0..ow {
                out[(bc * oh + y) * ow + xx] = x.data()[(bc * h + y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(out, vec![b, c, oh, ow])
}

pub(crate) fn select_labels(x: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = match x.shape() {
        [b, k] => (*b, *k),
        _ => {
            return Err(CoreError::BadShape {
                op: "select_labels",
                expected: "(batch, classes)".into(),
                got: x.shape().to_vec(),
            })
        }
    };
    if labels.len() != b || labels.iter().any(|&l| l >= k) {
        return Err(CoreError::invalid("select_labels: bad labels"));
    }
    let data = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| x.data()[i * k + y])
        .collect();
    Tensor::new(data, vec![b])
}

pub(crate) fn row_max(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (b, k) = match x.shape() {
        [b, k] => (*b, *k),
        _ => {
            return Err(CoreError::BadShape {
                op: "row_max",
                expected: "(batch, classes)".into(),
                got: x.shape().to_vec(),
            })
        }
    };
    let mut out = vec![0.0; b];
    let mut argmax = vec![0usize; b];
    for i in 0..b {
        let row = &x.data()[i * k..(i + 1) * k];
        let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
        for (j, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                bi = j;
            }
        }
        out[i] = best;
        argmax[i] = i * k + bi;
    }
    Ok((Tensor::new(out, vec![b])?, argmax))
}

pub(crate) const RATE_P_FLOOR: f64 = 1e-9;

/// Interpolated bin probability for a continuous value; returns
/// (p, lower bin, interpolation weight toward the upper bin, clamped).
pub(crate) fn bin_lookup(v: f64, probs: &[f64], vmin: f64) -> (f64, usize, f64, bool) {
    let bins = probs.len();
    let vmax = vmin + (bins - 1) as f64;
    let clamped = v <= vmin || v >= vmax;
    let u = (v.clamp(vmin, vmax) - vmin).min((bins - 1) as f64 - 1e-12);
    let i0 = u.floor() as usize;
    let frac = u - i0 as f64;
    let p = probs[i0] * (1.0 - frac) + probs[i0 + 1] * frac;
    (p.max(RATE_P_FLOOR), i0, frac, clamped)
}

pub(crate) fn bin_rate(values: &Tensor, probs: &Tensor, vmin: f64) -> Result<Tensor> {
    let (_, c, _, _) = super::bchw(values, "bin_rate")?;
    let bins = match probs.shape() {
        [pc, bins] if *pc == c && *bins >= 2 => *bins,
        _ => {
            return Err(CoreError::ShapeMismatch {
                op: "bin_rate",
                lhs: values.shape().to_vec(),
                rhs: probs.shape().to_vec(),
            })
        }
    };
    let plane = values.numel() / values.shape()[0] / c;
    let mut total = 0.0;
    for (i, &v) in values.data().iter().enumerate() {
        let ch = (i / plane) % c;
        let (p, _, _, _) = bin_lookup(v, &probs.data()[ch * bins..(ch + 1) * bins], vmin);
        total += -p.log2();
    }
    Ok(Tensor::scalar(total))
}
