//! Backward rules for every tape primitive.

use super::ops;
use super::tape::{Node, NodeId, Op};
use super::Tensor;
use crate::error::Result;

fn add_into(grads: &mut [Option<Tensor>], nodes: &[Node], id: NodeId, contrib: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(contrib.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

pub(crate) fn accumulate(
    nodes: &[Node],
    id: NodeId,
    g: &Tensor,
    grads: &mut [Option<Tensor>],
) -> Result<()> {
    let node = &nodes[id];
    let input = |i: usize| -> &Tensor { &nodes[node.inputs[i]].value };
    let needs = |i: usize| nodes[node.inputs[i]].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add => {
            add_into(grads, nodes, node.inputs[0], g.clone());
            add_into(grads, nodes, node.inputs[1], g.clone());
        }
        Op::Sub => {
            add_into(grads, nodes, node.inputs[0], g.clone());
            let neg = Tensor::new(g.data().iter().map(|v| -v).collect(), g.shape().to_vec())?;
            add_into(grads, nodes, node.inputs[1], neg);
        }
        Op::Mul => {
            let (a, b) = (input(0), input(1));
            if needs(0) {
                let d = zip3(g, b, |gv, bv| gv * bv)?;
                add_into(grads, nodes, node.inputs[0], d);
            }
            if needs(1) {
                let d = zip3(g, a, |gv, av| gv * av)?;
                add_into(grads, nodes, node.inputs[1], d);
            }
        }
        Op::Div => {
            let (a, b) = (input(0), input(1));
            if needs(0) {
                let d = zip3(g, b, |gv, bv| gv / bv)?;
                add_into(grads, nodes, node.inputs[0], d);
            }
            if needs(1) {
                let data = g
                    .data()
                    .iter()
                    .zip(a.data())
                    .zip(b.data())
                    .map(|((gv, av), bv)| -gv * av / (bv * bv))
                    .collect();
                add_into(grads, nodes, node.inputs[1], Tensor::new(data, g.shape().to_vec())?);
            }
        }
        Op::AddScalar => add_into(grads, nodes, node.inputs[0], g.clone()),
        Op::MulScalar(s) => {
            let d = Tensor::new(g.data().iter().map(|v| v * s).collect(), g.shape().to_vec())?;
            add_into(grads, nodes, node.inputs[0], d);
        }
        Op::Matmul => {
            let (a, b) = (input(0), input(1));
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if needs(0) {
                // dA = G B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g.data()[i * n + j] * b.data()[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                add_into(grads, nodes, node.inputs[0], Tensor::new(da, vec![m, k])?);
            }
            if needs(1) {
                // dB = A^T G
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let av = a.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += av * g.data()[i * n + j];
                        }
                    }
                }
                add_into(grads, nodes, node.inputs[1], Tensor::new(db, vec![k, n])?);
            }
        }
        Op::BatchMatmul => {
            let (a, b) = (input(0), input(1));
            let (bn, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let n = b.shape()[2];
            if needs(0) {
                let mut da = vec![0.0; bn * m * k];
                for bb in 0..bn {
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g.data()[(bb * m + i) * n + j] * b.data()[(bb * k + p) * n + j];
                            }
                            da[(bb * m + i) * k + p] = acc;
                        }
                    }
                }
                add_into(grads, nodes, node.inputs[0], Tensor::new(da, vec![bn, m, k])?);
            }
            if needs(1) {
                let mut db = vec![0.0; bn * k * n];
                for bb in 0..bn {
                    for p in 0..k {
                        for i in 0..m {
                            let av = a.data()[(bb * m + i) * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[(bb * k + p) * n + j] += av * g.data()[(bb * m + i) * n + j];
                            }
                        }
                    }
                }
                add_into(grads, nodes, node.inputs[1], Tensor::new(db, vec![bn, k, n])?);
            }
        }
        Op::Conv2d { stride, pad } => {
            let (x, w) = (input(0), input(1));
            let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
            let (oh, ow) = (g.shape()[2], g.shape()[3]);
            let (s, p) = (*stride, *pad);
            let mut dx = vec![0.0; x.numel()];
            let mut dw = vec![0.0; w.numel()];
            for bi in 0..b {
                for oi in 0..o {
                    for i in 0..oh {
                        for j in 0..ow {
                            let gv = g.data()[((bi * o + oi) * oh + i) * ow + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for ci in 0..c {
                                for u in 0..kh {
                                    let y = (i * s + u) as isize - p as isize;
                                    if y < 0 || y as usize >= h {
                                        continue;
                                    }
                                    let xrow = ((bi * c + ci) * h + y as usize) * wd;
                                    let wrow = ((oi * c + ci) * kh + u) * kw;
                                    for v in 0..kw {
                                        let xx = (j * s + v) as isize - p as isize;
                                        if xx < 0 || xx as usize >= wd {
                                            continue;
                                        }
                                        dx[xrow + xx as usize] += gv * w.data()[wrow + v];
                                        dw[wrow + v] += gv * x.data()[xrow + xx as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dx, x.shape().to_vec())?);
            add_into(grads, nodes, node.inputs[1], Tensor::new(dw, w.shape().to_vec())?);
        }
        Op::BiasChan => {
            let x = input(0);
            let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            add_into(grads, nodes, node.inputs[0], g.clone());
            if needs(1) {
                let mut db = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * h * w;
                        db[ci] += g.data()[base..base + h * w].iter().sum::<f64>();
                    }
                }
                add_into(grads, nodes, node.inputs[1], Tensor::new(db, vec![c])?);
            }
        }
        Op::BiasRow => {
            let d = *input(1).shape().first().unwrap();
            add_into(grads, nodes, node.inputs[0], g.clone());
            if needs(1) {
                let mut db = vec![0.0; d];
                for (i, v) in g.data().iter().enumerate() {
                    db[i % d] += v;
                }
                add_into(grads, nodes, node.inputs[1], Tensor::new(db, vec![d])?);
            }
        }
        Op::MaxPool2 { argmax } => {
            let x = input(0);
            let mut dx = vec![0.0; x.numel()];
            for (o, &src) in argmax.iter().enumerate() {
                dx[src] += g.data()[o];
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dx, x.shape().to_vec())?);
        }
        Op::Relu => {
            let d = zip3(g, input(0), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
            add_into(grads, nodes, node.inputs[0], d);
        }
        Op::Tanh => {
            let d = zip3(g, &node.value, |gv, yv| gv * (1.0 - yv * yv))?;
            add_into(grads, nodes, node.inputs[0], d);
        }
        Op::Softmax => {
            let y = &node.value;
            let d = *y.shape().last().unwrap();
            let mut dx = vec![0.0; y.numel()];
            for r in 0..y.numel() / d {
                let p = &y.data()[r * d..(r + 1) * d];
                let gr = &g.data()[r * d..(r + 1) * d];
                let dot: f64 = p.iter().zip(gr).map(|(pv, gv)| pv * gv).sum();
                for i in 0..d {
                    dx[r * d + i] = p[i] * (gr[i] - dot);
                }
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dx, y.shape().to_vec())?);
        }
        Op::CrossEntropyMean { labels } => {
            let z = input(0);
            let (b, k) = (z.shape()[0], z.shape()[1]);
            let gs = g.item() / b.max(1) as f64;
            let p = ops::softmax(z)?;
            let mut dz = p.into_data();
            for (i, &y) in labels.iter().enumerate() {
                dz[i * k + y] -= 1.0;
            }
            for v in &mut dz {
                *v *= gs;
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dz, z.shape().to_vec())?);
        }
        Op::LayerNorm { eps } => {
            let (x, gain) = (input(0), input(1));
            let d = *gain.shape().first().unwrap();
            let rows = x.numel() / d;
            let mut dx = vec![0.0; x.numel()];
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            for r in 0..rows {
                let xr = &x.data()[r * d..(r + 1) * d];
                let gr = &g.data()[r * d..(r + 1) * d];
                let mean = xr.iter().sum::<f64>() / d as f64;
                let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                let mut m1 = 0.0; // mean of dxhat
                let mut m2 = 0.0; // mean of dxhat * xhat
                for i in 0..d {
                    let xhat = (xr[i] - mean) * inv;
                    let dxhat = gr[i] * gain.data()[i];
                    dgain[i] += gr[i] * xhat;
                    dbias[i] += gr[i];
                    m1 += dxhat;
                    m2 += dxhat * xhat;
                }
                m1 /= d as f64;
                m2 /= d as f64;
                for i in 0..d {
                    let xhat = (xr[i] - mean) * inv;
                    let dxhat = gr[i] * gain.data()[i];
                    dx[r * d + i] = inv * (dxhat - m1 - xhat * m2);
                }
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dx, x.shape().to_vec())?);
            add_into(grads, nodes, node.inputs[1], Tensor::new(dgain, vec![d])?);
            add_into(grads, nodes, node.inputs[2], Tensor::new(dbias, vec![d])?);
        }
        Op::Clamp { lo, hi } => {
            let d = zip3(g, input(0), |gv, xv| {
                if xv >= *lo && xv <= *hi {
                    gv
                } else {
                    0.0
                }
            })?;
            add_into(grads, nodes, node.inputs[0], d);
        }
        Op::Sign | Op::Round => {
            let x = input(0);
            add_into(grads, nodes, node.inputs[0], Tensor::zeros(x.shape()));
        }
        Op::SmoothRound => {
            let d = zip3(g, input(0), |gv, xv| {
                let f = xv - xv.round();
                gv * 3.0 * f * f
            })?;
            add_into(grads, nodes, node.inputs[0], d);
        }
        Op::Sum => {
            let x = input(0);
            add_into(grads, nodes, node.inputs[0], Tensor::full(x.shape(), g.item()));
        }
        Op::Mean => {
            let x = input(0);
            let gv = g.item() / x.numel().max(1) as f64;
            add_into(grads, nodes, node.inputs[0], Tensor::full(x.shape(), gv));
        }
        Op::MeanTokens => {
            let x = input(0);
            let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let mut dx = vec![0.0; x.numel()];
            for bi in 0..b {
                for ti in 0..t {
                    for di in 0..d {
                        dx[(bi * t + ti) * d + di] = g.data()[bi * d + di] / t as f64;
                    }
                }
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dx, x.shape().to_vec())?);
        }
        Op::Reshape => {
            let x = input(0);
            let d = g.clone().reshaped(x.shape().to_vec())?;
            add_into(grads, nodes, node.inputs[0], d);
        }
        Op::Permute { axes } => {
            let mut inv = vec![0usize; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inv[a] = i;
            }
            let d = ops::permute(g, &inv)?;
            add_into(grads, nodes, node.inputs[0], d);
        }
        // the transforms are orthonormal linear maps: adjoint = inverse
        Op::BlockDct => {
            let d = ops::block_dct(g, true)?;
            add_into(grads, nodes, node.inputs[0], d);
        }
        Op::BlockIdct => {
            let d = ops::block_dct(g, false)?;
            add_into(grads, nodes, node.inputs[0], d);
        }
        Op::PadReplicate => {
            let x = input(0);
            let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let (th, tw) = (g.shape()[2], g.shape()[3]);
            let mut dx = vec![0.0; x.numel()];
            for bc in 0..b * c {
                for y in 0..th {
                    let sy = y.min(h - 1);
                    for xx in 0..tw {
                        let sx = xx.min(w - 1);
                        dx[(bc * h + sy) * w + sx] += g.data()[(bc * th + y) * tw + xx];
                    }
                }
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dx, x.shape().to_vec())?);
        }
        Op::Crop => {
            let x = input(0);
            let (b, c, ih, iw) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let (h, w) = (g.shape()[2], g.shape()[3]);
            let mut dx = vec![0.0; x.numel()];
            for bc in 0..b * c {
                for y in 0..h {
                    for xx in 0..w {
                        dx[(bc * ih + y) * iw + xx] = g.data()[(bc * h + y) * w + xx];
                    }
                }
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dx, x.shape().to_vec())?);
        }
        Op::RgbToYcbcr | Op::YcbcrToRgb => {
            let m = if matches!(node.op, Op::RgbToYcbcr) {
                &ops::RGB_TO_YCBCR
            } else {
                &ops::YCBCR_TO_RGB
            };
            let x = input(0);
            let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let plane = h * w;
            let mut dx = vec![0.0; x.numel()];
            for bi in 0..b {
                let base = bi * 3 * plane;
                for p in 0..plane {
                    for ci in 0..3 {
                        let mut acc = 0.0;
                        for ch in 0..3 {
                            acc += m[ch][ci] * g.data()[base + ch * plane + p];
                        }
                        dx[base + ci * plane + p] = acc;
                    }
                }
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dx, x.shape().to_vec())?);
        }
        Op::Upsample2x => {
            let x = input(0);
            let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let (oh, ow) = (2 * h, 2 * w);
            let mut dx = vec![0.0; x.numel()];
            for bc in 0..b * c {
                for y in 0..oh {
                    for xx in 0..ow {
                        dx[(bc * h + y / 2) * w + xx / 2] += g.data()[(bc * oh + y) * ow + xx];
                    }
                }
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dx, x.shape().to_vec())?);
        }
        Op::SelectLabels { labels } => {
            let x = input(0);
            let k = x.shape()[1];
            let mut dx = vec![0.0; x.numel()];
            for (i, &y) in labels.iter().enumerate() {
                dx[i * k + y] = g.data()[i];
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dx, x.shape().to_vec())?);
        }
        Op::RowMax { argmax } => {
            let x = input(0);
            let mut dx = vec![0.0; x.numel()];
            for (i, &src) in argmax.iter().enumerate() {
                dx[src] += g.data()[i];
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dx, x.shape().to_vec())?);
        }
        Op::BinRate { vmin } => {
            let (values, probs) = (input(0), input(1));
            let c = values.shape()[1];
            let bins = probs.shape()[1];
            let plane = values.numel() / values.shape()[0] / c;
            let gs = g.item();
            let ln2 = std::f64::consts::LN_2;
            let mut dv = vec![0.0; values.numel()];
            let mut dp = vec![0.0; probs.numel()];
            for (i, &v) in values.data().iter().enumerate() {
                let ch = (i / plane) % c;
                let row = &probs.data()[ch * bins..(ch + 1) * bins];
                let (p, i0, frac, clamped) = ops::bin_lookup(v, row, *vmin);
                let common = -gs / (p * ln2);
                dp[ch * bins + i0] += common * (1.0 - frac);
                dp[ch * bins + i0 + 1] += common * frac;
                if !clamped {
                    dv[i] = common * (row[i0 + 1] - row[i0]);
                }
            }
            add_into(grads, nodes, node.inputs[0], Tensor::new(dv, values.shape().to_vec())?);
            add_into(grads, nodes, node.inputs[1], Tensor::new(dp, probs.shape().to_vec())?);
        }
    }
    Ok(())
}

fn zip3(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let data = g.data().iter().zip(x.data()).map(|(gv, xv)| f(*gv, *xv)).collect();
    Tensor::new(data, g.shape().to_vec())
}
