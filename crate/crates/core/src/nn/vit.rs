//! 4x4 patch embedding (dim 64) -> 2 pre-norm transformer blocks
//! (4 heads, MLP ratio 2) -> mean-pool over tokens -> dense head.

use super::{Model, ParamVars, LN_EPS, VIT_BLOCKS, VIT_DIM, VIT_HEADS, VIT_PATCH};
use crate::error::Result;
use crate::tensor::{Tape, Var};

pub(crate) fn forward<'t>(
    model: &Model,
    _tape: &'t Tape,
    x: Var<'t>,
    p: &ParamVars<'t>,
) -> Result<Var<'t>> {
    let b = x.shape()[0];
    let (_, h, w) = model.input_spec;
    let (th, tw) = (h / VIT_PATCH, w / VIT_PATCH);
    let t = th * tw;
    let d = VIT_DIM;

    // patch embedding as a strided convolution, then (B,T,D) tokens
    let tok = x
        .conv2d(p.get("patch.w"), VIT_PATCH, 0)?
        .bias_chan(p.get("patch.b"))?
        .reshape(&[b, d, t])?
        .permute(&[0, 2, 1])?;
    // learned positional embedding, broadcast over the batch
    let mut tok = tok
        .reshape(&[b, t * d])?
        .bias_row(p.get("pos").reshape(&[t * d])?)?
        .reshape(&[b, t, d])?;

    for blk in 0..VIT_BLOCKS {
        tok = attention_block(tok, p, blk, b, t, d)?;
    }

    let pooled = tok
        .layer_norm(p.get("head.ln.g"), p.get("head.ln.b"), LN_EPS)?
        .mean_tokens()?;
    pooled.matmul(p.get("head.w"))?.bias_row(p.get("head.b"))
}

fn attention_block<'t>(
    x: Var<'t>,
    p: &ParamVars<'t>,
    blk: usize,
    b: usize,
    t: usize,
    d: usize,
) -> Result<Var<'t>> {
    let heads = VIT_HEADS;
    let hd = d / heads;
    let name = |s: &str| format!("blk{blk}.{s}");

    let normed = x.layer_norm(p.get(&name("ln1.g")), p.get(&name("ln1.b")), LN_EPS)?;
    let flat = normed.reshape(&[b * t, d])?;
    let proj = |w: &str, bias: &str| -> Result<Var<'t>> {
        flat.matmul(p.get(&name(w)))?.bias_row(p.get(&name(bias)))
    };
    // (B*T,D) -> (B,heads,T,hd) flattened to (B*heads,T,hd)
    let split = |v: Var<'t>| -> Result<Var<'t>> {
        v.reshape(&[b, t, heads, hd])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b * heads, t, hd])
    };
    let q = split(proj("attn.wq", "attn.bq")?)?;
    let k = proj("attn.wk", "attn.bk")?
        .reshape(&[b, t, heads, hd])?
        .permute(&[0, 2, 3, 1])?
        .reshape(&[b * heads, hd, t])?;
    let v = split(proj("attn.wv", "attn.bv")?)?;

    let attn = q
        .batch_matmul(k)?
        .mul_scalar(1.0 / (hd as f64).sqrt())?
        .softmax()?;
    let ctx = attn
        .batch_matmul(v)?
        .reshape(&[b, heads, t, hd])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b * t, d])?
        .matmul(p.get(&name("attn.wo")))?
        .bias_row(p.get(&name("attn.bo")))?
        .reshape(&[b, t, d])?;
    let x = x.add(ctx)?;

    let mlp = x
        .layer_norm(p.get(&name("ln2.g")), p.get(&name("ln2.b")), LN_EPS)?
        .reshape(&[b * t, d])?
        .matmul(p.get(&name("mlp.w1")))?
        .bias_row(p.get(&name("mlp.b1")))?
        .relu()?
        .matmul(p.get(&name("mlp.w2")))?
        .bias_row(p.get(&name("mlp.b2")))?
        .reshape(&[b, t, d])?;
    x.add(mlp)
}
