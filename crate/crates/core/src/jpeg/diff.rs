//! Differentiable JPEG: the same transform pipeline as the bit-exact
//! path expressed in tape primitives, with rounding replaced by the
//! smooth surrogate so gradients can flow through the defense.

use super::tables::QuantTables;
use crate::error::Result;
use crate::tensor::{bchw, Tape, Tensor, Var};

/// Tile an 8x8 quant table over a padded (B,C,H,W) shape; channel 0
/// uses luma, the rest chroma.
fn quant_constant(qt: &QuantTables, shape: &[usize]) -> Tensor {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut data = vec![0.0; b * c * h * w];
    for bi in 0..b {
        for ci in 0..c {
            let table = if ci == 0 { &qt.luma } else { &qt.chroma };
            for y in 0..h {
                for x in 0..w {
                    data[((bi * c + ci) * h + y) * w + x] = table[(y % 8) * 8 + x % 8] as f64;
                }
            }
        }
    }
    Tensor::new(data, shape.to_vec()).unwrap()
}

/// Full compress/decompress as a tape computation. `smooth` selects the
/// smooth-round surrogate (differentiable mode); hard rounding otherwise
/// carries zero gradient.
pub fn jpeg_forward_tape<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    qt: &QuantTables,
    smooth: bool,
) -> Result<Var<'t>> {
    let shape = x.shape();
    let value = x.value();
    let (_, c, h, w) = bchw(&value, "jpeg_forward")?;
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;

    let mut t = x;
    if c == 3 {
        t = t.rgb_to_ycbcr()?;
    }
    // [0,1] -> [-128,127] sample scale
    t = t.mul_scalar(255.0)?.add_scalar(-128.0)?;
    if ph != h || pw != w {
        t = t.pad_replicate(ph, pw)?;
    }
    let mut padded_shape = shape;
    padded_shape[2] = ph;
    padded_shape[3] = pw;
    let q = tape.constant(quant_constant(qt, &padded_shape));
    t = t.block_dct()?.div(q)?;
    t = if smooth { t.smooth_round()? } else { t.round()? };
    t = t.mul(q)?.block_idct()?;
    if ph != h || pw != w {
        t = t.crop(h, w)?;
    }
    t = t.add_scalar(128.0)?.mul_scalar(1.0 / 255.0)?;
    if c == 3 {
        t = t.ycbcr_to_rgb()?;
    }
    t.clamp(0.0, 1.0)
}
