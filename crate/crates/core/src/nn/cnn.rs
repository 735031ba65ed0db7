//! conv(32,3x3)-relu-pool -> conv(64,3x3)-relu-pool -> dense(128)-relu
//! -> dense(num_classes).

use super::{Model, ParamVars};
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
    let t = x
        .conv2d(p.get("conv1.w"), 1, 1)?
        .bias_chan(p.get("conv1.b"))?
        .relu()?
        .max_pool2()?;
    let t = t
        .conv2d(p.get("conv2.w"), 1, 1)?
        .bias_chan(p.get("conv2.b"))?
        .relu()?
        .max_pool2()?;
    let flat = 64 * (h / 4) * (w / 4);
    let t = t.reshape(&[b, flat])?;
    let t = t.matmul(p.get("fc1.w"))?.bias_row(p.get("fc1.b"))?.relu()?;
    t.matmul(p.get("fc2.w"))?.bias_row(p.get("fc2.b"))
}
