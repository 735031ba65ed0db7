//! Central finite-difference probe, the independent oracle for every
//! gradient check in the workspace.

use super::Tensor;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy)]
pub struct ProbeRecord {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Probe d f / d x[coord] by central differences and compare against the
/// supplied analytic gradient. `f` must be deterministic; two baseline
/// evaluations are compared to detect otherwise.
pub fn finite_difference_probe(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    analytic: &Tensor,
    coords: &[usize],
    h: f64,
) -> Result<Vec<ProbeRecord>> {
    if h <= 0.0 {
        return Err(CoreError::invalid("finite_difference_probe: h must be > 0"));
    }
    if analytic.shape() != x.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "finite_difference_probe",
            lhs: x.shape().to_vec(),
            rhs: analytic.shape().to_vec(),
        });
    }
    let base1 = f(x)?;
    let base2 = f(x)?;
    if base1 != base2 {
        return Err(CoreError::invalid(format!(
            "finite_difference_probe: f is non-deterministic ({base1} vs {base2})"
        )));
    }
    let mut records = Vec::with_capacity(coords.len());
    let mut xp = x.clone();
    for &coord in coords {
        if coord >= x.numel() {
            return Err(CoreError::invalid(format!(
                "finite_difference_probe: coordinate {coord} out of range {}",
                x.numel()
            )));
        }
        let orig = x.data()[coord];
        xp.data_mut()[coord] = orig + h;
        let fp = f(&xp)?;
        xp.data_mut()[coord] = orig - h;
        let fm = f(&xp)?;
        xp.data_mut()[coord] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[coord];
        let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        records.push(ProbeRecord {
            coord,
            analytic: a,
            numeric,
            rel_err,
        });
    }
    Ok(records)
}

/// Largest relative error across a probe run.
pub fn max_rel_err(records: &[ProbeRecord]) -> f64 {
    records.iter().map(|r| r.rel_err).fold(0.0, f64::max)
}
