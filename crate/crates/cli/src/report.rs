//! Report emission: the fixed-schema CSV, the JSON document, and the
//! atomic write helper shared by every artifact.
//!
//! The CSV is the determinism artifact: identical config and seed must
//! reproduce it byte for byte. Wall-clock timings therefore live in the
//! JSON report and the overhead table, and the CSV's wall_ms column is
//! fixed at zero.

use std::fmt::Write as _;
use std::path::Path;

use compressdef_core::eval::{EvaluationReport, OverheadRow};
use compressdef_core::{CoreError, Result};

/// Fixed column order; stable across versions.
pub const CSV_HEADER: &str =
    "model,defense,quality,iterations,through,attack,budget,accuracy,mean_l2,wall_ms";

/// Write bytes via a temp file + rename so readers never observe a
/// partially written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent)
        .map_err(|e| CoreError::invalid(format!("cannot create {}: {e}", parent.display())))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)
        .map_err(|e| CoreError::invalid(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CoreError::invalid(format!("cannot rename to {}: {e}", path.display())))?;
    Ok(())
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Flat CSV with one row per grid cell.
pub fn grid_csv(report: &EvaluationReport) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.defense,
            fmt_f64(r.quality),
            r.iterations,
            r.through,
            r.attack,
            fmt_f64(r.budget),
            fmt_f64(r.accuracy),
            fmt_f64(r.mean_l2),
            fmt_f64(0.0),
        );
    }
    out
}

/// Clean (no-attack) defended accuracies.
pub fn clean_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("model,defense,quality,iterations,accuracy\n");
    for c in &report.clean {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.model,
            c.defense,
            fmt_f64(c.quality),
            c.iterations,
            fmt_f64(c.accuracy),
        );
    }
    out
}

/// Bits-per-pixel table.
pub fn bpp_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("quality,bits_per_pixel\n");
    for (q, b) in rows {
        let _ = writeln!(out, "{},{}", fmt_f64(*q), fmt_f64(*b));
    }
    out
}

/// Per-defense latency table. Timing data, so not byte-reproducible.
pub fn overhead_csv(rows: &[OverheadRow]) -> String {
    let mut out = String::from("defense,quality,iterations,per_image_ms,total_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.defense,
            fmt_f64(r.quality),
            r.iterations,
            fmt_f64(r.per_image_ms),
            fmt_f64(r.total_ms),
        );
    }
    out
}

/// Structured JSON document with metadata and real wall-clock numbers.
pub fn report_json(report: &EvaluationReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map_err(|e| CoreError::invalid(format!("report serialization failed: {e}")))
}
