//! Vector-graphic report figures, written as plain SVG.
//!
//! Pure functions of the report: regenerating from the same report
//! produces identical bytes. Conventions follow the tables the figures
//! summarize — solid lines for black-box rows, dashed lines for rows
//! where the gradient passed through the defense.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use compressdef_core::eval::{EvaluationReport, GridRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 190.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = write!(
        s,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0
    );
    s
}

struct Axes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-12);
        MARGIN_L + (x - self.x_min) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        HEIGHT - MARGIN_B - (y - self.y_min) / span * (HEIGHT - MARGIN_T - MARGIN_B)
    }

    fn draw(&self, s: &mut String, x_label: &str, y_label: &str, x_ticks: &[f64]) {
        let (x0, x1) = (MARGIN_L, WIDTH - MARGIN_R);
        let (y0, y1) = (HEIGHT - MARGIN_B, MARGIN_T);
        let _ = write!(
            s,
            "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>\n\
             <line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>\n"
        );
        for t in x_ticks {
            let px = self.px(*t);
            let _ = write!(
                s,
                "<line x1=\"{px:.1}\" y1=\"{y0:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
                 <text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{t:.3}</text>\n",
                y0 + 5.0,
                y0 + 20.0
            );
        }
        for i in 0..=5 {
            let v = self.y_min + (self.y_max - self.y_min) * i as f64 / 5.0;
            let py = self.py(v);
            let _ = write!(
                s,
                "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{x0:.1}\" y2=\"{py:.1}\" stroke=\"black\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>\n",
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0
            );
        }
        let _ = write!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>\n\
             <text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{y_label}</text>\n",
            MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0,
            HEIGHT - 12.0,
            (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
            (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
        );
    }
}

fn series_line(
    s: &mut String,
    axes: &Axes,
    points: &[(f64, f64)],
    color: &str,
    dashed: bool,
    label: &str,
    index: usize,
) {
    let dash = if dashed { " stroke-dasharray=\"6,4\"" } else { "" };
    let mut path = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        let _ = write!(
            path,
            "{}{:.1},{:.1}",
            if i == 0 { "M" } else { " L" },
            axes.px(*x),
            axes.py(*y)
        );
    }
    let _ = write!(
        s,
        "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"{dash}/>\n"
    );
    for (x, y) in points {
        let _ = write!(
            s,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"{color}\"/>\n",
            axes.px(*x),
            axes.py(*y)
        );
    }
    // legend entry
    let ly = MARGIN_T + 14.0 * index as f64;
    let lx = WIDTH - MARGIN_R + 10.0;
    let _ = write!(
        s,
        "<line x1=\"{lx:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-width=\"1.8\"{dash}/>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\">{label}</text>\n",
        ly - 3.0,
        lx + 22.0,
        ly - 3.0,
        lx + 27.0,
        ly
    );
}

fn defense_label(r: &GridRow) -> String {
    let mut label = match r.defense.as_str() {
        "none" => "undefended".to_string(),
        "jpeg" => format!("jpeg q={:.0}", r.quality),
        other => format!("{other} λ={}", r.quality),
    };
    if r.iterations > 1 {
        let _ = write!(label, " N={}", r.iterations);
    }
    if r.through {
        label.push_str(" (through)");
    }
    format!("{} / {label}", r.model)
}

/// Accuracy-versus-budget chart for one attack kind. Returns None when
/// the report has no usable rows for that attack.
pub fn accuracy_vs_budget_svg(report: &EvaluationReport, attack: &str) -> Option<String> {
    let rows: Vec<&GridRow> = report
        .rows
        .iter()
        .filter(|r| r.attack == attack && r.error.is_none())
        .collect();
    if rows.is_empty() {
        return None;
    }
    let mut keys: Vec<(String, bool)> = Vec::new();
    for r in &rows {
        let key = (defense_label(r), r.through);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let x_max = rows.iter().map(|r| r.budget).fold(0.0, f64::max);
    let axes = Axes {
        x_min: 0.0,
        x_max: x_max.max(1e-6),
        y_min: 0.0,
        y_max: 1.0,
    };
    let mut s = svg_open(&format!("Accuracy vs budget — {attack}"));
    let budgets: BTreeSet<u64> = rows.iter().map(|r| r.budget.to_bits()).collect();
    let ticks: Vec<f64> = budgets.iter().map(|b| f64::from_bits(*b)).collect();
    axes.draw(&mut s, "L∞ budget", "accuracy", &ticks);
    for (i, (label, dashed)) in keys.iter().enumerate() {
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| defense_label(r) == *label)
            .map(|r| (r.budget, r.accuracy))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        series_line(
            &mut s,
            &axes,
            &pts,
            PALETTE[i % PALETTE.len()],
            *dashed,
            label,
            i,
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Accuracy versus sequential application count N, grouped per budget,
/// for rows whose defense was applied more than once anywhere in the
/// report. Returns None when every row has N = 1.
pub fn sequential_svg(report: &EvaluationReport) -> Option<String> {
    let rows: Vec<&GridRow> = report
        .rows
        .iter()
        .filter(|r| r.defense != "none" && r.error.is_none() && r.budget > 0.0)
        .collect();
    let iterations: BTreeSet<usize> = rows.iter().map(|r| r.iterations).collect();
    if iterations.len() < 2 {
        return None;
    }
    let axes = Axes {
        x_min: *iterations.iter().next().unwrap() as f64,
        x_max: *iterations.iter().last().unwrap() as f64,
        y_min: 0.0,
        y_max: 1.0,
    };
    let mut s = svg_open("Accuracy vs sequential compression count");
    let ticks: Vec<f64> = iterations.iter().map(|&n| n as f64).collect();
    axes.draw(&mut s, "applications N", "accuracy", &ticks);
    let mut keys: Vec<(String, String, bool, u64)> = Vec::new();
    for r in &rows {
        let key = (r.model.clone(), r.attack.clone(), r.through, r.budget.to_bits());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (i, (model, attack, through, budget_bits)) in keys.iter().enumerate() {
        let budget = f64::from_bits(*budget_bits);
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| {
                r.model == *model
                    && r.attack == *attack
                    && r.through == *through
                    && r.budget.to_bits() == *budget_bits
            })
            .map(|r| (r.iterations as f64, r.accuracy))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let label = format!(
            "{model} / {attack} ε={budget:.3}{}",
            if *through { " (through)" } else { "" }
        );
        series_line(
            &mut s,
            &axes,
            &pts,
            PALETTE[i % PALETTE.len()],
            *through,
            &label,
            i,
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Bits-per-pixel bar chart over the quality grid.
pub fn bpp_svg(rows: &[(f64, f64)]) -> Option<String> {
    if rows.is_empty() {
        return None;
    }
    let y_max = rows.iter().map(|r| r.1).fold(0.0, f64::max).max(1e-6);
    let axes = Axes {
        x_min: 0.0,
        x_max: rows.len() as f64,
        y_min: 0.0,
        y_max,
    };
    let mut s = svg_open("JPEG bits per pixel vs quality");
    axes.draw(&mut s, "quality", "bits per pixel", &[]);
    let band = (WIDTH - MARGIN_L - MARGIN_R) / rows.len() as f64;
    for (i, (q, b)) in rows.iter().enumerate() {
        let x = axes.px(i as f64) + band * 0.15;
        let y = axes.py(*b);
        let h = axes.py(0.0) - y;
        let _ = write!(
            s,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{q:.0}</text>\n",
            band * 0.7,
            PALETTE[0],
            x + band * 0.35,
            axes.py(0.0) + 16.0
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}
