//! Dependency-free scatter plots: fixed 600×600 canvas, linear mapping from
//! the data bounding box with a 5% margin, one circle per sample row,
//! colored by chain id when rows carry one.

use std::fmt::Write as _;

use mmgibbs::datasets::SampleSet;

use crate::errors::CliError;

const SIZE: f64 = 600.0;
const MARGIN_FRAC: f64 = 0.05;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Min/max of one coordinate, padded so degenerate ranges still map sanely.
fn padded_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let pad = if span > 0.0 { MARGIN_FRAC * span } else { 1.0 };
    (lo - pad, hi + pad)
}

/// Render the first two coordinates of every row. Returns the SVG text.
pub fn scatter(samples: &SampleSet) -> Result<String, CliError> {
    if samples.dim() < 2 {
        return Err(CliError::Config(format!(
            "plotting needs at least 2-dimensional samples, got {}d",
            samples.dim()
        )));
    }
    if samples.is_empty() {
        return Err(CliError::Config("no rows to plot".into()));
    }
    let (x_lo, x_hi) = padded_range(samples.rows().map(|r| r[0]));
    let (y_lo, y_hi) = padded_range(samples.rows().map(|r| r[1]));
    let sx = SIZE / (x_hi - x_lo);
    let sy = SIZE / (y_hi - y_lo);

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" \
         viewBox=\"0 0 600 600\">"
    );
    out.push_str("<rect x=\"0\" y=\"0\" width=\"600\" height=\"600\" fill=\"#ffffff\"/>\n");
    for i in 0..samples.len() {
        let r = samples.row(i);
        let cx = (r[0] - x_lo) * sx;
        // SVG y grows downward; data y grows upward.
        let cy = SIZE - (r[1] - y_lo) * sy;
        let color = match samples.meta(i) {
            Some((chain, _)) => PALETTE[chain as usize % PALETTE.len()],
            None => PALETTE[0],
        };
        let _ = writeln!(
            out,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.7\"/>"
        );
    }
    // Axis box and corner labels go after the markers so they stay readable.
    out.push_str(
        "<rect x=\"0.5\" y=\"0.5\" width=\"599\" height=\"599\" fill=\"none\" \
         stroke=\"#333333\" stroke-width=\"1\"/>\n",
    );
    let _ = writeln!(
        out,
        "<text x=\"6\" y=\"594\" font-family=\"monospace\" font-size=\"11\" \
         fill=\"#333333\">({x_lo:.3}, {y_lo:.3})</text>"
    );
    let _ = writeln!(
        out,
        "<text x=\"594\" y=\"14\" text-anchor=\"end\" font-family=\"monospace\" \
         font-size=\"11\" fill=\"#333333\">({x_hi:.3}, {y_hi:.3})</text>"
    );
    out.push_str("</svg>\n");
    Ok(out)
}
