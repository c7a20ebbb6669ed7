//! Minimal SVG output: heatmaps over 2-D lattices, quiver plots of a force
//! field and line charts. Every document opens with a comment that carries
//! the run metadata and the color scale so the picture can be traced back.

use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::grid::Lattice;
use crate::metrics::ForceField;

const CELL: f64 = 40.0;
const MARGIN: f64 = 30.0;

/// Provenance stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RenderMeta {
    pub title: String,
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl RenderMeta {
    fn comment(&self, scale: &str) -> String {
        let seed = self.seed.map_or_else(|| "-".to_string(), |s| s.to_string());
        format!(
            "<!-- title={} config_hash={} seed={} scale={} -->\n",
            escape(&self.title),
            escape(&self.config_hash),
            seed,
            scale
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace("--", "- -")
}

fn require_2d(lattice: &Lattice) -> Result<()> {
    if lattice.dims != 2 {
        return Err(invalid(format!("rendering needs a 2-D lattice, got {} dims", lattice.dims)));
    }
    Ok(())
}

fn open(width: f64, height: f64, meta: &RenderMeta, scale: &str) -> String {
    let mut s = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str(&meta.comment(scale));
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
        MARGIN,
        escape(&meta.title)
    );
    s
}

/// White (`lo`) to dark blue (`hi`), linear.
fn color(v: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

// Row 0 of the picture is the largest second coordinate, so the origin sits
// bottom-left as in the usual plots.
fn cell_origin(side: usize, x: usize, y: usize) -> (f64, f64) {
    (MARGIN + x as f64 * CELL, MARGIN + (side - 1 - y) as f64 * CELL)
}

/// Per-cell heatmap of `values` on a 2-D lattice, linearly scaled between
/// the min and max of `values`.
pub fn heatmap_svg(lattice: &Lattice, values: &[f64], meta: &RenderMeta) -> Result<String> {
    require_2d(lattice)?;
    if values.len() != lattice.num_cells() {
        return Err(invalid(format!("{} values for {} cells", values.len(), lattice.num_cells())));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let side = lattice.side;
    let size = 2.0 * MARGIN + side as f64 * CELL;
    let mut s = open(size, size + 20.0, meta, &format!("linear[{lo:e},{hi:e}]"));
    for (c, &v) in values.iter().enumerate() {
        let (px, py) = cell_origin(side, lattice.coord(c, 0), lattice.coord(c, 1));
        let _ = writeln!(
            s,
            "<rect x=\"{px}\" y=\"{py}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\" stroke=\"#ccc\"><title>{:?} {v:e}</title></rect>",
            color(v, lo, hi),
            lattice.coords(c)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{MARGIN}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">min {lo:.3e}  max {hi:.3e}</text>",
        size + 10.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Arrows of the expected one-step displacement, drawn from each cell
/// centre with length proportional to the displacement.
pub fn quiver_svg(field: &ForceField, meta: &RenderMeta) -> Result<String> {
    let lattice = &field.lattice;
    require_2d(lattice)?;
    let side = lattice.side;
    let size = 2.0 * MARGIN + side as f64 * CELL;
    let mut s = open(size, size, meta, "arrow-length=0.9*cell*|displacement|");
    for (c, v) in field.vectors.iter().enumerate() {
        let (px, py) = cell_origin(side, lattice.coord(c, 0), lattice.coord(c, 1));
        let (cx, cy) = (px + CELL / 2.0, py + CELL / 2.0);
        let _ = writeln!(
            s,
            "<rect x=\"{px}\" y=\"{py}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"none\" stroke=\"#eee\"/>"
        );
        let (dx, dy) = (v[0] * 0.9 * CELL, -v[1] * 0.9 * CELL);
        if dx.hypot(dy) < 1e-9 {
            let _ = writeln!(s, "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"1.5\" fill=\"#888\"/>");
            continue;
        }
        let _ = writeln!(
            s,
            "<line x1=\"{cx}\" y1=\"{cy}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#08306b\" stroke-width=\"1.5\"/>",
            cx + dx,
            cy + dy
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// A named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn line_chart_svg(series: &[Series], x_label: &str, y_label: &str, meta: &RenderMeta) -> Result<String> {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        if !(x.is_finite() && y.is_finite()) {
            return Err(invalid("non-finite point in line chart"));
        }
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(invalid("line chart without points"));
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let (w, h) = (480.0, 300.0);
    let (left, top) = (60.0, 30.0);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * w;
    let py = |y: f64| top + h - (y - y0) / (y1 - y0) * h;
    let mut s = open(left + w + 160.0, top + h + 50.0, meta, &format!("x-linear[{x0:e},{x1:e}] y-linear[{y0:e},{y1:e}]"));
    let _ = writeln!(
        s,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"#444\"/>"
    );
    let text = "font-family=\"sans-serif\" font-size=\"11\"";
    let _ = writeln!(s, "<text x=\"{left}\" y=\"{}\" {text}>{x0:.3}</text>", top + h + 15.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {text} text-anchor=\"end\">{x1:.3}</text>", left + w, top + h + 15.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {text} text-anchor=\"end\">{y0:.3}</text>", left - 4.0, top + h);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {text} text-anchor=\"end\">{y1:.3}</text>", left - 4.0, top + 10.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {text}>{}</text>", left + w / 2.0, top + h + 35.0, escape(x_label));
    let _ = writeln!(s, "<text x=\"8\" y=\"{}\" {text}>{}</text>", top + h / 2.0, escape(y_label));
    for (i, ser) in series.iter().enumerate() {
        let col = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{col}\" stroke-width=\"1.5\" points=\"{}\"/>",
            coords.join(" ")
        );
        let ly = top + 12.0 + 16.0 * i as f64;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\" {text} fill=\"{col}\">{}</text>", left + w + 10.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> RenderMeta {
        RenderMeta { title: "t".into(), config_hash: "abc".into(), seed: Some(3) }
    }

    #[test]
    fn heatmap_has_one_rect_per_cell_and_metadata() {
        let lat = Lattice::new(2, 3).unwrap();
        let vals: Vec<f64> = (0..9).map(f64::from).collect();
        let svg = heatmap_svg(&lat, &vals, &meta()).unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 9);
        assert!(svg.contains("config_hash=abc seed=3 scale=linear["));
        assert!(svg.contains("#ffffff") && svg.contains("#08306b"));
        assert!(heatmap_svg(&lat, &vals[..3], &meta()).is_err());
        assert!(heatmap_svg(&Lattice::new(3, 2).unwrap(), &[0.0; 8], &meta()).is_err());
    }

    #[test]
    fn line_chart_rejects_empty_and_nan() {
        let m = meta();
        assert!(line_chart_svg(&[], "x", "y", &m).is_err());
        let bad = Series { label: "a".into(), points: vec![(0.0, f64::NAN)] };
        assert!(line_chart_svg(&[bad], "x", "y", &m).is_err());
        let ok = Series { label: "a<b".into(), points: vec![(0.0, 1.0), (1.0, 2.0)] };
        let svg = line_chart_svg(&[ok], "x", "y", &m).unwrap();
        assert!(svg.contains("a&lt;b"));
    }
}
