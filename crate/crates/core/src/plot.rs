//! Minimal SVG figures: box plots of per-slice metrics and line charts for
//! profiles and training curves. Output is plain text and deterministic.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::quality::quantile;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#2ca02c", "#d62728", "#ff7f0e", "#9467bd", "#8c564b"];

/// Numeric columns of a tab-separated table with a header line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str, origin: &str) -> Result<Table> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Configuration(format!("{origin}: empty table")))?
            .split('\t')
            .map(str::to_string)
            .collect();
        let mut columns = vec![Vec::new(); header.len()];
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != header.len() {
                return Err(Error::Configuration(format!(
                    "{origin}: row {} has {} cells, header has {}",
                    n + 2,
                    cells.len(),
                    header.len()
                )));
            }
            for (col, cell) in columns.iter_mut().zip(cells) {
                let v = cell.trim().parse::<f64>().map_err(|_| {
                    Error::Configuration(format!("{origin}: row {}: `{cell}` is not a number", n + 2))
                })?;
                col.push(v);
            }
        }
        Ok(Table { header, columns })
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Lookup {
                tag: name.to_string(),
                valid: self.header.clone(),
            })
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    lo: f64,
    hi: f64,
    x_lo: f64,
    x_hi: f64,
}

impl Frame {
    fn new(lo: f64, hi: f64, x_lo: f64, x_hi: f64) -> Frame {
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5f64.max(hi.abs() * 0.05) };
        let xr = if x_hi > x_lo { (x_lo, x_hi) } else { (x_lo - 0.5, x_lo + 0.5) };
        Frame {
            lo: lo - pad,
            hi: hi + pad,
            x_lo: xr.0,
            x_hi: xr.1,
        }
    }

    fn y(&self, v: f64) -> f64 {
        TOP + (H - TOP - BOTTOM) * (self.hi - v) / (self.hi - self.lo)
    }

    fn x(&self, v: f64) -> f64 {
        LEFT + (W - LEFT - RIGHT) * (v - self.x_lo) / (self.x_hi - self.x_lo)
    }
}

fn open(title: &str, ylabel: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        escape(ylabel)
    );
    s
}

fn axes(s: &mut String, f: &Frame) {
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT
    );
    for k in 0..=4 {
        let v = f.lo + (f.hi - f.lo) * k as f64 / 4.0;
        let y = f.y(v);
        let _ = writeln!(
            s,
            r#"<path d="M{} {y:.2} H{LEFT}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0,
            tick(v)
        );
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn finite_range<'a>(values: impl Iterator<Item = &'a f64>) -> Option<(f64, f64)> {
    values
        .filter(|v| v.is_finite())
        .fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}

/// Side-by-side box plots (quartile box, median line, min/max whiskers).
/// Non-finite values are left out.
pub fn box_plot_svg(title: &str, ylabel: &str, groups: &[(&str, &[f64])]) -> Result<String> {
    let (lo, hi) = finite_range(groups.iter().flat_map(|(_, v)| v.iter()))
        .ok_or_else(|| Error::InvalidSpec("box plot needs at least one finite value".into()))?;
    let f = Frame::new(lo, hi, 0.0, groups.len() as f64);
    let mut s = open(title, ylabel);
    axes(&mut s, &f);
    let slot = (W - LEFT - RIGHT) / groups.len() as f64;
    for (g, (name, values)) in groups.iter().enumerate() {
        let v: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let cx = LEFT + slot * (g as f64 + 0.5);
        let half = slot * 0.2;
        let color = COLORS[g % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 18.0,
            escape(name)
        );
        if v.is_empty() {
            continue;
        }
        let [mn, q1, med, q3, mx] = [0.0, 0.25, 0.5, 0.75, 1.0].map(|q| f.y(quantile(&v, q)));
        let _ = writeln!(
            s,
            r#"<path d="M{cx:.2} {mx:.2} V{q3:.2} M{cx:.2} {q1:.2} V{mn:.2} M{:.2} {mx:.2} H{:.2} M{:.2} {mn:.2} H{:.2}" stroke="black"/>"#,
            cx - half / 2.0,
            cx + half / 2.0,
            cx - half / 2.0,
            cx + half / 2.0
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{q3:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5" stroke="black"/>"#,
            cx - half,
            2.0 * half,
            (q1 - q3).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<path d="M{:.2} {med:.2} H{:.2}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            cx + half
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Overlaid polylines with a legend.
pub fn line_plot_svg(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<String> {
    let ys = finite_range(series.iter().flat_map(|(_, p)| p.iter().map(|(_, y)| y)))
        .ok_or_else(|| Error::InvalidSpec("line plot needs at least one finite point".into()))?;
    let xs = finite_range(series.iter().flat_map(|(_, p)| p.iter().map(|(x, _)| x))).unwrap_or((0.0, 1.0));
    let f = Frame::new(ys.0, ys.1, xs.0, xs.1);
    let mut s = open(title, ylabel);
    axes(&mut s, &f);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    for k in 0..=4 {
        let v = f.x_lo + (f.x_hi - f.x_lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            f.x(v),
            H - BOTTOM + 16.0,
            tick(v)
        );
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for &(x, y) in pts {
            if !(x.is_finite() && y.is_finite()) {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.2} {:.2} ", if pen_down { "L" } else { "M" }, f.x(x), f.y(y));
            pen_down = true;
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
        let ly = TOP + 14.0 * i as f64 + 6.0;
        let _ = writeln!(
            s,
            r#"<path d="M{} {ly} h18" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            W - RIGHT - 150.0,
            W - RIGHT - 128.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_parses_infinite_psnr_and_reports_bad_cells() {
        let t = Table::parse("a\tb\n1\tinf\n2\t3.5\n", "t").unwrap();
        assert_eq!(t.column("a").unwrap(), &[1.0, 2.0]);
        assert!(t.column("b").unwrap()[0].is_infinite());
        assert!(matches!(t.column("c"), Err(Error::Lookup { .. })));
        assert!(Table::parse("a\n1\nx\n", "t").is_err());
    }

    #[test]
    fn svg_output_is_well_formed_and_deterministic() {
        let a = [0.2, 0.3, 0.25, 0.4];
        let b = [0.8, 0.9, 0.85, f64::INFINITY];
        let one = box_plot_svg("SSIM", "ssim", &[("LD", &a), ("DN", &b)]).unwrap();
        assert_eq!(one, box_plot_svg("SSIM", "ssim", &[("LD", &a), ("DN", &b)]).unwrap());
        assert!(one.starts_with("<svg") && one.trim_end().ends_with("</svg>"));
        assert_eq!(one.matches("<rect").count(), 3);
        let pts = vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 0.5)];
        let line = line_plot_svg("p", "col", "mu", &[("gt".into(), pts)]).unwrap();
        let d = line.lines().find(|l| l.contains("stroke-width=\"1.5\"")).unwrap();
        // The NaN splits the polyline into two pieces.
        assert_eq!(d.matches('M').count(), 2);
        assert!(box_plot_svg("x", "y", &[("e", &[])]).is_err());
    }
}
