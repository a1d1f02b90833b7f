//! Static figures: stiffness maps and wave fields as PNG, method comparisons
//! as SVG scatter and Bland-Altman panels.

use std::fmt::Write as _;
use std::io::Cursor;

use elastolab_core::field::{ComplexField, ScalarField};
use image::{ImageFormat, RgbImage};

use crate::error::Result;

/// Fixed display range for stiffness maps, Pa.
pub const STIFFNESS_RANGE: (f64, f64) = (0.0, 10_000.0);

const COLORMAP: [[f64; 3]; 5] = [
    [0.0, 0.0, 4.0],
    [87.0, 16.0, 110.0],
    [188.0, 55.0, 84.0],
    [249.0, 142.0, 9.0],
    [252.0, 255.0, 164.0],
];

/// Maps `t` in [0, 1] onto a dark-to-bright perceptual ramp.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (COLORMAP.len() - 1) as f64;
    let i = (x.floor() as usize).min(COLORMAP.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (COLORMAP[i][k] * (1.0 - f) + COLORMAP[i + 1][k] * f).round() as u8;
    }
    out
}

fn encode(img: RgbImage) -> Result<Vec<u8>> {
    let mut bytes = Cursor::new(Vec::new());
    img.write_to(&mut bytes, ImageFormat::Png)?;
    Ok(bytes.into_inner())
}

pub fn stiffness_png(map: &ScalarField) -> Result<Vec<u8>> {
    let (lo, hi) = STIFFNESS_RANGE;
    let img = RgbImage::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        image::Rgb(colormap((map.get(y as usize, x as usize) - lo) / (hi - lo)))
    });
    encode(img)
}

/// Real part of the displacement in grayscale, symmetric about zero.
pub fn wave_png(u: &ComplexField) -> Result<Vec<u8>> {
    let peak = u.values().iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let scale = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    let img = RgbImage::from_fn(u.width() as u32, u.height() as u32, |x, y| {
        let v = (0.5 + u.get(y as usize, x as usize).re * scale).clamp(0.0, 1.0);
        let g = (v * 255.0).round() as u8;
        image::Rgb([g, g, g])
    });
    encode(img)
}

const PANEL: f64 = 320.0;
const MARGIN: f64 = 48.0;

struct Axes {
    x0: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        self.x0 + MARGIN + (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * PANEL
    }

    fn py(&self, y: f64) -> f64 {
        MARGIN + PANEL - (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * PANEL
    }

    fn frame(&self, svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, t) = (self.x0 + MARGIN, MARGIN);
        let _ = writeln!(svg, r#"<rect x="{l}" y="{t}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{title}</text>"#, l + PANEL / 2.0, t - 16.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xlabel}</text>"#, l + PANEL / 2.0, t + PANEL + 36.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{ylabel}</text>"#,
            l - 32.0,
            t + PANEL / 2.0,
            l - 32.0,
            t + PANEL / 2.0
        );
        for (v, x) in [(self.x_range.0, l), (self.x_range.1, l + PANEL)] {
            let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{v:.2}</text>"#, t + PANEL + 14.0);
        }
        for (v, y) in [(self.y_range.0, t + PANEL), (self.y_range.1, t)] {
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end" font-size="10">{v:.2}</text>"#, l - 4.0);
        }
    }

    fn line(&self, svg: &mut String, (x1, y1): (f64, f64), (x2, y2): (f64, f64), style: &str) {
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" {style}/>"#,
            self.px(x1),
            self.py(y1),
            self.px(x2),
            self.py(y2)
        );
    }

    fn points(&self, svg: &mut String, pts: &[(f64, f64)]) {
        for &(x, y) in pts {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, self.px(x), self.py(y));
        }
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.08).max(1e-3);
    (lo - pad, hi + pad)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scatter of estimate vs reference (kPa) with identity and least-squares
/// lines, beside a Bland-Altman panel with bias and 95% limits.
pub fn pair_svg(pair: &str, points: &[(f64, f64)]) -> String {
    let mut svg = String::new();
    let width = 2.0 * (PANEL + 2.0 * MARGIN);
    let height = PANEL + 2.0 * MARGIN;
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);

    let range = padded_range(points.iter().flat_map(|&(r, e)| [r, e]));
    let scatter = Axes { x0: 0.0, x_range: range, y_range: range };
    scatter.frame(&mut svg, &format!("{pair}: ROI means"), "reference (kPa)", "estimate (kPa)");
    scatter.line(&mut svg, (range.0, range.0), (range.1, range.1), r#"stroke="gray" stroke-dasharray="4 3""#);
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    if points.len() >= 2 {
        let (mx, my) = (mean(&xs), mean(&ys));
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        if sxx > 0.0 {
            let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
            let icpt = my - slope * mx;
            scatter.line(&mut svg, (range.0, icpt + slope * range.0), (range.1, icpt + slope * range.1), r#"stroke="firebrick""#);
        }
    }
    scatter.points(&mut svg, points);

    let ba: Vec<(f64, f64)> = points.iter().map(|&(r, e)| ((r + e) / 2.0, e - r)).collect();
    let diffs: Vec<f64> = ba.iter().map(|p| p.1).collect();
    let bias = if diffs.is_empty() { 0.0 } else { mean(&diffs) };
    let sd = if diffs.len() >= 2 {
        (diffs.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let limits = [bias - 1.96 * sd, bias, bias + 1.96 * sd];
    let x_range = padded_range(ba.iter().map(|p| p.0));
    let y_range = padded_range(diffs.iter().copied().chain(limits));
    let panel = Axes { x0: PANEL + 2.0 * MARGIN, x_range, y_range };
    panel.frame(&mut svg, &format!("{pair}: Bland-Altman"), "mean of pair (kPa)", "estimate - reference (kPa)");
    for (k, &y) in limits.iter().enumerate() {
        let style = if k == 1 { r#"stroke="firebrick""# } else { r#"stroke="gray" stroke-dasharray="4 3""# };
        panel.line(&mut svg, (x_range.0, y), (x_range.1, y), style);
    }
    panel.points(&mut svg, &ba);
    svg.push_str("</svg>\n");
    svg
}
