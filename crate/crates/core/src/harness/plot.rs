//! Hand-written SVG output: learning curves with a ±std band and
//! recency-weighted exploration maps. Coordinates are printed with fixed
//! precision so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::maze::MazeLayout;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// One series read from an aggregate CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Read `env_steps`, `<column>_mean` and `<column>_std` from an
/// aggregate CSV. Empty cells are skipped.
pub fn read_curve(path: &Path, column: &str) -> Result<Curve> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: no column {name}", path.display())))
    };
    let (ix, im, is) = (find("env_steps")?, find(&format!("{column}_mean"))?, find(&format!("{column}_std"))?);
    let mut c = Curve {
        x: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let get = |i: usize| -> Result<Option<f64>> {
            match rec.get(i) {
                Some("") | None => Ok(None),
                Some(s) => s
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::Format(format!("{}: bad number {s:?}", path.display()))),
            }
        };
        if let (Some(x), Some(m), Some(s)) = (get(ix)?, get(im)?, get(is)?) {
            c.x.push(x);
            c.mean.push(m);
            c.std.push(s);
        }
    }
    if c.x.is_empty() {
        return Err(Error::Format(format!("{}: no complete rows", path.display())));
    }
    Ok(c)
}

/// Canvas and axis ranges of a learning-curve plot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: f64,
    pub height: f64,
    pub margin: f64,
    /// Fixed y range; the data range when `None`.
    pub y_range: Option<(f64, f64)>,
}

impl PlotSpec {
    pub fn success() -> Self {
        PlotSpec {
            title: "Success rate on the target task".into(),
            x_label: "environment steps".into(),
            y_label: "success rate".into(),
            width: 640.0,
            height: 400.0,
            margin: 56.0,
            y_range: Some((0.0, 1.0)),
        }
    }
}

/// Affine map from data to pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
}

impl Frame {
    pub fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * (self.right - self.left)
    }

    pub fn py(&self, y: f64) -> f64 {
        self.bottom - (y - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)
    }

    /// Inverse of [`Frame::py`].
    pub fn data_y(&self, py: f64) -> f64 {
        self.y0 + (self.bottom - py) / (self.bottom - self.top) * (self.y1 - self.y0)
    }

    pub fn data_x(&self, px: f64) -> f64 {
        self.x0 + (px - self.left) / (self.right - self.left) * (self.x1 - self.x0)
    }
}

pub fn frame(curves: &[(String, Curve)], spec: &PlotSpec) -> Result<Frame> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let xs = curves.iter().flat_map(|(_, c)| c.x.iter().copied());
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (y0, y1) = match spec.y_range {
        Some(r) => r,
        None => curves
            .iter()
            .flat_map(|(_, c)| c.mean.iter().zip(&c.std).flat_map(|(m, s)| [m - s, m + s]))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y))),
    };
    let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    Ok(Frame {
        x0,
        x1,
        y0,
        y1,
        left: spec.margin,
        right: spec.width - spec.margin / 2.0,
        top: spec.margin / 2.0,
        bottom: spec.height - spec.margin,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render mean lines with shaded ±std bands, one colour per series.
pub fn emit_plot(curves: &[(String, Curve)], spec: &PlotSpec, path: &Path) -> Result<()> {
    for (name, c) in curves {
        if c.x.len() != c.mean.len() || c.x.len() != c.std.len() || c.x.is_empty() {
            return Err(Error::Format(format!("series {name} has ragged or empty columns")));
        }
        if c.x.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Format(format!("series {name}: x is not sorted")));
        }
    }
    let f = frame(curves, spec)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="12">"#,
        w = spec.width,
        h = spec.height
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{}</text>"#,
        spec.width / 2.0,
        f.top - 8.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{l:.2},{t:.2} L{l:.2},{b:.2} L{r:.2},{b:.2}" stroke="black" fill="none"/>"#,
        l = f.left,
        t = f.top,
        b = f.bottom,
        r = f.right
    );
    for i in 0..=4 {
        let y = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let x = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            f.left - 6.0,
            f.py(y) + 4.0,
            tick(y)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            f.px(x),
            f.bottom + 16.0,
            tick(x)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (f.left + f.right) / 2.0,
        spec.height - 12.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        (f.top + f.bottom) / 2.0,
        (f.top + f.bottom) / 2.0,
        escape(&spec.y_label)
    );
    for (k, (name, c)) in curves.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<g data-series="{}">"#, escape(name));
        let mut band = String::new();
        for (i, x) in c.x.iter().enumerate() {
            let _ = write!(band, "{}{:.4},{:.4} ", if i == 0 { "M" } else { "L" }, f.px(*x), f.py(c.mean[i] + c.std[i]));
        }
        for (i, x) in c.x.iter().enumerate().rev() {
            let _ = write!(band, "L{:.4},{:.4} ", f.px(*x), f.py(c.mean[i] - c.std[i]));
        }
        let _ = writeln!(
            s,
            r#"<path class="band" d="{}Z" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#,
            band
        );
        let pts: Vec<String> = c
            .x
            .iter()
            .zip(&c.mean)
            .map(|(x, m)| format!("{:.4},{:.4}", f.px(*x), f.py(*m)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = f.top + 16.0 * (k as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{colour}">{}</text>"#,
            f.left + 10.0,
            ly,
            escape(name)
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    write_file(path, &s)
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{:.0}k", v / 1000.0)
    } else {
        format!("{v:.2}")
    }
}

fn write_file(path: &Path, s: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Recency-weighted visit mass per layout cell, row-major. Visit `i` of
/// `n` weighs `(i + 1) / n`, so later visits count more.
pub fn exploration_histogram(visited: &[[f64; 2]], maze: &MazeLayout) -> Vec<f64> {
    let mut h = vec![0.0; maze.width() * maze.height()];
    let n = visited.len() as f64;
    for (i, p) in visited.iter().enumerate() {
        let (x, y) = maze.cell_of(*p);
        if x >= 0 && y >= 0 && (x as usize) < maze.width() && (y as usize) < maze.height() {
            h[y as usize * maze.width() + x as usize] += (i as f64 + 1.0) / n;
        }
    }
    h
}

/// Shade every cell by its share of the recency-weighted visit mass;
/// walls are grey, goals outlined.
pub fn emit_exploration_map(visited: &[[f64; 2]], maze: &MazeLayout, path: &Path) -> Result<()> {
    let cell = 32.0;
    let (w, h) = (maze.width() as f64 * cell, maze.height() as f64 * cell);
    let hist = exploration_histogram(visited, maze);
    let max = hist.iter().cloned().fold(0.0, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for y in 0..maze.height() {
        for x in 0..maze.width() {
            let (px, py) = (x as f64 * cell, y as f64 * cell);
            if maze.is_wall((x, y)) {
                let _ = writeln!(
                    s,
                    r##"<rect x="{px:.0}" y="{py:.0}" width="{cell:.0}" height="{cell:.0}" fill="#808080"/>"##
                );
                continue;
            }
            let v = hist[y * maze.width() + x];
            if v > 0.0 {
                let _ = writeln!(
                    s,
                    r##"<rect class="visit" x="{px:.0}" y="{py:.0}" width="{cell:.0}" height="{cell:.0}" fill="#08306b" fill-opacity="{:.4}"/>"##,
                    v / max
                );
            }
        }
    }
    for &(gx, gy) in maze.goals() {
        let _ = writeln!(
            s,
            r##"<rect x="{:.0}" y="{:.0}" width="{cell:.0}" height="{cell:.0}" fill="none" stroke="#2ca02c" stroke-width="3"/>"##,
            gx as f64 * cell,
            gy as f64 * cell
        );
    }
    let (sx, sy) = maze.start();
    let _ = writeln!(
        s,
        r##"<circle cx="{:.1}" cy="{:.1}" r="6" fill="#d62728"/>"##,
        (sx as f64 + 0.5) * cell,
        (sy as f64 + 0.5) * cell
    );
    s.push_str("</svg>\n");
    write_file(path, &s)
}
