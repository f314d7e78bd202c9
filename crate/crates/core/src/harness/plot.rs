//! Deterministic SVG plots of experiment CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::table::{median, RawTable};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    /// Median best cost against evaluations, one line per method.
    Line,
    /// Median best cost per method.
    Bar,
    /// Particles and segments of one simulator state.
    Scene,
}

impl PlotKind {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::Line => &["method", "evaluations", "best_cost"],
            PlotKind::Bar => &["method", "best_cost"],
            PlotKind::Scene => &["kind", "x", "y", "x2", "y2"],
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "line" => Ok(PlotKind::Line),
            "bar" => Ok(PlotKind::Bar),
            "scene" => Ok(PlotKind::Scene),
            _ => Err(Error::Plot(format!("unknown plot kind {s:?}; expected line, bar or scene"))),
        }
    }
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Reads `csv`, renders it and writes the SVG next to it.
pub fn emit_plot(csv: &Path, kind: PlotKind) -> Result<PathBuf, Error> {
    let table = RawTable::read(csv)?;
    let svg = render(&table, kind).map_err(|e| match e {
        Error::Plot(m) => Error::Plot(format!("{}: {m}", csv.display())),
        e => e,
    })?;
    let out = csv.with_extension("svg");
    std::fs::write(&out, svg)?;
    Ok(out)
}

pub fn render(table: &RawTable, kind: PlotKind) -> Result<String, Error> {
    let idx = table.require(kind.columns())?;
    match kind {
        PlotKind::Line => line(table, &idx),
        PlotKind::Bar => bar(table, &idx),
        PlotKind::Scene => scene(table, &idx),
    }
}

fn num(s: &str) -> Result<f64, Error> {
    s.trim().parse::<f64>().map_err(|_| Error::Plot(format!("not a number: {s:?}")))
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="18" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        esc(title)
    );
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str, xticks: &[(f64, String)]) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#);
    for (v, label) in xticks {
        let p = f.px(*v);
        let _ = writeln!(out, r#"<line x1="{p:.2}" y1="{y0}" x2="{p:.2}" y2="{}" stroke="black"/>"#, y0 + 4.0);
        let _ = writeln!(out, r#"<text x="{p:.2}" y="{}" text-anchor="middle">{}</text>"#, y0 + 17.0, esc(label));
    }
    for k in 0..=4 {
        let v = f.y.0 + (f.y.1 - f.y.0) * k as f64 / 4.0;
        let p = f.py(v);
        let _ = writeln!(out, r#"<line x1="{}" y1="{p:.2}" x2="{x0}" y2="{p:.2}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, x0 - 6.0, p + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, esc(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        esc(ylabel)
    );
}

fn no_data(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" fill="gray">no data</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        (TOP + H - BOTTOM) / 2.0
    );
}

fn legend(out: &mut String, names: &[&String]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{c}"/>"#, y - 10.0);
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, esc(name));
    }
}

fn line(table: &RawTable, idx: &[usize]) -> Result<String, Error> {
    let mut groups: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for row in &table.rows {
        let e = num(&row[idx[1]])?;
        let c = num(&row[idx[2]])?;
        if c.is_finite() && e >= 0.0 {
            groups.entry(row[idx[0]].clone()).or_default().entry(e as u64).or_default().push(c);
        }
    }
    let series: Vec<(&String, Vec<(f64, f64)>)> = groups
        .iter_mut()
        .map(|(m, pts)| (m, pts.iter_mut().map(|(e, cs)| (((*e).max(1) as f64).log10(), median(cs))).collect()))
        .collect();
    let all = || series.iter().flat_map(|(_, p)| p.iter());
    let (xl, xh) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (yl, yh) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let f = Frame { x: padded(xl, xh), y: padded(yl, yh) };
    let mut out = String::new();
    open(&mut out, "best cost vs energy evaluations");
    let ticks: Vec<(f64, String)> = (f.x.0.ceil() as i64..=f.x.1.floor() as i64)
        .map(|k| (k as f64, format!("{}", 10f64.powi(k as i32))))
        .collect();
    axes(&mut out, &f, "energy evaluations (log scale)", "median best cost", &ticks);
    if series.is_empty() {
        no_data(&mut out);
    }
    for (i, (_, pts)) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, path.join(" "));
        for (x, y) in pts {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, f.px(*x), f.py(*y));
        }
    }
    legend(&mut out, &series.iter().map(|(m, _)| *m).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}

fn bar(table: &RawTable, idx: &[usize]) -> Result<String, Error> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in &table.rows {
        let c = num(&row[idx[1]])?;
        if c.is_finite() {
            groups.entry(row[idx[0]].clone()).or_default().push(c);
        }
    }
    let bars: Vec<(&String, f64)> = groups.iter_mut().map(|(m, cs)| (m, median(cs))).collect();
    let lo = bars.iter().map(|b| b.1).fold(0.0f64, f64::min);
    let hi = bars.iter().map(|b| b.1).fold(0.0f64, f64::max);
    let f = Frame { x: (0.0, bars.len().max(1) as f64), y: padded(lo, hi) };
    let mut out = String::new();
    open(&mut out, "median best cost per method");
    let ticks: Vec<(f64, String)> = bars.iter().enumerate().map(|(i, (m, _))| (i as f64 + 0.5, m.to_string())).collect();
    axes(&mut out, &f, "method", "median best cost", &ticks);
    if bars.is_empty() {
        no_data(&mut out);
    }
    let zero = f.py(0.0);
    for (i, (_, v)) in bars.iter().enumerate() {
        let (a, b) = (f.px(i as f64 + 0.15), f.px(i as f64 + 0.85));
        let y = f.py(*v);
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{a:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}"/>"#,
            y.min(zero),
            b - a,
            (y - zero).abs()
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn scene(table: &RawTable, idx: &[usize]) -> Result<String, Error> {
    let f = Frame { x: (0.0, 1.0), y: (0.0, 1.0) };
    let mut out = String::new();
    open(&mut out, "scene");
    axes(&mut out, &f, "x", "y", &[(0.0, "0".into()), (0.5, "0.5".into()), (1.0, "1".into())]);
    if table.rows.is_empty() {
        no_data(&mut out);
    }
    for row in &table.rows {
        let (x, y) = (num(&row[idx[1]])?, num(&row[idx[2]])?);
        match row[idx[0]].as_str() {
            "particle" => {
                let _ = writeln!(out, r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#1f77b4"/>"##, f.px(x), f.py(y));
            }
            "goal" => {
                let (cx, cy) = (f.px(x), f.py(y));
                let _ = writeln!(
                    out,
                    r##"<path d="M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}" stroke="#2ca02c" stroke-width="2"/>"##,
                    cx - 6.0,
                    cy - 6.0,
                    cx + 6.0,
                    cy + 6.0,
                    cx - 6.0,
                    cy + 6.0,
                    cx + 6.0,
                    cy - 6.0
                );
            }
            kind => {
                let (x2, y2) = (num(&row[idx[3]])?, num(&row[idx[4]])?);
                let (c, w) = match kind {
                    "tool" => ("#d62728", 3),
                    "obstacle" => ("#555555", 3),
                    _ => ("#999999", 1),
                };
                let _ = writeln!(
                    out,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{c}" stroke-width="{w}"/>"#,
                    f.px(x),
                    f.py(y),
                    f.px(x2),
                    f.py(y2)
                );
            }
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}
