//! Hand-written SVG figures: sample scatter plots and metric curves.
//!
//! Output depends only on the inputs (fixed number formatting, no
//! timestamps), so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use sona_core::checkpoint::write_atomic;
use sona_core::experiment::{load_checkpoint, parse_summary_csv, run_dir, SummaryRow, METRICS_FILE, SUMMARY_FILE};
use sona_core::mog::{sample_class, sample_latent, MogSpec, Rng};
use sona_core::trainer::{EvalRecord, Method, Model};
use sona_core::Matrix64;

const PANEL: f64 = 320.0;
const MARGIN: f64 = 48.0;
const LEGEND_ROW: f64 = 14.0;

/// Samples of one model for one scatter panel.
#[derive(Clone, Debug, Default)]
pub struct ScatterPanel {
    pub title: String,
    pub classes: usize,
    pub data: Vec<(f64, f64)>,
    /// `(x, y, class)`.
    pub generated: Vec<(f64, f64, usize)>,
}

/// One method's curve: `(x, mean, std)` points.
#[derive(Clone, Debug, Default)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

/// Distinct, evenly spaced hues as `#rrggbb`.
pub fn class_color(class: usize, classes: usize) -> String {
    let h = 6.0 * class as f64 / classes.max(1) as f64;
    let (s, l) = (0.7, 0.45);
    let c = (1.0 - (2.0 * l - 1.0f64).abs()) * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let byte = |v: f64| ((v + m) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", byte(r), byte(g), byte(b))
}

/// Tick label with as many decimals as the axis span needs.
fn tick(v: f64, span: f64) -> String {
    let decimals = if span >= 50.0 { 0 } else if span >= 5.0 { 1 } else if span >= 0.5 { 2 } else { 3 };
    format!("{v:.decimals$}")
}

const SERIES_COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Linear map of `[lo, hi]` onto `[a, b]`.
#[derive(Clone, Copy, Debug)]
struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, a: f64, b: f64) -> Self {
        let (lo, hi) = if hi - lo > 1e-12 { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self { lo, hi, a, b }
    }

    fn at(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(width: f64, height: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    s
}

/// Frame, ticks and labels of one plot area.
fn axes(s: &mut String, x0: f64, y0: f64, xs: Scale, ys: Scale, title: &str, xlabel: &str) {
    let y1 = y0 + PANEL;
    let _ = writeln!(s, r#"<g class="axes">"#);
    let _ = writeln!(
        s,
        r#"<rect x="{x0:.1}" y="{y0:.1}" width="{PANEL:.1}" height="{PANEL:.1}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = xs.lo + t * (xs.hi - xs.lo);
        let yv = ys.lo + t * (ys.hi - ys.lo);
        let (px, py) = (xs.at(xv), ys.at(yv));
        let _ = writeln!(s, r#"<line x1="{px:.1}" y1="{y1:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, y1 + 4.0);
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y1 + 16.0, tick(xv, xs.hi - xs.lo));
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0:.1}" y2="{py:.1}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 6.0, py + 4.0, tick(yv, ys.hi - ys.lo));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#, x0 + PANEL / 2.0, y0 - 8.0, escape(title));
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x0 + PANEL / 2.0, y1 + 32.0, escape(xlabel));
    let _ = writeln!(s, "</g>");
}

fn no_data(s: &mut String, x0: f64, y0: f64) {
    let _ = writeln!(
        s,
        r#"<text class="caption" x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">no data</text>"#,
        x0 + PANEL / 2.0,
        y0 + PANEL / 2.0
    );
}

/// Ground truth in grey under generated samples colored by class, one
/// panel per model, with a shared legend of one entry per class.
pub fn scatter_svg(panels: &[ScatterPanel]) -> String {
    let count = panels.len().max(1);
    let classes = panels.iter().map(|p| p.classes).max().unwrap_or(0);
    let width = MARGIN + count as f64 * (PANEL + MARGIN);
    let columns = (((width - MARGIN) / 80.0) as usize).max(1);
    let legend_h = LEGEND_ROW * classes.div_ceil(columns) as f64;
    let height = PANEL + 2.0 * MARGIN + 16.0 + legend_h;
    let mut s = open(width, height);

    let all = panels.iter().flat_map(|p| p.data.iter().copied().chain(p.generated.iter().map(|&(x, y, _)| (x, y))));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all {
        if x.is_finite() && y.is_finite() {
            lo = lo.min(x.min(y));
            hi = hi.max(x.max(y));
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 1.0);
    }
    let pad = 0.05 * (hi - lo).max(1e-9);
    let (lo, hi) = (lo - pad, hi + pad);

    if panels.is_empty() {
        let xs = Scale::new(lo, hi, MARGIN, MARGIN + PANEL);
        let ys = Scale::new(lo, hi, MARGIN + PANEL, MARGIN);
        axes(&mut s, MARGIN, MARGIN, xs, ys, "samples", "x");
        no_data(&mut s, MARGIN, MARGIN);
    }
    for (k, p) in panels.iter().enumerate() {
        let x0 = MARGIN + k as f64 * (PANEL + MARGIN);
        let xs = Scale::new(lo, hi, x0, x0 + PANEL);
        let ys = Scale::new(lo, hi, MARGIN + PANEL, MARGIN);
        axes(&mut s, x0, MARGIN, xs, ys, &p.title, "x");
        if p.data.is_empty() && p.generated.is_empty() {
            no_data(&mut s, x0, MARGIN);
            continue;
        }
        let _ = writeln!(s, r##"<g class="data" fill="#bbbbbb">"##);
        for &(x, y) in &p.data {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.2"/>"#, xs.at(x), ys.at(y));
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, r#"<g class="generated">"#);
        for &(x, y, c) in &p.generated {
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="1.4" fill="{}"/>"#,
                    xs.at(x),
                    ys.at(y),
                    class_color(c, p.classes)
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }

    let _ = writeln!(s, r#"<g class="legend">"#);
    let top = MARGIN + PANEL + 44.0;
    for c in 0..classes {
        let (col, row) = ((c % columns) as f64, (c / columns) as f64);
        let x = MARGIN + col * 80.0;
        let y = top + row * LEGEND_ROW;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><circle cx="{x:.1}" cy="{y:.1}" r="4" fill="{}"/><text x="{:.1}" y="{:.1}">class {c}</text></g>"#,
            class_color(c, classes),
            x + 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

/// Side-by-side line plots, one per metric, each with one series per
/// method and a mean +- std band.
pub fn curves_svg(metrics: &[(&str, Vec<Series>)], xlabel: &str) -> String {
    let count = metrics.len().max(1);
    let labels: Vec<&str> = {
        let mut seen = Vec::new();
        for (_, series) in metrics {
            for s in series {
                if !seen.contains(&s.label.as_str()) {
                    seen.push(s.label.as_str());
                }
            }
        }
        seen
    };
    let width = MARGIN + count as f64 * (PANEL + MARGIN);
    let height = PANEL + 2.0 * MARGIN + 16.0 + LEGEND_ROW * labels.len().max(1) as f64;
    let mut s = open(width, height);
    let color = |label: &str| SERIES_COLORS[labels.iter().position(|l| *l == label).unwrap_or(0) % SERIES_COLORS.len()];

    let empty = metrics.iter().all(|(_, series)| series.iter().all(|s| s.points.is_empty()));
    if metrics.is_empty() {
        let sc = Scale::new(0.0, 1.0, MARGIN, MARGIN + PANEL);
        let sy = Scale::new(0.0, 1.0, MARGIN + PANEL, MARGIN);
        axes(&mut s, MARGIN, MARGIN, sc, sy, "metrics", xlabel);
    }
    for (k, (name, series)) in metrics.iter().enumerate() {
        let x0 = MARGIN + k as f64 * (PANEL + MARGIN);
        let pts = series.iter().flat_map(|s| s.points.iter());
        let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
        for &(x, m, sd) in pts {
            xlo = xlo.min(x);
            xhi = xhi.max(x);
            ylo = ylo.min((m - sd).max(0.0));
            yhi = yhi.max(m + sd);
        }
        if !xlo.is_finite() {
            (xlo, xhi, yhi) = (0.0, 1.0, 1.0);
        }
        let xs = Scale::new(xlo, xhi, x0, x0 + PANEL);
        let ys = Scale::new(ylo, yhi * 1.05, MARGIN + PANEL, MARGIN);
        axes(&mut s, x0, MARGIN, xs, ys, name, xlabel);
        for se in series {
            if se.points.is_empty() {
                continue;
            }
            let c = color(&se.label);
            let upper = se.points.iter().map(|&(x, m, sd)| format!("{:.2},{:.2}", xs.at(x), ys.at(m + sd)));
            let lower = se.points.iter().rev().map(|&(x, m, sd)| format!("{:.2},{:.2}", xs.at(x), ys.at((m - sd).max(0.0))));
            let band: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="{c}" fill-opacity="0.15" stroke="none"/>"#, band.join(" "));
            let line: Vec<String> = se.points.iter().map(|&(x, m, _)| format!("{:.2},{:.2}", xs.at(x), ys.at(m))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, line.join(" "));
            for &(x, m, _) in &se.points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#, xs.at(x), ys.at(m));
            }
        }
    }
    if empty {
        no_data(&mut s, MARGIN, MARGIN);
    }
    let _ = writeln!(s, r#"<g class="legend">"#);
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN + PANEL + 44.0 + i as f64 * LEGEND_ROW;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
            MARGIN,
            MARGIN + 16.0,
            color(label),
            MARGIN + 22.0,
            y + 4.0,
            escape(label)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// W2, cW2 and NF against N, one series per method.
pub fn sweep_curves(rows: &[SummaryRow]) -> String {
    let mut cells: BTreeMap<(Method, usize), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.method, r.classes)).or_default().push(r);
    }
    let mut by_method: BTreeMap<Method, [Series; 3]> = BTreeMap::new();
    for ((method, n), rs) in &cells {
        let entry = by_method.entry(*method).or_insert_with(|| {
            let s = Series {
                label: method.name().to_string(),
                points: Vec::new(),
            };
            [s.clone(), s.clone(), s]
        });
        let (w, ws) = mean_std(&rs.iter().map(|r| r.w2).collect::<Vec<_>>());
        let (c, cs) = mean_std(&rs.iter().map(|r| r.cw2_mean).collect::<Vec<_>>());
        let nf = rs.iter().filter(|r| r.is_failure).count() as f64;
        entry[0].points.push((*n as f64, w, ws));
        entry[1].points.push((*n as f64, c, cs));
        entry[2].points.push((*n as f64, nf, 0.0));
    }
    let mut w2 = Vec::new();
    let mut cw2 = Vec::new();
    let mut nf = Vec::new();
    for [a, b, c] in by_method.into_values() {
        w2.push(a);
        cw2.push(b);
        nf.push(c);
    }
    curves_svg(&[("W2", w2), ("cW2", cw2), ("NF", nf)], "number of classes N")
}

/// W2 and mean cW2 against training iteration for one run.
pub fn history_curves(records: &[EvalRecord]) -> String {
    let series = |label: &str, f: fn(&EvalRecord) -> f64| Series {
        label: label.to_string(),
        points: records.iter().map(|r| (r.iteration as f64, f(r), 0.0)).collect(),
    };
    curves_svg(
        &[("W2", vec![series("run", |r| r.w2)]), ("cW2", vec![series("run", |r| r.cw2_mean)])],
        "iteration",
    )
}

/// Samples of a trained model and of the data, `per_class` of each per
/// class, from a fixed stream.
pub fn sample_panel(model: &Model<f64>, spec: &MogSpec, per_class: usize, title: String) -> anyhow::Result<ScatterPanel> {
    let mut rng = Rng::new(0);
    let mut panel = ScatterPanel {
        title,
        classes: spec.class_count,
        ..ScatterPanel::default()
    };
    for c in 0..spec.class_count {
        let d: Matrix64 = sample_class(spec, &mut rng, c, per_class)?;
        let z = sample_latent(&mut rng, per_class);
        let g = model.generate(&z, &vec![c; per_class])?;
        for i in 0..per_class {
            panel.data.push((d.get(i, 0), d.get(i, 1)));
            panel.generated.push((g.get(i, 0), g.get(i, 1), c));
        }
    }
    Ok(panel)
}

fn run_panel(dir: &Path, title: String) -> anyhow::Result<ScatterPanel> {
    let ck = load_checkpoint(dir)?;
    let resolved: sona_core::experiment::ResolvedRun = serde_json::from_str(
        &std::fs::read_to_string(dir.join(sona_core::experiment::CONFIG_FILE)).with_context(|| format!("reading config of {}", dir.display()))?,
    )?;
    let model = Model::from_checkpoint(&ck)?;
    sample_panel(&model, &resolved.train.mog, 100, title)
}

fn read_history(path: &Path) -> anyhow::Result<Vec<EvalRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("parsing {}", path.display())))
        .collect()
}

/// Writes `scatter.svg` and `curves.svg` for a sweep directory (one panel
/// per method at the largest N) or a single run directory. A directory
/// with neither gives figures captioned "no data".
pub fn plot_dir(input: &Path, out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (scatter, curves) = if input.join(SUMMARY_FILE).exists() {
        let rows = parse_summary_csv(&std::fs::read_to_string(input.join(SUMMARY_FILE))?)?;
        let mut panels = Vec::new();
        if let Some(n) = rows.iter().map(|r| r.classes).max() {
            let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
            methods.sort();
            methods.dedup();
            for m in methods {
                let seed = rows.iter().filter(|r| r.method == m && r.classes == n).map(|r| r.seed).min();
                if let Some(seed) = seed {
                    panels.push(run_panel(&run_dir(input, m, n, seed), format!("{m} N={n} seed {seed}"))?);
                }
            }
        }
        (scatter_svg(&panels), sweep_curves(&rows))
    } else if input.join(METRICS_FILE).exists() {
        let history = read_history(&input.join(METRICS_FILE))?;
        let title = input.file_name().map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned());
        let panel = run_panel(input, title)?;
        (scatter_svg(&[panel]), history_curves(&history))
    } else {
        (scatter_svg(&[]), curves_svg(&[], "number of classes N"))
    };
    write_atomic(&out.join("scatter.svg"), scatter.as_bytes())?;
    write_atomic(&out.join("curves.svg"), curves.as_bytes())?;
    Ok(())
}
