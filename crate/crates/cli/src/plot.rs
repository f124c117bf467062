//! Minimal SVG line charts and heatmaps from CSV columns.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Draws every `y` column against `x`. Rows with a non-numeric cell in a column are skipped
/// for that column only, so metrics files with NaN validation losses still plot.
pub fn render_csv_plot(csv_text: &str, x: &str, ys: &[String], title: &str) -> Result<String> {
    if ys.is_empty() {
        bail!("no y columns requested");
    }
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("column `{name}` not in CSV header"))
    };
    let xi = col(x)?;
    let yis = ys.iter().map(|y| col(y)).collect::<Result<Vec<_>>>()?;
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); ys.len()];
    for rec in reader.records() {
        let rec = rec?;
        let Some(xv) = rec.get(xi).and_then(|s| s.parse::<f64>().ok()) else {
            continue;
        };
        for (s, &yi) in series.iter_mut().zip(&yis) {
            if let Some(yv) = rec.get(yi).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite()) {
                s.push((xv, yv));
            }
        }
    }
    let all = series.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(a, b) in all {
        x0 = x0.min(a);
        x1 = x1.max(a);
        y0 = y0.min(b);
        y1 = y1.max(b);
    }
    if !x0.is_finite() {
        bail!("no numeric data to plot");
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title))?;
    writeln!(
        svg,
        r#"<path d="M{m} {t} V{b} H{r}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    )?;
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(xv), HEIGHT - MARGIN + 16.0, tick(xv))?;
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN - 6.0, py(yv) + 4.0, tick(yv))?;
    }
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 16.0, escape(x))?;
    for (i, (s, name)) in series.iter().zip(ys).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s.iter().map(|&(a, b)| format!("{:.2},{:.2}", px(a), py(b))).collect();
        writeln!(svg, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, pts.join(" "))?;
        let ly = MARGIN + 16.0 * i as f64;
        writeln!(svg, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, WIDTH - MARGIN + 4.0, escape(name))?;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// One row of cells per CSV row, labelled by the `label` column; one column per entry of
/// `values`. Cells are shaded white to dark blue over the range of all finite values and
/// non-numeric cells stay grey.
pub fn render_csv_heatmap(csv_text: &str, label: &str, values: &[String], title: &str) -> Result<String> {
    if values.is_empty() {
        bail!("no value columns requested");
    }
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("column `{name}` not in CSV header"))
    };
    let li = col(label)?;
    let vis = values.iter().map(|v| col(v)).collect::<Result<Vec<_>>>()?;
    let mut labels = Vec::new();
    let mut grid: Vec<Vec<Option<f64>>> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        labels.push(rec.get(li).unwrap_or("").to_string());
        grid.push(vis.iter().map(|&i| rec.get(i).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite())).collect());
    }
    let finite = grid.iter().flatten().flatten();
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        bail!("no numeric data to plot");
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cw = (WIDTH - 2.0 * MARGIN) / values.len() as f64;
    let ch = (HEIGHT - 2.0 * MARGIN) / grid.len() as f64;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    )?;
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title))?;
    for (r, row) in grid.iter().enumerate() {
        let y = MARGIN + r as f64 * ch;
        for (c, cell) in row.iter().enumerate() {
            let fill = match cell {
                Some(v) => {
                    let f = (v - lo) / span;
                    let shade = |full: f64| (255.0 - f * (255.0 - full)).round() as u8;
                    format!("#{:02x}{:02x}{:02x}", shade(8.0), shade(48.0), shade(107.0))
                }
                None => "#cccccc".to_string(),
            };
            writeln!(
                svg,
                r#"<rect x="{:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="{fill}"/>"#,
                MARGIN + c as f64 * cw
            )?;
        }
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN - 4.0, y + ch / 2.0 + 4.0, escape(&labels[r]))?;
    }
    for (c, name) in values.iter().enumerate() {
        let x = MARGIN + (c as f64 + 0.5) * cw;
        writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, HEIGHT - MARGIN + 14.0, escape(name))?;
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{} to {}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        tick(lo),
        tick(hi)
    )?;
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
