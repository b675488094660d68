//! Hand-written SVG 1.1 grouped bar charts.

use std::fmt::Write;

const PANEL_W: f64 = 460.0;
const PANEL_H: f64 = 280.0;
const MARGIN_L: f64 = 48.0;
const MARGIN_R: f64 = 12.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 56.0;
const LEGEND_H: f64 = 28.0;
const COLUMNS: usize = 2;
const PALETTE: [&str; 8] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
];

/// One chart: `values[group][series]`, each in `[0, 1]` or missing.
#[derive(Debug, Clone)]
pub(crate) struct Panel {
    pub title: String,
    pub groups: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub(crate) fn grouped_bars(title: &str, series: &[String], panels: &[Panel]) -> String {
    let cols = COLUMNS.min(panels.len().max(1));
    let rows = panels.len().div_ceil(cols).max(1);
    let width = cols as f64 * PANEL_W;
    let height = LEGEND_H + MARGIN_T + rows as f64 * PANEL_H;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="15">{}</text>"#,
        width / 2.0,
        esc(title)
    );
    for (s, name) in series.iter().enumerate() {
        let x = 12.0 + s as f64 * 130.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="32" width="12" height="12" fill="{}"/><text x="{}" y="43" font-size="12">{}</text>"#,
            PALETTE[s % PALETTE.len()],
            x + 16.0,
            esc(name)
        );
    }
    for (p, panel) in panels.iter().enumerate() {
        let ox = (p % cols) as f64 * PANEL_W;
        let oy = LEGEND_H + MARGIN_T + (p / cols) as f64 * PANEL_H;
        panel_svg(&mut out, panel, series.len(), ox, oy);
    }
    out.push_str("</svg>\n");
    out
}

fn panel_svg(out: &mut String, panel: &Panel, n_series: usize, ox: f64, oy: f64) {
    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
    let x0 = ox + MARGIN_L;
    let y0 = oy + MARGIN_T;
    let _ = writeln!(out, r#"<g class="panel">"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
        x0 + plot_w / 2.0,
        oy + 20.0,
        esc(&panel.title)
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = y0 + plot_h * (1.0 - v);
        let _ = writeln!(
            out,
            r##"<line x1="{x0}" y1="{y}" x2="{}" y2="{y}" stroke="#dddddd"/><text x="{}" y="{}" text-anchor="end" font-size="10">{v:.2}</text>"##,
            x0 + plot_w,
            x0 - 4.0,
            y + 3.0
        );
    }
    let groups = panel.groups.len().max(1);
    let slot = plot_w / groups as f64;
    let bar = slot * 0.8 / n_series.max(1) as f64;
    for (g, label) in panel.groups.iter().enumerate() {
        let gx = x0 + g as f64 * slot + slot * 0.1;
        for s in 0..n_series {
            let Some(v) = panel.values.get(g).and_then(|row| row.get(s)).copied().flatten() else {
                continue;
            };
            let v = v.clamp(0.0, 1.0);
            let h = plot_h * v;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}: {v:.3}</title></rect>"#,
                gx + s as f64 * bar,
                y0 + plot_h - h,
                bar,
                h,
                PALETTE[s % PALETTE.len()],
                esc(label)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="end" font-size="10" transform="rotate(-35 {:.2} {})">{}</text>"#,
            gx + slot * 0.4,
            y0 + plot_h + 14.0,
            gx + slot * 0.4,
            y0 + plot_h + 14.0,
            esc(label)
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{x0}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        y0 + plot_h,
        x0 + plot_w,
        y0 + plot_h
    );
    out.push_str("</g>\n");
}
