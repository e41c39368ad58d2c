// Minimal hand-written SVG. Output depends only on the input rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{OverallRow, PatternRow};
use crate::dataset::Phenomenon;
use crate::prompts::MethodId;
use crate::stats::ErrorPattern;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 7] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn y_axis(out: &mut String, ticks: &[(f64, String)], max: f64) {
    let plot_h = HEIGHT - TOP - BOTTOM;
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="#333"/>"##,
        HEIGHT - BOTTOM
    );
    for (v, label) in ticks {
        let y = HEIGHT - BOTTOM - v / max * plot_h;
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"##,
            LEFT,
            WIDTH - RIGHT,
            LEFT - 4.0,
            y + 4.0
        );
    }
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 16.0 * i as f64;
        let x = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            y + 9.0,
            escape(label)
        );
    }
}

/// Grouped bars: one group per model, one bar per method, with CI whiskers.
pub fn accuracy_chart(rows: &[OverallRow]) -> String {
    let mut groups: BTreeMap<&str, Vec<&OverallRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.model).or_default().push(r);
    }
    let methods: Vec<MethodId> = MethodId::ALL.into_iter().filter(|m| rows.iter().any(|r| r.method == *m)).collect();
    let mut out = String::new();
    open(&mut out, "Accuracy by model and method (Wilson interval)");
    let ticks: Vec<(f64, String)> = (0..=5).map(|i| (i as f64 / 5.0, format!("{:.1}", i as f64 / 5.0))).collect();
    y_axis(&mut out, &ticks, 1.0);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / methods.len().max(1) as f64;
    let y_of = |v: f64| HEIGHT - BOTTOM - v * plot_h;
    for (g, (model, items)) in groups.iter().enumerate() {
        let gx = LEFT + group_w * g as f64 + group_w * 0.1;
        for r in items {
            let slot = methods.iter().position(|m| *m == r.method).unwrap_or(0);
            let x = gx + bar_w * slot as f64;
            let w = &r.stats.interval;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} {} {:.4}</title></rect>"#,
                y_of(w.point),
                bar_w * 0.9,
                w.point * plot_h,
                PALETTE[slot % PALETTE.len()],
                escape(model),
                r.method,
                w.point
            );
            let cx = x + bar_w * 0.45;
            let _ = writeln!(
                out,
                r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#000"/>"##,
                y_of(w.low),
                y_of(w.high)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w * 0.4,
            HEIGHT - BOTTOM + 16.0,
            escape(model)
        );
    }
    legend(&mut out, &methods.iter().map(|m| m.to_string()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Stacked bars: one bar per phenomenon, one segment per error pattern.
pub fn pattern_chart(rows: &[PatternRow]) -> String {
    let mut totals: BTreeMap<Phenomenon, u64> = BTreeMap::new();
    for r in rows {
        *totals.entry(r.phenomenon).or_default() += r.count;
    }
    let max = totals.values().copied().max().unwrap_or(0).max(1) as f64;
    let mut out = String::new();
    open(&mut out, "Error patterns by phenomenon");
    let ticks: Vec<(f64, String)> = (0..=4).map(|i| {
        let v = max * i as f64 / 4.0;
        (v, format!("{v:.0}"))
    }).collect();
    y_axis(&mut out, &ticks, max);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let slot_w = plot_w / Phenomenon::ALL.len() as f64;
    for (i, p) in Phenomenon::ALL.iter().enumerate() {
        let x = LEFT + slot_w * i as f64 + slot_w * 0.15;
        let mut base = 0u64;
        for (j, pattern) in ErrorPattern::ALL.iter().enumerate() {
            let count = rows
                .iter()
                .find(|r| r.pattern == *pattern && r.phenomenon == *p)
                .map_or(0, |r| r.count);
            if count == 0 {
                continue;
            }
            let y0 = HEIGHT - BOTTOM - (base + count) as f64 / max * plot_h;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} {} {count}</title></rect>"#,
                slot_w * 0.7,
                count as f64 / max * plot_h,
                PALETTE[j % PALETTE.len()],
                p,
                pattern
            );
            base += count;
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x + slot_w * 0.35,
            HEIGHT - BOTTOM + 16.0,
            p.display_name()
        );
    }
    legend(&mut out, &ErrorPattern::ALL.iter().map(|p| p.to_string()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}
