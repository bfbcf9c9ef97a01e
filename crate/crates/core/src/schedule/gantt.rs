//! SVG Gantt chart with one lane per resource.

use std::fmt::Write;

use crate::schedule::profile::Resource;
use crate::schedule::sim::Timeline;

const PALETTE: [&str; 12] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
    "#86bcb6", "#d37295",
];

fn colour(stage: &str) -> &'static str {
    let h = stage
        .bytes()
        .fold(0u32, |h, b| h.wrapping_mul(31).wrapping_add(u32::from(b)));
    PALETTE[h as usize % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn gantt_svg(tl: &Timeline) -> String {
    let (width, lane_h, left, top) = (1200.0f64, 48.0f64, 60.0f64, 30.0f64);
    let span = tl.total_makespan().max(1) as f64;
    let x = |t: u64| left + (t as f64 / span) * (width - left - 10.0);
    let height = top + 2.0 * lane_h + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    for (k, r) in [Resource::PL, Resource::CPU].into_iter().enumerate() {
        let y = top + k as f64 * lane_h;
        let _ = writeln!(
            s,
            r#"<text x="8" y="{:.1}" font-size="12">{r}</text>"#,
            y + lane_h / 2.0 + 4.0
        );
        for e in tl.events.iter().filter(|e| e.resource == r && e.end > e.start) {
            let (x0, x1) = (x(e.start), x(e.end));
            let _ = writeln!(
                s,
                r#"<rect x="{x0:.2}" y="{:.1}" width="{:.2}" height="{:.1}" fill="{}" stroke="white"><title>{} frame {} [{}, {}) us</title></rect>"#,
                y + 4.0,
                x1 - x0,
                lane_h - 8.0,
                colour(&e.stage),
                escape(&e.stage),
                e.frame,
                e.start,
                e.end
            );
            if x1 - x0 > 40.0 {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.1}" fill="white">{}</text>"#,
                    x0 + 3.0,
                    y + lane_h / 2.0 + 3.0,
                    escape(&e.stage)
                );
            }
        }
    }
    for f in 0..tl.frame_makespans.len() {
        if let Some((start, _)) = tl.frame_span(f) {
            let xf = x(start);
            let _ = writeln!(
                s,
                r##"<line x1="{xf:.2}" y1="{:.1}" x2="{xf:.2}" y2="{:.1}" stroke="#333" stroke-dasharray="3,3"/><text x="{:.2}" y="{:.1}">frame {f}</text>"##,
                top - 6.0,
                top + 2.0 * lane_h,
                xf + 2.0,
                top - 10.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{:.1}">makespan {} us per frame, total {} us</text>"#,
        top + 2.0 * lane_h + 24.0,
        tl.makespan(),
        tl.total_makespan()
    );
    s.push_str("</svg>\n");
    s
}
