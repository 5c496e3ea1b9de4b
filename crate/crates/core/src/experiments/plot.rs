//! Minimal SVG bar charts: one group per rollup (Avg, HR, LR), one bar per
//! run label, value and delta against the baseline printed above each bar.

use std::fmt::Write as _;

use super::Comparison;

const PALETTE: [&str; 8] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 56.0;
const MARGIN_TOP: f64 = 56.0;
const PLOT_H: f64 = 280.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn bar_chart(title: &str, cmp: &Comparison) -> String {
    let groups: Vec<&str> = ["Avg", "HR", "LR"]
        .into_iter()
        .filter(|g| cmp.rollups.iter().any(|(_, _, r)| r.entries().iter().any(|(n, v)| n == g && v.is_some())))
        .collect();
    let n_bars = cmp.rollups.len().max(1) as f64;
    let plot_w = WIDTH - MARGIN_LEFT - 24.0;
    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = (group_w * 0.8 / n_bars).min(60.0);
    let y = |v: f64| MARGIN_TOP + PLOT_H * (1.0 - v.clamp(0.0, 100.0) / 100.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="15" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    for tick in (0..=100).step_by(20) {
        let ty = y(tick as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_LEFT}" y1="{ty:.1}" x2="{:.1}" y2="{ty:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"##,
            WIDTH - 24.0,
            MARGIN_LEFT - 6.0,
            ty + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">EM (%)</text>"#,
        MARGIN_TOP + PLOT_H / 2.0,
        MARGIN_TOP + PLOT_H / 2.0
    );

    for (gi, group) in groups.iter().enumerate() {
        let gx = MARGIN_LEFT + gi as f64 * group_w + (group_w - bar_w * n_bars) / 2.0;
        for (bi, (label, _, rollup)) in cmp.rollups.iter().enumerate() {
            let Some(value) = rollup.entries().iter().find(|(n, _)| n == group).and_then(|(_, v)| *v) else {
                continue;
            };
            let x = gx + bi as f64 * bar_w;
            let top = y(value);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{} {group}: {value:.1}</title></rect>"#,
                bar_w * 0.9,
                MARGIN_TOP + PLOT_H - top,
                PALETTE[bi % PALETTE.len()],
                escape(label)
            );
            let cx = x + bar_w * 0.45;
            let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{value:.1}</text>"#, top - 4.0);
            let delta = cmp.deltas.iter().find(|d| d.label == *label).and_then(|d| match *group {
                "Avg" => Some(d.avg),
                "HR" => d.hr,
                _ => d.lr,
            });
            if let Some(d) = delta {
                let _ = writeln!(
                    s,
                    r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle" font-weight="bold">{:+.1}</text>"#,
                    top - 17.0,
                    d + 0.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{group}</text>"#,
            MARGIN_LEFT + (gi as f64 + 0.5) * group_w,
            MARGIN_TOP + PLOT_H + 20.0
        );
    }

    let legend_y = MARGIN_TOP + PLOT_H + 44.0;
    for (bi, (label, _, _)) in cmp.rollups.iter().enumerate() {
        let lx = MARGIN_LEFT + (bi % 4) as f64 * 160.0;
        let ly = legend_y + (bi / 4) as f64 * 18.0;
        let suffix = if *label == cmp.baseline { " (baseline)" } else { "" };
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}{suffix}</text>"#,
            ly - 10.0,
            PALETTE[bi % PALETTE.len()],
            lx + 16.0,
            ly,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::report::{DeltaRow, Rollup};
    use crate::pipeline::Strategy;

    #[test]
    fn annotates_deltas_above_bars() {
        let cmp = Comparison {
            baseline: "MULTI".into(),
            rollups: vec![
                ("MULTI".into(), Strategy::Multi, Rollup { avg: 53.1, hr: None, lr: None }),
                ("CROSS".into(), Strategy::Cross, Rollup { avg: 57.2, hr: None, lr: None }),
            ],
            deltas: vec![DeltaRow { label: "CROSS".into(), baseline: "MULTI".into(), avg: 4.1, hr: None, lr: None }],
        };
        let svg = bar_chart("MKQA <test>", &cmp);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(">+4.1</text>"));
        assert!(svg.contains(">57.2</text>"));
        assert!(svg.contains("MKQA &lt;test&gt;"));
        assert!(!svg.contains(">HR</text>"));
        assert_eq!(svg, bar_chart("MKQA <test>", &cmp));
    }
}
