//! Static SVG plots of one prediction: query caption, ground-truth and
//! predicted span bars on a shared time axis, and the clip saliency curve.

use std::fmt::Write;

use crate::data::PredictionRecord;

const WIDTH: f64 = 720.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 20.0;
const BAR_H: f64 = 14.0;
const CURVE_TOP: f64 = 150.0;
const CURVE_H: f64 = 120.0;
const HEIGHT: f64 = 310.0;

pub struct PlotInput<'a> {
    pub query: &'a str,
    pub duration: f64,
    pub clip_len: f64,
    /// Ground-truth windows in seconds.
    pub gt_windows: &'a [[f64; 2]],
    pub gt_saliency: &'a [bool],
    pub prediction: &'a PredictionRecord,
    /// Predicted spans drawn, best first.
    pub top_k: usize,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if c.is_control() => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

pub fn render_svg(p: &PlotInput) -> String {
    let span_w = WIDTH - LEFT - RIGHT;
    let dur = if p.duration > 0.0 { p.duration } else { 1.0 };
    let x = |t: f64| LEFT + span_w * (t / dur).clamp(0.0, 1.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="10" y="22" font-size="14">{} (qid {})</text>"#,
        escape(p.query),
        escape(&p.prediction.qid)
    );

    let gt_y = 50.0;
    let _ = writeln!(s, r#"<text x="10" y="{}">GT</text>"#, gt_y + BAR_H - 3.0);
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{gt_y}" width="{span_w}" height="{BAR_H}" fill="#eeeeee"/>"##
    );
    for w in p.gt_windows {
        let _ = writeln!(
            s,
            r##"<rect class="gt" x="{:.2}" y="{gt_y}" width="{:.2}" height="{BAR_H}" fill="#2e7d32"/>"##,
            x(w[0]),
            (x(w[1]) - x(w[0])).max(0.0)
        );
    }
    for (k, sp) in p.prediction.spans.iter().take(p.top_k).enumerate() {
        let y = gt_y + (k as f64 + 1.0) * (BAR_H + 6.0);
        let _ = writeln!(s, r#"<text x="10" y="{:.1}">Pred {}</text>"#, y + BAR_H - 3.0, k + 1);
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{y:.1}" width="{span_w}" height="{BAR_H}" fill="#eeeeee"/>"##
        );
        let _ = writeln!(
            s,
            r##"<rect class="pred" x="{:.2}" y="{y:.1}" width="{:.2}" height="{BAR_H}" fill="#1565c0" fill-opacity="{:.3}"/>"##,
            x(sp[0]),
            (x(sp[1]) - x(sp[0])).max(0.0),
            sp[2].clamp(0.15, 1.0)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10">{:.1}-{:.1}s ({:.2})</text>"#,
            WIDTH - RIGHT - 120.0,
            y + BAR_H - 3.0,
            sp[0],
            sp[1],
            sp[2]
        );
    }

    let base = CURVE_TOP + CURVE_H;
    let _ = writeln!(s, r#"<text x="10" y="{:.1}">Saliency</text>"#, CURVE_TOP + CURVE_H / 2.0);
    let _ = writeln!(
        s,
        r##"<line x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="#444444"/>"##,
        WIDTH - RIGHT
    );
    let clip_x = |i: usize| x((i as f64 + 0.5) * p.clip_len);
    for (i, &pos) in p.gt_saliency.iter().enumerate() {
        if pos {
            let x0 = x(i as f64 * p.clip_len);
            let x1 = x((i + 1) as f64 * p.clip_len);
            let _ = writeln!(
                s,
                r##"<rect class="gt-clip" x="{x0:.2}" y="{CURVE_TOP}" width="{:.2}" height="{CURVE_H}" fill="#c8e6c9"/>"##,
                (x1 - x0).max(0.0)
            );
        }
    }
    if !p.prediction.saliency.is_empty() {
        let pts: Vec<String> = p
            .prediction
            .saliency
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", clip_x(i), base - CURVE_H * v.clamp(0.0, 1.0)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline class="saliency" points="{}" fill="none" stroke="#d84315" stroke-width="1.5"/>"##,
            pts.join(" ")
        );
    }
    let _ = writeln!(s, r#"<text x="{LEFT}" y="{:.1}">0s</text>"#, base + 16.0);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}s</text>"#,
        WIDTH - RIGHT,
        base + 16.0,
        p.duration
    );
    s.push_str("</svg>\n");
    s
}
