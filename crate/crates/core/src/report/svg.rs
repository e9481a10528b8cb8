//! Minimal standalone SVG grouped bar charts with printed value labels.

use std::fmt::Write;

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

const BAR_W: f64 = 18.0;
const GROUP_GAP: f64 = 24.0;
const LEFT: f64 = 60.0;
const TOP: f64 = 50.0;
const PLOT_H: f64 = 260.0;

pub struct Series {
    pub name: String,
    pub values: Vec<Option<f64>>,
    /// Half-length of an error whisker drawn around each value.
    pub whiskers: Option<Vec<Option<f64>>>,
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Bars for every (category, series) pair that has a value; values are
/// printed with three decimals above the bars. The y axis spans `[0, 1]`.
pub fn grouped_bars(title: &str, y_label: &str, categories: &[String], series: &[Series]) -> String {
    let group_w = BAR_W * series.len().max(1) as f64 + GROUP_GAP;
    let plot_w = group_w * categories.len() as f64;
    let width = LEFT + plot_w + 160.0;
    let height = TOP + PLOT_H + 60.0;
    let y_of = |v: f64| TOP + PLOT_H * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text class="title" x="{:.1}" y="24" font-size="16" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text class="axis" transform="translate(16 {:.1}) rotate(-90)" font-size="12" text-anchor="middle">{}</text>"#,
        TOP + PLOT_H / 2.0,
        escape(y_label)
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text class="tick" x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{tick:.2}</text>"##,
            LEFT + plot_w,
            LEFT - 4.0,
            y + 3.0
        );
    }

    for (ci, cat) in categories.iter().enumerate() {
        let gx = LEFT + ci as f64 * group_w + GROUP_GAP / 2.0;
        for (si, ser) in series.iter().enumerate() {
            let Some(v) = ser.values.get(ci).copied().flatten() else {
                continue;
            };
            let x = gx + si as f64 * BAR_W;
            let color = PALETTE[si % PALETTE.len()];
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
                y_of(v),
                BAR_W - 2.0,
                TOP + PLOT_H - y_of(v)
            );
            let whisker = ser.whiskers.as_ref().and_then(|w| w.get(ci).copied().flatten());
            let mut label = format!("{v:.3}");
            let mut label_y = y_of(v) - 4.0;
            if let Some(d) = whisker {
                let cx = x + (BAR_W - 2.0) / 2.0;
                let (hi, lo) = (y_of(v + d), y_of(v - d));
                let _ = writeln!(
                    s,
                    r#"<path d="M{cx:.1} {hi:.1}V{lo:.1}M{:.1} {hi:.1}H{:.1}M{:.1} {lo:.1}H{:.1}" stroke="black" fill="none"/>"#,
                    cx - 4.0,
                    cx + 4.0,
                    cx - 4.0,
                    cx + 4.0
                );
                label = format!("{v:.3} ± {d:.3}");
                label_y = hi - 4.0;
            }
            let lx = x + (BAR_W - 2.0) / 2.0;
            let _ = writeln!(
                s,
                r#"<text class="value" x="{lx:.1}" y="{label_y:.1}" font-size="9" text-anchor="start" transform="rotate(-60 {lx:.1} {label_y:.1})">{label}</text>"#
            );
        }
        let _ = writeln!(
            s,
            r#"<text class="category" x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            gx + BAR_W * series.len() as f64 / 2.0,
            TOP + PLOT_H + 16.0,
            escape(cat)
        );
    }

    for (si, ser) in series.iter().enumerate() {
        let y = TOP + 14.0 * si as f64;
        let x = LEFT + plot_w + 16.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text class="legend" x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            y,
            PALETTE[si % PALETTE.len()],
            x + 14.0,
            y + 9.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
