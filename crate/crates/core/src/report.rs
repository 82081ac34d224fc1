//! CSV tables and static SVG bar charts for evaluation results.

use std::fmt::Write as _;

use crate::eval::{ConfusionMatrix, ErrorDistribution, LevelReport, MetricsReport};
use crate::learner::TrainingHistory;

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn metrics_csv(m: &MetricsReport<f64>) -> String {
    let mut out = String::from("class,support,tp,fp,fn,precision,recall,f1\n");
    for c in &m.per_class {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6},{},{}",
            csv_field(&c.label),
            c.support,
            c.tp,
            c.fp,
            c.fn_,
            c.precision,
            opt(c.recall),
            opt(c.f1)
        );
    }
    let _ = writeln!(
        out,
        "macro,,,,,{:.6},{:.6},{:.6}",
        m.macro_precision, m.macro_recall, m.macro_f1
    );
    let _ = writeln!(out, "accuracy,,,,,,,{:.6}", m.accuracy);
    out
}

/// Rows are actual classes, columns predicted.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("actual\\predicted");
    for l in cm.labels() {
        out.push(',');
        out.push_str(&csv_field(l));
    }
    out.push('\n');
    for (l, row) in cm.labels().iter().zip(cm.rows()) {
        out.push_str(&csv_field(l));
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn distribution_csv(d: &ErrorDistribution<f64>) -> String {
    let mut out = String::from("distance,mass\n");
    for (dist, m) in d.distances() {
        let _ = writeln!(out, "{dist},{m:.6}");
    }
    out
}

pub fn levels_csv(levels: &[LevelReport<f64>]) -> String {
    let mut out = String::from(
        "level,threshold_tons,boundary,positive_label,tp,fp,fn,tn,accuracy,precision,recall,f1,multiclass_accuracy\n",
    );
    for l in levels {
        let m = &l.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{},{},{:.6}",
            l.level.level,
            l.level
                .threshold_tons
                .map_or(String::new(), |t| t.to_string()),
            l.level.boundary,
            csv_field(&l.positive_label),
            m.tp,
            m.fp,
            m.fn_,
            m.tn,
            m.accuracy,
            m.precision,
            opt(m.recall),
            opt(m.f1),
            l.multiclass_accuracy
        );
    }
    out
}

pub fn history_csv(h: &TrainingHistory) -> String {
    let mut out = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy,best\n");
    for e in &h.epochs {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            e.epoch,
            e.train_loss,
            e.train_accuracy,
            e.val_loss,
            e.val_accuracy,
            u8::from(e.epoch == h.best_epoch)
        );
    }
    out
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLOURS: [&str; 4] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759"];

struct Bar {
    label: String,
    value: f64,
    colour: &'static str,
}

/// Vertical bars on a `[0, y_max]` axis with five gridlines.
fn bar_chart(title: &str, y_label: &str, x_label: &str, bars: &[Bar], y_max: f64) -> String {
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let y_of = |v: f64| TOP + plot_h * (1.0 - (v / y_max).clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    for i in 0..=5 {
        let v = y_max * f64::from(i) / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>",
            W - RIGHT
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let slot = plot_w / bars.len().max(1) as f64;
    for (i, b) in bars.iter().enumerate() {
        let x = LEFT + slot * i as f64 + slot * 0.15;
        let y = y_of(b.value);
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{}: {:.4}</title></rect>"#,
            slot * 0.7,
            TOP + plot_h - y,
            b.colour,
            xml_escape(&b.label),
            b.value
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            TOP + plot_h + 16.0,
            xml_escape(&b.label)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        TOP + plot_h,
        W - RIGHT,
        TOP + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#,
        TOP + plot_h
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        H - 14.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        xml_escape(y_label)
    );
    s.push_str("</svg>\n");
    s
}

/// Accuracy, precision, recall and F1 as four bars.
pub fn metrics_svg(title: &str, accuracy: f64, precision: f64, recall: f64, f1: f64) -> String {
    let bars = [
        ("Accuracy", accuracy),
        ("Precision", precision),
        ("Recall", recall),
        ("F1", f1),
    ]
    .into_iter()
    .zip(COLOURS)
    .map(|((label, value), colour)| Bar {
        label: label.into(),
        value,
        colour,
    })
    .collect::<Vec<_>>();
    bar_chart(title, "Score", "Metric", &bars, 1.0)
}

/// Error probability over signed distance from the true class.
pub fn distribution_svg(d: &ErrorDistribution<f64>) -> String {
    let bars: Vec<Bar> = d
        .distances()
        .map(|(dist, &m)| Bar {
            label: dist.to_string(),
            value: m,
            colour: if dist == 0 { COLOURS[2] } else { COLOURS[0] },
        })
        .collect();
    bar_chart(
        "Error distribution",
        "Error probability",
        "Distance from true class",
        &bars,
        1.0,
    )
}

pub fn level_svg(l: &LevelReport<f64>) -> String {
    let m = &l.metrics;
    let title = match l.level.threshold_tons {
        Some(t) => format!("Level {} ({t} t): {}", l.level.level, l.positive_label),
        None => format!("Level {}: {}", l.level.level, l.positive_label),
    };
    metrics_svg(
        &title,
        m.accuracy,
        m.precision,
        m.recall.unwrap_or(0.0),
        m.f1.unwrap_or(0.0),
    )
}
