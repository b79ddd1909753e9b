use std::fmt::Write;

use super::{Mode, MultiSeedReport};

fn column(mode: Mode) -> &'static str {
    match mode {
        Mode::AllAtOnce => "all-at-once",
        Mode::StepRandom => "step-by-step (random)",
        Mode::StepMax => "step-by-step (maximum)",
    }
}

fn section(mode: Mode) -> &'static str {
    match mode {
        Mode::AllAtOnce => "all-at-once action generation",
        Mode::StepRandom => "step-by-step planning (random)",
        Mode::StepMax => "step-by-step planning (maximum)",
    }
}

type Metric = fn(&MultiSeedReport) -> f64;

fn metric_rows(out: &mut String, cols: &[&MultiSeedReport]) {
    let rows: [(&str, Metric); 3] = [
        ("mean precision", |r| r.median_precision),
        ("mean recall", |r| r.median_recall),
        ("F1 score", |r| r.median_f1),
    ];
    for (name, get) in rows {
        let cells: Vec<String> = cols.iter().map(|r| format!("{:.3}", get(r))).collect();
        let _ = writeln!(out, "| {name} | {} |", cells.join(" | "));
    }
}

/// Modes side by side at one threshold. Values are medians over seeds.
pub fn table1_markdown(reports: &[MultiSeedReport]) -> String {
    let mut out = String::new();
    let heads: Vec<&str> = reports.iter().map(|r| column(r.mode)).collect();
    let _ = writeln!(out, "| metrics | {} |", heads.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(reports.len()));
    metric_rows(&mut out, &reports.iter().collect::<Vec<_>>());
    out
}

/// One block per mode with thresholds as columns, in input order.
pub fn table2_markdown(reports: &[MultiSeedReport]) -> String {
    let mut modes: Vec<Mode> = Vec::new();
    for r in reports {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    let mut out = String::new();
    for (k, mode) in modes.iter().enumerate() {
        let cols: Vec<&MultiSeedReport> = reports.iter().filter(|r| r.mode == *mode).collect();
        if k > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "*{}*\n", section(*mode));
        let heads: Vec<String> = cols
            .iter()
            .map(|r| format!("t = {:.3}", r.threshold))
            .collect();
        let _ = writeln!(out, "| metrics | {} |", heads.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(cols.len()));
        metric_rows(&mut out, &cols);
    }
    out
}
