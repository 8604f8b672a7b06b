//! Deterministic report rendering: JSON for machines, markdown for humans,
//! and a static SVG chart of test WER per system.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{HarnessError, ResultTable};

/// Writes `report.json`, `report.md`, and `plots/test-wer.svg` under `out`.
/// Rendering is pure over the table, so reruns produce identical bytes.
pub fn write_reports(out: &Path, table: &ResultTable) -> Result<(), HarnessError> {
    super::write_json_pretty(&out.join("report.json"), table)?;
    fs::write(out.join("report.md"), render_markdown(table))?;
    let plots = out.join("plots");
    fs::create_dir_all(&plots)?;
    fs::write(plots.join("test-wer.svg"), render_svg(table))?;
    Ok(())
}

fn wer(x: f64) -> String {
    if x.is_nan() {
        "n/a".into()
    } else {
        format!("{x:.4}")
    }
}

pub fn render_markdown(table: &ResultTable) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# {}\n", table.experiment);

    md.push_str("## Baseline: uncorrected recognizer\n\n");
    md.push_str("| seed | test WER |\n|---|---|\n");
    for cell in &table.baseline {
        let _ = writeln!(md, "| {} | {} |", cell.seed, wer(cell.test_wer));
    }
    let _ = writeln!(md, "| median | {} |\n", wer(table.baseline_median));

    md.push_str("## Corrected systems\n\n");
    md.push_str("| system | seed | train WER | test WER | run |\n|---|---|---|---|---|\n");
    for row in &table.rows {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} |",
            row.system,
            row.seed,
            wer(row.train_wer),
            wer(row.test_wer),
            row.run_dir
        );
    }
    md.push('\n');

    md.push_str("## Medians over seeds\n\n");
    md.push_str("| system | train WER | test WER |\n|---|---|---|\n");
    for row in &table.medians {
        let _ = writeln!(
            md,
            "| {} | {} | {} |",
            row.system,
            wer(row.train_wer),
            wer(row.test_wer)
        );
    }
    let _ = writeln!(md, "| baseline | — | {} |\n", wer(table.baseline_median));

    md.push_str("## Test-set checksums\n\n");
    md.push_str("| seed | sha256 |\n|---|---|\n");
    for (seed, digest) in &table.test_checksums {
        let _ = writeln!(md, "| {seed} | {digest} |");
    }
    md.push('\n');

    if !table.examples.is_empty() {
        md.push_str("## Example corrections with out-of-domain words\n\n");
        for ex in &table.examples {
            let _ = writeln!(md, "### {}\n", ex.utt_id);
            let _ = writeln!(md, "- input: {}", ex.input);
            let _ = writeln!(md, "- supervised: {}", ex.supervised);
            let _ = writeln!(md, "- unsupervised: {}", ex.unsupervised);
            let _ = writeln!(md, "- reference: {}", ex.reference);
            let _ = writeln!(md, "- flagged: {}\n", ex.flagged.join(", "));
        }
    }
    md
}

/// A bar per system (median test WER) with the baseline drawn as a
/// reference line.
pub fn render_svg(table: &ResultTable) -> String {
    let bars: Vec<(&str, f64)> = table
        .medians
        .iter()
        .map(|m| (m.system.as_str(), m.test_wer))
        .collect();
    let max_val = bars
        .iter()
        .map(|(_, v)| *v)
        .chain(std::iter::once(table.baseline_median))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-6);
    let scale = max_val * 1.2;

    let bar_w = 64;
    let gap = 36;
    let left = 70;
    let bottom = 40;
    let top = 30;
    let plot_h = 240;
    let width = left + bars.len() * (bar_w + gap) + gap;
    let height = top + plot_h + bottom;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(
        svg,
        "  <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">{} — median test WER</text>",
        left,
        xml_escape(&table.experiment)
    );
    // Axes.
    let x0 = left;
    let y0 = top + plot_h;
    let _ = writeln!(
        svg,
        "  <line x1=\"{x0}\" y1=\"{top}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>",
        width - gap
    );
    // Y ticks at quarters of the scale.
    for i in 0..=4 {
        let v = scale * i as f64 / 4.0;
        let y = y0 as f64 - plot_h as f64 * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>",
            x0 - 6,
            y + 4.0,
            v
        );
    }
    // Baseline reference line.
    if table.baseline_median.is_finite() {
        let y = y0 as f64 - plot_h as f64 * table.baseline_median / scale;
        let _ = writeln!(
            svg,
            "  <line x1=\"{x0}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"firebrick\" stroke-dasharray=\"6,4\"/>",
            width - gap
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"firebrick\" text-anchor=\"end\">baseline {:.3}</text>",
            width - gap,
            y - 5.0,
            table.baseline_median
        );
    }
    // Bars.
    for (i, (name, value)) in bars.iter().enumerate() {
        let x = left + gap + i * (bar_w + gap);
        if value.is_finite() {
            let h = plot_h as f64 * value / scale;
            let y = y0 as f64 - h;
            let _ = writeln!(
                svg,
                "  <rect x=\"{x}\" y=\"{y:.1}\" width=\"{bar_w}\" height=\"{h:.1}\" fill=\"steelblue\"/>"
            );
            let _ = writeln!(
                svg,
                "  <text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{:.3}</text>",
                x + bar_w / 2,
                y - 5.0,
                value
            );
        }
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            x + bar_w / 2,
            y0 + 18,
            xml_escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
