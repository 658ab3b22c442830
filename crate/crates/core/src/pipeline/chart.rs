//! Static SVG grouped bar charts: one group per experiment, one bar per
//! source→target comparison, error bars at ±1 standard error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::metrics::report::write_reports_csv;
use crate::metrics::{AlignmentReport, Metric, SourceTag};

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn comparison_label(src: SourceTag, tgt: SourceTag) -> String {
    format!("{}\u{2192}{}", src.short(), tgt.short())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

/// Renders the reports of one metric. Returns `None` when there are none.
pub fn render_svg(reports: &[AlignmentReport], metric: Metric) -> Option<String> {
    let rows: Vec<&AlignmentReport> = reports.iter().filter(|r| r.metric == metric).collect();
    if rows.is_empty() {
        return None;
    }
    let mut groups = Vec::new();
    let mut comps = Vec::new();
    for r in &rows {
        push_unique(&mut groups, r.experiment_id.clone());
        push_unique(&mut comps, (r.source_tag, r.target_tag));
    }

    let lo = rows
        .iter()
        .map(|r| r.mean - r.stderr)
        .fold(0.0f64, f64::min)
        .floor();
    let hi = rows.iter().map(|r| r.mean + r.stderr).fold(1.0f64, f64::max);
    let (left, top, plot_h, bottom) = (60.0, 40.0, 260.0, 70.0);
    let bar_w = 22.0;
    let group_w = bar_w * comps.len() as f64 + 30.0;
    let plot_w = group_w * groups.len() as f64;
    let width = left + plot_w + 20.0;
    let height = top + plot_h + bottom;
    let y = |v: f64| top + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        metric.as_str()
    );
    let ticks = 5;
    for t in 0..=ticks {
        let v = lo + (hi - lo) * t as f64 / ticks as f64;
        let ty = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{ty:.2}" x2="{:.2}" y2="{ty:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            left + plot_w,
            left - 6.0,
            ty + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + plot_h
    );

    for (gi, g) in groups.iter().enumerate() {
        let gx = left + gi as f64 * group_w + 15.0;
        for (ci, &(src, tgt)) in comps.iter().enumerate() {
            let Some(r) = rows
                .iter()
                .find(|r| &r.experiment_id == g && r.source_tag == src && r.target_tag == tgt)
            else {
                continue;
            };
            let x = gx + ci as f64 * bar_w;
            let (y0, y1) = (y(0.0f64.max(lo)), y(r.mean));
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} {}: {:.4} ± {:.4}</title></rect>"#,
                y0.min(y1),
                bar_w - 2.0,
                (y0 - y1).abs(),
                PALETTE[ci % PALETTE.len()],
                escape(g),
                comparison_label(src, tgt),
                r.mean,
                r.stderr
            );
            let cx = x + (bar_w - 2.0) / 2.0;
            let (ea, eb) = (y(r.mean - r.stderr), y(r.mean + r.stderr));
            let _ = writeln!(
                s,
                r#"<path d="M{cx:.2} {ea:.2}V{eb:.2}M{:.2} {ea:.2}H{:.2}M{:.2} {eb:.2}H{:.2}" stroke="black" fill="none"/>"#,
                cx - 4.0,
                cx + 4.0,
                cx - 4.0,
                cx + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            gx + bar_w * comps.len() as f64 / 2.0,
            top + plot_h + 16.0,
            escape(g)
        );
    }

    for (ci, &(src, tgt)) in comps.iter().enumerate() {
        let lx = left + (ci % 3) as f64 * 110.0;
        let ly = top + plot_h + 34.0 + (ci / 3) as f64 * 16.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{}" y="{ly}">{}</text>"#,
            ly - 9.0,
            PALETTE[ci % PALETTE.len()],
            lx + 14.0,
            comparison_label(src, tgt)
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Writes `alignment.csv` plus one `alignment_<metric>.svg` per metric that
/// has reports. Returns the paths written.
pub fn emit_report(reports: &[AlignmentReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("alignment.csv");
    write_reports_csv(reports, fs::File::create(&csv_path)?)?;
    let mut written = vec![csv_path];
    for metric in Metric::ALL {
        match render_svg(reports, metric) {
            Some(svg) => {
                let path = out_dir.join(format!("alignment_{}.svg", metric.as_str()));
                fs::write(&path, svg)?;
                written.push(path);
            }
            None => log::info!("no {metric} reports; skipping its chart"),
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::report::read_reports_csv;

    fn report(id: &str, metric: Metric, src: SourceTag, tgt: SourceTag, scores: Vec<f64>) -> AlignmentReport {
        let n = scores.len();
        AlignmentReport::new(metric, src, tgt, scores, vec![None; n], (0, 0)).with_experiment(id)
    }

    #[test]
    fn one_report_one_bar() {
        let r = vec![report("N8", Metric::SoftMatch, SourceTag::Neurons, SourceTag::Neurons, vec![0.4, 0.5])];
        let svg = render_svg(&r, Metric::SoftMatch).unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 2); // bar + legend swatch
        assert_eq!(svg.matches("<title>").count(), 1);
        assert!(svg.contains("Neuron\u{2192}Neuron"));
        assert!(render_svg(&r, Metric::Ridge).is_none());
    }

    #[test]
    fn every_report_has_a_bar_and_csv_row() {
        let reports = vec![
            report("N16", Metric::SoftMatch, SourceTag::Neurons, SourceTag::Neurons, vec![0.3, 0.35]),
            report("N16", Metric::SoftMatch, SourceTag::SaeLatents, SourceTag::SaeLatents, vec![0.8, 0.82]),
            report("N32", Metric::SoftMatch, SourceTag::SaeLatents, SourceTag::SaeLatents, vec![-0.1, 0.9]),
        ];
        let dir = tempfile::tempdir().unwrap();
        let written = emit_report(&reports, dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        assert!(!dir.path().join("alignment_ridge.svg").exists());
        let svg = fs::read_to_string(dir.path().join("alignment_soft_match.svg")).unwrap();
        assert_eq!(svg.matches("<title>").count(), 3);
        let back = read_reports_csv(fs::File::open(dir.path().join("alignment.csv")).unwrap()).unwrap();
        assert_eq!(back, reports);
    }
}
