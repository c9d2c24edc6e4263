//! Stacked-area SVG rendering of a measured multiplex: one band per
//! program, one for unreferenced PIDs, and the null filler on top.

use crate::analyzer::MuxReport;
use crate::ts::Pid;
use std::fmt::Write;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 40.0;

const PALETTE: [&str; 9] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f",
];
const NULL_COLOR: &str = "#bab0ac";
const OTHER_COLOR: &str = "#79706e";

struct Band {
    label: String,
    color: String,
    series: Vec<f64>,
}

/// Renders the report as a stacked-area chart, bottom-up: each program's
/// PIDs summed into one band, then everything unreferenced, then nulls.
pub fn render_stacked_area(report: &MuxReport) -> String {
    let windows = report.windows();
    let bands = collect_bands(report, windows);
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    svg.push('\n');
    let _ = writeln!(
        svg,
        r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##
    );

    if windows < 2 || bands.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">not enough windows to chart</text>"#,
            WIDTH / 2.0,
            HEIGHT / 2.0
        );
        svg.push_str("</svg>\n");
        return svg;
    }

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let peak = peak_total(&bands, windows).max(1.0);
    let x = |w: usize| MARGIN_LEFT + plot_w * w as f64 / (windows - 1) as f64;
    let y = |bps: f64| MARGIN_TOP + plot_h * (1.0 - (bps / peak).min(1.0));

    // Stacked fills, bottom band first.
    let mut lower = vec![0.0f64; windows];
    for band in &bands {
        let upper: Vec<f64> = lower
            .iter()
            .zip(band.series.iter())
            .map(|(l, v)| l + v)
            .collect();
        let mut d = String::new();
        for (w, &u) in upper.iter().enumerate() {
            let cmd = if w == 0 { 'M' } else { 'L' };
            let _ = write!(d, "{}{:.2},{:.2} ", cmd, x(w), y(u));
        }
        for (w, &l) in lower.iter().enumerate().rev() {
            let _ = write!(d, "L{:.2},{:.2} ", x(w), y(l));
        }
        d.push('Z');
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="{}" fill-opacity="0.85" stroke="none"><title>{}</title></path>"#,
            d.trim_end(),
            band.color,
            xml_escape(&band.label)
        );
        lower = upper;
    }

    // Axes.
    let _ = writeln!(
        svg,
        r##"<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="#333"/><line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="#333"/>"##,
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = MARGIN_TOP + plot_h,
        r = MARGIN_LEFT + plot_w
    );
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let bps = peak * frac;
        let yy = y(bps);
        let _ = writeln!(
            svg,
            r##"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end" fill="#333">{:.1} Mbps</text>"##,
            MARGIN_LEFT - 6.0,
            yy + 4.0,
            bps / 1e6
        );
    }
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let t = frac * (windows - 1) as f64 * report.window_length;
        let _ = writeln!(
            svg,
            r##"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle" fill="#333">{:.1} s</text>"##,
            MARGIN_LEFT + plot_w * frac,
            MARGIN_TOP + plot_h + 16.0,
            t
        );
    }

    // Legend, top-left of the plot.
    for (i, band) in bands.iter().rev().enumerate() {
        let ly = MARGIN_TOP + 8.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r##"<rect x="{lx}" y="{ry:.2}" width="12" height="12" fill="{color}"/><text x="{tx}" y="{ty:.2}" font-family="sans-serif" font-size="12" fill="#111">{label}</text>"##,
            lx = MARGIN_LEFT + 8.0,
            ry = ly - 10.0,
            color = band.color,
            tx = MARGIN_LEFT + 24.0,
            ty = ly,
            label = xml_escape(&band.label)
        );
    }

    svg.push_str("</svg>\n");
    svg
}

fn collect_bands(report: &MuxReport, windows: usize) -> Vec<Band> {
    if windows == 0 {
        return Vec::new();
    }
    let mut bands = Vec::new();
    for (i, prog) in report.programs.iter().enumerate() {
        let mut series = vec![0.0; windows];
        accumulate(report, &mut series, |p| p.program == Some(prog.program_number));
        let label = match &prog.name {
            Some(name) => format!("{} ({})", name, prog.program_number),
            None => format!("program {}", prog.program_number),
        };
        bands.push(Band {
            label,
            color: PALETTE[i % PALETTE.len()].to_string(),
            series,
        });
    }
    let mut other = vec![0.0; windows];
    accumulate(report, &mut other, |p| {
        p.program.is_none() && p.pid != Pid::NULL
    });
    if other.iter().any(|&v| v > 0.0) {
        bands.push(Band {
            label: "other".to_string(),
            color: OTHER_COLOR.to_string(),
            series: other,
        });
    }
    let mut nulls = vec![0.0; windows];
    accumulate(report, &mut nulls, |p| p.pid == Pid::NULL);
    if nulls.iter().any(|&v| v > 0.0) {
        bands.push(Band {
            label: "null filler".to_string(),
            color: NULL_COLOR.to_string(),
            series: nulls,
        });
    }
    bands
}

fn accumulate(
    report: &MuxReport,
    into: &mut [f64],
    select: impl Fn(&crate::analyzer::PidStats) -> bool,
) {
    for p in report.pids.iter().filter(|p| select(p)) {
        for (slot, &v) in into.iter_mut().zip(p.series.iter()) {
            *slot += v;
        }
    }
}

fn peak_total(bands: &[Band], windows: usize) -> f64 {
    (0..windows)
        .map(|w| bands.iter().map(|b| b.series[w]).sum::<f64>())
        .fold(0.0, f64::max)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::{MuxReport, PidStats, ProgramStats, Verdict};

    fn pid_stats(pid: u16, program: Option<u16>, series: Vec<f64>) -> PidStats {
        let mean = series.iter().sum::<f64>() / series.len().max(1) as f64;
        PidStats {
            pid: Pid::new(pid).unwrap(),
            packet_count: series.len() as u64,
            byte_count: series.len() as u64 * 188,
            min: series.iter().cloned().fold(f64::INFINITY, f64::min),
            max: series.iter().cloned().fold(0.0, f64::max),
            mean,
            series,
            program,
        }
    }

    fn two_program_report() -> MuxReport {
        MuxReport {
            total_bitrate: 10_000_000.0,
            duration: 2.0,
            window_length: 0.5,
            averaging: false,
            pids: vec![
                pid_stats(0x100, Some(1), vec![3e6, 4e6, 3.5e6, 3e6]),
                pid_stats(0x200, Some(2), vec![2e6, 1e6, 1.5e6, 2e6]),
                pid_stats(0x0000, None, vec![1e5, 1e5, 1e5, 1e5]),
                pid_stats(0x1FFF, None, vec![4.9e6, 4.9e6, 4.9e6, 4.9e6]),
            ],
            programs: vec![
                ProgramStats {
                    program_number: 1,
                    pmt_pid: Pid::new(0x1000).unwrap(),
                    pcr_pid: Pid::new(0x100).unwrap(),
                    pids: vec![Pid::new(0x100).unwrap()],
                    name: Some("News <One>".to_string()),
                },
                ProgramStats {
                    program_number: 2,
                    pmt_pid: Pid::new(0x1001).unwrap(),
                    pcr_pid: Pid::new(0x200).unwrap(),
                    pids: vec![Pid::new(0x200).unwrap()],
                    name: None,
                },
            ],
            null_fraction: 0.49,
            verdict: Verdict::Unknown,
        }
    }

    #[test]
    fn band_per_program_plus_other_and_null() {
        let svg = render_stacked_area(&two_program_report());
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path d=").count(), 4); // 2 programs + other + null
        assert!(svg.contains("null filler"));
        assert!(svg.contains("program 2"));
    }

    #[test]
    fn names_are_escaped() {
        let svg = render_stacked_area(&two_program_report());
        assert!(svg.contains("News &lt;One&gt;"));
        assert!(!svg.contains("News <One>"));
    }

    #[test]
    fn no_nan_or_inf_leaks_into_the_markup() {
        let svg = render_stacked_area(&two_program_report());
        assert!(!svg.contains("NaN"));
        assert!(!svg.contains("inf"));
    }

    #[test]
    fn degenerate_reports_still_render() {
        let mut report = two_program_report();
        report.pids.clear();
        report.programs.clear();
        let svg = render_stacked_area(&report);
        assert!(svg.starts_with("<svg "));
        assert!(svg.contains("not enough windows"));
        assert_eq!(svg.matches("<path d=").count(), 0);
    }

    #[test]
    fn single_window_report_renders_placeholder() {
        let mut report = two_program_report();
        for p in &mut report.pids {
            p.series.truncate(1);
        }
        let svg = render_stacked_area(&report);
        assert!(svg.contains("not enough windows"));
    }
}
