use anyhow::{anyhow, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use dvbmux::analyzer::{
    capacity_summary, export_report, measure, ClockSource, MuxReport, ReportFormat, Verdict,
};
use dvbmux::inserter::{insert, InsertionConfig, InsertionStatus};
use dvbmux::scenario::{format_rate, load_scenario, parse_rate};
use dvbmux::statmux::generate_into;
use dvbmux::ts::Pid;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dvbmux",
    version,
    about = "Transport-stream multiplex toolkit: measure bitrates, synthesize multiplexes, repack null bandwidth"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Text,
    Csv,
    Json,
    Svg,
}

#[derive(Clone, Copy, Debug)]
enum ClockArg {
    Pcr,
    Rate(u64),
}

fn parse_clock(s: &str) -> Result<ClockArg, String> {
    if s.eq_ignore_ascii_case("pcr") {
        return Ok(ClockArg::Pcr);
    }
    match parse_rate(s) {
        Ok(0) | Err(_) => Err(format!(
            "expected \"pcr\" or a rate like \"38M\", got {s:?}"
        )),
        Ok(r) => Ok(ClockArg::Rate(r)),
    }
}

fn parse_rate_arg(s: &str) -> Result<u64, String> {
    match parse_rate(s) {
        Ok(0) => Err("rate must be > 0".into()),
        Ok(r) => Ok(r),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_pid_arg(s: &str) -> Result<u16, String> {
    let value = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u16::from_str_radix(hex, 16)
    } else {
        s.parse()
    }
    .map_err(|_| format!("bad PID {s:?}"))?;
    if Pid::new(value).is_err() || value == 0x1FFF || value == 0x0000 {
        return Err(format!("PID {value:#06x} is reserved or out of range"));
    }
    Ok(value)
}

fn parse_window(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad window {s:?}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("window must be a positive number of seconds".into())
    }
}

fn parse_duration(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad duration {s:?}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("duration must be a positive number of seconds".into())
    }
}

fn parse_reserve(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad reserve {s:?}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err("reserve must be in [0, 1)".into())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Measure per-PID and per-program bitrates, null share, and whether the
    /// multiplex looks statistically multiplexed
    Analyze {
        /// Transport stream file, or "-" for standard input
        input: String,
        /// Window length in seconds
        #[arg(long, value_parser = parse_window, default_value = "0.5")]
        window: f64,
        /// Report cumulative running means instead of instantaneous windows
        #[arg(long)]
        averaging: bool,
        /// Time base: "pcr" to derive the rate from PCRs, or a fixed rate
        /// like "38M"
        #[arg(long, value_parser = parse_clock, default_value = "pcr")]
        clock: ClockArg,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
        /// Channel capacity for an oversubscription summary (e.g. "38M")
        #[arg(long, value_parser = parse_rate_arg)]
        capacity: Option<u64>,
        /// Report destination, or "-" for standard output
        #[arg(long, short, default_value = "-")]
        output: String,
    },
    /// Synthesize a multiplex from a TOML scenario
    Generate {
        scenario: PathBuf,
        /// Output stream, or "-" for standard output
        output: String,
        /// Stream length in seconds
        #[arg(long, value_parser = parse_duration, default_value = "10")]
        duration: f64,
        /// Override the scenario's payload seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replace null packets with a new data service carrying a payload file
    Insert {
        /// Transport stream file, or "-" for standard input
        input: String,
        /// Output stream, or "-" for standard output
        output: String,
        /// File whose bytes are carried by the new service
        #[arg(long)]
        payload: PathBuf,
        /// PID for the data sections (decimal or 0x-hex)
        #[arg(long, value_parser = parse_pid_arg, default_value = "0x0900")]
        data_pid: u16,
        /// PID for the new service's PMT
        #[arg(long, value_parser = parse_pid_arg, default_value = "0x0901")]
        pmt_pid: u16,
        /// Program number announced in the rewritten PAT
        #[arg(long, default_value_t = 900)]
        program: u16,
        /// Fraction of null bandwidth left untouched
        #[arg(long, value_parser = parse_reserve, default_value = "0.2")]
        reserve: f64,
        /// Service name shown in reports
        #[arg(long, default_value = "inserted data")]
        label: String,
    },
    /// Recover a payload inserted on a data PID
    Extract {
        /// Transport stream file, or "-" for standard input
        input: String,
        /// Payload destination, or "-" for standard output
        output: String,
        #[arg(long, value_parser = parse_pid_arg, default_value = "0x0900")]
        data_pid: u16,
    },
    /// Dump PAT/PMT contents, service names, and per-PID packet counts
    Inspect {
        /// Transport stream file, or "-" for standard input
        input: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Analyze {
            input,
            window,
            averaging,
            clock,
            format,
            capacity,
            output,
        } => cmd_analyze(&input, window, averaging, clock, format, capacity, &output),
        Command::Generate {
            scenario,
            output,
            duration,
            seed,
        } => cmd_generate(&scenario, &output, duration, seed),
        Command::Insert {
            input,
            output,
            payload,
            data_pid,
            pmt_pid,
            program,
            reserve,
            label,
        } => cmd_insert(
            &input, &output, &payload, data_pid, pmt_pid, program, reserve, label,
        ),
        Command::Extract {
            input,
            output,
            data_pid,
        } => cmd_extract(&input, &output, data_pid),
        Command::Inspect { input } => cmd_inspect(&input),
    }
}

fn read_input(path: &str) -> Result<Vec<u8>> {
    if path == "-" {
        let mut buf = Vec::new();
        io::stdin()
            .lock()
            .read_to_end(&mut buf)
            .context("reading standard input")?;
        Ok(buf)
    } else {
        fs::read(path).with_context(|| format!("reading {path}"))
    }
}

/// Writes via a temporary file and rename so failures never leave a partial
/// artifact; "-" streams to standard output.
fn write_output(path: &str, bytes: &[u8]) -> Result<()> {
    if path == "-" {
        io::stdout()
            .lock()
            .write_all(bytes)
            .context("writing standard output")?;
        return Ok(());
    }
    let target = Path::new(path);
    let dir = match target.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating file in {dir:?}"))?;
    tmp.write_all(bytes).context("writing output")?;
    tmp.persist(target)
        .with_context(|| format!("replacing {path}"))?;
    Ok(())
}

fn cmd_analyze(
    input: &str,
    window: f64,
    averaging: bool,
    clock: ClockArg,
    format: OutputFormat,
    capacity: Option<u64>,
    output: &str,
) -> Result<()> {
    let stream = read_input(input)?;
    let source = match clock {
        ClockArg::Pcr => ClockSource::PcrDerived(None),
        ClockArg::Rate(r) => ClockSource::NominalRate(r),
    };
    let report = measure(&stream, source, window, averaging)?;
    let artifact = match format {
        OutputFormat::Text => render_text_report(&report, capacity).into_bytes(),
        OutputFormat::Csv => export_report(&report, ReportFormat::Csv),
        OutputFormat::Json => export_report(&report, ReportFormat::Json),
        OutputFormat::Svg => export_report(&report, ReportFormat::Svg),
    };
    write_output(output, &artifact)?;
    if capacity.is_some() && format != OutputFormat::Text {
        // keep structured artifacts clean; the summary goes to stderr
        eprint!("{}", render_capacity(&report, capacity.unwrap()));
    }
    Ok(())
}

fn mbps(bps: f64) -> String {
    format!("{:.3} Mbps", bps / 1e6)
}

fn render_text_report(report: &MuxReport, capacity: Option<u64>) -> String {
    let mut out = String::new();
    let verdict = match report.verdict {
        Verdict::Static => "static (all video rates constant)",
        Verdict::Statistical => "statistical (video rates vary together)",
        Verdict::Unknown => "unknown (too few programs or windows)",
    };
    let _ = writeln!(out, "total bitrate:  {}", mbps(report.total_bitrate));
    let _ = writeln!(
        out,
        "duration:       {:.2} s  ({} windows of {} s{})",
        report.duration,
        report.windows(),
        report.window_length,
        if report.averaging { ", averaged" } else { "" }
    );
    let _ = writeln!(
        out,
        "null packets:   {:.2}% of the multiplex",
        report.null_fraction * 100.0
    );
    let _ = writeln!(out, "multiplexing:   {verdict}");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<8} {:>8} {:>10} {:>12} {:>12} {:>12}",
        "PID", "program", "packets", "mean", "min", "max"
    );
    for p in &report.pids {
        let program = p
            .program
            .map(|n| n.to_string())
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>10} {:>12} {:>12} {:>12}",
            format!("{:#06x}", p.pid.value()),
            program,
            p.packet_count,
            format!("{:.3}M", p.mean / 1e6),
            format!("{:.3}M", p.min / 1e6),
            format!("{:.3}M", p.max / 1e6),
        );
    }
    if !report.programs.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "programs:");
        for prog in &report.programs {
            let pids: Vec<String> = prog
                .pids
                .iter()
                .map(|p| format!("{:#06x}", p.value()))
                .collect();
            let name = prog
                .name
                .as_deref()
                .map(|n| format!(" \"{n}\""))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "  {}{}  pmt {:#06x}  pcr {:#06x}  streams [{}]",
                prog.program_number,
                name,
                prog.pmt_pid.value(),
                prog.pcr_pid.value(),
                pids.join(", ")
            );
        }
    }
    if let Some(cap) = capacity {
        let _ = writeln!(out);
        out.push_str(&render_capacity(report, cap));
    }
    out
}

fn render_capacity(report: &MuxReport, capacity: u64) -> String {
    let summary = capacity_summary(report, capacity as f64);
    let mut out = String::new();
    let _ = writeln!(out, "capacity check against {}:", format_rate(capacity));
    let _ = writeln!(
        out,
        "  {:<10} {:>12} {:>12}",
        "program", "peak", "trough"
    );
    for row in &summary.rows {
        let label = row
            .name
            .clone()
            .unwrap_or_else(|| row.program_number.to_string());
        let _ = writeln!(
            out,
            "  {:<10} {:>12} {:>12}",
            label,
            mbps(row.max),
            mbps(row.min)
        );
    }
    let _ = writeln!(
        out,
        "  {:<10} {:>12} {:>12}",
        "sum",
        mbps(summary.total_max),
        mbps(summary.total_min)
    );
    let _ = writeln!(
        out,
        "  headroom at peak {}, at trough {}",
        mbps(summary.diff_at_max),
        mbps(summary.diff_at_min)
    );
    out
}

fn cmd_generate(scenario: &Path, output: &str, duration: f64, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(scenario)
        .with_context(|| format!("reading scenario {}", scenario.display()))?;
    let mut config = load_scenario(&text)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if output == "-" {
        let stdout = io::stdout();
        let mut writer = io::BufWriter::new(stdout.lock());
        generate_into(&config, duration, &mut writer)?;
        writer.flush().context("flushing standard output")?;
        return Ok(());
    }
    let target = Path::new(output);
    let dir = match target.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating file in {dir:?}"))?;
    {
        let mut writer = io::BufWriter::new(tmp.as_file());
        generate_into(&config, duration, &mut writer)?;
        writer.flush().context("writing stream")?;
    }
    tmp.persist(target)
        .with_context(|| format!("replacing {output}"))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_insert(
    input: &str,
    output: &str,
    payload_path: &Path,
    data_pid: u16,
    pmt_pid: u16,
    program: u16,
    reserve: f64,
    label: String,
) -> Result<()> {
    let stream = read_input(input)?;
    let payload = fs::read(payload_path)
        .with_context(|| format!("reading payload {}", payload_path.display()))?;
    let config = InsertionConfig {
        new_program_number: program,
        data_pid: Pid::new(data_pid).expect("validated by flag parser"),
        pmt_pid: Pid::new(pmt_pid).expect("validated by flag parser"),
        reserve_fraction: reserve,
        service_label: label,
    };
    let (out, report) = insert(&stream, &config, &payload)?;
    write_output(output, &out)?;

    let status = match report.status {
        InsertionStatus::Complete => "complete",
        InsertionStatus::PayloadTruncated => "payload truncated: stream ended first",
        InsertionStatus::NoCapacity => "no capacity: nothing substituted",
    };
    eprintln!(
        "{}: {} of {} null packets substituted, {} PAT packets rewritten",
        config.service_label,
        report.packets_substituted,
        report.null_packets_seen,
        report.pat_packets_rewritten
    );
    eprintln!(
        "data rate {}, residual nulls {:.2}%, status: {status}",
        mbps(report.achieved_data_rate),
        report.residual_null_fraction * 100.0
    );
    if report.status == InsertionStatus::PayloadTruncated {
        return Err(anyhow!("payload did not fit the stream's null capacity"));
    }
    Ok(())
}

fn cmd_extract(input: &str, output: &str, data_pid: u16) -> Result<()> {
    let stream = read_input(input)?;
    let pid = Pid::new(data_pid).expect("validated by flag parser");
    match dvbmux::inserter::extract(&stream, pid) {
        Ok((payload, report)) => {
            write_output(output, &payload)?;
            eprintln!(
                "recovered {} bytes in {} chunks (message {:#010x}, checksum {})",
                payload.len(),
                report.chunk_count,
                report.message_id,
                if report.checksum_ok { "ok" } else { "MISMATCH" }
            );
            Ok(())
        }
        Err(dvbmux::inserter::ExtractError::Incomplete { partial, report }) => {
            write_output(output, &partial)?;
            eprintln!(
                "incomplete: {} of {} chunks missing ({} CRC failures); gap map: {:?}",
                report.missing.len(),
                report.chunk_count,
                report.crc_failures,
                report.missing
            );
            Err(anyhow!("payload incomplete"))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_inspect(input: &str) -> Result<()> {
    let stream = read_input(input)?;
    // the nominal rate only scales window series, which inspect ignores
    let report = measure(&stream, ClockSource::NominalRate(1_000_000), 1e9, false)?;
    let mut out = String::new();
    let total: u64 = report.pids.iter().map(|p| p.packet_count).sum();
    let _ = writeln!(out, "{total} packets, {} distinct PIDs", report.pids.len());
    if report.programs.is_empty() {
        eprintln!("warning: no PAT found; listing PID counts only");
    } else {
        let _ = writeln!(out, "programs:");
        for prog in &report.programs {
            let name = prog
                .name
                .as_deref()
                .map(|n| format!(" \"{n}\""))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "  {}{}  pmt {:#06x}  pcr {:#06x}",
                prog.program_number,
                name,
                prog.pmt_pid.value(),
                prog.pcr_pid.value()
            );
            for pid in &prog.pids {
                let _ = writeln!(out, "    stream {:#06x}", pid.value());
            }
        }
    }
    let _ = writeln!(out, "PID packet counts:");
    for p in &report.pids {
        let _ = writeln!(
            out,
            "  {:#06x}  {:>10}  ({:.2}%)",
            p.pid.value(),
            p.packet_count,
            p.packet_count as f64 / total as f64 * 100.0
        );
    }
    print!("{out}");
    Ok(())
}
