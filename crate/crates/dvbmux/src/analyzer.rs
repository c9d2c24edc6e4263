//! Multiplex measurement: per-PID bitrate over real-time or averaged
//! windows, program aggregation through PSI, null-packet accounting, and a
//! static-vs-statistical multiplexing verdict.

use crate::psi::{
    parse_pat, parse_pmt, sdt_service_names, SectionAssembler, TABLE_ID_PAT, TABLE_ID_PMT,
    TABLE_ID_SDT,
};
use crate::ts::{parse_packet, sync_scan, Pcr, Pid, TsPacket, PACKET_LEN};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Coefficient-of-variation threshold separating statistically multiplexed
/// video PIDs from constant-rate ones.
pub const CV_THRESHOLD: f64 = 0.10;
/// Default measurement window, seconds.
pub const DEFAULT_WINDOW: f64 = 0.5;
/// Windows required before a multiplexing verdict is attempted.
pub const MIN_VERDICT_WINDOWS: usize = 10;

const PACKET_BITS_F: f64 = (PACKET_LEN * 8) as f64;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyzeError {
    #[error("empty stream")]
    EmptyStream,
    #[error("no transport packet sync found")]
    SyncNotFound,
    #[error("reference PID carries fewer than two PCRs")]
    NoPcr,
    #[error("window length must be positive, got {0}")]
    BadWindow(f64),
    #[error("nominal rate must be > 0")]
    BadClock,
}

/// Where wall time comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockSource {
    /// Derive the total rate from PCR spacing on a reference PID;
    /// `None` picks the first PID observed to carry a PCR.
    PcrDerived(Option<Pid>),
    /// Assume a constant total rate in bits/second.
    NominalRate(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Static,
    Statistical,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidStats {
    pub pid: Pid,
    pub packet_count: u64,
    pub byte_count: u64,
    /// bits/second per complete window, in window order.
    pub series: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Program this PID belongs to (its PMT or an elementary stream).
    pub program: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramStats {
    pub program_number: u16,
    pub pmt_pid: Pid,
    pub pcr_pid: Pid,
    /// Elementary-stream PIDs in PMT order.
    pub pids: Vec<Pid>,
    /// Service name from the SDT, when present.
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuxReport {
    /// Total multiplex rate in bits/second (nominal or PCR-derived).
    pub total_bitrate: f64,
    /// Analyzed span, seconds.
    pub duration: f64,
    pub window_length: f64,
    pub averaging: bool,
    /// Per-PID statistics, ascending by PID.
    pub pids: Vec<PidStats>,
    /// Programs from the latest PAT/PMTs seen.
    pub programs: Vec<ProgramStats>,
    /// Null-PID bytes over total bytes.
    pub null_fraction: f64,
    pub verdict: Verdict,
}

impl MuxReport {
    pub fn pid(&self, pid: Pid) -> Option<&PidStats> {
        self.pids.iter().find(|p| p.pid == pid)
    }

    /// Window count of the measurement.
    pub fn windows(&self) -> usize {
        self.pids.iter().map(|p| p.series.len()).max().unwrap_or(0)
    }
}

/// Fraction of packets on the null PID.
pub fn null_fraction(stream: &[u8]) -> Result<f64, AnalyzeError> {
    let body = locked(stream)?;
    let mut total = 0u64;
    let mut nulls = 0u64;
    for chunk in body.chunks_exact(PACKET_LEN) {
        total += 1;
        if crate::ts::peek_pid(chunk) == Some(Pid::NULL) {
            nulls += 1;
        }
    }
    Ok(nulls as f64 / total as f64)
}

fn locked(stream: &[u8]) -> Result<&[u8], AnalyzeError> {
    if stream.len() < PACKET_LEN {
        return Err(AnalyzeError::EmptyStream);
    }
    let offset = sync_scan(stream).map_err(|_| AnalyzeError::SyncNotFound)?;
    Ok(&stream[offset..])
}

/// Measures per-PID and per-program bitrates over fixed windows.
///
/// Bitrates are (window bytes × 8) / window seconds over complete windows;
/// a trailing partial window is dropped. With `averaging`, each series is
/// replaced by its cumulative running mean; the multiplexing verdict is
/// always formed from the real-time series first.
pub fn measure(
    stream: &[u8],
    clock: ClockSource,
    window: f64,
    averaging: bool,
) -> Result<MuxReport, AnalyzeError> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(AnalyzeError::BadWindow(window));
    }
    let body = locked(stream)?;
    let n = body.len() / PACKET_LEN;
    if n == 0 {
        return Err(AnalyzeError::EmptyStream);
    }

    let rate = match clock {
        ClockSource::NominalRate(0) => return Err(AnalyzeError::BadClock),
        ClockSource::NominalRate(r) => r as f64,
        ClockSource::PcrDerived(reference) => pcr_rate(body, reference)?,
    };

    let packets_per_window = rate * window / PACKET_BITS_F;
    let complete_windows = (n as f64 / packets_per_window).floor() as usize;

    let mut acc: BTreeMap<Pid, PidAcc> = BTreeMap::new();
    let mut psi = PsiTracker::default();

    for (i, chunk) in body.chunks_exact(PACKET_LEN).enumerate() {
        let pid = match crate::ts::peek_pid(chunk) {
            Some(p) => p,
            None => continue, // resync slip; keep counting the rest
        };
        let a = acc.entry(pid).or_insert_with(|| PidAcc::new(complete_windows));
        a.packets += 1;
        let w = (i as f64 / packets_per_window) as usize;
        if w < complete_windows {
            a.windows[w] += 1;
        }
        psi.feed(pid, chunk);
    }

    let pid_to_program = psi.pid_program_map();
    let mut pids: Vec<PidStats> = acc
        .into_iter()
        .map(|(pid, a)| {
            let series: Vec<f64> = a
                .windows
                .iter()
                .map(|&c| c as f64 * PACKET_BITS_F / window)
                .collect();
            let (min, max, mean) = series_stats(&series);
            PidStats {
                pid,
                packet_count: a.packets,
                byte_count: a.packets * PACKET_LEN as u64,
                series,
                min,
                max,
                mean,
                program: pid_to_program.get(&pid).copied(),
            }
        })
        .collect();

    let programs = psi.programs();
    let total_packets: u64 = pids.iter().map(|p| p.packet_count).sum();
    let null_packets = pids
        .iter()
        .find(|p| p.pid == Pid::NULL)
        .map_or(0, |p| p.packet_count);

    let mut report = MuxReport {
        total_bitrate: rate,
        duration: n as f64 * PACKET_BITS_F / rate,
        window_length: window,
        averaging,
        pids: Vec::new(),
        programs,
        null_fraction: null_packets as f64 / total_packets as f64,
        verdict: Verdict::Unknown,
    };
    report.pids = std::mem::take(&mut pids);
    report.verdict = classify_multiplexing(&report);

    if averaging {
        for p in &mut report.pids {
            running_mean_in_place(&mut p.series);
            let (min, max, mean) = series_stats(&p.series);
            p.min = min;
            p.max = max;
            p.mean = mean;
        }
    }
    Ok(report)
}

struct PidAcc {
    packets: u64,
    windows: Vec<u32>,
}

impl PidAcc {
    fn new(windows: usize) -> PidAcc {
        PidAcc {
            packets: 0,
            windows: vec![0; windows],
        }
    }
}

fn series_stats(series: &[f64]) -> (f64, f64, f64) {
    if series.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in series {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    (min, max, sum / series.len() as f64)
}

fn running_mean_in_place(series: &mut [f64]) {
    let mut sum = 0.0;
    for (i, v) in series.iter_mut().enumerate() {
        sum += *v;
        *v = sum / (i + 1) as f64;
    }
}

/// Total stream rate from PCR spacing: bytes between the first and last PCR
/// on the reference PID over the tick distance, wrap-aware.
fn pcr_rate(body: &[u8], reference: Option<Pid>) -> Result<f64, AnalyzeError> {
    let mut chosen = reference;
    let mut first_index = 0u64;
    let mut last_index = 0u64;
    let mut prev: Option<Pcr> = None;
    let mut ticks: i64 = 0;
    let mut count = 0u64;
    for (i, chunk) in body.chunks_exact(PACKET_LEN).enumerate() {
        let Some((pid, pcr)) = peek_pcr(chunk) else {
            continue;
        };
        match chosen {
            Some(p) if p != pid => continue,
            None => chosen = Some(pid),
            _ => {}
        }
        if let Some(prev_pcr) = prev {
            ticks += pcr.ticks_since(prev_pcr);
        } else {
            first_index = i as u64;
        }
        prev = Some(pcr);
        last_index = i as u64;
        count += 1;
    }
    if count < 2 || ticks <= 0 {
        return Err(AnalyzeError::NoPcr);
    }
    let bits = (last_index - first_index) as f64 * PACKET_BITS_F;
    Ok(bits * Pcr::HZ as f64 / ticks as f64)
}

/// Reads (pid, PCR) from a raw packet without allocating.
pub(crate) fn peek_pcr(chunk: &[u8]) -> Option<(Pid, Pcr)> {
    if chunk.len() != PACKET_LEN || chunk[0] != crate::ts::SYNC_BYTE {
        return None;
    }
    if chunk[3] & 0x20 == 0 {
        return None; // no adaptation field
    }
    let af_len = chunk[4] as usize;
    if af_len < 7 || chunk[5] & 0x10 == 0 {
        return None; // too short for a PCR or PCR flag clear
    }
    let b = &chunk[6..12];
    let base = (b[0] as u64) << 25
        | (b[1] as u64) << 17
        | (b[2] as u64) << 9
        | (b[3] as u64) << 1
        | (b[4] as u64) >> 7;
    let ext = ((b[4] as u16) & 0x01) << 8 | b[5] as u16;
    let pid = crate::ts::peek_pid(chunk)?;
    Pcr::new(base, ext).ok().map(|pcr| (pid, pcr))
}

/// Latest PAT/PMT/SDT state accumulated over the stream.
#[derive(Default)]
struct PsiTracker {
    pat_assembler: SectionAssembler,
    pat: Option<crate::psi::Pat>,
    pmt_assemblers: BTreeMap<Pid, SectionAssembler>,
    pmts: BTreeMap<u16, crate::psi::Pmt>,
    sdt_assembler: SectionAssembler,
    names: BTreeMap<u16, String>,
}

impl PsiTracker {
    fn feed(&mut self, pid: Pid, chunk: &[u8]) {
        let interesting = pid == Pid::PAT || pid == Pid::SDT || self.pmt_assemblers.contains_key(&pid);
        if !interesting {
            return;
        }
        let Ok(packet) = parse_packet(chunk) else {
            return;
        };
        if pid == Pid::PAT {
            for section in self.drain(None, &packet) {
                if section.table_id != TABLE_ID_PAT {
                    continue;
                }
                if let Ok(pat) = parse_pat(&section) {
                    for entry in pat.programs() {
                        self.pmt_assemblers.entry(entry.pid).or_default();
                    }
                    self.pat = Some(pat);
                }
            }
        } else if pid == Pid::SDT {
            for section in self.drain(Some(Pid::SDT), &packet) {
                if section.table_id == TABLE_ID_SDT {
                    for (service, name) in sdt_service_names(&section) {
                        self.names.insert(service, name);
                    }
                }
            }
        } else {
            for section in self.drain(Some(pid), &packet) {
                if section.table_id != TABLE_ID_PMT {
                    continue;
                }
                if let Ok(pmt) = parse_pmt(&section) {
                    self.pmts.insert(pmt.program_number, pmt);
                }
            }
        }
    }

    fn drain(&mut self, which: Option<Pid>, packet: &TsPacket) -> Vec<crate::psi::Section> {
        let assembler = match which {
            None => &mut self.pat_assembler,
            Some(Pid::SDT) => &mut self.sdt_assembler,
            Some(pid) => self.pmt_assemblers.get_mut(&pid).expect("tracked PMT PID"),
        };
        let mut sections = Vec::new();
        assembler.push(packet, &mut sections);
        sections
    }

    fn programs(&self) -> Vec<ProgramStats> {
        let Some(pat) = &self.pat else {
            return Vec::new();
        };
        pat.programs()
            .map(|entry| {
                let pmt = self.pmts.get(&entry.program_number);
                ProgramStats {
                    program_number: entry.program_number,
                    pmt_pid: entry.pid,
                    pcr_pid: pmt.map_or(Pid::NULL, |p| p.pcr_pid),
                    pids: pmt.map_or_else(Vec::new, |p| {
                        p.streams.iter().map(|s| s.pid).collect()
                    }),
                    name: self.names.get(&entry.program_number).cloned(),
                }
            })
            .collect()
    }

    fn pid_program_map(&self) -> BTreeMap<Pid, u16> {
        let mut map = BTreeMap::new();
        if let Some(pat) = &self.pat {
            for entry in pat.programs() {
                map.insert(entry.pid, entry.program_number);
            }
        }
        for (&program, pmt) in &self.pmts {
            for s in &pmt.streams {
                map.insert(s.pid, program);
            }
        }
        map
    }
}

/// Static/statistical verdict from the coefficient of variation of each
/// program's highest-rate ("video") PID. Requires ≥ 2 programs and
/// [`MIN_VERDICT_WINDOWS`] windows; mixed results stay Unknown.
pub fn classify_multiplexing(report: &MuxReport) -> Verdict {
    classify_with_threshold(report, CV_THRESHOLD)
}

pub fn classify_with_threshold(report: &MuxReport, tau: f64) -> Verdict {
    if report.windows() < MIN_VERDICT_WINDOWS {
        return Verdict::Unknown;
    }
    let video_pids = video_pids(report);
    if video_pids.len() < 2 {
        return Verdict::Unknown;
    }
    let mut over = 0usize;
    for pid in &video_pids {
        let Some(stats) = report.pid(*pid) else {
            continue;
        };
        if coefficient_of_variation(&stats.series) > tau {
            over += 1;
        }
    }
    if over >= 2 {
        Verdict::Statistical
    } else if over == 0 {
        Verdict::Static
    } else {
        Verdict::Unknown
    }
}

/// Each program's largest-mean-rate elementary PID.
fn video_pids(report: &MuxReport) -> Vec<Pid> {
    report
        .programs
        .iter()
        .filter_map(|prog| {
            prog.pids
                .iter()
                .filter_map(|&pid| report.pid(pid))
                .max_by(|a, b| a.mean.partial_cmp(&b.mean).expect("finite means"))
                .map(|s| s.pid)
        })
        .collect()
}

fn coefficient_of_variation(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    if mean <= 0.0 {
        return 0.0;
    }
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / series.len() as f64;
    var.sqrt() / mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub program_number: u16,
    pub name: Option<String>,
    /// Windowed extremes of the program's video PID, bits/second.
    pub max: f64,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitySummary {
    pub rows: Vec<CapacityRow>,
    pub total_max: f64,
    pub total_min: f64,
    pub capacity: f64,
    /// capacity − total_max: negative when peaks oversubscribe the channel.
    pub diff_at_max: f64,
    /// capacity − total_min: spare room when all services idle.
    pub diff_at_min: f64,
}

/// Per-service windowed extremes against a channel capacity, the
/// oversubscription view: how far peak demand exceeds the channel and how
/// much is spare at the troughs.
pub fn capacity_summary(report: &MuxReport, capacity_bps: f64) -> CapacitySummary {
    let mut rows = Vec::new();
    for prog in &report.programs {
        let video = prog
            .pids
            .iter()
            .filter_map(|&pid| report.pid(pid))
            .max_by(|a, b| a.mean.partial_cmp(&b.mean).expect("finite means"));
        let Some(stats) = video else {
            continue;
        };
        rows.push(CapacityRow {
            program_number: prog.program_number,
            name: prog.name.clone(),
            max: stats.max,
            min: stats.min,
        });
    }
    let total_max: f64 = rows.iter().map(|r| r.max).sum();
    let total_min: f64 = rows.iter().map(|r| r.min).sum();
    CapacitySummary {
        rows,
        total_max,
        total_min,
        capacity: capacity_bps,
        diff_at_max: capacity_bps - total_max,
        diff_at_min: capacity_bps - total_min,
    }
}

/// Report serialization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

/// Renders a report as CSV rows, a JSON document, or an SVG chart.
pub fn export_report(report: &MuxReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Csv => export_csv(report).into_bytes(),
        ReportFormat::Json => {
            serde_json::to_vec_pretty(report).expect("report has no non-finite values")
        }
        ReportFormat::Svg => crate::chart::render_stacked_area(report).into_bytes(),
    }
}

fn export_csv(report: &MuxReport) -> String {
    let mut out = String::from("window_start_s,pid,program,bits_per_second\n");
    let windows = report.windows();
    for w in 0..windows {
        for p in &report.pids {
            let Some(&rate) = p.series.get(w) else {
                continue;
            };
            let program = p.program.map(|n| n.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                w as f64 * report.window_length,
                p.pid.value(),
                program,
                rate
            ));
        }
    }
    out
}
