//! Null-packet service insertion and the matching extractor.
//!
//! A single pass over the input substitutes null packets with a new data
//! service — PMT at ≥ 1 Hz, then chunked private sections — while rewriting
//! every PAT in place to announce the added program. Every non-null packet
//! outside the PAT PID is copied byte-identically at its original position,
//! so total bitrate, packet timing, and every PCR are untouched.
//!
//! Chunk wire format (one private section per chunk, big-endian):
//! table_id 0x80, then a body of version byte 0x01, message_id u32,
//! chunk_index u32, chunk_count u32, total_length u32, and up to 1000
//! payload bytes. message_id is the CRC32-MPEG of the whole message, so the
//! extractor can both group repeats and verify reassembly.

use crate::analyzer::{peek_pcr, MuxReport};
use crate::crc::crc32_mpeg;
use crate::psi::{
    assemble_sections, bump_version, parse_pat, parse_pmt, sectionize, serialize_pat,
    serialize_pmt, EsEntry, Pat, PatEntry, Pmt, Section, SectionAssembler,
    STREAM_TYPE_PRIVATE_SECTIONS, TABLE_ID_PAT,
};
use crate::ts::{parse_packet, sync_scan, Pcr, Pid, BODY_LEN, PACKET_LEN};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// Private-section table_id carrying data chunks.
pub const TABLE_ID_DATA: u8 = 0x80;
/// Leading byte of every chunk section body.
pub const CHUNK_FORMAT_VERSION: u8 = 0x01;
/// Payload bytes per chunk; keeps each section within six packets.
pub const CHUNK_PAYLOAD_MAX: usize = 1000;
/// Default fraction of null bandwidth left untouched.
pub const DEFAULT_RESERVE: f64 = 0.2;

const CHUNK_HEADER_LEN: usize = 17; // version byte + four u32 fields
/// Packet cadence assumed for the 1 Hz PMT clock when the input stream
/// carries no usable PCR pair (38 Mbps, the common satellite multiplex).
const FALLBACK_RATE: f64 = 38_000_000.0;
/// Verification-span cap when the stream rate cannot be derived.
const SPAN_CAP: usize = 200_000;

#[derive(Debug, Error, PartialEq)]
pub enum InsertError {
    #[error("input is not a sync-locked transport stream")]
    BadStream,
    #[error("no PAT found in the leading verification span")]
    MissingPat,
    #[error("input PAT spans multiple sections or packets")]
    MultiSectionPat,
    #[error("regenerated PAT with {programs} programs exceeds one packet")]
    PatTooLarge { programs: usize },
    #[error("PID {pid} is already in use by the input stream")]
    PidConflict { pid: Pid },
    #[error("program_number {0} already present in the input PAT")]
    ProgramConflict(u16),
    #[error("reserve fraction must be in [0, 1), got {0}")]
    BadReserve(f64),
    #[error("data_pid and pmt_pid must be distinct, not 0x0000 or 0x1FFF")]
    BadConfigPids,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InsertionConfig {
    /// Program number announced in the rewritten PAT.
    pub new_program_number: u16,
    /// PID carrying the chunk sections.
    pub data_pid: Pid,
    /// PID carrying the new service's PMT.
    pub pmt_pid: Pid,
    /// Fraction of null bandwidth to leave as nulls, in [0, 1).
    pub reserve_fraction: f64,
    /// Display name for reports; not emitted into the stream.
    pub service_label: String,
}

impl InsertionConfig {
    fn validate(&self) -> Result<(), InsertError> {
        if !(self.reserve_fraction >= 0.0 && self.reserve_fraction < 1.0) {
            return Err(InsertError::BadReserve(self.reserve_fraction));
        }
        let bad = |p: Pid| p == Pid::PAT || p == Pid::NULL;
        if self.data_pid == self.pmt_pid || bad(self.data_pid) || bad(self.pmt_pid) {
            return Err(InsertError::BadConfigPids);
        }
        Ok(())
    }
}

/// How an insertion run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InsertionStatus {
    /// Whole payload carried; PMT announced.
    Complete,
    /// Stream ended (or reserve throttled) before the payload finished.
    PayloadTruncated,
    /// No null packet could be substituted, so the service was never sent.
    NoCapacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionReport {
    pub input_packets: u64,
    pub null_packets_seen: u64,
    pub packets_substituted: u64,
    pub pat_packets_rewritten: u64,
    /// Payload bits delivered over the stream duration.
    pub achieved_data_rate: f64,
    /// Null fraction remaining in the output.
    pub residual_null_fraction: f64,
    pub status: InsertionStatus,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("no insertable capacity at this null fraction and reserve")]
    NoCapacity,
    #[error("reserve fraction must be in [0, 1), got {0}")]
    BadReserve(f64),
}

/// Usable data bandwidth in a measured stream: the null bandwidth kept
/// after the reserve, minus the 1 Hz PMT repetition cost.
pub fn plan_insertion(report: &MuxReport, reserve_fraction: f64) -> Result<f64, PlanError> {
    if !(reserve_fraction >= 0.0 && reserve_fraction < 1.0) {
        return Err(PlanError::BadReserve(reserve_fraction));
    }
    let pmt_overhead = (PACKET_LEN * 8) as f64; // one PMT packet per second
    let estimate =
        report.null_fraction * report.total_bitrate * (1.0 - reserve_fraction) - pmt_overhead;
    if estimate <= 0.0 {
        return Err(PlanError::NoCapacity);
    }
    Ok(estimate)
}

/// Splits a payload into chunk sections ready for the data PID.
pub fn chunk_message(payload: &[u8]) -> Vec<Section> {
    let message_id = crc32_mpeg(payload);
    let chunk_count = payload.len().div_ceil(CHUNK_PAYLOAD_MAX).max(1) as u32;
    let mut sections = Vec::with_capacity(chunk_count as usize);
    for index in 0..chunk_count {
        let start = index as usize * CHUNK_PAYLOAD_MAX;
        let end = (start + CHUNK_PAYLOAD_MAX).min(payload.len());
        let mut body = Vec::with_capacity(CHUNK_HEADER_LEN + (end - start));
        body.push(CHUNK_FORMAT_VERSION);
        body.extend_from_slice(&message_id.to_be_bytes());
        body.extend_from_slice(&index.to_be_bytes());
        body.extend_from_slice(&chunk_count.to_be_bytes());
        body.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        body.extend_from_slice(&payload[start..end]);
        let section = Section::new(TABLE_ID_DATA, (index & 0xFFFF) as u16, 0, body)
            .expect("chunk section within private length limit");
        sections.push(section);
    }
    sections
}

/// One parsed chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub message_id: u32,
    pub chunk_index: u32,
    pub chunk_count: u32,
    pub total_length: u32,
    pub payload: Vec<u8>,
}

/// Decodes a chunk section; `None` when the section is not in this format.
pub fn parse_chunk(section: &Section) -> Option<Chunk> {
    if section.table_id != TABLE_ID_DATA {
        return None;
    }
    let b = &section.body;
    if b.len() < CHUNK_HEADER_LEN || b[0] != CHUNK_FORMAT_VERSION {
        return None;
    }
    let field = |i: usize| u32::from_be_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
    let chunk = Chunk {
        message_id: field(1),
        chunk_index: field(5),
        chunk_count: field(9),
        total_length: field(13),
        payload: b[CHUNK_HEADER_LEN..].to_vec(),
    };
    if chunk.chunk_index >= chunk.chunk_count {
        return None;
    }
    Some(chunk)
}

/// Everything observed during the verification span.
struct SpanInfo {
    pat: Pat,
    pat_single_packet: bool,
    declared_pids: BTreeSet<Pid>,
    rate: Option<f64>,
}

fn scan_span(body: &[u8], n: usize) -> Result<SpanInfo, InsertError> {
    let mut pat_asm = SectionAssembler::new();
    let mut pat: Option<(Pat, bool)> = None;
    let mut pmt_asms: BTreeMap<Pid, SectionAssembler> = BTreeMap::new();
    let mut pmts: BTreeMap<u16, Pmt> = BTreeMap::new();
    let mut declared: BTreeSet<Pid> = BTreeSet::new();

    let mut pcr_pid: Option<Pid> = None;
    let mut prev_pcr: Option<Pcr> = None;
    let mut ticks: i64 = 0;
    let mut first_idx = 0usize;
    let mut pcr_count = 0usize;
    let mut rate: Option<f64> = None;

    let mut limit = n.min(SPAN_CAP);
    let mut i = 0;
    while i < limit {
        let chunk = &body[i * PACKET_LEN..(i + 1) * PACKET_LEN];
        if rate.is_none() {
            if let Some((pid, pcr)) = peek_pcr(chunk) {
                if pcr_pid.is_none() {
                    pcr_pid = Some(pid);
                }
                if pcr_pid == Some(pid) {
                    if let Some(prev) = prev_pcr {
                        ticks += pcr.ticks_since(prev);
                    } else {
                        first_idx = i;
                    }
                    prev_pcr = Some(pcr);
                    pcr_count += 1;
                    if pcr_count >= 2 && ticks > 0 {
                        let bits = ((i - first_idx) * PACKET_LEN * 8) as f64;
                        let r = bits * Pcr::HZ as f64 / ticks as f64;
                        rate = Some(r);
                        // trim the span to one second now that we know the rate
                        let second = (r / (PACKET_LEN * 8) as f64).ceil() as usize;
                        limit = limit.min(second.max(i + 1));
                    }
                }
            }
        }
        let pid = match crate::ts::peek_pid(chunk) {
            Some(p) => p,
            None => {
                i += 1;
                continue;
            }
        };
        let is_pmt_pid = pmt_asms.contains_key(&pid);
        if pid == Pid::PAT || is_pmt_pid {
            if let Ok(packet) = parse_packet(chunk) {
                let mut sections = Vec::new();
                if pid == Pid::PAT {
                    pat_asm.push(&packet, &mut sections);
                    for s in sections {
                        if s.table_id != TABLE_ID_PAT {
                            continue;
                        }
                        if s.last_section_number > 0 {
                            return Err(InsertError::MultiSectionPat);
                        }
                        // single-packet check: pointer byte + section must fit
                        let fits = 1 + s.serialized_len() <= BODY_LEN;
                        if let Ok(parsed) = parse_pat(&s) {
                            for e in parsed.programs() {
                                declared.insert(e.pid);
                                pmt_asms.entry(e.pid).or_insert_with(SectionAssembler::new);
                            }
                            pat = Some((parsed, fits));
                        }
                    }
                } else {
                    pmt_asms
                        .get_mut(&pid)
                        .expect("tracked PMT PID")
                        .push(&packet, &mut sections);
                    for s in sections {
                        if let Ok(pmt) = parse_pmt(&s) {
                            declared.insert(pmt.pcr_pid);
                            for es in &pmt.streams {
                                declared.insert(es.pid);
                            }
                            pmts.insert(pmt.program_number, pmt);
                        }
                    }
                }
            }
        }
        i += 1;
    }

    let Some((pat, pat_single_packet)) = pat else {
        return Err(InsertError::MissingPat);
    };
    declared.remove(&Pid::NULL); // "no PCR" marker, not a real stream
    Ok(SpanInfo {
        pat,
        pat_single_packet,
        declared_pids: declared,
        rate,
    })
}

/// Pre-serialized 184-byte PAT body (pointer + section + stuffing) that is
/// stamped with each original packet's continuity counter.
fn pat_body(pat: &Pat) -> Result<[u8; BODY_LEN], InsertError> {
    let section = serialize_pat(pat).map_err(|_| InsertError::PatTooLarge {
        programs: pat.programs().count(),
    })?;
    let bytes = section.serialize();
    if 1 + bytes.len() > BODY_LEN {
        return Err(InsertError::PatTooLarge {
            programs: pat.programs().count(),
        });
    }
    let mut body = [0xFFu8; BODY_LEN];
    body[0] = 0; // pointer_field
    body[1..1 + bytes.len()].copy_from_slice(&bytes);
    Ok(body)
}

/// Serializes packets of one section into raw bytes, advancing `cc`.
fn section_packets(section: &Section, pid: Pid, cc: &mut u8) -> VecDeque<[u8; PACKET_LEN]> {
    let packets = sectionize(section, pid, *cc);
    *cc = (*cc + packets.len() as u8) & 0x0F;
    packets
        .iter()
        .map(|p| p.serialize().expect("sectionized packet within size"))
        .collect()
}

/// Replaces null packets with a new data service and rewrites the PAT.
///
/// The output has exactly one packet per input packet; any bytes before
/// sync lock and any trailing partial packet are copied verbatim, so the
/// output length always equals the input length.
pub fn insert(
    input: &[u8],
    config: &InsertionConfig,
    payload: &[u8],
) -> Result<(Vec<u8>, InsertionReport), InsertError> {
    config.validate()?;
    let offset = sync_scan(input).map_err(|_| InsertError::BadStream)?;
    let body = &input[offset..];
    let n = body.len() / PACKET_LEN;
    if n == 0 {
        return Err(InsertError::BadStream);
    }

    let span = scan_span(body, n)?;
    if !span.pat_single_packet {
        return Err(InsertError::MultiSectionPat);
    }
    if span.pat.contains_program(config.new_program_number) {
        return Err(InsertError::ProgramConflict(config.new_program_number));
    }
    for pid in [config.data_pid, config.pmt_pid] {
        if pid == Pid::SDT || span.declared_pids.contains(&pid) {
            return Err(InsertError::PidConflict { pid });
        }
    }

    let mut new_pat = span.pat.clone();
    new_pat.version = bump_version(new_pat.version);
    new_pat.entries.push(PatEntry {
        program_number: config.new_program_number,
        pid: config.pmt_pid,
    });
    let pat_payload = pat_body(&new_pat)?;

    let pmt = Pmt {
        program_number: config.new_program_number,
        version: 0,
        pcr_pid: Pid::NULL, // data-only service, no clock
        program_info: Vec::new(),
        streams: vec![EsEntry {
            stream_type: STREAM_TYPE_PRIVATE_SECTIONS,
            pid: config.data_pid,
            es_info: Vec::new(),
        }],
    };
    let pmt_section = serialize_pmt(&pmt).expect("one-stream PMT is tiny");

    let rate = span.rate.unwrap_or(FALLBACK_RATE);
    let packets_per_second = (rate / (PACKET_LEN * 8) as f64).ceil() as usize;

    let chunks = if payload.is_empty() {
        Vec::new()
    } else {
        chunk_message(payload)
    };
    let mut chunk_iter = chunks.iter();
    let mut pending: VecDeque<[u8; PACKET_LEN]> = VecDeque::new();
    let mut pending_chunk_bytes = 0usize;
    let mut data_cc: u8 = 0;
    let mut pmt_cc: u8 = 0;
    let mut delivered_bytes = 0u64;
    let mut payload_done = payload.is_empty();

    let mut out = Vec::with_capacity(input.len());
    out.extend_from_slice(&input[..offset]);

    let mut nulls_seen = 0u64;
    let mut substituted = 0u64;
    let mut pat_rewritten = 0u64;
    let mut pmt_sent_at: Option<usize> = None;
    let keep = 1.0 - config.reserve_fraction;

    for i in 0..n {
        let chunk = &body[i * PACKET_LEN..(i + 1) * PACKET_LEN];
        let Some(pid) = crate::ts::peek_pid(chunk) else {
            out.extend_from_slice(chunk); // mid-stream corruption passes through
            continue;
        };
        if pid == config.data_pid || pid == config.pmt_pid {
            return Err(InsertError::PidConflict { pid });
        }
        if pid == Pid::PAT {
            let pusi = chunk[1] & 0x40 != 0;
            if pusi {
                let mut packet = [0u8; PACKET_LEN];
                packet[0] = crate::ts::SYNC_BYTE;
                packet[1] = 0x40; // payload_unit_start, PID 0x0000
                packet[2] = 0x00;
                packet[3] = 0x10 | (chunk[3] & 0x0F); // payload only, original cc
                packet[4..].copy_from_slice(&pat_payload);
                out.extend_from_slice(&packet);
                pat_rewritten += 1;
            } else if chunk[3] & 0x10 != 0 {
                // payload-bearing continuation: the input PAT spans packets
                return Err(InsertError::MultiSectionPat);
            } else {
                out.extend_from_slice(chunk);
            }
            continue;
        }
        if pid != Pid::NULL {
            out.extend_from_slice(chunk);
            continue;
        }

        nulls_seen += 1;
        let pmt_due = match pmt_sent_at {
            None => true,
            Some(at) => i - at >= packets_per_second,
        };
        if pending.is_empty() && !payload_done {
            if let Some(section) = chunk_iter.next() {
                pending = section_packets(section, config.data_pid, &mut data_cc);
                pending_chunk_bytes = section.body.len() - CHUNK_HEADER_LEN;
            } else {
                payload_done = true;
            }
        }
        let have_data = !pending.is_empty();
        let throttled =
            (substituted + 1) as f64 > keep * nulls_seen as f64 + 1.0;
        if throttled || (!pmt_due && !have_data) {
            out.extend_from_slice(chunk);
            continue;
        }
        if pmt_due {
            let mut packets = section_packets(&pmt_section, config.pmt_pid, &mut pmt_cc);
            let packet = packets.pop_front().expect("PMT section fits one packet");
            debug_assert!(packets.is_empty());
            out.extend_from_slice(&packet);
            pmt_sent_at = Some(i);
        } else {
            let packet = pending.pop_front().expect("checked non-empty");
            out.extend_from_slice(&packet);
            if pending.is_empty() {
                delivered_bytes += pending_chunk_bytes as u64;
            }
        }
        substituted += 1;
    }
    out.extend_from_slice(&body[n * PACKET_LEN..]);

    let duration = n as f64 * (PACKET_LEN * 8) as f64 / rate;
    let all_sent = payload_done && pending.is_empty() && chunk_iter.next().is_none();
    let status = if substituted == 0 {
        InsertionStatus::NoCapacity
    } else if !all_sent || (!payload.is_empty() && delivered_bytes < payload.len() as u64) {
        InsertionStatus::PayloadTruncated
    } else {
        InsertionStatus::Complete
    };
    let report = InsertionReport {
        input_packets: n as u64,
        null_packets_seen: nulls_seen,
        packets_substituted: substituted,
        pat_packets_rewritten: pat_rewritten,
        achieved_data_rate: delivered_bytes as f64 * 8.0 / duration,
        residual_null_fraction: (nulls_seen - substituted) as f64 / n as f64,
        status,
    };
    Ok((out, report))
}

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("stream carries no data sections on that PID")]
    NoData,
    #[error("{} of {} chunks missing", report.missing.len(), report.chunk_count)]
    Incomplete {
        /// Received chunk payloads concatenated in index order.
        partial: Vec<u8>,
        report: ExtractReport,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub message_id: u32,
    pub chunk_count: u32,
    pub chunks_received: u32,
    /// Chunk indices never seen intact.
    pub missing: Vec<u32>,
    pub duplicate_chunks: u64,
    /// Sections dropped by the assembler for CRC failure.
    pub crc_failures: u64,
    pub total_length: u32,
    /// Reassembled payload matches message_id and total_length.
    pub checksum_ok: bool,
}

/// Recovers the message carried on `data_pid`.
///
/// Chunks are CRC-validated by section assembly, deduplicated by
/// (message_id, chunk_index) and concatenated in index order. When several
/// message_ids are interleaved, the first one seen is extracted.
pub fn extract(stream: &[u8], data_pid: Pid) -> Result<(Vec<u8>, ExtractReport), ExtractError> {
    let Ok(offset) = sync_scan(stream) else {
        return Err(ExtractError::NoData);
    };
    let body = &stream[offset..];
    let mut packets = Vec::new();
    for chunk in body.chunks_exact(PACKET_LEN) {
        if crate::ts::peek_pid(chunk) == Some(data_pid) {
            if let Ok(p) = parse_packet(chunk) {
                packets.push(p);
            }
        }
    }
    if packets.is_empty() {
        return Err(ExtractError::NoData);
    }
    let assembled = assemble_sections(&packets);

    let mut message_id: Option<u32> = None;
    let mut chunk_count = 0u32;
    let mut total_length = 0u32;
    let mut received: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
    let mut duplicates = 0u64;
    for section in &assembled.sections {
        let Some(chunk) = parse_chunk(section) else {
            continue;
        };
        match message_id {
            None => {
                message_id = Some(chunk.message_id);
                chunk_count = chunk.chunk_count;
                total_length = chunk.total_length;
            }
            Some(id) if id != chunk.message_id => continue,
            _ => {}
        }
        if chunk.chunk_count != chunk_count || chunk.total_length != total_length {
            continue; // inconsistent repeat; ignore
        }
        if received.contains_key(&chunk.chunk_index) {
            duplicates += 1;
        } else {
            received.insert(chunk.chunk_index, chunk.payload);
        }
    }
    let Some(message_id) = message_id else {
        return Err(ExtractError::NoData);
    };

    let missing: Vec<u32> = (0..chunk_count).filter(|i| !received.contains_key(i)).collect();
    let payload: Vec<u8> = received.into_values().flatten().collect();
    let checksum_ok = missing.is_empty()
        && payload.len() as u32 == total_length
        && crc32_mpeg(&payload) == message_id;
    let report = ExtractReport {
        message_id,
        chunk_count,
        chunks_received: chunk_count - missing.len() as u32,
        missing: missing.clone(),
        duplicate_chunks: duplicates,
        crc_failures: assembled.crc_errors,
        total_length,
        checksum_ok,
    };
    if missing.is_empty() {
        Ok((payload, report))
    } else {
        Err(ExtractError::Incomplete {
            partial: payload,
            report,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statmux::{
        EncoderModel, MuxConfig, RateMode, DEFAULT_PCR_INTERVAL, DEFAULT_PSI_INTERVAL,
    };
    use crate::ts::{make_null_packet, TsPacket};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_config() -> InsertionConfig {
        InsertionConfig {
            new_program_number: 900,
            data_pid: Pid::new(0x0900).unwrap(),
            pmt_pid: Pid::new(0x0901).unwrap(),
            reserve_fraction: 0.0,
            service_label: "test data".into(),
        }
    }

    fn half_null_stream(seconds: f64) -> Vec<u8> {
        let config = MuxConfig {
            channel_rate: 20_000_000,
            gop_duration: 0.5,
            services: vec![EncoderModel {
                service_id: 1,
                mode: RateMode::Cbr,
                min_rate: 10_000_000,
                max_rate: 10_000_000,
                complexity_trace: vec![1.0],
                pid: Pid::new(0x100).unwrap(),
            }],
            psi_interval: DEFAULT_PSI_INTERVAL,
            pcr_interval: DEFAULT_PCR_INTERVAL,
            seed: 11,
        };
        crate::statmux::generate_stream(&config, seconds).unwrap()
    }

    #[test]
    fn chunking_round_trips_through_sections() {
        let payload: Vec<u8> = (0..2500u32).map(|i| (i * 7) as u8).collect();
        let sections = chunk_message(&payload);
        assert_eq!(sections.len(), 3);
        let mut rebuilt = Vec::new();
        for (i, s) in sections.iter().enumerate() {
            let chunk = parse_chunk(s).unwrap();
            assert_eq!(chunk.chunk_index, i as u32);
            assert_eq!(chunk.chunk_count, 3);
            assert_eq!(chunk.total_length, 2500);
            assert_eq!(chunk.message_id, crc32_mpeg(&payload));
            rebuilt.extend_from_slice(&chunk.payload);
        }
        assert_eq!(rebuilt, payload);
    }

    #[test]
    fn insert_then_extract_is_identity() {
        let stream = half_null_stream(3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let payload: Vec<u8> = (0..300_000).map(|_| rng.gen()).collect();
        let (out, report) = insert(&stream, &test_config(), &payload).unwrap();
        assert_eq!(out.len(), stream.len());
        assert_eq!(report.status, InsertionStatus::Complete);
        let (back, ereport) = extract(&out, test_config().data_pid).unwrap();
        assert_eq!(back, payload);
        assert!(ereport.checksum_ok);
        assert_eq!(ereport.crc_failures, 0);
        assert_eq!(ereport.missing, Vec::<u32>::new());
    }

    #[test]
    fn transparency_for_untouched_pids() {
        let stream = half_null_stream(2.0);
        let payload = vec![0x5A; 100_000];
        let config = test_config();
        let (out, _) = insert(&stream, &config, &payload).unwrap();
        assert_eq!(out.len(), stream.len());
        let skip = [Pid::PAT, Pid::NULL, config.data_pid, config.pmt_pid];
        let mut changed_positions = 0usize;
        for (a, b) in stream.chunks_exact(PACKET_LEN).zip(out.chunks_exact(PACKET_LEN)) {
            let pid = crate::ts::peek_pid(a).unwrap();
            if skip.contains(&pid) {
                if a != b {
                    changed_positions += 1;
                }
                continue;
            }
            assert_eq!(a, b, "pid {pid} modified");
        }
        assert!(changed_positions > 0, "insertion replaced nothing");
    }

    #[test]
    fn pcr_values_and_offsets_preserved() {
        let stream = half_null_stream(2.0);
        let (out, _) = insert(&stream, &test_config(), &[0xAA; 50_000]).unwrap();
        let pcrs = |s: &[u8]| -> Vec<(usize, Pid, Pcr)> {
            s.chunks_exact(PACKET_LEN)
                .enumerate()
                .filter_map(|(i, c)| peek_pcr(c).map(|(pid, pcr)| (i, pid, pcr)))
                .collect()
        };
        assert_eq!(pcrs(&stream), pcrs(&out));
    }

    #[test]
    fn pat_gains_the_program_and_bumps_version() {
        let stream = half_null_stream(1.0);
        let config = test_config();
        let (out, report) = insert(&stream, &config, b"hi").unwrap();
        assert!(report.pat_packets_rewritten >= 9);

        let before = first_pat(&stream);
        let after = first_pat(&out);
        assert_eq!(after.version, bump_version(before.version));
        assert_eq!(after.programs().count(), before.programs().count() + 1);
        assert!(after.contains_program(config.new_program_number));
        for e in before.programs() {
            assert!(after.programs().any(|x| x == e));
        }
    }

    fn first_pat(stream: &[u8]) -> Pat {
        let packets: Vec<_> = stream
            .chunks_exact(PACKET_LEN)
            .filter(|c| crate::ts::peek_pid(c) == Some(Pid::PAT))
            .filter_map(|c| parse_packet(c).ok())
            .collect();
        let assembled = assemble_sections(&packets);
        assert_eq!(assembled.crc_errors, 0, "rewritten PAT must CRC-validate");
        parse_pat(&assembled.sections[0]).unwrap()
    }

    #[test]
    fn new_pmt_announces_data_stream() {
        let stream = half_null_stream(1.0);
        let config = test_config();
        let (out, _) = insert(&stream, &config, b"payload").unwrap();
        let packets: Vec<_> = out
            .chunks_exact(PACKET_LEN)
            .filter(|c| crate::ts::peek_pid(c) == Some(config.pmt_pid))
            .filter_map(|c| parse_packet(c).ok())
            .collect();
        assert!(!packets.is_empty(), "no PMT emitted for the new service");
        let assembled = assemble_sections(&packets);
        let pmt = parse_pmt(&assembled.sections[0]).unwrap();
        assert_eq!(pmt.program_number, config.new_program_number);
        assert_eq!(pmt.pcr_pid, Pid::NULL);
        assert_eq!(pmt.streams.len(), 1);
        assert_eq!(pmt.streams[0].pid, config.data_pid);
        assert_eq!(pmt.streams[0].stream_type, STREAM_TYPE_PRIVATE_SECTIONS);
    }

    #[test]
    fn reserve_throttle_leaves_nulls() {
        let stream = half_null_stream(2.0);
        let mut config = test_config();
        config.reserve_fraction = 0.5;
        let big_payload = vec![0xCC; 4_000_000]; // far beyond reserved capacity
        let (out, report) = insert(&stream, &config, &big_payload).unwrap();
        assert_eq!(report.status, InsertionStatus::PayloadTruncated);
        assert!(
            report.packets_substituted as f64
                <= report.null_packets_seen as f64 * 0.5 + 1.0
        );
        let residual = crate::analyzer::null_fraction(&out).unwrap();
        let input_nulls = crate::analyzer::null_fraction(&stream).unwrap();
        assert!(residual >= 0.5 * input_nulls - 0.01);
    }

    #[test]
    fn zero_reserve_uses_all_nulls_while_payload_lasts() {
        let stream = half_null_stream(1.0);
        let (out, report) = insert(&stream, &test_config(), &vec![1u8; 10_000_000]).unwrap();
        assert_eq!(report.status, InsertionStatus::PayloadTruncated);
        // every null was converted (ratio 1.0 allowed at rho = 0)
        assert_eq!(report.packets_substituted, report.null_packets_seen);
        assert_eq!(crate::analyzer::null_fraction(&out).unwrap(), 0.0);
    }

    #[test]
    fn no_nulls_means_no_capacity() {
        // PAT + a steady elementary PID, not a single null packet
        let pat = Pat {
            transport_stream_id: 1,
            version: 3,
            entries: vec![PatEntry {
                program_number: 1,
                pid: Pid::new(0x1000).unwrap(),
            }],
        };
        let pat_section = serialize_pat(&pat).unwrap();
        let mut stream = Vec::new();
        for burst in 0..4u8 {
            for p in sectionize(&pat_section, Pid::PAT, burst) {
                stream.extend_from_slice(&p.serialize().unwrap());
            }
            for i in 0..500u32 {
                let p = TsPacket::payload_only(
                    Pid::new(0x100).unwrap(),
                    false,
                    i as u8,
                    vec![0x42; 184],
                );
                stream.extend_from_slice(&p.serialize().unwrap());
            }
        }
        assert_eq!(crate::analyzer::null_fraction(&stream).unwrap(), 0.0);
        let (out, report) = insert(&stream, &test_config(), b"x").unwrap();
        assert_eq!(report.status, InsertionStatus::NoCapacity);
        assert_eq!(report.packets_substituted, 0);
        assert_eq!(report.pat_packets_rewritten, 4);
        // output differs from input only in PAT packets
        for (a, b) in stream.chunks_exact(PACKET_LEN).zip(out.chunks_exact(PACKET_LEN)) {
            if crate::ts::peek_pid(a) != Some(Pid::PAT) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn pid_conflicts_rejected() {
        let stream = half_null_stream(1.0);
        let mut config = test_config();
        config.data_pid = Pid::new(0x100).unwrap(); // service PID in use
        assert_eq!(
            insert(&stream, &config, b"x").unwrap_err(),
            InsertError::PidConflict {
                pid: Pid::new(0x100).unwrap()
            }
        );

        let mut config = test_config();
        config.pmt_pid = Pid::new(0x1000).unwrap(); // existing PMT PID
        assert_eq!(
            insert(&stream, &config, b"x").unwrap_err(),
            InsertError::PidConflict {
                pid: Pid::new(0x1000).unwrap()
            }
        );

        let mut config = test_config();
        config.new_program_number = 1; // existing program
        assert_eq!(
            insert(&stream, &config, b"x").unwrap_err(),
            InsertError::ProgramConflict(1)
        );
    }

    #[test]
    fn config_validation() {
        let stream = half_null_stream(1.0);
        let mut config = test_config();
        config.reserve_fraction = 1.0;
        assert_eq!(
            insert(&stream, &config, b"").unwrap_err(),
            InsertError::BadReserve(1.0)
        );
        let mut config = test_config();
        config.pmt_pid = config.data_pid;
        assert_eq!(
            insert(&stream, &config, b"").unwrap_err(),
            InsertError::BadConfigPids
        );
    }

    #[test]
    fn missing_pat_rejected() {
        let stream: Vec<u8> = (0..2000u32)
            .flat_map(|i| make_null_packet(i as u8).serialize().unwrap())
            .collect();
        assert_eq!(
            insert(&stream, &test_config(), b"x").unwrap_err(),
            InsertError::MissingPat
        );
    }

    #[test]
    fn corrupted_chunk_reported_incomplete() {
        let stream = half_null_stream(2.0);
        let config = test_config();
        let payload: Vec<u8> = (0..40_000u32).map(|i| i as u8).collect();
        let (mut out, report) = insert(&stream, &config, &payload).unwrap();
        assert_eq!(report.status, InsertionStatus::Complete);

        // flip one byte inside the middle data packet's payload
        let data_positions: Vec<usize> = out
            .chunks_exact(PACKET_LEN)
            .enumerate()
            .filter(|(_, c)| crate::ts::peek_pid(c) == Some(config.data_pid))
            .map(|(i, _)| i)
            .collect();
        let victim = data_positions[data_positions.len() / 2];
        out[victim * PACKET_LEN + 100] ^= 0xFF;

        let err = extract(&out, config.data_pid).unwrap_err();
        let ExtractError::Incomplete { partial, report } = err else {
            panic!("expected Incomplete");
        };
        assert_eq!(report.missing.len(), 1);
        assert!(report.crc_failures >= 1);
        assert!(!report.checksum_ok);
        assert!(partial.len() < payload.len());
    }

    #[test]
    fn stream_without_data_pid_is_nodata() {
        let stream = half_null_stream(1.0);
        assert!(matches!(
            extract(&stream, Pid::new(0x0777).unwrap()),
            Err(ExtractError::NoData)
        ));
    }

    #[test]
    fn plan_matches_arithmetic() {
        let stream = half_null_stream(2.0);
        let report = crate::analyzer::measure(
            &stream,
            crate::analyzer::ClockSource::NominalRate(20_000_000),
            0.5,
            false,
        )
        .unwrap();
        let estimate = plan_insertion(&report, 0.2).unwrap();
        let expected =
            report.null_fraction * 20_000_000.0 * 0.8 - (PACKET_LEN * 8) as f64;
        assert!((estimate - expected).abs() < 1e-6);
        let mut empty = report.clone();
        empty.null_fraction = 0.0;
        assert_eq!(plan_insertion(&empty, 0.2), Err(PlanError::NoCapacity));
        assert_eq!(plan_insertion(&report, 1.0), Err(PlanError::BadReserve(1.0)));
    }

    #[test]
    fn pmt_repeats_at_one_hertz() {
        let stream = half_null_stream(5.0);
        let config = test_config();
        let (out, _) = insert(&stream, &config, &vec![7u8; 1_000_000]).unwrap();
        let pmt_count = out
            .chunks_exact(PACKET_LEN)
            .filter(|c| crate::ts::peek_pid(c) == Some(config.pmt_pid))
            .count();
        assert!(pmt_count >= 5, "only {pmt_count} PMTs over 5 s");
        assert!(pmt_count <= 7, "{pmt_count} PMTs over 5 s");
    }

    #[test]
    fn reanalysis_shows_lower_null_fraction_and_unchanged_services() {
        let stream = half_null_stream(2.0);
        let (out, _) = insert(&stream, &test_config(), &vec![3u8; 500_000]).unwrap();
        let clock = crate::analyzer::ClockSource::NominalRate(20_000_000);
        let before = crate::analyzer::measure(&stream, clock, 0.5, false).unwrap();
        let after = crate::analyzer::measure(&out, clock, 0.5, false).unwrap();
        assert!(after.null_fraction < before.null_fraction);
        let pid = Pid::new(0x100).unwrap();
        let a = before.pid(pid).unwrap();
        let b = after.pid(pid).unwrap();
        assert_eq!(a.packet_count, b.packet_count);
        assert_eq!(a.series, b.series);
    }

    #[test]
    fn random_payload_sizes_round_trip() {
        let stream = half_null_stream(2.0);
        let config = test_config();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let len = rng.gen_range(0..50_000);
            let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let (out, report) = insert(&stream, &config, &payload).unwrap();
            assert_eq!(out.len(), stream.len());
            if payload.is_empty() {
                assert!(matches!(
                    extract(&out, config.data_pid),
                    Err(ExtractError::NoData)
                ));
                continue;
            }
            assert_eq!(report.status, InsertionStatus::Complete);
            let (back, _) = extract(&out, config.data_pid).unwrap();
            assert_eq!(back, payload);
        }
    }
}
