//! PSI section assembly, parsing, regeneration and packetization
//! (ISO/IEC 13818-1 §2.4.4): PAT and PMT with CRC32-MPEG protection, plus
//! SDT service-name extraction for display.

use crate::crc::{crc32_mpeg, section_crc_ok};
use crate::ts::{Pid, TsPacket, BODY_LEN};
use thiserror::Error;

pub const TABLE_ID_PAT: u8 = 0x00;
pub const TABLE_ID_PMT: u8 = 0x02;
pub const TABLE_ID_SDT: u8 = 0x42;
/// Stuffing byte between/after sections in a packet payload.
pub const STUFFING_BYTE: u8 = 0xFF;

/// section_length limit for PSI tables (PAT/PMT/CAT).
pub const MAX_PSI_SECTION_LENGTH: usize = 1021;
/// section_length limit for private sections.
pub const MAX_PRIVATE_SECTION_LENGTH: usize = 4093;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PsiError {
    #[error("wrong table_id {actual:#04x}, expected {expected:#04x}")]
    WrongTableId { expected: u8, actual: u8 },
    #[error("malformed section body: {0}")]
    MalformedBody(String),
    #[error("section_length {len} exceeds {max}")]
    SectionTooLong { len: usize, max: usize },
    #[error("section truncated")]
    Truncated,
}

/// (version + 1) mod 32, the PSI version bump used after table regeneration.
pub fn bump_version(v: u8) -> u8 {
    (v + 1) & 0x1F
}

/// A PSI/private section. Long-form sections (`section_syntax` set) carry
/// the extended header and a CRC32-MPEG trailer; short-form sections are
/// just `table_id`, length and body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub table_id: u8,
    pub section_syntax: bool,
    pub table_id_extension: u16,
    pub version: u8,
    pub current_next: bool,
    pub section_number: u8,
    pub last_section_number: u8,
    pub body: Vec<u8>,
    pub crc: u32,
}

impl Section {
    /// Builds a single long-form section and computes its CRC.
    pub fn new(table_id: u8, table_id_extension: u16, version: u8, body: Vec<u8>) -> Result<Section, PsiError> {
        let mut s = Section {
            table_id,
            section_syntax: true,
            table_id_extension,
            version: version & 0x1F,
            current_next: true,
            section_number: 0,
            last_section_number: 0,
            body,
            crc: 0,
        };
        let len = s.section_length();
        let max = s.max_section_length();
        if len > max {
            return Err(PsiError::SectionTooLong { len, max });
        }
        let bytes = s.serialize();
        s.crc = crc32_mpeg(&bytes[..bytes.len() - 4]);
        Ok(s)
    }

    fn max_section_length(&self) -> usize {
        if self.table_id < 0x40 {
            MAX_PSI_SECTION_LENGTH
        } else {
            MAX_PRIVATE_SECTION_LENGTH
        }
    }

    /// Value of the section_length field.
    pub fn section_length(&self) -> usize {
        if self.section_syntax {
            5 + self.body.len() + 4
        } else {
            self.body.len()
        }
    }

    /// Total serialized size: 3 + section_length.
    pub fn serialized_len(&self) -> usize {
        3 + self.section_length()
    }

    /// Serializes with the stored CRC (not recomputed).
    pub fn serialize(&self) -> Vec<u8> {
        let len = self.section_length();
        let mut out = Vec::with_capacity(3 + len);
        out.push(self.table_id);
        let syntax_bit = (self.section_syntax as u8) << 7;
        // private_indicator: 0 on MPEG-defined tables, 1 on everything else
        let private_bit = if self.table_id < 0x40 { 0 } else { 0x40 };
        out.push(syntax_bit | private_bit | 0x30 | ((len >> 8) as u8 & 0x0F));
        out.push(len as u8);
        if self.section_syntax {
            out.extend_from_slice(&self.table_id_extension.to_be_bytes());
            out.push(0xC0 | (self.version & 0x1F) << 1 | self.current_next as u8);
            out.push(self.section_number);
            out.push(self.last_section_number);
            out.extend_from_slice(&self.body);
            out.extend_from_slice(&self.crc.to_be_bytes());
        } else {
            out.extend_from_slice(&self.body);
        }
        out
    }

    /// Decodes one section from the start of `bytes`. The CRC is stored,
    /// not verified; callers check [`crate::crc::section_crc_ok`].
    pub fn parse(bytes: &[u8]) -> Result<Section, PsiError> {
        if bytes.len() < 3 {
            return Err(PsiError::Truncated);
        }
        let table_id = bytes[0];
        let section_syntax = bytes[1] & 0x80 != 0;
        let length = ((bytes[1] as usize & 0x0F) << 8) | bytes[2] as usize;
        if bytes.len() < 3 + length {
            return Err(PsiError::Truncated);
        }
        let rest = &bytes[3..3 + length];
        if section_syntax {
            if length < 9 {
                return Err(PsiError::MalformedBody(format!(
                    "long-form section_length {length} below minimum 9"
                )));
            }
            Ok(Section {
                table_id,
                section_syntax,
                table_id_extension: u16::from_be_bytes([rest[0], rest[1]]),
                version: (rest[2] >> 1) & 0x1F,
                current_next: rest[2] & 0x01 != 0,
                section_number: rest[3],
                last_section_number: rest[4],
                body: rest[5..length - 4].to_vec(),
                crc: u32::from_be_bytes([
                    rest[length - 4],
                    rest[length - 3],
                    rest[length - 2],
                    rest[length - 1],
                ]),
            })
        } else {
            Ok(Section {
                table_id,
                section_syntax,
                table_id_extension: 0,
                version: 0,
                current_next: true,
                section_number: 0,
                last_section_number: 0,
                body: rest.to_vec(),
                crc: 0,
            })
        }
    }
}

/// Result of assembling sections from a packet run.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Assembled {
    pub sections: Vec<Section>,
    pub crc_errors: u64,
    pub continuity_gaps: u64,
}

/// Incremental section assembler for one PID. Honors pointer_field on
/// payload_unit_start packets, skips stuffing, discards sections whose CRC
/// fails or whose packets show a continuity gap (counting both).
#[derive(Debug, Default)]
pub struct SectionAssembler {
    pending: Vec<u8>,
    in_section: bool,
    last_cc: Option<u8>,
    pub crc_errors: u64,
    pub continuity_gaps: u64,
}

impl SectionAssembler {
    pub fn new() -> SectionAssembler {
        SectionAssembler::default()
    }

    pub fn push(&mut self, packet: &TsPacket, out: &mut Vec<Section>) {
        let Some(payload) = packet.payload.as_deref() else {
            return; // AF-only packets do not advance the continuity counter
        };
        let cc = packet.continuity_counter;
        if let Some(last) = self.last_cc {
            if cc == last {
                return; // duplicate packet
            }
            if cc != (last + 1) & 0x0F {
                self.continuity_gaps += 1;
                if self.in_section {
                    self.pending.clear();
                    self.in_section = false;
                }
            }
        }
        self.last_cc = Some(cc);

        if packet.payload_unit_start {
            if payload.is_empty() {
                return;
            }
            let pointer = payload[0] as usize;
            if 1 + pointer > payload.len() {
                self.drop_pending();
                return;
            }
            if self.in_section {
                // the pointer bytes must finish the pending section
                self.pending.extend_from_slice(&payload[1..1 + pointer]);
                self.try_complete(out);
                self.drop_pending();
            }
            self.consume_new(&payload[1 + pointer..], out);
        } else if self.in_section {
            self.pending.extend_from_slice(payload);
            self.try_complete(out);
        }
    }

    /// Discards a section left incomplete where completion was mandatory.
    fn drop_pending(&mut self) {
        if self.in_section {
            self.continuity_gaps += 1;
            self.pending.clear();
            self.in_section = false;
        }
    }

    /// Starts sections at the head of `bytes`, greedily until stuffing.
    fn consume_new(&mut self, mut bytes: &[u8], out: &mut Vec<Section>) {
        loop {
            if bytes.is_empty() || bytes[0] == STUFFING_BYTE {
                return;
            }
            if bytes.len() < 3 {
                self.pending = bytes.to_vec();
                self.in_section = true;
                return;
            }
            let length = ((bytes[1] as usize & 0x0F) << 8) | bytes[2] as usize;
            let total = 3 + length;
            if bytes.len() < total {
                self.pending = bytes.to_vec();
                self.in_section = true;
                return;
            }
            self.emit(&bytes[..total], out);
            bytes = &bytes[total..];
        }
    }

    /// Emits the pending section once enough bytes have accumulated.
    fn try_complete(&mut self, out: &mut Vec<Section>) {
        if self.pending.len() < 3 {
            return;
        }
        let length = ((self.pending[1] as usize & 0x0F) << 8) | self.pending[2] as usize;
        let total = 3 + length;
        if self.pending.len() < total {
            return;
        }
        let bytes = std::mem::take(&mut self.pending);
        self.in_section = false;
        // leftover beyond the declared length must be stuffing; ignored
        self.emit(&bytes[..total], out);
    }

    fn emit(&mut self, bytes: &[u8], out: &mut Vec<Section>) {
        match Section::parse(bytes) {
            Ok(section) => {
                if section.section_syntax && !section_crc_ok(bytes) {
                    self.crc_errors += 1;
                } else {
                    out.push(section);
                }
            }
            Err(_) => self.crc_errors += 1,
        }
    }
}

/// Assembles all sections from an ordered run of packets on one PID.
pub fn assemble_sections(packets: &[TsPacket]) -> Assembled {
    let mut asm = SectionAssembler::new();
    let mut sections = Vec::new();
    for p in packets {
        asm.push(p, &mut sections);
    }
    Assembled {
        sections,
        crc_errors: asm.crc_errors,
        continuity_gaps: asm.continuity_gaps,
    }
}

/// Splits a section into transport packets on `pid`. The first packet sets
/// payload_unit_start with pointer_field 0; the final packet is padded with
/// stuffing; continuity counters run mod 16 from `cc_start`.
pub fn sectionize(section: &Section, pid: Pid, cc_start: u8) -> Vec<TsPacket> {
    let bytes = section.serialize();
    let mut packets = Vec::with_capacity(1 + bytes.len() / BODY_LEN);
    let mut cc = cc_start & 0x0F;
    let mut first = true;
    let mut off = 0;
    while first || off < bytes.len() {
        let mut payload = Vec::with_capacity(BODY_LEN);
        if first {
            payload.push(0); // pointer_field
        }
        let take = (BODY_LEN - payload.len()).min(bytes.len() - off);
        payload.extend_from_slice(&bytes[off..off + take]);
        off += take;
        payload.resize(BODY_LEN, STUFFING_BYTE);
        packets.push(TsPacket::payload_only(pid, first, cc, payload));
        cc = (cc + 1) & 0x0F;
        first = false;
    }
    packets
}

/// Program association table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pat {
    pub transport_stream_id: u16,
    pub version: u8,
    /// All entries in stream order, including network-PID entries
    /// (program_number 0), which are preserved but are not programs.
    pub entries: Vec<PatEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatEntry {
    pub program_number: u16,
    pub pid: Pid,
}

impl Pat {
    /// Entries that map actual programs (program_number != 0).
    pub fn programs(&self) -> impl Iterator<Item = &PatEntry> {
        self.entries.iter().filter(|e| e.program_number != 0)
    }

    pub fn contains_program(&self, program_number: u16) -> bool {
        self.programs().any(|e| e.program_number == program_number)
    }
}

pub fn parse_pat(section: &Section) -> Result<Pat, PsiError> {
    if section.table_id != TABLE_ID_PAT {
        return Err(PsiError::WrongTableId {
            expected: TABLE_ID_PAT,
            actual: section.table_id,
        });
    }
    if section.body.len() % 4 != 0 {
        return Err(PsiError::MalformedBody(format!(
            "PAT body of {} bytes is not a multiple of 4",
            section.body.len()
        )));
    }
    let mut entries = Vec::with_capacity(section.body.len() / 4);
    for chunk in section.body.chunks_exact(4) {
        let program_number = u16::from_be_bytes([chunk[0], chunk[1]]);
        let pid = Pid::new(((chunk[2] as u16 & 0x1F) << 8) | chunk[3] as u16).expect("13-bit");
        if program_number != 0
            && entries
                .iter()
                .any(|e: &PatEntry| e.program_number == program_number)
        {
            return Err(PsiError::MalformedBody(format!(
                "duplicate program_number {program_number}"
            )));
        }
        entries.push(PatEntry {
            program_number,
            pid,
        });
    }
    Ok(Pat {
        transport_stream_id: section.table_id_extension,
        version: section.version,
        entries,
    })
}

pub fn serialize_pat(pat: &Pat) -> Result<Section, PsiError> {
    let mut body = Vec::with_capacity(pat.entries.len() * 4);
    for e in &pat.entries {
        body.extend_from_slice(&e.program_number.to_be_bytes());
        body.push(0xE0 | (e.pid.value() >> 8) as u8);
        body.push(e.pid.value() as u8);
    }
    Section::new(TABLE_ID_PAT, pat.transport_stream_id, pat.version, body)
}

/// Program map table. Descriptor loops are opaque byte blobs, passed
/// through byte-exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pmt {
    pub program_number: u16,
    pub version: u8,
    /// 0x1FFF means "no PCR".
    pub pcr_pid: Pid,
    pub program_info: Vec<u8>,
    pub streams: Vec<EsEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EsEntry {
    pub stream_type: u8,
    pub pid: Pid,
    pub es_info: Vec<u8>,
}

/// stream_type for PES packets containing private data.
pub const STREAM_TYPE_PRIVATE_DATA: u8 = 0x06;
/// stream_type for private sections.
pub const STREAM_TYPE_PRIVATE_SECTIONS: u8 = 0x05;

pub fn parse_pmt(section: &Section) -> Result<Pmt, PsiError> {
    if section.table_id != TABLE_ID_PMT {
        return Err(PsiError::WrongTableId {
            expected: TABLE_ID_PMT,
            actual: section.table_id,
        });
    }
    let b = &section.body;
    if b.len() < 4 {
        return Err(PsiError::MalformedBody("PMT body below 4 bytes".into()));
    }
    let pcr_pid = Pid::new(((b[0] as u16 & 0x1F) << 8) | b[1] as u16).expect("13-bit");
    let program_info_len = ((b[2] as usize & 0x0F) << 8) | b[3] as usize;
    if 4 + program_info_len > b.len() {
        return Err(PsiError::MalformedBody(
            "program_info_length overruns body".into(),
        ));
    }
    let program_info = b[4..4 + program_info_len].to_vec();
    let mut streams = Vec::new();
    let mut off = 4 + program_info_len;
    while off < b.len() {
        if off + 5 > b.len() {
            return Err(PsiError::MalformedBody("truncated stream entry".into()));
        }
        let stream_type = b[off];
        let pid = Pid::new(((b[off + 1] as u16 & 0x1F) << 8) | b[off + 2] as u16).expect("13-bit");
        let es_info_len = ((b[off + 3] as usize & 0x0F) << 8) | b[off + 4] as usize;
        off += 5;
        if off + es_info_len > b.len() {
            return Err(PsiError::MalformedBody("ES_info_length overruns body".into()));
        }
        if streams.iter().any(|s: &EsEntry| s.pid == pid) {
            return Err(PsiError::MalformedBody(format!(
                "duplicate elementary PID {pid}"
            )));
        }
        streams.push(EsEntry {
            stream_type,
            pid,
            es_info: b[off..off + es_info_len].to_vec(),
        });
        off += es_info_len;
    }
    Ok(Pmt {
        program_number: section.table_id_extension,
        version: section.version,
        pcr_pid,
        program_info,
        streams,
    })
}

pub fn serialize_pmt(pmt: &Pmt) -> Result<Section, PsiError> {
    let mut body = Vec::new();
    body.push(0xE0 | (pmt.pcr_pid.value() >> 8) as u8);
    body.push(pmt.pcr_pid.value() as u8);
    if pmt.program_info.len() > 0x0FFF {
        return Err(PsiError::MalformedBody("program_info too long".into()));
    }
    body.push(0xF0 | (pmt.program_info.len() >> 8) as u8);
    body.push(pmt.program_info.len() as u8);
    body.extend_from_slice(&pmt.program_info);
    for s in &pmt.streams {
        if s.es_info.len() > 0x0FFF {
            return Err(PsiError::MalformedBody("ES_info too long".into()));
        }
        body.push(s.stream_type);
        body.push(0xE0 | (s.pid.value() >> 8) as u8);
        body.push(s.pid.value() as u8);
        body.push(0xF0 | (s.es_info.len() >> 8) as u8);
        body.push(s.es_info.len() as u8);
        body.extend_from_slice(&s.es_info);
    }
    Section::new(TABLE_ID_PMT, pmt.program_number, pmt.version, body)
}

/// Service names from an SDT-actual section: (service_id, name) for every
/// service carrying a service descriptor (tag 0x48). Display helper only;
/// the SDT is never regenerated.
pub fn sdt_service_names(section: &Section) -> Vec<(u16, String)> {
    let mut names = Vec::new();
    if section.table_id != TABLE_ID_SDT {
        return names;
    }
    let b = &section.body;
    // original_network_id (2) + reserved (1)
    let mut off = 3;
    while off + 5 <= b.len() {
        let service_id = u16::from_be_bytes([b[off], b[off + 1]]);
        let loop_len = ((b[off + 3] as usize & 0x0F) << 8) | b[off + 4] as usize;
        off += 5;
        let end = (off + loop_len).min(b.len());
        let mut d = off;
        while d + 2 <= end {
            let tag = b[d];
            let dlen = b[d + 1] as usize;
            let data = &b[(d + 2).min(end)..(d + 2 + dlen).min(end)];
            if tag == 0x48 && data.len() >= 2 {
                let provider_len = data[1] as usize;
                if 2 + provider_len < data.len() {
                    let name_len = data[2 + provider_len] as usize;
                    let start = 3 + provider_len;
                    let name_bytes = &data[start.min(data.len())..(start + name_len).min(data.len())];
                    names.push((service_id, decode_si_string(name_bytes)));
                }
            }
            d += 2 + dlen;
        }
        off = end;
    }
    names
}

/// Lossy DVB-SI text decode: drops character-table selectors and control
/// bytes, maps the rest as Latin-1.
fn decode_si_string(bytes: &[u8]) -> String {
    bytes
        .iter()
        .filter(|&&b| b >= 0x20 && !(0x80..0xA0).contains(&b))
        .map(|&b| b as char)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ts::AdaptationField;

    fn sample_pat() -> Pat {
        Pat {
            transport_stream_id: 1,
            version: 0,
            entries: vec![PatEntry {
                program_number: 1,
                pid: Pid::new(0x0100).unwrap(),
            }],
        }
    }

    #[test]
    fn pat_round_trip() {
        let pat = sample_pat();
        let section = serialize_pat(&pat).unwrap();
        assert_eq!(section.serialized_len(), 16); // 12 + 4 * entries
        assert_eq!(parse_pat(&section).unwrap(), pat);
        assert!(section_crc_ok(&section.serialize()));
    }

    #[test]
    fn empty_pat_round_trip() {
        let pat = Pat {
            transport_stream_id: 7,
            version: 31,
            entries: vec![],
        };
        let section = serialize_pat(&pat).unwrap();
        assert_eq!(section.serialized_len(), 12);
        assert_eq!(parse_pat(&section).unwrap(), pat);
    }

    #[test]
    fn pat_grows_four_bytes_per_program() {
        let mut pat = sample_pat();
        let before = serialize_pat(&pat).unwrap().serialized_len();
        pat.entries.push(PatEntry {
            program_number: 2,
            pid: Pid::new(0x0200).unwrap(),
        });
        let after = serialize_pat(&pat).unwrap().serialized_len();
        assert_eq!(after, before + 4);
    }

    #[test]
    fn network_pid_entries_are_not_programs() {
        let pat = Pat {
            transport_stream_id: 1,
            version: 0,
            entries: vec![
                PatEntry {
                    program_number: 0,
                    pid: Pid::new(0x0010).unwrap(),
                },
                PatEntry {
                    program_number: 5,
                    pid: Pid::new(0x0500).unwrap(),
                },
            ],
        };
        let section = serialize_pat(&pat).unwrap();
        let parsed = parse_pat(&section).unwrap();
        assert_eq!(parsed.entries.len(), 2);
        assert_eq!(parsed.programs().count(), 1);
        assert!(!parsed.contains_program(0));
    }

    #[test]
    fn pat_wrong_table_id() {
        let section = Section::new(TABLE_ID_PMT, 1, 0, vec![]).unwrap();
        assert_eq!(
            parse_pat(&section),
            Err(PsiError::WrongTableId {
                expected: 0x00,
                actual: 0x02
            })
        );
    }

    #[test]
    fn pat_malformed_body() {
        let section = Section::new(TABLE_ID_PAT, 1, 0, vec![0, 1, 2]).unwrap();
        assert!(matches!(parse_pat(&section), Err(PsiError::MalformedBody(_))));
    }

    fn sample_pmt() -> Pmt {
        Pmt {
            program_number: 1,
            version: 3,
            pcr_pid: Pid::new(0x0101).unwrap(),
            program_info: vec![],
            streams: vec![EsEntry {
                stream_type: STREAM_TYPE_PRIVATE_DATA,
                pid: Pid::new(0x0102).unwrap(),
                es_info: vec![0x52, 0x01, 0x03], // stream_identifier_descriptor
            }],
        }
    }

    #[test]
    fn pmt_round_trip_preserves_descriptors() {
        let pmt = sample_pmt();
        let section = serialize_pmt(&pmt).unwrap();
        let parsed = parse_pmt(&section).unwrap();
        assert_eq!(parsed, pmt);
        assert_eq!(parsed.streams[0].es_info, vec![0x52, 0x01, 0x03]);
    }

    #[test]
    fn pmt_with_no_streams_round_trips() {
        let pmt = Pmt {
            program_number: 9,
            version: 0,
            pcr_pid: Pid::NULL,
            program_info: vec![0x09, 0x02, 0xAB, 0xCD],
            streams: vec![],
        };
        let section = serialize_pmt(&pmt).unwrap();
        assert_eq!(parse_pmt(&section).unwrap(), pmt);
    }

    #[test]
    fn single_packet_pat_assembles() {
        let section = serialize_pat(&sample_pat()).unwrap();
        let packets = sectionize(&section, Pid::PAT, 0);
        assert_eq!(packets.len(), 1);
        assert!(packets[0].payload_unit_start);
        let assembled = assemble_sections(&packets);
        assert_eq!(assembled.sections, vec![section]);
        assert_eq!(assembled.crc_errors, 0);
        assert_eq!(assembled.continuity_gaps, 0);
    }

    #[test]
    fn split_section_assembles() {
        let body = (0..240).map(|i| i as u8).collect::<Vec<_>>();
        let section = Section::new(0x42, 1, 0, body).unwrap();
        let packets = sectionize(&section, Pid::SDT, 5);
        assert_eq!(packets.len(), 2);
        assert!(!packets[1].payload_unit_start);
        assert_eq!(packets[1].continuity_counter, 6);
        let assembled = assemble_sections(&packets);
        assert_eq!(assembled.sections, vec![section]);
    }

    #[test]
    fn two_hundred_byte_section_needs_two_packets() {
        // serialized 200 bytes: body 188 + 12 bytes of framing
        let section = Section::new(0x80, 0, 0, vec![0xAB; 188]).unwrap();
        assert_eq!(section.serialized_len(), 200);
        assert_eq!(sectionize(&section, Pid::new(0x300).unwrap(), 0).len(), 2);
    }

    #[test]
    fn continuity_gap_discards_partial_section() {
        let body = (0..240).map(|i| i as u8).collect::<Vec<_>>();
        let section = Section::new(0x42, 1, 0, body).unwrap();
        let mut packets = sectionize(&section, Pid::SDT, 0);
        packets[1].continuity_counter = 9; // jump
        let assembled = assemble_sections(&packets);
        assert!(assembled.sections.is_empty());
        assert_eq!(assembled.continuity_gaps, 1);
    }

    #[test]
    fn corrupted_crc_is_counted_and_discarded() {
        let section = serialize_pat(&sample_pat()).unwrap();
        let mut packets = sectionize(&section, Pid::PAT, 0);
        let payload = packets[0].payload.as_mut().unwrap();
        payload[10] ^= 0xFF;
        let assembled = assemble_sections(&packets);
        assert!(assembled.sections.is_empty());
        assert_eq!(assembled.crc_errors, 1);
    }

    #[test]
    fn af_only_packets_do_not_disturb_assembly() {
        let body = (0..240).map(|i| i as u8).collect::<Vec<_>>();
        let section = Section::new(0x42, 1, 0, body).unwrap();
        let packets = sectionize(&section, Pid::SDT, 0);
        let af_only = TsPacket {
            pid: Pid::SDT,
            payload_unit_start: false,
            transport_error: false,
            priority: false,
            scrambling: 0,
            continuity_counter: 0,
            adaptation: Some(AdaptationField::with_stuffing(BODY_LEN - 2)),
            payload: None,
        };
        let interleaved = vec![packets[0].clone(), af_only, packets[1].clone()];
        let assembled = assemble_sections(&interleaved);
        assert_eq!(assembled.sections, vec![section]);
    }

    #[test]
    fn back_to_back_sections_in_one_packet() {
        let a = serialize_pat(&sample_pat()).unwrap();
        let mut second = sample_pat();
        second.version = 1;
        let b = serialize_pat(&second).unwrap();
        let mut payload = vec![0u8]; // pointer
        payload.extend(a.serialize());
        payload.extend(b.serialize());
        payload.resize(BODY_LEN, STUFFING_BYTE);
        let packet = TsPacket::payload_only(Pid::PAT, true, 0, payload);
        let assembled = assemble_sections(&[packet]);
        assert_eq!(assembled.sections, vec![a, b]);
    }

    #[test]
    fn pointer_field_completes_previous_section(){
        let body = (0..200).map(|i| i as u8).collect::<Vec<_>>();
        let long = Section::new(0x42, 1, 0, body).unwrap();
        let long_bytes = long.serialize();
        let first_part = &long_bytes[..BODY_LEN - 1];
        let rest = &long_bytes[BODY_LEN - 1..];

        let mut p1_payload = vec![0u8];
        p1_payload.extend_from_slice(first_part);
        let p1 = TsPacket::payload_only(Pid::SDT, true, 0, p1_payload);

        let next = serialize_pat(&sample_pat()).unwrap();
        let mut p2_payload = vec![rest.len() as u8];
        p2_payload.extend_from_slice(rest);
        p2_payload.extend(next.serialize());
        p2_payload.resize(BODY_LEN, STUFFING_BYTE);
        let p2 = TsPacket::payload_only(Pid::SDT, true, 1, p2_payload);

        let assembled = assemble_sections(&[p1, p2]);
        assert_eq!(assembled.sections, vec![long, next]);
    }

    #[test]
    fn version_bump_wraps() {
        assert_eq!(bump_version(0), 1);
        assert_eq!(bump_version(30), 31);
        assert_eq!(bump_version(31), 0);
    }

    #[test]
    fn sdt_names_extracted() {
        // one service, service_descriptor with provider "P" and name "News 24"
        let mut body = vec![0x00, 0x01, 0xFF]; // original_network_id + reserved
        body.extend_from_slice(&0x0101u16.to_be_bytes());
        body.push(0xFC);
        let mut desc = vec![0x48];
        let payload = [&[0x01u8, 0x01, b'P', 0x07][..], b"News 24"].concat();
        desc.push(payload.len() as u8);
        desc.extend_from_slice(&payload);
        body.push(0x80); // running + free_CA + loop length high
        body.push(desc.len() as u8);
        body.extend_from_slice(&desc);
        let section = Section::new(TABLE_ID_SDT, 1, 0, body).unwrap();
        assert_eq!(sdt_service_names(&section), vec![(0x0101, "News 24".to_string())]);
    }
}
