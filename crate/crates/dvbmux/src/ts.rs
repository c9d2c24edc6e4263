//! Bit-exact encoding and decoding of 188-byte MPEG-2 transport packets
//! (ISO/IEC 13818-1), sync acquisition and PCR extraction.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Transport packet size. 204/192-byte variants are out of scope.
pub const PACKET_LEN: usize = 188;
/// First byte of every transport packet.
pub const SYNC_BYTE: u8 = 0x47;
/// Aligned sync bytes required before `sync_scan` declares lock.
pub const SYNC_LOCK_COUNT: usize = 5;
/// Usable bytes after the 4-byte packet header.
pub const BODY_LEN: usize = PACKET_LEN - 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TsError {
    #[error("packet must be {PACKET_LEN} bytes, got {0}")]
    WrongLength(usize),
    #[error("bad sync byte {0:#04x}")]
    BadSync(u8),
    #[error("adaptation field length {len} invalid for adaptation_field_control {afc:#04b}")]
    BadAdaptationLength { len: usize, afc: u8 },
    #[error("reserved adaptation_field_control 00")]
    ReservedAfc,
    #[error("adaptation field and payload need {0} bytes, only {BODY_LEN} available")]
    Overflow(usize),
    #[error("adaptation field and payload fill {0} of {BODY_LEN} bytes; stuffing belongs in the adaptation field")]
    Underfill(usize),
    #[error("PID {0:#06x} out of 13-bit range")]
    InvalidPid(u16),
    #[error("PCR extension {0} must be < 300")]
    InvalidPcrExtension(u16),
    #[error("no transport packet sync found")]
    SyncNotFound,
}

/// 13-bit packet identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pid(u16);

impl Pid {
    /// Program association table.
    pub const PAT: Pid = Pid(0x0000);
    /// Service description table (DVB SI).
    pub const SDT: Pid = Pid(0x0011);
    /// Null (stuffing) packets.
    pub const NULL: Pid = Pid(0x1FFF);
    pub const MAX: u16 = 0x1FFF;

    pub fn new(value: u16) -> Result<Pid, TsError> {
        if value > Self::MAX {
            return Err(TsError::InvalidPid(value));
        }
        Ok(Pid(value))
    }

    pub const fn value(self) -> u16 {
        self.0
    }

    pub const fn is_null(self) -> bool {
        self.0 == Self::NULL.0
    }
}

impl std::fmt::Display for Pid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#06x}", self.0)
    }
}

impl Serialize for Pid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u16(self.0)
    }
}

impl<'de> Deserialize<'de> for Pid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = u16::deserialize(deserializer)?;
        Pid::new(v).map_err(serde::de::Error::custom)
    }
}

/// Program clock reference: 33-bit base at 90 kHz plus 9-bit extension at 27 MHz.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pcr {
    base: u64,
    extension: u16,
}

impl Pcr {
    /// Total tick count wraps at 2^33 * 300.
    pub const WRAP: u64 = (1 << 33) * 300;
    /// Ticks per second (27 MHz).
    pub const HZ: u64 = 27_000_000;

    pub fn new(base: u64, extension: u16) -> Result<Pcr, TsError> {
        if extension >= 300 {
            return Err(TsError::InvalidPcrExtension(extension));
        }
        Ok(Pcr {
            base: base & ((1 << 33) - 1),
            extension,
        })
    }

    pub fn from_ticks(ticks: u64) -> Pcr {
        let t = ticks % Self::WRAP;
        Pcr {
            base: t / 300,
            extension: (t % 300) as u16,
        }
    }

    pub const fn base(self) -> u64 {
        self.base
    }

    pub const fn extension(self) -> u16 {
        self.extension
    }

    /// 27 MHz tick count.
    pub const fn ticks(self) -> u64 {
        self.base * 300 + self.extension as u64
    }

    /// Signed tick distance from `earlier` to `self`, modulo the wrap period.
    /// Valid while the true distance is under half the wrap period (~13 h).
    pub fn ticks_since(self, earlier: Pcr) -> i64 {
        let delta = (self.ticks() + Self::WRAP - earlier.ticks()) % Self::WRAP;
        if delta >= Self::WRAP / 2 {
            delta as i64 - Self::WRAP as i64
        } else {
            delta as i64
        }
    }
}

/// Decoded adaptation field.
///
/// Fields other than the three indicator flags and the PCR (OPCR, splice
/// countdown, private data, stuffing) are carried opaquely in `trailer` so
/// that re-serialization is byte-exact.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AdaptationField {
    pub discontinuity: bool,
    pub random_access: bool,
    pub es_priority: bool,
    pub pcr: Option<Pcr>,
    /// Low four bits of the flags byte (OPCR, splicing point, private data,
    /// extension); their data lives at the head of `trailer`.
    low_flags: u8,
    /// Raw bytes after the PCR field, preserved verbatim.
    trailer: Vec<u8>,
    /// Declared length 0: a single stuffing byte, no flags byte at all.
    empty: bool,
}

impl AdaptationField {
    /// Zero-length field: buys exactly one byte of the packet body.
    pub fn empty() -> AdaptationField {
        AdaptationField {
            empty: true,
            ..AdaptationField::default()
        }
    }

    pub fn with_pcr(pcr: Pcr) -> AdaptationField {
        AdaptationField {
            pcr: Some(pcr),
            ..AdaptationField::default()
        }
    }

    /// Flags-only field padded with `stuffing` bytes of 0xFF.
    pub fn with_stuffing(stuffing: usize) -> AdaptationField {
        AdaptationField {
            trailer: vec![0xFF; stuffing],
            ..AdaptationField::default()
        }
    }

    /// Appends `n` bytes of 0xFF fill.
    pub fn pad(mut self, n: usize) -> AdaptationField {
        self.trailer.extend(std::iter::repeat(0xFF).take(n));
        self
    }

    pub fn trailer(&self) -> &[u8] {
        &self.trailer
    }

    /// Count of trailing 0xFF fill bytes.
    pub fn stuffing(&self) -> usize {
        self.trailer.iter().rev().take_while(|&&b| b == 0xFF).count()
    }

    /// Declared adaptation_field_length value.
    pub fn declared_len(&self) -> usize {
        if self.empty {
            0
        } else {
            1 + if self.pcr.is_some() { 6 } else { 0 } + self.trailer.len()
        }
    }

    /// Bytes occupied in the packet body, including the length byte.
    pub fn encoded_len(&self) -> usize {
        1 + self.declared_len()
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.push(self.declared_len() as u8);
        if self.empty {
            return;
        }
        let mut flags = self.low_flags & 0x0F;
        if self.discontinuity {
            flags |= 0x80;
        }
        if self.random_access {
            flags |= 0x40;
        }
        if self.es_priority {
            flags |= 0x20;
        }
        if self.pcr.is_some() {
            flags |= 0x10;
        }
        out.push(flags);
        if let Some(pcr) = self.pcr {
            let base = pcr.base();
            let ext = pcr.extension();
            out.push((base >> 25) as u8);
            out.push((base >> 17) as u8);
            out.push((base >> 9) as u8);
            out.push((base >> 1) as u8);
            // 6 reserved bits set to 1 between base and extension
            out.push(((base & 1) as u8) << 7 | 0x7E | ((ext >> 8) as u8));
            out.push(ext as u8);
        }
        out.extend_from_slice(&self.trailer);
    }

    fn parse(body: &[u8], afc: u8) -> Result<(AdaptationField, usize), TsError> {
        let declared = body[0] as usize;
        // AFC 10: field fills the whole body (declared 183). AFC 11: at
        // least one payload byte must remain.
        let max = match afc {
            0b10 => BODY_LEN - 1,
            _ => BODY_LEN - 2,
        };
        if declared > max || (afc == 0b10 && declared != BODY_LEN - 1) {
            return Err(TsError::BadAdaptationLength { len: declared, afc });
        }
        if declared == 0 {
            return Ok((AdaptationField::empty(), 1));
        }
        let field = &body[1..1 + declared];
        let flags = field[0];
        let mut af = AdaptationField {
            discontinuity: flags & 0x80 != 0,
            random_access: flags & 0x40 != 0,
            es_priority: flags & 0x20 != 0,
            pcr: None,
            low_flags: flags & 0x0F,
            trailer: Vec::new(),
            empty: false,
        };
        let mut off = 1;
        if flags & 0x10 != 0 {
            if declared < 7 {
                return Err(TsError::BadAdaptationLength { len: declared, afc });
            }
            let b = &field[1..7];
            let base = (b[0] as u64) << 25
                | (b[1] as u64) << 17
                | (b[2] as u64) << 9
                | (b[3] as u64) << 1
                | (b[4] as u64) >> 7;
            let ext = ((b[4] as u16) & 0x01) << 8 | b[5] as u16;
            af.pcr = Some(Pcr::new(base, ext)?);
            off = 7;
        }
        af.trailer = field[off..].to_vec();
        Ok((af, 1 + declared))
    }
}

/// Decoded transport packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsPacket {
    pub pid: Pid,
    pub payload_unit_start: bool,
    pub transport_error: bool,
    pub priority: bool,
    /// transport_scrambling_control, 2 bits.
    pub scrambling: u8,
    /// 4-bit continuity counter.
    pub continuity_counter: u8,
    pub adaptation: Option<AdaptationField>,
    pub payload: Option<Vec<u8>>,
}

impl TsPacket {
    /// Payload-only packet (adaptation_field_control 01). The payload must
    /// fill the body exactly; see [`AdaptationField::with_stuffing`] for
    /// shorter payloads.
    pub fn payload_only(pid: Pid, payload_unit_start: bool, cc: u8, payload: Vec<u8>) -> TsPacket {
        TsPacket {
            pid,
            payload_unit_start,
            transport_error: false,
            priority: false,
            scrambling: 0,
            continuity_counter: cc & 0x0F,
            adaptation: None,
            payload: Some(payload),
        }
    }

    pub fn is_null(&self) -> bool {
        self.pid.is_null()
    }

    /// PCR carried in the adaptation field, if any.
    pub fn pcr(&self) -> Option<Pcr> {
        self.adaptation.as_ref().and_then(|af| af.pcr)
    }

    pub fn serialize(&self) -> Result<[u8; PACKET_LEN], TsError> {
        let mut out = Vec::with_capacity(PACKET_LEN);
        out.push(SYNC_BYTE);
        let pid = self.pid.value();
        out.push(
            (self.transport_error as u8) << 7
                | (self.payload_unit_start as u8) << 6
                | (self.priority as u8) << 5
                | (pid >> 8) as u8,
        );
        out.push(pid as u8);
        let afc = match (&self.adaptation, &self.payload) {
            (None, Some(_)) => 0b01,
            (Some(_), None) => 0b10,
            (Some(_), Some(_)) => 0b11,
            (None, None) => return Err(TsError::ReservedAfc),
        };
        out.push((self.scrambling & 0x03) << 6 | afc << 4 | (self.continuity_counter & 0x0F));
        if let Some(af) = &self.adaptation {
            af.write(&mut out);
        }
        if let Some(p) = &self.payload {
            out.extend_from_slice(p);
        }
        match out.len() {
            n if n > PACKET_LEN => Err(TsError::Overflow(n - 4)),
            n if n < PACKET_LEN => Err(TsError::Underfill(n - 4)),
            _ => Ok(out.try_into().expect("length checked")),
        }
    }
}

/// Decodes one 188-byte transport packet.
pub fn parse_packet(bytes: &[u8]) -> Result<TsPacket, TsError> {
    if bytes.len() != PACKET_LEN {
        return Err(TsError::WrongLength(bytes.len()));
    }
    if bytes[0] != SYNC_BYTE {
        return Err(TsError::BadSync(bytes[0]));
    }
    let pid = Pid(((bytes[1] & 0x1F) as u16) << 8 | bytes[2] as u16);
    let afc = (bytes[3] & 0x30) >> 4;
    if afc == 0 {
        return Err(TsError::ReservedAfc);
    }
    let mut adaptation = None;
    let mut consumed = 0;
    if afc & 0b10 != 0 {
        let (af, n) = AdaptationField::parse(&bytes[4..], afc)?;
        adaptation = Some(af);
        consumed = n;
    }
    let payload = if afc & 0b01 != 0 {
        Some(bytes[4 + consumed..].to_vec())
    } else {
        None
    };
    Ok(TsPacket {
        pid,
        payload_unit_start: bytes[1] & 0x40 != 0,
        transport_error: bytes[1] & 0x80 != 0,
        priority: bytes[1] & 0x20 != 0,
        scrambling: (bytes[3] & 0xC0) >> 6,
        continuity_counter: bytes[3] & 0x0F,
        adaptation,
        payload,
    })
}

/// Alias for [`TsPacket::serialize`] matching the parse/serialize pair.
pub fn serialize_packet(p: &TsPacket) -> Result<[u8; PACKET_LEN], TsError> {
    p.serialize()
}

/// Null packet: PID 0x1FFF, payload-only, body filled with 0xFF.
pub fn make_null_packet(cc: u8) -> TsPacket {
    TsPacket::payload_only(Pid::NULL, false, cc, vec![0xFF; BODY_LEN])
}

/// True iff the packet's PID is 0x1FFF, regardless of payload content.
pub fn is_null(p: &TsPacket) -> bool {
    p.is_null()
}

/// PCR of a packet, when its adaptation field carries one.
pub fn pcr_of(p: &TsPacket) -> Option<Pcr> {
    p.pcr()
}

/// Finds the smallest offset at which [`SYNC_LOCK_COUNT`] consecutive
/// positions `offset + 188*i` all hold the sync byte. Buffers shorter than
/// five packets lock on as many full packets as they hold.
pub fn sync_scan(bytes: &[u8]) -> Result<usize, TsError> {
    if bytes.len() < PACKET_LEN {
        return Err(TsError::SyncNotFound);
    }
    for offset in 0..=bytes.len() - PACKET_LEN {
        let full_packets = (bytes.len() - offset) / PACKET_LEN;
        let need = SYNC_LOCK_COUNT.min(full_packets);
        if (0..need).all(|i| bytes[offset + i * PACKET_LEN] == SYNC_BYTE) {
            return Ok(offset);
        }
    }
    Err(TsError::SyncNotFound)
}

/// PID from a raw packet header, without full decoding.
pub fn peek_pid(raw: &[u8]) -> Option<Pid> {
    if raw.len() < 4 || raw[0] != SYNC_BYTE {
        return None;
    }
    Some(Pid(((raw[1] & 0x1F) as u16) << 8 | raw[2] as u16))
}
