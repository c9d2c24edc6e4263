//! Transport-stream multiplex toolkit: packet and PSI codecs, per-PID
//! bitrate measurement, a synthetic statistical multiplexer, and null-packet
//! replacement for carrying an extra data service.

pub mod alloc;
pub mod analyzer;
pub mod chart;
pub mod crc;
pub mod inserter;
pub mod psi;
pub mod real;
pub mod scenario;
pub mod statmux;
pub mod ts;

pub use crc::{crc32_mpeg, section_crc_ok};
pub use psi::{Pat, Pmt, Section};
pub use real::Real;
pub use ts::{Pcr, Pid, TsPacket, PACKET_LEN};

/// Default double-precision allocation result.
pub type Allocation = alloc::AllocationResult<f64>;
