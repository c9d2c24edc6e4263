//! Synthetic statistical-multiplex generator: per-service encoder models in
//! four rate modes, a closed-loop equal-distortion allocator re-run every
//! GOP, and packet-exact multiplexing at a fixed channel rate with null
//! stuffing.

use crate::alloc::{allocate_equal_distortion, AllocError};
use crate::psi::{sectionize, serialize_pat, serialize_pmt, EsEntry, Pat, PatEntry, Pmt, Section};
use crate::real::Real;
use crate::ts::{make_null_packet, AdaptationField, Pcr, Pid, TsPacket, BODY_LEN, PACKET_LEN};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use thiserror::Error;

/// Bits per transport packet.
pub const PACKET_BITS: u64 = (PACKET_LEN as u64) * 8;
/// Default PSI (PAT + PMTs) repetition interval, seconds.
pub const DEFAULT_PSI_INTERVAL: f64 = 0.1;
/// Default PCR stamping interval per service, seconds.
pub const DEFAULT_PCR_INTERVAL: f64 = 0.04;
/// Default GOP duration, seconds.
pub const DEFAULT_GOP_DURATION: f64 = 0.5;

/// Base PID for generated PMTs: program i maps to PID 0x1000 + i.
pub const PMT_PID_BASE: u16 = 0x1000;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("rate floors plus PSI overhead ({need} bps) reach the channel rate ({channel} bps)")]
    Infeasible { need: u64, channel: u64 },
    #[error("PID {0} is reserved, duplicated, or collides with a generated PMT PID")]
    PidConflict(Pid),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("allocation failed: {0}")]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How an encoder picks its rate each GOP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMode {
    /// Quality-driven: rate follows complexity, floored at min_rate only.
    Vbr,
    /// VBR with a hard ceiling at max_rate.
    CappedVbr,
    /// Allocation-driven: takes the statmux feedback, clamped to bounds.
    Abr,
    /// Constant at max_rate (min_rate must equal max_rate).
    Cbr,
}

/// Content character, setting the complexity trace's mean and volatility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Simple,
    Moderate,
    Complex,
    Sports,
}

impl Profile {
    /// (mean complexity, log-volatility per GOP).
    pub fn params(self) -> (f64, f64) {
        match self {
            Profile::Simple => (1.0, 0.04),
            Profile::Moderate => (2.0, 0.12),
            Profile::Complex => (3.5, 0.25),
            Profile::Sports => (4.5, 0.50),
        }
    }
}

/// One service feeding the multiplex.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderModel {
    /// Program number; must be nonzero and unique.
    pub service_id: u16,
    pub mode: RateMode,
    /// Bits/second, 0 < min_rate ≤ max_rate.
    pub min_rate: u64,
    pub max_rate: u64,
    /// Per-GOP complexity c_t > 0; indexed mod length.
    pub complexity_trace: Vec<f64>,
    /// Elementary-stream PID.
    pub pid: Pid,
}

impl EncoderModel {
    pub fn mean_complexity(&self) -> f64 {
        self.complexity_trace.iter().sum::<f64>() / self.complexity_trace.len() as f64
    }

    fn complexity_at(&self, gop: usize) -> f64 {
        self.complexity_trace[gop % self.complexity_trace.len()]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MuxConfig {
    /// Total multiplex rate, bits/second.
    pub channel_rate: u64,
    /// Allocation granularity, seconds.
    pub gop_duration: f64,
    pub services: Vec<EncoderModel>,
    /// PAT/PMT repetition interval, seconds.
    #[serde(default = "default_psi_interval")]
    pub psi_interval: f64,
    /// PCR stamping interval per service, seconds.
    #[serde(default = "default_pcr_interval")]
    pub pcr_interval: f64,
    /// Payload PRNG seed.
    pub seed: u64,
}

fn default_psi_interval() -> f64 {
    DEFAULT_PSI_INTERVAL
}

fn default_pcr_interval() -> f64 {
    DEFAULT_PCR_INTERVAL
}

impl MuxConfig {
    /// PMT PID assigned to the i-th service.
    pub fn pmt_pid(i: usize) -> Pid {
        Pid::new(PMT_PID_BASE + i as u16).expect("PMT PID range")
    }

    /// PSI bandwidth: PAT + one PMT per program, once per interval.
    pub fn psi_rate(&self) -> f64 {
        (1 + self.services.len()) as f64 * PACKET_BITS as f64 / self.psi_interval
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.channel_rate == 0 {
            return Err(GenError::InvalidConfig("channel_rate must be > 0".into()));
        }
        for (name, v) in [
            ("gop_duration", self.gop_duration),
            ("psi_interval", self.psi_interval),
            ("pcr_interval", self.pcr_interval),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GenError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if self.services.is_empty() {
            return Err(GenError::InvalidConfig("no services configured".into()));
        }
        let mut taken = vec![Pid::PAT, Pid::NULL];
        for i in 0..self.services.len() {
            taken.push(Self::pmt_pid(i));
        }
        let mut seen_ids = Vec::new();
        for s in &self.services {
            if s.service_id == 0 {
                return Err(GenError::InvalidConfig(
                    "service_id 0 is the network program".into(),
                ));
            }
            if seen_ids.contains(&s.service_id) {
                return Err(GenError::InvalidConfig(format!(
                    "duplicate service_id {}",
                    s.service_id
                )));
            }
            seen_ids.push(s.service_id);
            if taken.contains(&s.pid) {
                return Err(GenError::PidConflict(s.pid));
            }
            taken.push(s.pid);
            if s.min_rate == 0 || s.min_rate > s.max_rate {
                return Err(GenError::InvalidConfig(format!(
                    "service {}: need 0 < min_rate <= max_rate",
                    s.service_id
                )));
            }
            if s.mode == RateMode::Cbr && s.min_rate != s.max_rate {
                return Err(GenError::InvalidConfig(format!(
                    "service {}: CBR requires min_rate = max_rate",
                    s.service_id
                )));
            }
            if s.complexity_trace.is_empty() || s.complexity_trace.iter().any(|&c| !(c > 0.0)) {
                return Err(GenError::InvalidConfig(format!(
                    "service {}: complexity trace must be nonempty and positive",
                    s.service_id
                )));
            }
        }
        let floors: u64 = self.services.iter().map(|s| s.min_rate).sum();
        let need = floors + self.psi_rate().ceil() as u64;
        if need >= self.channel_rate {
            return Err(GenError::Infeasible {
                need,
                channel: self.channel_rate,
            });
        }
        Ok(())
    }
}

/// Deterministic per-GOP complexity trace for a content profile.
pub fn gen_complexity<F: Real>(seed: u64, gops: usize, profile: Profile) -> Vec<F> {
    let (mean, volatility) = profile.params();
    gen_complexity_with(seed, gops, mean, volatility)
}

/// Mean-reverting lognormal walk: log-deviation d_{t+1} = (1−κ)d_t + σz_t,
/// c_t = mean·exp(d_t). Zero volatility yields the mean exactly.
pub fn gen_complexity_with<F: Real>(seed: u64, gops: usize, mean: f64, volatility: f64) -> Vec<F> {
    const REVERSION: f64 = 0.15;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deviation = 0.0f64;
    let mut trace = Vec::with_capacity(gops);
    for _ in 0..gops {
        trace.push(F::of(mean * deviation.exp()));
        deviation = (1.0 - REVERSION) * deviation + volatility * standard_normal(&mut rng);
    }
    trace
}

/// Box–Muller transform over two uniforms.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Rate chosen by a service for one GOP, in bits/second. `allocated` is the
/// statmux feedback, used only in ABR mode.
pub fn encoder_rate(model: &EncoderModel, gop_index: usize, allocated: Option<f64>) -> f64 {
    let min = model.min_rate as f64;
    let max = model.max_rate as f64;
    match model.mode {
        RateMode::Cbr => max,
        RateMode::Abr => allocated.unwrap_or(min).clamp(min, max),
        RateMode::Vbr | RateMode::CappedVbr => {
            let target_mean = (min + max) / 2.0;
            let c = model.complexity_at(gop_index);
            let rate = (c / model.mean_complexity() * target_mean).max(min);
            if model.mode == RateMode::CappedVbr {
                rate.min(max)
            } else {
                rate
            }
        }
    }
}

/// Generates `duration` seconds of multiplex (rounded up to whole GOPs)
/// into memory. See [`generate_into`] for the streaming form.
pub fn generate_stream(config: &MuxConfig, duration: f64) -> Result<Vec<u8>, GenError> {
    let mut out = Vec::new();
    generate_into(config, duration, &mut out)?;
    Ok(out)
}

/// What fills one packet slot of a GOP.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    /// PSI table: 0 is the PAT, k > 0 the PMT of program k−1.
    Psi(u16),
    Service(u16),
    Null,
}

pub fn generate_into<W: Write>(
    config: &MuxConfig,
    duration: f64,
    writer: &mut W,
) -> Result<(), GenError> {
    config.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(GenError::InvalidConfig("duration must be > 0".into()));
    }

    let services = &config.services;
    let n = services.len();
    let rate = config.channel_rate as f64;
    let bits_per_gop = rate * config.gop_duration;
    let gops = (duration / config.gop_duration).ceil().max(1.0) as u64;
    // cumulative slot counts keep the long-run output rate exact
    let cum_slots = |g: u64| (g as f64 * bits_per_gop / PACKET_BITS as f64).floor() as u64;
    let slot_time = |slot: u64| slot as f64 * PACKET_BITS as f64 / rate;
    let slot_ticks =
        |slot: u64| (slot as u128 * PACKET_BITS as u128 * Pcr::HZ as u128 / rate as u128) as u64;

    let pat = build_pat(services)?;
    let pmts: Vec<Section> = services
        .iter()
        .map(build_pmt)
        .collect::<Result<_, _>>()?;

    let budget = rate - config.psi_rate();
    let mins: Vec<f64> = services.iter().map(|s| s.min_rate as f64).collect();
    let maxs: Vec<f64> = services.iter().map(|s| s.max_rate as f64).collect();
    let sum_min: f64 = mins.iter().sum();
    // per-GOP packet quota bounds keep every windowed rate inside [min, max]
    let quota_min: Vec<u64> = services
        .iter()
        .map(|s| (s.min_rate as f64 * config.gop_duration / PACKET_BITS as f64).ceil() as u64)
        .collect();
    let quota_max: Vec<u64> = services
        .iter()
        .zip(quota_min.iter())
        .map(|(s, &lo)| {
            ((s.max_rate as f64 * config.gop_duration / PACKET_BITS as f64).floor() as u64).max(lo)
        })
        .collect();

    let mut payload_rngs: Vec<ChaCha8Rng> = services
        .iter()
        .map(|s| ChaCha8Rng::seed_from_u64(config.seed ^ ((s.pid.value() as u64) << 16)))
        .collect();
    let mut continuity = vec![0u8; n];
    let mut psi_continuity = vec![0u8; n + 1]; // PAT + PMTs
    let mut null_continuity = 0u8;
    let mut pcr_due = vec![0.0f64; n];
    let mut psi_due = 0.0f64;
    let mut target_bits = vec![0.0f64; n];
    let mut sent_bits = vec![0u64; n];
    let mut complexities: Vec<f64> = Vec::with_capacity(n);

    let mut global_slot = 0u64;
    let mut out_buf: Vec<u8> = Vec::with_capacity(4096 * PACKET_LEN);

    for g in 0..gops {
        let gop_start_slot = cum_slots(g);
        let slots = cum_slots(g + 1) - gop_start_slot;
        let gop_end = slot_time(cum_slots(g + 1));

        // closed loop: re-allocate on this GOP's complexities
        complexities.clear();
        complexities.extend(services.iter().map(|s| s.complexity_at(g as usize)));
        let allocation = allocate_equal_distortion(&complexities, budget, &mins, &maxs)?;
        let mut rates: Vec<f64> = services
            .iter()
            .enumerate()
            .map(|(i, s)| encoder_rate(s, g as usize, Some(allocation.rates[i])))
            .collect();
        // VBR mode may overshoot the budget; shrink the excess above the
        // floors proportionally
        let total: f64 = rates.iter().sum();
        if total > budget && total > sum_min {
            let scale = ((budget - sum_min) / (total - sum_min)).max(0.0);
            for (r, &lo) in rates.iter_mut().zip(mins.iter()) {
                *r = lo + (*r - lo) * scale;
            }
        }

        // PSI emissions due during this GOP
        let mut psi_count = 0u64;
        {
            let mut due = psi_due;
            while due < gop_end - 1e-9 {
                psi_count += 1;
                due += config.psi_interval;
            }
        }
        let psi_slots = psi_count * (1 + n) as u64;
        if psi_slots > slots {
            return Err(GenError::InvalidConfig(
                "PSI repetition does not fit the GOP".into(),
            ));
        }

        // service quotas from cumulative targets, clamped to the per-GOP
        // bounds, then squeezed if the PSI bursts ate the slack
        let mut quotas = vec![0u64; n];
        let mut quota_total = 0u64;
        for i in 0..n {
            target_bits[i] += rates[i] * config.gop_duration;
            let deficit = ((target_bits[i] - sent_bits[i] as f64) / PACKET_BITS as f64).floor();
            let q = (deficit.max(0.0) as u64).clamp(quota_min[i], quota_max[i]);
            quotas[i] = q;
            quota_total += q;
        }
        let available = slots - psi_slots;
        while quota_total > available {
            let i = (0..n)
                .max_by_key(|&i| quotas[i].saturating_sub(quota_min[i]))
                .expect("services nonempty");
            if quotas[i] == quota_min[i] {
                return Err(GenError::Infeasible {
                    need: quota_total * PACKET_BITS,
                    channel: config.channel_rate,
                });
            }
            quotas[i] -= 1;
            quota_total -= 1;
        }

        let gop_start_time = slot_time(gop_start_slot);
        let schedule = schedule_gop(slots, &quotas, psi_count, n as u16, |k| {
            let due = psi_due + k as f64 * config.psi_interval;
            let local = ((due - gop_start_time) * rate / PACKET_BITS as f64).ceil();
            (local.max(0.0) as u64).min(slots.saturating_sub(1))
        });
        psi_due += psi_count as f64 * config.psi_interval;

        for slot_kind in schedule {
            let t = slot_time(global_slot);
            match slot_kind {
                Slot::Psi(idx) => {
                    let (pid, section) = if idx == 0 {
                        (Pid::PAT, &pat)
                    } else {
                        (MuxConfig::pmt_pid(idx as usize - 1), &pmts[idx as usize - 1])
                    };
                    let cc = &mut psi_continuity[idx as usize];
                    let packets = sectionize(section, pid, *cc);
                    debug_assert_eq!(packets.len(), 1, "generated PSI fits one packet");
                    *cc = (*cc + packets.len() as u8) & 0x0F;
                    write_packet(&packets[0], writer, &mut out_buf)?;
                }
                Slot::Service(i) => {
                    let i = i as usize;
                    let with_pcr = t + 1e-12 >= pcr_due[i];
                    let packet = make_service_packet(
                        services[i].pid,
                        &mut continuity[i],
                        with_pcr.then(|| Pcr::from_ticks(slot_ticks(global_slot))),
                        &mut payload_rngs[i],
                    );
                    if with_pcr {
                        pcr_due[i] = t + config.pcr_interval;
                    }
                    sent_bits[i] += PACKET_BITS;
                    write_packet(&packet, writer, &mut out_buf)?;
                }
                Slot::Null => {
                    let packet = make_null_packet(null_continuity);
                    null_continuity = (null_continuity + 1) & 0x0F;
                    write_packet(&packet, writer, &mut out_buf)?;
                }
            }
            global_slot += 1;
        }
    }
    if !out_buf.is_empty() {
        writer.write_all(&out_buf)?;
    }
    writer.flush()?;
    Ok(())
}

fn write_packet<W: Write>(p: &TsPacket, w: &mut W, buf: &mut Vec<u8>) -> Result<(), GenError> {
    let bytes = p.serialize().expect("generated packets are well-formed");
    buf.extend_from_slice(&bytes);
    if buf.len() >= 4096 * PACKET_LEN {
        w.write_all(buf)?;
        buf.clear();
    }
    Ok(())
}

fn build_pat(services: &[EncoderModel]) -> Result<Section, GenError> {
    let pat = Pat {
        transport_stream_id: 1,
        version: 0,
        entries: services
            .iter()
            .enumerate()
            .map(|(i, s)| PatEntry {
                program_number: s.service_id,
                pid: MuxConfig::pmt_pid(i),
            })
            .collect(),
    };
    serialize_pat(&pat).map_err(|e| GenError::InvalidConfig(e.to_string()))
}

fn build_pmt(service: &EncoderModel) -> Result<Section, GenError> {
    let pmt = Pmt {
        program_number: service.service_id,
        version: 0,
        pcr_pid: service.pid,
        program_info: vec![],
        streams: vec![EsEntry {
            stream_type: 0x02, // MPEG-2 video
            pid: service.pid,
            es_info: vec![],
        }],
    };
    serialize_pmt(&pmt).map_err(|e| GenError::InvalidConfig(e.to_string()))
}

fn make_service_packet(
    pid: Pid,
    continuity: &mut u8,
    pcr: Option<Pcr>,
    rng: &mut ChaCha8Rng,
) -> TsPacket {
    let cc = *continuity;
    *continuity = (*continuity + 1) & 0x0F;
    match pcr {
        Some(pcr) => {
            let af = AdaptationField::with_pcr(pcr);
            let mut payload = vec![0u8; BODY_LEN - af.encoded_len()];
            rng.fill_bytes(&mut payload);
            TsPacket {
                pid,
                payload_unit_start: false,
                transport_error: false,
                priority: false,
                scrambling: 0,
                continuity_counter: cc,
                adaptation: Some(af),
                payload: Some(payload),
            }
        }
        None => {
            let mut payload = vec![0u8; BODY_LEN];
            rng.fill_bytes(&mut payload);
            TsPacket::payload_only(pid, false, cc, payload)
        }
    }
}

/// Lays out one GOP: PSI bursts pinned near their due slots, service and
/// null packets spread evenly by credit scheduling.
fn schedule_gop(
    slots: u64,
    quotas: &[u64],
    psi_bursts: u64,
    services: u16,
    burst_slot: impl Fn(u64) -> u64,
) -> Vec<Slot> {
    let mut schedule = vec![None::<Slot>; slots as usize];
    // pin PSI bursts: PAT then one PMT per program, in consecutive free slots
    let mut cursor = 0u64;
    for k in 0..psi_bursts {
        let mut at = burst_slot(k).max(cursor);
        for idx in 0..=services {
            while (at as usize) < schedule.len() && schedule[at as usize].is_some() {
                at += 1;
            }
            if (at as usize) >= schedule.len() {
                break;
            }
            schedule[at as usize] = Some(Slot::Psi(idx));
            at += 1;
        }
        cursor = at;
    }

    let quota_total: u64 = quotas.iter().sum();
    let free = schedule.iter().filter(|s| s.is_none()).count() as u64;
    let nulls = free - quota_total;
    let mut left: Vec<u64> = quotas.to_vec();
    left.push(nulls);
    let weights: Vec<f64> = left.iter().map(|&q| q as f64 / free as f64).collect();
    let mut credit = vec![0.0f64; left.len()];
    for cell in schedule.iter_mut() {
        if cell.is_some() {
            continue;
        }
        for (c, w) in credit.iter_mut().zip(weights.iter()) {
            *c += w;
        }
        // most-credited source that still owes packets
        let pick = (0..credit.len())
            .filter(|&i| left[i] > 0)
            .max_by(|&a, &b| credit[a].partial_cmp(&credit[b]).expect("finite credit"))
            .expect("quotas sum to the free slot count");
        credit[pick] -= 1.0;
        left[pick] -= 1;
        *cell = Some(if pick == quotas.len() {
            Slot::Null
        } else {
            Slot::Service(pick as u16)
        });
    }
    schedule.into_iter().map(|s| s.expect("every slot filled")).collect()
}
