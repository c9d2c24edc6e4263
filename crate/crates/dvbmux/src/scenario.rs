//! TOML scenario files for the generator, and the rate notation shared by
//! scenarios and command-line flags.
//!
//! ```toml
//! channel_rate = "38M"
//! seed = 42
//!
//! [[service]]
//! id = 1
//! pid = 0x0100
//! mode = "abr"
//! min_rate = "1M"
//! max_rate = "8M"
//! profile = "sports"
//! ```
//!
//! Each service takes either a `profile` (with optional `trace_seed` and
//! `gops`) or an explicit `complexity` array.

use crate::statmux::{
    gen_complexity, EncoderModel, MuxConfig, Profile, RateMode, DEFAULT_GOP_DURATION,
    DEFAULT_PCR_INTERVAL, DEFAULT_PSI_INTERVAL,
};
use crate::ts::Pid;
use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Toml(String),
    #[error("bad rate {0:?}: expected bits/second, optionally with a k or M suffix")]
    BadRate(String),
    #[error("service {0}: PID {1:#06x} is reserved or out of range")]
    BadPid(u16, u16),
    #[error("scenario lists no services")]
    NoServices,
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Parses `"38M"`, `"500k"`, `"1.8M"` or plain digits into bits/second.
pub fn parse_rate(text: &str) -> Result<u64, ScenarioError> {
    let s = text.trim();
    let err = || ScenarioError::BadRate(text.to_string());
    if s.is_empty() {
        return Err(err());
    }
    let (number, scale) = match s.as_bytes()[s.len() - 1] {
        b'k' | b'K' => (&s[..s.len() - 1], 1_000.0),
        b'M' => (&s[..s.len() - 1], 1_000_000.0),
        _ => (s, 1.0),
    };
    let value: f64 = number.trim().parse().map_err(|_| err())?;
    if !(value >= 0.0) || !value.is_finite() {
        return Err(err());
    }
    let bps = value * scale;
    if bps > u64::MAX as f64 || bps.fract() != 0.0 {
        return Err(err());
    }
    Ok(bps as u64)
}

/// Formats bits/second compactly: `38M`, `1.8M`, `500k`, `950`.
pub fn format_rate(bps: u64) -> String {
    if bps >= 1_000_000 && bps % 100_000 == 0 {
        let m = bps as f64 / 1e6;
        if bps % 1_000_000 == 0 {
            format!("{}M", bps / 1_000_000)
        } else {
            format!("{m:.1}M")
        }
    } else if bps >= 1_000 && bps % 1_000 == 0 {
        format!("{}k", bps / 1_000)
    } else {
        bps.to_string()
    }
}

/// A bits/second value that deserializes from an integer or a suffixed
/// string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rate(pub u64);

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Rate, D::Error> {
        struct RateVisitor;
        impl<'de> Visitor<'de> for RateVisitor {
            type Value = Rate;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("bits/second as an integer or a string like \"38M\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Rate, E> {
                Ok(Rate(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Rate, E> {
                u64::try_from(v)
                    .map(Rate)
                    .map_err(|_| E::custom("rate must be nonnegative"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Rate, E> {
                parse_rate(v).map(Rate).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(RateVisitor)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    channel_rate: Rate,
    gop_duration: Option<f64>,
    psi_interval: Option<f64>,
    pcr_interval: Option<f64>,
    seed: Option<u64>,
    #[serde(default)]
    service: Vec<ServiceEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceEntry {
    id: u16,
    pid: u16,
    mode: RateMode,
    min_rate: Rate,
    max_rate: Rate,
    profile: Option<Profile>,
    trace_seed: Option<u64>,
    /// Complexity trace length when generated from a profile; the trace
    /// repeats cyclically past its end.
    gops: Option<usize>,
    /// Explicit per-GOP complexities, overriding `profile`.
    complexity: Option<Vec<f64>>,
}

const DEFAULT_TRACE_GOPS: usize = 256;

/// Loads a scenario document into a generator configuration.
pub fn load_scenario(text: &str) -> Result<MuxConfig, ScenarioError> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| ScenarioError::Toml(e.to_string()))?;
    if file.service.is_empty() {
        return Err(ScenarioError::NoServices);
    }
    let seed = file.seed.unwrap_or(0);
    let mut services = Vec::with_capacity(file.service.len());
    for (i, s) in file.service.iter().enumerate() {
        let pid =
            Pid::new(s.pid).map_err(|_| ScenarioError::BadPid(s.id, s.pid))?;
        let trace = match (&s.complexity, s.profile) {
            (Some(c), _) => c.clone(),
            (None, profile) => {
                let profile = profile.unwrap_or(Profile::Moderate);
                let trace_seed = s
                    .trace_seed
                    .unwrap_or_else(|| seed.wrapping_add(1 + i as u64));
                gen_complexity(trace_seed, s.gops.unwrap_or(DEFAULT_TRACE_GOPS), profile)
            }
        };
        services.push(EncoderModel {
            service_id: s.id,
            mode: s.mode,
            min_rate: s.min_rate.0,
            max_rate: s.max_rate.0,
            complexity_trace: trace,
            pid,
        });
    }
    let config = MuxConfig {
        channel_rate: file.channel_rate.0,
        gop_duration: file.gop_duration.unwrap_or(DEFAULT_GOP_DURATION),
        services,
        psi_interval: file.psi_interval.unwrap_or(DEFAULT_PSI_INTERVAL),
        pcr_interval: file.pcr_interval.unwrap_or(DEFAULT_PCR_INTERVAL),
        seed,
    };
    config
        .validate()
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    Ok(config)
}
