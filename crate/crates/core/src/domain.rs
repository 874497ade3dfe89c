//! Shared vocabulary: QoS requirements, channel measurements, link
//! configurations, request/response envelopes and the bucketed lookup key
//! used to match incoming requests against stored configurations.
//!
//! Every type here is a plain value (`Clone + Send + Sync`), serialized as
//! JSON with snake_case field names.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest accepted carrier frequency (0.1 THz).
pub const MIN_FREQUENCY_HZ: f64 = 0.1e12;
/// Highest accepted carrier frequency (10 THz).
pub const MAX_FREQUENCY_HZ: f64 = 10e12;

pub type RequestId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    Bulk,
    Stream,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosRequirements {
    pub bitrate_bps: f64,
    pub ber_max: f64,
    pub bandwidth_hz: f64,
    pub data_type: DataType,
    pub deadline_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub frequency_hz: f64,
    pub distance_m: f64,
    pub humidity_pct: f64,
    pub temperature_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_snr_db: Option<f64>,
}

/// Modulation formats, ordered by spectral efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "BPSK")]
    Bpsk,
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "QAM16")]
    Qam16,
    #[serde(rename = "QAM64")]
    Qam64,
}

impl Modulation {
    /// Lowest to highest order.
    pub const ALL: [Modulation; 4] = [Modulation::Bpsk, Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64];

    /// Constellation size M.
    pub fn order(self) -> u32 {
        match self {
            Modulation::Bpsk => 2,
            Modulation::Qpsk => 4,
            Modulation::Qam16 => 16,
            Modulation::Qam64 => 64,
        }
    }

    pub fn bits_per_symbol(self) -> u32 {
        self.order().trailing_zeros()
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modulation::Bpsk => "BPSK",
            Modulation::Qpsk => "QPSK",
            Modulation::Qam16 => "QAM16",
            Modulation::Qam64 => "QAM64",
        };
        f.write_str(s)
    }
}

/// A THz link configuration, the payload answered to a base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub modulation: Modulation,
    pub code_rate: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub predicted_snr_db: f64,
    pub predicted_ber: f64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), InvalidRequest> {
        let mut errs = Vec::new();
        if !(self.code_rate > 0.0 && self.code_rate <= 1.0) {
            errs.push(ValidationError::new("code_rate", "must be in (0, 1]"));
        }
        if !(0.0..=0.5).contains(&self.predicted_ber) {
            errs.push(ValidationError::new("predicted_ber", "must be in [0, 0.5]"));
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            errs.push(ValidationError::new("bandwidth_hz", "must be positive"));
        }
        if !self.tx_power_dbm.is_finite() {
            errs.push(ValidationError::new("tx_power_dbm", "must be finite"));
        }
        if !self.predicted_snr_db.is_finite() {
            errs.push(ValidationError::new("predicted_snr_db", "must be finite"));
        }
        InvalidRequest::from_errors(errs)
    }
}

/// Bucketed identity of a (QoS, channel state) pair.
///
/// Index order: frequency, distance, humidity, temperature, bitrate decade,
/// BER exponent, bandwidth decade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigKey(pub [i64; 7]);

impl fmt::Display for ConfigKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(i64::to_string).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Bucket widths for [`make_config_key`].
///
/// Linear dimensions use `floor(x / width)`; bitrate, BER bound and bandwidth
/// use `floor(log10(x) / log_bucket_decades)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BucketGrid {
    pub frequency_hz: f64,
    pub distance_m: f64,
    pub humidity_pct: f64,
    pub temperature_c: f64,
    pub log_bucket_decades: f64,
}

impl Default for BucketGrid {
    fn default() -> Self {
        Self {
            frequency_hz: 10e9,
            distance_m: 1.0,
            humidity_pct: 10.0,
            temperature_c: 5.0,
            log_bucket_decades: 1.0,
        }
    }
}

fn linear_bucket(x: f64, width: f64) -> i64 {
    (x / width).floor() as i64
}

fn log_bucket(x: f64, decades: f64) -> i64 {
    (x.log10() / decades).floor() as i64
}

pub fn make_config_key(qos: &QosRequirements, state: &ChannelState, grid: &BucketGrid) -> ConfigKey {
    ConfigKey([
        linear_bucket(state.frequency_hz, grid.frequency_hz),
        linear_bucket(state.distance_m, grid.distance_m),
        linear_bucket(state.humidity_pct, grid.humidity_pct),
        linear_bucket(state.temperature_c, grid.temperature_c),
        log_bucket(qos.bitrate_bps, grid.log_bucket_decades),
        log_bucket(qos.ber_max, grid.log_bucket_decades),
        log_bucket(qos.bandwidth_hz, grid.log_bucket_decades),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    UserAssign,
    ResourceQuery,
    ResourceUpdate,
    TrafficEngineer,
    ChannelEstimate,
}

impl RequestKind {
    pub const ALL: [RequestKind; 5] = [
        RequestKind::UserAssign,
        RequestKind::ResourceQuery,
        RequestKind::ResourceUpdate,
        RequestKind::TrafficEngineer,
        RequestKind::ChannelEstimate,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestEnvelope {
    pub id: RequestId,
    pub kind: RequestKind,
    pub qos: QosRequirements,
    pub state: ChannelState,
    /// Nanoseconds on the receiving side's clock.
    pub arrival_ts: u64,
    pub deadline_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Timeout,
    Rejected,
    Failed,
}

impl Status {
    pub const ALL: [Status; 4] = [Status::Ok, Status::Timeout, Status::Rejected, Status::Failed];

    /// HTTP status code used on the wire.
    pub fn http_code(self) -> u16 {
        match self {
            Status::Ok => 200,
            Status::Timeout => 504,
            Status::Rejected => 429,
            Status::Failed => 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseEnvelope {
    pub id: RequestId,
    pub status: Status,
    pub config: Option<ChannelConfig>,
    pub completion_ts: u64,
    pub payload_bytes: u64,
}

impl ResponseEnvelope {
    /// Serializes the envelope with `payload_bytes` set to the length of the
    /// serialization itself.
    pub fn to_json_sized(mut self) -> Vec<u8> {
        self.payload_bytes = 0;
        loop {
            let body = serde_json::to_vec(&self).expect("envelope serializes");
            if body.len() as u64 == self.payload_bytes {
                return body;
            }
            self.payload_bytes = body.len() as u64;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {reason}")]
pub struct ValidationError {
    pub field: &'static str,
    pub reason: String,
}

impl ValidationError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Self {
            field,
            reason: reason.into(),
        }
    }
}

/// All invariant violations found in one value.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid request: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct InvalidRequest(pub Vec<ValidationError>);

impl InvalidRequest {
    fn from_errors(errs: Vec<ValidationError>) -> Result<(), InvalidRequest> {
        if errs.is_empty() {
            Ok(())
        } else {
            Err(InvalidRequest(errs))
        }
    }

    pub fn fields(&self) -> Vec<&'static str> {
        self.0.iter().map(|e| e.field).collect()
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl QosRequirements {
    fn collect_errors(&self, errs: &mut Vec<ValidationError>) {
        if !positive(self.bitrate_bps) {
            errs.push(ValidationError::new("bitrate_bps", "must be positive"));
        }
        if !(self.ber_max > 0.0 && self.ber_max < 0.5) {
            errs.push(ValidationError::new("ber_max", "must be in (0, 0.5)"));
        }
        if !positive(self.bandwidth_hz) {
            errs.push(ValidationError::new("bandwidth_hz", "must be positive"));
        }
        if !positive(self.deadline_ms) {
            errs.push(ValidationError::new("qos.deadline_ms", "must be positive"));
        }
    }

    pub fn validate(&self) -> Result<(), InvalidRequest> {
        let mut errs = Vec::new();
        self.collect_errors(&mut errs);
        InvalidRequest::from_errors(errs)
    }
}

impl ChannelState {
    fn collect_errors(&self, errs: &mut Vec<ValidationError>) {
        if !(MIN_FREQUENCY_HZ..=MAX_FREQUENCY_HZ).contains(&self.frequency_hz) {
            errs.push(ValidationError::new("frequency_hz", "must be within 0.1 THz to 10 THz"));
        }
        if !positive(self.distance_m) {
            errs.push(ValidationError::new("distance_m", "must be positive"));
        }
        if !(0.0..=100.0).contains(&self.humidity_pct) {
            errs.push(ValidationError::new("humidity_pct", "must be within [0, 100]"));
        }
        if !(-40.0..=85.0).contains(&self.temperature_c) {
            errs.push(ValidationError::new("temperature_c", "must be within [-40, 85]"));
        }
        if let Some(snr) = self.measured_snr_db {
            if !snr.is_finite() {
                errs.push(ValidationError::new("measured_snr_db", "must be finite"));
            }
        }
    }

    pub fn validate(&self) -> Result<(), InvalidRequest> {
        let mut errs = Vec::new();
        self.collect_errors(&mut errs);
        InvalidRequest::from_errors(errs)
    }
}

/// Returns the request unchanged iff every field invariant holds.
pub fn validate_request(raw: RequestEnvelope) -> Result<RequestEnvelope, InvalidRequest> {
    let mut errs = Vec::new();
    raw.qos.collect_errors(&mut errs);
    raw.state.collect_errors(&mut errs);
    if !positive(raw.deadline_ms) {
        errs.push(ValidationError::new("deadline_ms", "must be positive"));
    }
    InvalidRequest::from_errors(errs).map(|()| raw)
}
