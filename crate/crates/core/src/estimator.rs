//! Link-budget channel estimator.
//!
//! On a store miss the configuration is derived deterministically:
//!
//! ```text
//! path_loss = 20·log10(4π·d·f/c) + k_abs(f, humidity)·d
//! noise     = −174 + 10·log10(B) + NF                       (dBm)
//! snr       = P_tx + G_tx + G_rx − path_loss − noise         (dB)
//! ```
//!
//! and the highest-order modulation whose bit error rate stays within the
//! requested bound is selected. BPSK uses `Q(√(2γ))`, square M-QAM (QPSK
//! included) the nearest-neighbour approximation
//! `(4/log2 M)·(1−1/√M)·Q(√(3γ/(M−1)))`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{make_config_key, BucketGrid, ChannelConfig, ChannelState, ConfigKey, Modulation, QosRequirements};
use crate::store::{ConfigStore, StorageError};

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;
/// Thermal noise density at 290 K.
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

/// Atmospheric absorption coefficients (dB/m) by frequency band and humidity.
///
/// A humidity falls into bucket `i` where `i` is the number of edges that are
/// `<=` the humidity. Bands without an explicit row use `default_db_per_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionTable {
    pub band_width_hz: f64,
    pub humidity_edges_pct: Vec<f64>,
    pub default_db_per_m: Vec<f64>,
    #[serde(default)]
    pub bands: BTreeMap<u32, Vec<f64>>,
}

impl Default for AbsorptionTable {
    fn default() -> Self {
        Self {
            band_width_hz: 100e9,
            humidity_edges_pct: vec![50.0],
            default_db_per_m: vec![0.5, 2.0],
            bands: BTreeMap::new(),
        }
    }
}

impl AbsorptionTable {
    /// A table with the same coefficient everywhere.
    pub fn uniform(k_abs_db_per_m: f64) -> Self {
        Self {
            band_width_hz: 100e9,
            humidity_edges_pct: Vec::new(),
            default_db_per_m: vec![k_abs_db_per_m],
            bands: BTreeMap::new(),
        }
    }

    pub fn band_index(&self, frequency_hz: f64) -> u32 {
        (frequency_hz / self.band_width_hz).floor() as u32
    }

    pub fn humidity_bucket(&self, humidity_pct: f64) -> usize {
        self.humidity_edges_pct.iter().filter(|&&e| e <= humidity_pct).count()
    }

    pub fn k_abs(&self, frequency_hz: f64, humidity_pct: f64) -> f64 {
        let row = self
            .bands
            .get(&self.band_index(frequency_hz))
            .unwrap_or(&self.default_db_per_m);
        row[self.humidity_bucket(humidity_pct)]
    }

    fn validate(&self) -> Result<(), ParamsError> {
        let width = self.humidity_edges_pct.len() + 1;
        if !(self.band_width_hz.is_finite() && self.band_width_hz > 0.0) {
            return Err(ParamsError::Invalid("absorption.band_width_hz must be positive".into()));
        }
        if self.humidity_edges_pct.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ParamsError::Invalid(
                "absorption.humidity_edges_pct must be increasing".into(),
            ));
        }
        let rows = std::iter::once((None, &self.default_db_per_m)).chain(self.bands.iter().map(|(b, r)| (Some(*b), r)));
        for (band, row) in rows {
            let name = band.map_or("default".to_string(), |b| format!("band {b}"));
            if row.len() != width {
                return Err(ParamsError::Invalid(format!(
                    "absorption {name}: expected {width} coefficients, got {}",
                    row.len()
                )));
            }
            if row.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
                return Err(ParamsError::Invalid(format!(
                    "absorption {name}: coefficients must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkBudgetParams {
    pub tx_power_dbm: f64,
    pub g_tx_dbi: f64,
    pub g_rx_dbi: f64,
    pub noise_figure_db: f64,
    /// Passed through unchanged into every derived configuration.
    pub code_rate: f64,
    pub absorption: AbsorptionTable,
    /// Extra absorption per metre per degree above `reference_temperature_c`.
    pub temperature_coeff_db_per_m_per_c: Option<f64>,
    pub reference_temperature_c: f64,
    pub estimate_cost_ms: f64,
    pub cache_hit_cost_ms: f64,
}

impl Default for LinkBudgetParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: 10.0,
            g_tx_dbi: 25.0,
            g_rx_dbi: 25.0,
            noise_figure_db: 10.0,
            code_rate: 0.75,
            absorption: AbsorptionTable::default(),
            temperature_coeff_db_per_m_per_c: None,
            reference_temperature_c: 20.0,
            estimate_cost_ms: 20.0,
            cache_hit_cost_ms: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid link budget parameters: {0}")]
    Invalid(String),
}

impl LinkBudgetParams {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParamsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let params: Self = serde_path_to_error::deserialize(de).map_err(|e| ParamsError::Parse {
            path: path.display().to_string(),
            msg: format!("{}: {}", e.path(), e.inner()),
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let finite = [
            ("tx_power_dbm", self.tx_power_dbm),
            ("g_tx_dbi", self.g_tx_dbi),
            ("g_rx_dbi", self.g_rx_dbi),
            ("noise_figure_db", self.noise_figure_db),
            ("reference_temperature_c", self.reference_temperature_c),
        ];
        if let Some((name, _)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(ParamsError::Invalid(format!("{name} must be finite")));
        }
        if !(self.code_rate > 0.0 && self.code_rate <= 1.0) {
            return Err(ParamsError::Invalid("code_rate must be in (0, 1]".into()));
        }
        if self.estimate_cost_ms < 0.0 || self.cache_hit_cost_ms < 0.0 {
            return Err(ParamsError::Invalid("costs must be >= 0".into()));
        }
        self.absorption.validate()
    }

    /// Absorption coefficient after the optional temperature correction.
    pub fn k_abs(&self, frequency_hz: f64, state: &ChannelState) -> f64 {
        let base = self.absorption.k_abs(frequency_hz, state.humidity_pct);
        let corr = self
            .temperature_coeff_db_per_m_per_c
            .map_or(0.0, |c| c * (state.temperature_c - self.reference_temperature_c));
        (base + corr).max(0.0)
    }
}

pub fn free_space_path_loss_db(distance_m: f64, frequency_hz: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * distance_m * frequency_hz / SPEED_OF_LIGHT_M_S).log10()
}

pub fn path_loss_db(distance_m: f64, frequency_hz: f64, state: &ChannelState, params: &LinkBudgetParams) -> f64 {
    free_space_path_loss_db(distance_m, frequency_hz) + params.k_abs(frequency_hz, state) * distance_m
}

pub fn noise_floor_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

/// Modelled SNR of the link; `measured_snr_db` is not consulted here.
pub fn snr_db(qos: &QosRequirements, state: &ChannelState, params: &LinkBudgetParams) -> f64 {
    let loss = path_loss_db(state.distance_m, state.frequency_hz, state, params);
    params.tx_power_dbm + params.g_tx_dbi + params.g_rx_dbi
        - loss
        - noise_floor_dbm(qos.bandwidth_hz, params.noise_figure_db)
}

/// Gaussian tail probability `Q(x) = erfc(x/√2)/2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Bit error rate at linear SNR `gamma`, before clamping.
pub fn ber_linear(modulation: Modulation, gamma: f64) -> f64 {
    match modulation {
        Modulation::Bpsk => q_function((2.0 * gamma).sqrt()),
        m => {
            let order = f64::from(m.order());
            let k = f64::from(m.bits_per_symbol());
            (4.0 / k) * (1.0 - 1.0 / order.sqrt()) * q_function((3.0 * gamma / (order - 1.0)).sqrt())
        }
    }
}

/// Bit error rate at `snr_db`, within `[f64::MIN_POSITIVE, 0.5]` (the floor
/// replaces values that underflow).
pub fn ber_of(modulation: Modulation, snr_db: f64) -> f64 {
    ber_linear(modulation, db_to_linear(snr_db)).clamp(f64::MIN_POSITIVE, 0.5)
}

/// Highest-order modulation meeting `ber_max`, or `None` when even BPSK fails.
pub fn select_modulation(snr_db: f64, ber_max: f64) -> Option<Modulation> {
    Modulation::ALL
        .iter()
        .rev()
        .copied()
        .find(|&m| ber_of(m, snr_db) <= ber_max)
}

/// Derives a configuration for the link, or `None` if no modulation meets the
/// QoS bound. A measured SNR lower than the model's takes precedence.
pub fn derive_config(qos: &QosRequirements, state: &ChannelState, params: &LinkBudgetParams) -> Option<ChannelConfig> {
    let modelled = snr_db(qos, state, params);
    let snr = state.measured_snr_db.map_or(modelled, |m| m.min(modelled));
    let modulation = select_modulation(snr, qos.ber_max)?;
    Some(ChannelConfig {
        modulation,
        code_rate: params.code_rate,
        bandwidth_hz: qos.bandwidth_hz,
        tx_power_dbm: params.tx_power_dbm,
        predicted_snr_db: snr,
        predicted_ber: ber_of(modulation, snr),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    CacheHit,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOutcome {
    pub config: ChannelConfig,
    pub provenance: Provenance,
    pub compute_cost_ms: f64,
}

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("no modulation satisfies ber_max {ber_max} at {snr_db:.2} dB")]
    Rejected { snr_db: f64, ber_max: f64 },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Looks the link up in `store`; on a miss derives a configuration and writes
/// it back under the bucketed key.
pub fn estimate(
    qos: &QosRequirements,
    state: &ChannelState,
    params: &LinkBudgetParams,
    grid: &BucketGrid,
    store: &ConfigStore,
) -> Result<EstimateOutcome, EstimateError> {
    let key: ConfigKey = make_config_key(qos, state, grid);
    if let Some(rec) = store.read(&key) {
        return Ok(EstimateOutcome {
            config: rec.config,
            provenance: Provenance::CacheHit,
            compute_cost_ms: params.cache_hit_cost_ms,
        });
    }
    let config = derive_config(qos, state, params).ok_or_else(|| EstimateError::Rejected {
        snr_db: snr_db(qos, state, params),
        ber_max: qos.ber_max,
    })?;
    store.write(key, config)?;
    Ok(EstimateOutcome {
        config,
        provenance: Provenance::Estimated,
        compute_cost_ms: params.estimate_cost_ms,
    })
}
