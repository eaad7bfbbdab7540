//! Domain types shared across the harness.
//!
//! Canonical units everywhere inside the crate: grams for CO2e mass, joules
//! for energy, bytes for traffic, seconds for durations. Conversions to kWh,
//! MB or tonnes happen only at the emission formulas and report boundaries.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::stats::TestVerdict;

/// Seconds in a Julian year, used to express device lifetime in seconds.
pub const SECONDS_PER_YEAR: f64 = 365.25 * 86_400.0;

/// Retained runs needed before a series counts as acceptance-grade.
pub const MIN_RETAINED: usize = 100;

/// Energy channels every valid result must carry.
pub const MANDATORY_CHANNELS: [&str; 3] = ["cpu", "memory", "machine"];

/// Every constant of the user-side, network-side and embodied models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmissionFactors {
    /// gCO2e per kWh of grid electricity.
    pub grid_intensity: f64,
    /// kWh per joule.
    pub joule_to_kwh: f64,
    /// kWh per GB of transferred data at `base_year`.
    pub transfer_intensity_base: f64,
    pub base_year: i32,
    /// Years for the transfer intensity to halve.
    pub halving_period_years: f64,
    pub assessment_year: i32,
    /// Total embodied emissions of the user device, gCO2e.
    pub device_embodied_total: f64,
    pub device_lifetime_seconds: f64,
    /// Share of the device attributable to the workload, in (0, 1].
    pub resource_share: f64,
    /// Embodied-to-use emissions ratio for network equipment.
    pub embodied_to_use_ratio: f64,
}

impl Default for EmissionFactors {
    fn default() -> Self {
        Self {
            grid_intensity: 445.0,
            joule_to_kwh: 2.7778e-7,
            transfer_intensity_base: 0.06,
            base_year: 2015,
            halving_period_years: 1.0,
            assessment_year: 2024,
            device_embodied_total: 200_000.0,
            device_lifetime_seconds: 4.5 * SECONDS_PER_YEAR,
            resource_share: 1.0,
            embodied_to_use_ratio: 0.21,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub violations: Vec<String>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidInput(self.violations.join("; ")))
        }
    }
}

/// Checks every [`EmissionFactors`] invariant and lists all violations.
pub fn validate_factors(f: &EmissionFactors) -> ValidationResult {
    let mut violations = Vec::new();
    let mut positive = |name: &str, v: f64| {
        if !(v.is_finite() && v > 0.0) {
            violations.push(format!("{name}: positive required (got {v})"));
        }
    };
    positive("grid_intensity", f.grid_intensity);
    positive("joule_to_kwh", f.joule_to_kwh);
    positive("transfer_intensity_base", f.transfer_intensity_base);
    positive("base_year", f64::from(f.base_year));
    positive("halving_period_years", f.halving_period_years);
    positive("assessment_year", f64::from(f.assessment_year));
    positive("device_embodied_total", f.device_embodied_total);
    positive("device_lifetime_seconds", f.device_lifetime_seconds);
    positive("embodied_to_use_ratio", f.embodied_to_use_ratio);
    if !(f.resource_share > 0.0 && f.resource_share <= 1.0) {
        violations.push(format!(
            "resource_share must be in (0,1] (got {})",
            f.resource_share
        ));
    }
    ValidationResult { violations }
}

/// A named, repeatable user interaction.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FunctionalUnitKind {
    Login,
    NoAttachment,
    Attachment,
    Read,
    Reply,
    Delete,
    Logout,
    Session,
    Custom(String),
}

/// Constituents of a [`FunctionalUnitKind::Session`], in order. `Read`
/// appears twice: once before `Reply`, once before `Delete`.
pub const SESSION_RECIPE: [FunctionalUnitKind; 8] = [
    FunctionalUnitKind::Login,
    FunctionalUnitKind::NoAttachment,
    FunctionalUnitKind::Attachment,
    FunctionalUnitKind::Read,
    FunctionalUnitKind::Reply,
    FunctionalUnitKind::Read,
    FunctionalUnitKind::Delete,
    FunctionalUnitKind::Logout,
];

impl FunctionalUnitKind {
    /// The seven basic mail units, each listed once.
    pub const BASIC: [FunctionalUnitKind; 7] = [
        FunctionalUnitKind::Login,
        FunctionalUnitKind::NoAttachment,
        FunctionalUnitKind::Attachment,
        FunctionalUnitKind::Read,
        FunctionalUnitKind::Reply,
        FunctionalUnitKind::Delete,
        FunctionalUnitKind::Logout,
    ];

    pub fn is_composite(&self) -> bool {
        matches!(self, FunctionalUnitKind::Session)
    }

    pub fn as_str(&self) -> &str {
        match self {
            FunctionalUnitKind::Login => "Login",
            FunctionalUnitKind::NoAttachment => "NoAttachment",
            FunctionalUnitKind::Attachment => "Attachment",
            FunctionalUnitKind::Read => "Read",
            FunctionalUnitKind::Reply => "Reply",
            FunctionalUnitKind::Delete => "Delete",
            FunctionalUnitKind::Logout => "Logout",
            FunctionalUnitKind::Session => "Session",
            FunctionalUnitKind::Custom(s) => s,
        }
    }
}

impl fmt::Display for FunctionalUnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FunctionalUnitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Err(Error::InvalidInput("empty functional unit label".into()));
        }
        let key: String = trimmed
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        Ok(match key.as_str() {
            "login" => FunctionalUnitKind::Login,
            "noattachment" => FunctionalUnitKind::NoAttachment,
            "attachment" => FunctionalUnitKind::Attachment,
            "read" => FunctionalUnitKind::Read,
            "reply" => FunctionalUnitKind::Reply,
            "delete" => FunctionalUnitKind::Delete,
            "logout" => FunctionalUnitKind::Logout,
            "session" => FunctionalUnitKind::Session,
            _ => FunctionalUnitKind::Custom(trimmed.to_string()),
        })
    }
}

impl Serialize for FunctionalUnitKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for FunctionalUnitKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Metrics a comparison can be made on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Duration,
    EnergyMachine,
    EnergyCpu,
    EnergyMemory,
    MeanPowerMachine,
    NetworkBytes,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Duration,
        Metric::EnergyMachine,
        Metric::EnergyCpu,
        Metric::EnergyMemory,
        Metric::MeanPowerMachine,
        Metric::NetworkBytes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Duration => "duration",
            Metric::EnergyMachine => "energy.machine",
            Metric::EnergyCpu => "energy.cpu",
            Metric::EnergyMemory => "energy.memory",
            Metric::MeanPowerMachine => "mean_power.machine",
            Metric::NetworkBytes => "network_bytes",
        }
    }

    pub fn unit_symbol(self) -> &'static str {
        match self {
            Metric::Duration => "s",
            Metric::EnergyMachine | Metric::EnergyCpu | Metric::EnergyMemory => "J",
            Metric::MeanPowerMachine => "W",
            Metric::NetworkBytes => "B",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown metric '{s}'")))
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One execution of one functional unit.
///
/// `duration` and `mean_power` are derived at construction and recomputed on
/// deserialization, so they always agree with the timestamps and energies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ResultRecord")]
pub struct FunctionalUnitResult {
    pub unit: FunctionalUnitKind,
    pub run_id: String,
    pub started_at: u64,
    pub ended_at: u64,
    duration: f64,
    pub energy: BTreeMap<String, f64>,
    pub network_bytes: u64,
    mean_power: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Deserialize)]
struct ResultRecord {
    unit: FunctionalUnitKind,
    run_id: String,
    started_at: u64,
    ended_at: u64,
    #[serde(default)]
    energy: BTreeMap<String, f64>,
    #[serde(default)]
    network_bytes: u64,
    #[serde(default)]
    error: Option<String>,
}

impl TryFrom<ResultRecord> for FunctionalUnitResult {
    type Error = Error;

    fn try_from(r: ResultRecord) -> Result<Self> {
        match r.error {
            Some(message) => Ok(FunctionalUnitResult::failed(
                r.unit,
                r.run_id,
                r.started_at,
                r.ended_at,
                message,
            )),
            None => FunctionalUnitResult::new(
                r.unit,
                r.run_id,
                r.started_at,
                r.ended_at,
                r.energy,
                r.network_bytes,
            ),
        }
    }
}

impl FunctionalUnitResult {
    /// Builds a valid result. Timestamps are nanoseconds on the harness clock.
    pub fn new(
        unit: FunctionalUnitKind,
        run_id: impl Into<String>,
        started_at: u64,
        ended_at: u64,
        energy: BTreeMap<String, f64>,
        network_bytes: u64,
    ) -> Result<Self> {
        if ended_at <= started_at {
            return Err(Error::InvalidInput(format!(
                "{unit}: duration must be positive (started {started_at}, ended {ended_at})"
            )));
        }
        for channel in MANDATORY_CHANNELS {
            if !energy.contains_key(channel) {
                return Err(Error::InvalidInput(format!(
                    "{unit}: missing mandatory energy channel '{channel}'"
                )));
            }
        }
        if let Some((k, v)) = energy.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "{unit}: energy channel '{k}' must be a nonnegative number (got {v})"
            )));
        }
        let duration = (ended_at - started_at) as f64 * 1e-9;
        let mean_power = energy
            .iter()
            .map(|(k, joules)| (k.clone(), joules / duration))
            .collect();
        Ok(Self {
            unit,
            run_id: run_id.into(),
            started_at,
            ended_at,
            duration,
            energy,
            network_bytes,
            mean_power,
            error: None,
        })
    }

    /// A failed execution. It carries no measurements and never enters a
    /// [`MeasurementSeries`].
    pub fn failed(
        unit: FunctionalUnitKind,
        run_id: impl Into<String>,
        started_at: u64,
        ended_at: u64,
        error: impl Into<String>,
    ) -> Self {
        let ended_at = ended_at.max(started_at);
        Self {
            unit,
            run_id: run_id.into(),
            started_at,
            ended_at,
            duration: (ended_at - started_at) as f64 * 1e-9,
            energy: BTreeMap::new(),
            network_bytes: 0,
            mean_power: BTreeMap::new(),
            error: Some(error.into()),
        }
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn mean_power(&self) -> &BTreeMap<String, f64> {
        &self.mean_power
    }

    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }

    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Duration => Some(self.duration),
            Metric::EnergyMachine => self.energy.get("machine").copied(),
            Metric::EnergyCpu => self.energy.get("cpu").copied(),
            Metric::EnergyMemory => self.energy.get("memory").copied(),
            Metric::MeanPowerMachine => self.mean_power.get("machine").copied(),
            Metric::NetworkBytes => Some(self.network_bytes as f64),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackingProfile {
    #[default]
    Permissive,
    Restrictive,
}

impl fmt::Display for TrackingProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrackingProfile::Permissive => "permissive",
            TrackingProfile::Restrictive => "restrictive",
        })
    }
}

/// The experimental condition a run executes under.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionSpec {
    pub adblock: bool,
    pub tracking_profile: TrackingProfile,
    pub pgp: bool,
    pub injected_latency_ms: u32,
}

impl ConditionSpec {
    /// Stable directory-safe label, e.g. `noadblock-permissive-nopgp-0ms`.
    pub fn label(&self) -> String {
        format!(
            "{}-{}-{}-{}ms",
            if self.adblock { "adblock" } else { "noadblock" },
            self.tracking_profile,
            if self.pgp { "pgp" } else { "nopgp" },
            self.injected_latency_ms
        )
    }

    pub fn from_label(label: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("malformed condition label '{label}'"));
        let parts: Vec<&str> = label.split('-').collect();
        let [ab, tp, pgp, lat] = parts.as_slice() else {
            return Err(bad());
        };
        let adblock = match *ab {
            "adblock" => true,
            "noadblock" => false,
            _ => return Err(bad()),
        };
        let tracking_profile = match *tp {
            "permissive" => TrackingProfile::Permissive,
            "restrictive" => TrackingProfile::Restrictive,
            _ => return Err(bad()),
        };
        let pgp = match *pgp {
            "pgp" => true,
            "nopgp" => false,
            _ => return Err(bad()),
        };
        let injected_latency_ms = lat
            .strip_suffix("ms")
            .and_then(|n| n.parse().ok())
            .ok_or_else(bad)?;
        Ok(Self {
            adblock,
            tracking_profile,
            pgp,
            injected_latency_ms,
        })
    }

    pub fn is_baseline(&self) -> bool {
        *self == ConditionSpec::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    Error { message: String },
    Iqr { value: f64, lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterLogEntry {
    pub run_id: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

/// Cleaned results for one (service, condition, unit) triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSeries {
    pub service: String,
    pub condition: ConditionSpec,
    pub unit: FunctionalUnitKind,
    pub raw_count: usize,
    pub valid_count: usize,
    pub retained_count: usize,
    pub results: Vec<FunctionalUnitResult>,
    pub filter_log: Vec<FilterLogEntry>,
    /// Metric the IQR filter ran on.
    pub filter_metric: Metric,
    /// Quantile rule used for Q1/Q3.
    pub quantile_rule: String,
    /// Final IQR bounds, absent when too few results to filter.
    pub iqr_bounds: Option<[f64; 2]>,
}

impl MeasurementSeries {
    pub fn acceptance_grade(&self) -> bool {
        self.retained_count >= MIN_RETAINED
    }

    pub fn values(&self, metric: Metric) -> Vec<f64> {
        self.results.iter().filter_map(|r| r.metric(metric)).collect()
    }
}

/// Paired statistics of one metric between condition A (baseline) and B.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonDelta {
    pub metric: Metric,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_a - mean_b`; positive means B saves.
    pub delta: f64,
    /// `100 * delta / mean_a`; absent when `mean_a` is zero and the means differ.
    pub delta_pct: Option<f64>,
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
    pub degenerate: bool,
    pub normality_a: Option<TestVerdict>,
    pub normality_b: Option<TestVerdict>,
}

/// gCO2e breakdown of one functional unit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmissionEntry {
    pub use_user_g: f64,
    pub use_network_g: f64,
    pub embodied_user_g: f64,
    pub embodied_network_g: f64,
    pub total_g: f64,
}

impl EmissionEntry {
    pub fn new(use_user_g: f64, use_network_g: f64, embodied_user_g: f64, embodied_network_g: f64) -> Self {
        Self {
            use_user_g,
            use_network_g,
            embodied_user_g,
            embodied_network_g,
            total_g: use_user_g + use_network_g + embodied_user_g + embodied_network_g,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmissionReport {
    pub per_unit: BTreeMap<FunctionalUnitKind, EmissionEntry>,
    pub projections: Vec<ScaleProjection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleProjection {
    pub population: f64,
    pub sessions_per_year: f64,
    pub per_session_saving_g: f64,
    pub annual_saving_t: f64,
    pub flight_equivalents: f64,
}
