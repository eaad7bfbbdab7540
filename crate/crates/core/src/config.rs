//! Operator configuration.
//!
//! Lookup order: the `--config` flag, then `GREENUNIT_CONFIG`, then
//! `./greenunit.toml`, then built-in defaults. Relative paths inside a file
//! resolve against that file's directory. Command-line flags override the
//! matching fields.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_factors, ConditionSpec, EmissionFactors, TrackingProfile};
use crate::report::{ProjectionSpec, SeriesRef, DEFAULT_FLIGHT_RT_TONNES};
use crate::runner::{BrowserConfig, EnvironmentConfig};
use crate::sampler::{MachineSpec, ProviderKind, ProviderSpec};
use crate::stats::DEFAULT_ALPHA;

pub const CONFIG_ENV: &str = "GREENUNIT_CONFIG";
pub const DEFAULT_CONFIG_FILE: &str = "greenunit.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub scenario: PathBuf,
    /// Scenario for encryption-enabled runs; required by `pgp` conditions.
    pub pgp_scenario: Option<PathBuf>,
    pub selectors: BTreeMap<String, String>,
    pub vars: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub quota: usize,
    pub max_iterations: usize,
    pub settle_ms: u64,
    /// File offered to `{attachment}` placeholders.
    pub attachment_path: Option<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            quota: crate::model::MIN_RETAINED,
            max_iterations: 3 * crate::model::MIN_RETAINED,
            settle_ms: crate::runner::DEFAULT_SETTLE.as_millis() as u64,
            attachment_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub flight_rt_tonnes: f64,
    pub alpha: f64,
    pub projections: Vec<ProjectionSpec>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            flight_rt_tonnes: DEFAULT_FLIGHT_RT_TONNES,
            alpha: DEFAULT_ALPHA,
            projections: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store_path: PathBuf,
    pub factors: EmissionFactors,
    pub machine: MachineSpec,
    pub providers: Vec<ProviderSpec>,
    pub services: BTreeMap<String, ServiceConfig>,
    /// Extra or overriding named condition presets.
    pub conditions: BTreeMap<String, ConditionSpec>,
    pub browser: BrowserConfig,
    pub environment: EnvironmentConfig,
    pub campaign: CampaignConfig,
    pub report: ReportConfig,
    /// Where the config came from, if a file.
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

fn default_providers() -> Vec<ProviderSpec> {
    vec![
        ProviderSpec::new(ProviderKind::EnergyCounter, "cpu", "/sys/class/powercap/intel-rapl:0"),
        ProviderSpec::new(ProviderKind::EnergyCounter, "memory", "/sys/class/powercap/intel-rapl:0/intel-rapl:0:2"),
        ProviderSpec::new(ProviderKind::MachinePowerModel, "machine", "/proc/stat"),
        ProviderSpec::new(ProviderKind::NetworkCounter, "net", "eth0"),
    ]
}

impl Default for Config {
    fn default() -> Self {
        Self {
            store_path: "greenunit-store".into(),
            factors: EmissionFactors::default(),
            machine: MachineSpec::default(),
            providers: default_providers(),
            services: BTreeMap::new(),
            conditions: BTreeMap::new(),
            browser: BrowserConfig::default(),
            environment: EnvironmentConfig::default(),
            campaign: CampaignConfig::default(),
            report: ReportConfig::default(),
            source: None,
        }
    }
}

/// Presets available without any configuration.
pub fn builtin_conditions() -> BTreeMap<String, ConditionSpec> {
    let base = ConditionSpec::default();
    let remote = 50;
    [
        ("baseline", base),
        ("adblock", ConditionSpec { adblock: true, ..base }),
        (
            "restrictive",
            ConditionSpec {
                tracking_profile: TrackingProfile::Restrictive,
                ..base
            },
        ),
        (
            "adblock-restrictive",
            ConditionSpec {
                adblock: true,
                tracking_profile: TrackingProfile::Restrictive,
                ..base
            },
        ),
        ("pgp", ConditionSpec { pgp: true, ..base }),
        (
            "remote",
            ConditionSpec {
                injected_latency_ms: remote,
                ..base
            },
        ),
        (
            "pgp-remote",
            ConditionSpec {
                pgp: true,
                injected_latency_ms: remote,
                ..base
            },
        ),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl Config {
    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Config =
            toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.source = Some(path.to_path_buf());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the lookup order described in the module docs.
    pub fn discover(flag: Option<&Path>) -> Result<Self> {
        if let Some(p) = flag {
            return Self::load(p);
        }
        if let Some(p) = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()) {
            return Self::load(Path::new(&p));
        }
        let local = Path::new(DEFAULT_CONFIG_FILE);
        if local.is_file() {
            return Self::load(local);
        }
        Ok(Self::default())
    }

    fn resolve_paths(&mut self, base: &Path) {
        absolutize(base, &mut self.store_path);
        for svc in self.services.values_mut() {
            absolutize(base, &mut svc.scenario);
            if let Some(p) = svc.pgp_scenario.as_mut() {
                absolutize(base, p);
            }
        }
        if let Some(p) = self.campaign.attachment_path.as_mut() {
            absolutize(base, p);
        }
        for p in self.browser.profiles.values_mut() {
            absolutize(base, p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_factors(&self.factors).into_result()?;
        self.machine.validate()?;
        for p in &self.providers {
            p.validate()?;
        }
        let mut missing = Vec::new();
        for (name, svc) in &self.services {
            crate::store::check_service_name(name)?;
            for p in std::iter::once(&svc.scenario).chain(svc.pgp_scenario.as_ref()) {
                if !p.is_file() {
                    missing.push(format!("service '{name}': scenario file {} not found", p.display()));
                }
            }
        }
        if let Some(p) = &self.campaign.attachment_path {
            if !p.is_file() {
                missing.push(format!("attachment file {} not found", p.display()));
            }
        }
        for (label, p) in &self.browser.profiles {
            if !p.is_dir() {
                missing.push(format!("browser profile '{label}': directory {} not found", p.display()));
            }
        }
        if !missing.is_empty() {
            return Err(Error::NotFound(missing.join("; ")));
        }
        if self.campaign.quota == 0 || self.campaign.max_iterations < self.campaign.quota {
            return Err(Error::InvalidInput(format!(
                "campaign: need 1 <= quota <= max_iterations (got {} and {})",
                self.campaign.quota, self.campaign.max_iterations
            )));
        }
        if !(self.report.flight_rt_tonnes.is_finite() && self.report.flight_rt_tonnes > 0.0) {
            return Err(Error::InvalidInput("report.flight_rt_tonnes must be positive".into()));
        }
        Ok(())
    }

    /// Built-in presets overlaid with the configured ones.
    pub fn condition_presets(&self) -> BTreeMap<String, ConditionSpec> {
        let mut all = builtin_conditions();
        all.extend(self.conditions.iter().map(|(k, v)| (k.clone(), *v)));
        all
    }

    /// A preset name or a full condition label.
    pub fn resolve_condition(&self, name: &str) -> Result<ConditionSpec> {
        if let Some(c) = self.condition_presets().get(name) {
            return Ok(*c);
        }
        ConditionSpec::from_label(name).map_err(|_| {
            let names: Vec<String> = self.condition_presets().into_keys().collect();
            Error::InvalidInput(format!(
                "unknown condition '{name}': use a preset ({}) or a label like {}",
                names.join(", "),
                ConditionSpec::default().label()
            ))
        })
    }

    /// Parses `service[:condition]`; the condition defaults to baseline.
    pub fn series_ref(&self, text: &str) -> Result<SeriesRef> {
        let (service, cond) = text.split_once(':').unwrap_or((text, "baseline"));
        crate::store::check_service_name(service)?;
        Ok(SeriesRef::new(service, self.resolve_condition(cond)?))
    }

    pub fn service(&self, name: &str) -> Result<&ServiceConfig> {
        self.services.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.services.keys().map(String::as_str).collect();
            Error::NotFound(format!(
                "service '{name}' is not configured (known: {})",
                if known.is_empty() { "none".to_string() } else { known.join(", ") }
            ))
        })
    }
}
