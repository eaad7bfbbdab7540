use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MetricProvider, ProviderKind, Sample, SampleUnit};
use crate::clock::now_ns;
use crate::error::{Error, Result};

/// Two-point description of whole-machine AC power.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineSpec {
    pub idle_w: f64,
    pub peak_w: f64,
    pub cores: u32,
}

impl Default for MachineSpec {
    fn default() -> Self {
        Self {
            idle_w: 10.0,
            peak_w: 50.0,
            cores: std::thread::available_parallelism().map_or(1, |n| n.get() as u32),
        }
    }
}

impl MachineSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.idle_w.is_finite() && self.idle_w >= 0.0) {
            return Err(Error::InvalidInput(format!("machine.idle_w must be >= 0 (got {})", self.idle_w)));
        }
        if !(self.peak_w.is_finite() && self.peak_w >= self.idle_w) {
            return Err(Error::InvalidInput(format!(
                "machine.peak_w must be >= idle_w (got {} < {})",
                self.peak_w, self.idle_w
            )));
        }
        if self.cores == 0 {
            return Err(Error::InvalidInput("machine.cores must be positive".into()));
        }
        Ok(())
    }
}

/// Watts for each utilisation value: `idle + u * (peak - idle)`.
///
/// Values outside `[0, 1]` are clamped with a warning.
pub fn machine_power_estimate(cpu_util: &[f64], spec: &MachineSpec) -> Vec<f64> {
    cpu_util
        .iter()
        .map(|&u| {
            let clamped = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
            if clamped != u {
                log::warn!("cpu utilisation {u} outside [0,1], clamped to {clamped}");
            }
            spec.idle_w + clamped * (spec.peak_w - spec.idle_w)
        })
        .collect()
}

/// Where utilisation is read from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CpuUtilSource {
    /// Aggregate `cpu` row of a `/proc/stat` style file.
    ProcStat(PathBuf),
    /// `usage_usec` of a cgroup v2 `cpu.stat` file.
    Cgroup(PathBuf),
}

impl CpuUtilSource {
    pub fn from_path(path: &str) -> Self {
        if Path::new(path).file_name().is_some_and(|n| n == "cpu.stat") {
            CpuUtilSource::Cgroup(path.into())
        } else {
            CpuUtilSource::ProcStat(path.into())
        }
    }

    fn path(&self) -> &Path {
        match self {
            CpuUtilSource::ProcStat(p) | CpuUtilSource::Cgroup(p) => p,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Reading {
    /// (busy jiffies, total jiffies)
    Jiffies(u64, u64),
    UsageUs(u64),
}

fn read_source(src: &CpuUtilSource) -> Result<Reading> {
    let path = src.path();
    let text = fs::read_to_string(path).map_err(|e| Error::ProviderUnavailable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let bad = |what: &str| Error::ProviderUnavailable {
        path: path.to_path_buf(),
        reason: format!("cannot parse {what}"),
    };
    match src {
        CpuUtilSource::ProcStat(_) => {
            let row = text
                .lines()
                .find(|l| l.split_whitespace().next() == Some("cpu"))
                .ok_or_else(|| bad("aggregate cpu row"))?;
            let cols: Vec<u64> = row.split_whitespace().skip(1).filter_map(|c| c.parse().ok()).collect();
            if cols.len() < 4 {
                return Err(bad("aggregate cpu row"));
            }
            // guest time is already folded into user/nice
            let total: u64 = cols.iter().take(8).sum();
            let idle = cols[3] + cols.get(4).copied().unwrap_or(0);
            Ok(Reading::Jiffies(total - idle, total))
        }
        CpuUtilSource::Cgroup(_) => text
            .lines()
            .find_map(|l| l.strip_prefix("usage_usec "))
            .and_then(|v| v.trim().parse().ok())
            .map(Reading::UsageUs)
            .ok_or_else(|| bad("usage_usec")),
    }
}

/// Integrates modelled machine power into a cumulative µJ counter.
#[derive(Debug)]
pub struct PowerModelProvider {
    channel: String,
    source: CpuUtilSource,
    machine: MachineSpec,
    last: Option<(u64, Reading)>,
    cumulative_uj: u64,
}

impl PowerModelProvider {
    pub fn open(channel: &str, source: &str, machine: MachineSpec) -> Result<Self> {
        machine.validate()?;
        let source = CpuUtilSource::from_path(source);
        read_source(&source)?;
        Ok(Self {
            channel: channel.to_string(),
            source,
            machine,
            last: None,
            cumulative_uj: 0,
        })
    }

    fn utilisation(&self, prev: Reading, cur: Reading, wall_ns: u64) -> f64 {
        match (prev, cur) {
            (Reading::Jiffies(b0, t0), Reading::Jiffies(b1, t1)) => {
                let dt = t1.saturating_sub(t0);
                if dt == 0 {
                    0.0
                } else {
                    b1.saturating_sub(b0) as f64 / dt as f64
                }
            }
            (Reading::UsageUs(u0), Reading::UsageUs(u1)) => {
                let capacity_us = wall_ns as f64 / 1e3 * f64::from(self.machine.cores);
                if capacity_us <= 0.0 {
                    0.0
                } else {
                    u1.saturating_sub(u0) as f64 / capacity_us
                }
            }
            _ => 0.0,
        }
    }
}

impl MetricProvider for PowerModelProvider {
    fn channel(&self) -> &str {
        &self.channel
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::MachinePowerModel
    }

    fn read(&mut self) -> Result<Sample> {
        let reading = read_source(&self.source)?;
        let t = now_ns();
        if let Some((t_prev, prev)) = self.last {
            let wall = t.saturating_sub(t_prev);
            let util = self.utilisation(prev, reading, wall);
            let watts = machine_power_estimate(&[util], &self.machine)[0];
            // W * ns / 1e3 = µJ
            self.cumulative_uj += (watts * wall as f64 / 1e3).round() as u64;
        }
        self.last = Some((t, reading));
        Ok(Sample {
            timestamp_ns: t,
            channel: self.channel.clone(),
            raw: self.cumulative_uj,
            unit: SampleUnit::Microjoule,
            wrapped: false,
        })
    }
}
