use std::fs;
use std::path::{Path, PathBuf};

use super::{MetricProvider, ProviderKind, Sample, SampleUnit};
use crate::clock::now_ns;
use crate::error::{Error, Result};

/// A powercap-style cumulative energy counter (`energy_uj`).
///
/// Hardware counters wrap at `max_energy_range_uj`; every observed decrease
/// is treated as exactly one wrap and corrected so the reported series is
/// monotone.
#[derive(Debug)]
pub struct EnergyCounter {
    channel: String,
    path: PathBuf,
    max_range: Option<u64>,
    last: Option<u64>,
    offset: u64,
}

fn read_u64(path: &Path) -> Result<u64> {
    let text = fs::read_to_string(path).map_err(|e| Error::ProviderUnavailable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    text.trim().parse().map_err(|_| Error::ProviderUnavailable {
        path: path.to_path_buf(),
        reason: format!("not an integer counter: {:?}", text.trim()),
    })
}

impl EnergyCounter {
    /// `source` is a powercap zone directory or its `energy_uj` file.
    pub fn open(channel: &str, source: &str) -> Result<Self> {
        let source = Path::new(source);
        let path = if source.is_dir() { source.join("energy_uj") } else { source.to_path_buf() };
        let max_path = path.with_file_name("max_energy_range_uj");
        let max_range = if max_path.exists() { Some(read_u64(&max_path)?) } else { None };
        // probe once so a missing or unreadable counter fails at open
        read_u64(&path)?;
        Ok(Self {
            channel: channel.to_string(),
            path,
            max_range,
            last: None,
            offset: 0,
        })
    }

    pub fn max_range(&self) -> Option<u64> {
        self.max_range
    }
}

impl MetricProvider for EnergyCounter {
    fn channel(&self) -> &str {
        &self.channel
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::EnergyCounter
    }

    fn read(&mut self) -> Result<Sample> {
        let cur = read_u64(&self.path)?;
        let timestamp_ns = now_ns();
        let mut wrapped = false;
        if let Some(prev) = self.last {
            if cur < prev {
                // delta across the wrap is max - prev + cur
                let max = self.max_range.unwrap_or(u64::MAX);
                self.offset = self.offset.saturating_add(max);
                wrapped = true;
            }
        }
        self.last = Some(cur);
        Ok(Sample {
            timestamp_ns,
            channel: self.channel.clone(),
            raw: self.offset.saturating_add(cur),
            unit: SampleUnit::Microjoule,
            wrapped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::integrate;

    fn zone(energy: u64, max: Option<u64>) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("energy_uj"), energy.to_string()).unwrap();
        if let Some(m) = max {
            fs::write(dir.path().join("max_energy_range_uj"), m.to_string()).unwrap();
        }
        dir
    }

    #[test]
    fn wrap_is_corrected() {
        let dir = zone(262_140_000_000, Some(262_143_000_000));
        let mut c = EnergyCounter::open("cpu", dir.path().to_str().unwrap()).unwrap();
        let a = c.read().unwrap();
        fs::write(dir.path().join("energy_uj"), "5000000").unwrap();
        let b = c.read().unwrap();
        assert!(b.wrapped);
        assert_eq!(b.raw - a.raw, 8_000_000);
        let i = integrate(&[a.clone(), b.clone()], a.timestamp_ns, b.timestamp_ns).unwrap();
        assert_eq!(i.value(), 8.0);
    }

    #[test]
    fn plain_increase() {
        let dir = zone(0, Some(262_143_000_000));
        let mut c = EnergyCounter::open("cpu", dir.path().join("energy_uj").to_str().unwrap()).unwrap();
        let a = c.read().unwrap();
        fs::write(dir.path().join("energy_uj"), "1000000").unwrap();
        let b = c.read().unwrap();
        assert!(!b.wrapped);
        assert_eq!(b.value() - a.value(), 1.0);
    }

    #[test]
    fn missing_counter_is_unavailable() {
        let err = EnergyCounter::open("cpu", "/nonexistent/intel-rapl:0").unwrap_err();
        assert!(matches!(err, Error::ProviderUnavailable { .. }));
    }

    #[test]
    fn host_rapl_if_present() {
        let zone = Path::new("/sys/class/powercap/intel-rapl:0");
        match EnergyCounter::open("cpu", zone.to_str().unwrap()) {
            Ok(mut c) => assert!(c.read().is_ok()),
            Err(e) => eprintln!("skipping: no readable RAPL counter ({e})"),
        }
    }
}
