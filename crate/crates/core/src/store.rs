//! On-disk results store.
//!
//! ```text
//! <root>/<service>/<condition-label>/
//!     raw.jsonl              header line, then one result per line (append-only)
//!     samples/<run_id>.jsonl every sample of every channel for that run
//!     series/<unit>.json     filtered series snapshot written by campaigns
//!     campaigns.jsonl        one summary line per campaign
//! ```
//!
//! Series are always rebuilt from `raw.jsonl` when loaded, so snapshots are
//! informational and never the source of a reported number.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConditionSpec, FunctionalUnitKind, FunctionalUnitResult, MeasurementSeries};
use crate::sampler::{ChannelSeries, Sample};
use crate::stats::build_series;

pub const SCHEMA: &str = "greenunit.results";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub schema: String,
    pub version: u32,
    pub service: String,
    pub condition: ConditionSpec,
}

/// Summary line appended after each campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub started_at: u64,
    pub ended_at: u64,
    pub iterations: usize,
    pub quota: usize,
    pub below_quota: bool,
    pub retained: BTreeMap<FunctionalUnitKind, usize>,
    /// How injected latency was applied.
    pub latency_shaping: String,
    pub browser_profile: String,
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

/// Rejects names that could escape the store directory.
pub fn check_service_name(service: &str) -> Result<()> {
    let ok = !service.is_empty()
        && !service.starts_with('.')
        && service.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "service name '{service}' must be non-empty ASCII letters, digits, '-', '_' or '.'"
        )))
    }
}

fn write_jsonl<T: Serialize>(w: &mut impl Write, path: &Path, item: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, item).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn condition_dir(&self, service: &str, condition: &ConditionSpec) -> PathBuf {
        self.root.join(service).join(condition.label())
    }

    fn raw_path(&self, service: &str, condition: &ConditionSpec) -> PathBuf {
        self.condition_dir(service, condition).join("raw.jsonl")
    }

    pub fn contains(&self, service: &str, condition: &ConditionSpec) -> bool {
        self.raw_path(service, condition).is_file()
    }

    /// Appends results, writing the header first if the file is new.
    pub fn append_results(
        &self,
        service: &str,
        condition: &ConditionSpec,
        results: &[FunctionalUnitResult],
    ) -> Result<()> {
        check_service_name(service)?;
        let path = self.raw_path(service, condition);
        let dir = path.parent().expect("raw path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let fresh = !path.exists();
        if !fresh {
            self.read_header(&path, service, condition)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        if fresh {
            let header = StoreHeader {
                schema: SCHEMA.into(),
                version: SCHEMA_VERSION,
                service: service.into(),
                condition: *condition,
            };
            write_jsonl(&mut w, &path, &header)?;
        }
        for r in results {
            write_jsonl(&mut w, &path, r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn read_header(&self, path: &Path, service: &str, condition: &ConditionSpec) -> Result<StoreHeader> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut line = String::new();
        BufReader::new(file)
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        let header: StoreHeader = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{} header", path.display()), e.to_string()))?;
        if header.schema != SCHEMA || header.version != SCHEMA_VERSION {
            return Err(Error::parse(
                path.display().to_string(),
                format!("unsupported schema {} v{}", header.schema, header.version),
            ));
        }
        if header.service != service || header.condition != *condition {
            return Err(Error::parse(
                path.display().to_string(),
                format!(
                    "header names {}:{} but file is stored under {}:{}",
                    header.service,
                    header.condition.label(),
                    service,
                    condition.label()
                ),
            ));
        }
        Ok(header)
    }

    /// Every stored result for a (service, condition) pair, in file order.
    pub fn load_results(&self, service: &str, condition: &ConditionSpec) -> Result<Vec<FunctionalUnitResult>> {
        check_service_name(service)?;
        let path = self.raw_path(service, condition);
        if !path.is_file() {
            return Err(Error::NotFound(format!(
                "no stored results for {service}:{} (looked for {})",
                condition.label(),
                path.display()
            )));
        }
        self.read_header(&path, service, condition)?;
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate().skip(1) {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: FunctionalUnitResult = serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
            out.push(r);
        }
        Ok(out)
    }

    /// Rebuilds the filtered series of every unit present in the raw file.
    pub fn load_series(
        &self,
        service: &str,
        condition: &ConditionSpec,
    ) -> Result<BTreeMap<FunctionalUnitKind, MeasurementSeries>> {
        let mut by_unit: BTreeMap<FunctionalUnitKind, Vec<FunctionalUnitResult>> = BTreeMap::new();
        for r in self.load_results(service, condition)? {
            by_unit.entry(r.unit.clone()).or_default().push(r);
        }
        by_unit
            .into_iter()
            .map(|(unit, rs)| build_series(service, *condition, unit.clone(), rs).map(|s| (unit, s)))
            .collect()
    }

    pub fn load_unit_series(
        &self,
        service: &str,
        condition: &ConditionSpec,
        unit: &FunctionalUnitKind,
    ) -> Result<MeasurementSeries> {
        self.load_series(service, condition)?.remove(unit).ok_or_else(|| {
            Error::NotFound(format!("no {unit} results stored for {service}:{}", condition.label()))
        })
    }

    pub fn write_samples(
        &self,
        service: &str,
        condition: &ConditionSpec,
        run_id: &str,
        series: &[ChannelSeries],
    ) -> Result<PathBuf> {
        check_service_name(service)?;
        let dir = self.condition_dir(service, condition).join("samples");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{run_id}.jsonl"));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for s in series.iter().flat_map(|c| &c.samples) {
            write_jsonl(&mut w, &path, s)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Samples of one run grouped by channel, each in time order.
    pub fn load_samples(
        &self,
        service: &str,
        condition: &ConditionSpec,
        run_id: &str,
    ) -> Result<BTreeMap<String, Vec<Sample>>> {
        let path = self
            .condition_dir(service, condition)
            .join("samples")
            .join(format!("{run_id}.jsonl"));
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut out: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let s: Sample = serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
            out.entry(s.channel.clone()).or_default().push(s);
        }
        Ok(out)
    }

    pub fn write_series_snapshot(&self, series: &MeasurementSeries) -> Result<PathBuf> {
        check_service_name(&series.service)?;
        let dir = self.condition_dir(&series.service, &series.condition).join("series");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{}.json", series.unit));
        let text = serde_json::to_string_pretty(series)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn append_campaign(&self, service: &str, condition: &ConditionSpec, record: &CampaignRecord) -> Result<()> {
        check_service_name(service)?;
        let dir = self.condition_dir(service, condition);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("campaigns.jsonl");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        write_jsonl(&mut w, &path, record)?;
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Every (service, condition) pair with a raw results file, sorted.
    pub fn list(&self) -> Result<Vec<(String, ConditionSpec)>> {
        let mut out = Vec::new();
        let Ok(services) = fs::read_dir(&self.root) else {
            return Ok(out);
        };
        for svc in services.flatten() {
            let Ok(conds) = fs::read_dir(svc.path()) else { continue };
            let service = svc.file_name().to_string_lossy().into_owned();
            for cond in conds.flatten() {
                let label = cond.file_name().to_string_lossy().into_owned();
                if let Ok(spec) = ConditionSpec::from_label(&label) {
                    if cond.path().join("raw.jsonl").is_file() {
                        out.push((service.clone(), spec));
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SampleUnit;

    fn result(unit: FunctionalUnitKind, run: &str, e: f64) -> FunctionalUnitResult {
        let energy = [("cpu", e * 0.4), ("memory", e * 0.05), ("machine", e)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        FunctionalUnitResult::new(unit, run, 1_000, 2_000_000_000, energy, 1234).unwrap()
    }

    #[test]
    fn results_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let cond = ConditionSpec::default();
        let rs = vec![
            result(FunctionalUnitKind::Login, "r1", 0.1 + 0.2),
            result(FunctionalUnitKind::Login, "r2", 1.0 / 3.0),
            FunctionalUnitResult::failed(FunctionalUnitKind::Read, "r3", 5, 10, "timeout"),
        ];
        store.append_results("svc", &cond, &rs[..1]).unwrap();
        store.append_results("svc", &cond, &rs[1..]).unwrap();
        assert_eq!(store.load_results("svc", &cond).unwrap(), rs);
        let series = store.load_series("svc", &cond).unwrap();
        assert_eq!(series[&FunctionalUnitKind::Login].retained_count, 2);
        assert_eq!(series[&FunctionalUnitKind::Read].retained_count, 0);
        assert_eq!(store.list().unwrap(), vec![("svc".to_string(), cond)]);
    }

    #[test]
    fn missing_pair_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let err = Store::new(dir.path())
            .load_results("nope", &ConditionSpec::default())
            .unwrap_err();
        assert!(matches!(err, Error::NotFound(ref m) if m.contains("nope")));
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let cond = ConditionSpec::default();
        store.append_results("svc", &cond, &[]).unwrap();
        let path = store.condition_dir("svc", &cond).join("raw.jsonl");
        let text = fs::read_to_string(&path).unwrap().replace("\"svc\"", "\"other\"");
        fs::write(&path, text).unwrap();
        assert!(matches!(store.load_results("svc", &cond), Err(Error::Parse { .. })));
    }

    #[test]
    fn unsafe_service_names_are_rejected() {
        for bad in ["", "../x", ".hidden", "a/b"] {
            assert!(check_service_name(bad).is_err(), "{bad}");
        }
        assert!(check_service_name("self-hosted_1.0").is_ok());
    }

    #[test]
    fn samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let cond = ConditionSpec::default();
        let mk = |ch: &str, t, raw| Sample {
            timestamp_ns: t,
            channel: ch.into(),
            raw,
            unit: SampleUnit::Microjoule,
            wrapped: false,
        };
        let series = vec![ChannelSeries {
            channel: "machine".into(),
            kind: crate::sampler::ProviderKind::EnergyCounter,
            samples: vec![mk("machine", 1, 0), mk("machine", 2, 10)],
            cpu_time_ns: 0,
            wall_ns: 1,
        }];
        store.write_samples("svc", &cond, "r1", &series).unwrap();
        let back = store.load_samples("svc", &cond, "r1").unwrap();
        assert_eq!(back["machine"], series[0].samples);
    }
}
