//! Scenario execution, condition control and measurement campaigns.
//!
//! One browser session and one scenario run at a time; samplers run
//! alongside as independent producers. Unit boundaries are harness
//! timestamps taken immediately before a unit's first step and after its
//! last step.

pub mod browser;
pub mod condition;
pub mod latency;
pub mod scenario;
pub mod webdriver;

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::clock::now_ns;
use crate::error::{Error, Result};
use crate::model::{ConditionSpec, FunctionalUnitKind, FunctionalUnitResult, MeasurementSeries, MANDATORY_CHANNELS, MIN_RETAINED};
use crate::sampler::{integrate, ChannelSeries, ProviderKind, ProviderSource, SamplerSet};
use crate::stats::build_series;
use crate::store::{CampaignRecord, Store};

pub use browser::{
    run_step, BrowserConfig, BrowserFault, BrowserLauncher, BrowserSession, FaultInjectingLauncher, WebDriverLauncher,
};
pub use condition::{apply_condition, dns_query, DnsAnswer, EnvironmentConfig, EnvironmentHandle, HostSystem, SystemControl};
pub use latency::{measure_latency, LatencyStats, DEFAULT_PROBE_COUNT};
pub use scenario::{ScenarioScript, ScenarioStep, StepAction, UnitMark};

pub const DEFAULT_SETTLE: Duration = Duration::from_secs(2);

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub condition: ConditionSpec,
    /// Retained results required per unit.
    pub iterations: usize,
    /// Hard cap on executed runs.
    pub max_iterations: usize,
    pub browser_profile: String,
    /// Overrides the configured blocker for ad-block conditions.
    pub dns_resolver: Option<SocketAddr>,
    pub attachment_path: Option<PathBuf>,
    /// Pause between runs; not part of any window.
    pub settle: Duration,
}

impl RunConfig {
    pub fn new(condition: ConditionSpec) -> Self {
        Self {
            condition,
            iterations: MIN_RETAINED,
            max_iterations: 3 * MIN_RETAINED,
            browser_profile: condition.tracking_profile.to_string(),
            dns_resolver: None,
            attachment_path: None,
            settle: DEFAULT_SETTLE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidInput("iterations must be at least 1".into()));
        }
        if self.max_iterations < self.iterations {
            return Err(Error::InvalidInput(format!(
                "max_iterations ({}) is below the quota ({})",
                self.max_iterations, self.iterations
            )));
        }
        Ok(())
    }
}

/// Everything one run produced.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub run_id: String,
    pub results: Vec<FunctionalUnitResult>,
    pub samples: Vec<ChannelSeries>,
    /// First failure, if any invalidated the run.
    pub failure: Option<String>,
}

fn is_energy(kind: ProviderKind) -> bool {
    matches!(kind, ProviderKind::EnergyCounter | ProviderKind::MachinePowerModel)
}

/// Windowed totals of every channel: (energy per channel in J, bytes).
pub fn window_totals(
    samples: &[ChannelSeries],
    started: u64,
    ended: u64,
) -> Result<(BTreeMap<String, f64>, u64)> {
    let mut energy = BTreeMap::new();
    let mut bytes = 0u64;
    for ch in samples {
        let i = integrate(&ch.samples, started, ended)?;
        if is_energy(ch.kind) {
            energy.insert(ch.channel.clone(), i.value());
        } else {
            bytes += i.amount;
        }
    }
    Ok((energy, bytes))
}

/// Runs `script` once with fresh providers and a fresh browser.
///
/// Launch and provider failures are errors. A failed step or a browser crash
/// yields results flagged with the error for every unit of the run.
pub fn execute_run(
    script: &ScenarioScript,
    run_id: &str,
    providers: &dyn ProviderSource,
    launcher: &dyn BrowserLauncher,
    profile: &str,
) -> Result<RunOutput> {
    let instances = providers.instantiate()?;
    let energy_channels: BTreeSet<&str> = instances
        .iter()
        .filter(|(p, _)| is_energy(p.kind()))
        .map(|(p, _)| p.channel())
        .collect();
    let missing: Vec<&str> = MANDATORY_CHANNELS
        .iter()
        .copied()
        .filter(|c| !energy_channels.contains(c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidInput(format!(
            "providers lack mandatory energy channels: {}",
            missing.join(", ")
        )));
    }
    let sampler = SamplerSet::start(instances)?;
    let mut session = match launcher.launch(profile) {
        Ok(s) => s,
        Err(e) => {
            let _ = sampler.stop();
            return Err(e);
        }
    };
    let n = script.steps.len();
    let mut before = vec![0u64; n];
    let mut after = vec![0u64; n];
    let mut failure: Option<(usize, BrowserFault)> = None;
    for (i, step) in script.steps.iter().enumerate() {
        before[i] = now_ns();
        let outcome = run_step(session.as_mut(), step);
        after[i] = now_ns();
        if let Err(fault) = outcome {
            failure = Some((i, fault));
            break;
        }
    }
    if let Err(e) = session.close() {
        log::warn!("closing browser session: {}", e.message());
    }
    drop(session);
    let samples = sampler.stop()?;
    let run_end = now_ns();

    let mut results = Vec::with_capacity(script.unit_marks.len());
    for mark in &script.unit_marks {
        let started = match before[mark.first()] {
            0 => run_end,
            t => t,
        };
        let ended = match after[mark.last()] {
            0 => run_end,
            t => t,
        }
        .max(started + 1);
        let result = match &failure {
            None => {
                let (energy, bytes) = window_totals(&samples, started, ended)?;
                FunctionalUnitResult::new(mark.unit.clone(), run_id, started, ended, energy, bytes)?
            }
            Some((i, fault)) => {
                let step = &script.steps[*i];
                let cause = format!("step {i} ({} {}): {}", step.action, step.target, fault.message());
                let message = match fault {
                    BrowserFault::Crash(_) => format!("run aborted, browser crashed at {cause}"),
                    BrowserFault::Step(_) if (mark.first()..=mark.last()).contains(i) => cause,
                    BrowserFault::Step(_) => format!("run invalid: {cause}"),
                };
                FunctionalUnitResult::failed(mark.unit.clone(), run_id, started, ended, message)
            }
        };
        results.push(result);
    }
    Ok(RunOutput {
        run_id: run_id.to_string(),
        results,
        samples,
        failure: failure.map(|(i, f)| format!("step {i}: {}", f.message())),
    })
}

/// Dependencies of a campaign.
pub struct Campaign<'a> {
    pub service: &'a str,
    /// Scenario with selectors and variables already resolved.
    pub script: &'a ScenarioScript,
    pub config: &'a RunConfig,
    pub providers: &'a dyn ProviderSource,
    pub launcher: &'a dyn BrowserLauncher,
    pub environment: &'a EnvironmentConfig,
    pub system: Arc<dyn SystemControl>,
    pub store: Option<&'a Store>,
}

#[derive(Clone, Debug)]
pub struct CampaignOutcome {
    pub series: BTreeMap<FunctionalUnitKind, MeasurementSeries>,
    pub iterations: usize,
    pub run_ids: Vec<String>,
    /// Units that ended below the quota.
    pub below_quota: BTreeSet<FunctionalUnitKind>,
    pub latency_shaping: String,
}

impl CampaignOutcome {
    pub fn is_below_quota(&self) -> bool {
        !self.below_quota.is_empty()
    }
}

fn series_of(
    service: &str,
    condition: ConditionSpec,
    units: &[FunctionalUnitKind],
    results: &[FunctionalUnitResult],
) -> Result<BTreeMap<FunctionalUnitKind, MeasurementSeries>> {
    units
        .iter()
        .map(|u| {
            let rs = results.iter().filter(|r| &r.unit == u).cloned();
            build_series(service, condition, u.clone(), rs).map(|s| (u.clone(), s))
        })
        .collect()
}

/// Repeats runs until every unit retains `iterations` results or the cap is hit.
pub fn campaign(c: &Campaign<'_>) -> Result<CampaignOutcome> {
    c.config.validate()?;
    crate::store::check_service_name(c.service)?;
    let mut env_cfg = c.environment.clone();
    if let Some(r) = c.config.dns_resolver {
        env_cfg.blocker_dns = Some(r);
    }
    let handle = apply_condition(&c.config.condition, &env_cfg, c.system.clone())?;
    let latency_shaping = handle.latency_shaping();
    let started_at = now_ns();
    let units: Vec<FunctionalUnitKind> = c.script.unit_marks.iter().map(|m| m.unit.clone()).collect();
    let mut all = Vec::new();
    let mut run_ids = Vec::new();
    let mut series = BTreeMap::new();
    for iter in 0..c.config.max_iterations {
        if iter > 0 && !c.config.settle.is_zero() {
            thread::sleep(c.config.settle);
        }
        let run_id = format!("{started_at:x}-{iter:04}");
        let out = execute_run(c.script, &run_id, c.providers, c.launcher, &c.config.browser_profile)?;
        if let Some(f) = &out.failure {
            log::warn!("run {run_id} invalid: {f}");
        }
        if let Some(store) = c.store {
            store.write_samples(c.service, &c.config.condition, &run_id, &out.samples)?;
            store.append_results(c.service, &c.config.condition, &out.results)?;
        }
        all.extend(out.results);
        run_ids.push(run_id);
        series = series_of(c.service, c.config.condition, &units, &all)?;
        let done = series.values().all(|s| s.retained_count >= c.config.iterations);
        log::info!(
            "run {}/{} done; retained per unit: {}",
            iter + 1,
            c.config.max_iterations,
            series.values().map(|s| s.retained_count.to_string()).collect::<Vec<_>>().join(",")
        );
        if done {
            break;
        }
    }
    handle.release()?;
    let below_quota: BTreeSet<FunctionalUnitKind> = series
        .values()
        .filter(|s| s.retained_count < c.config.iterations)
        .map(|s| s.unit.clone())
        .collect();
    if !below_quota.is_empty() {
        log::warn!(
            "campaign ended below quota ({} required) for: {}",
            c.config.iterations,
            below_quota.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(", ")
        );
    }
    if let Some(store) = c.store {
        for s in series.values() {
            store.write_series_snapshot(s)?;
        }
        store.append_campaign(
            c.service,
            &c.config.condition,
            &CampaignRecord {
                started_at,
                ended_at: now_ns(),
                iterations: run_ids.len(),
                quota: c.config.iterations,
                below_quota: !below_quota.is_empty(),
                retained: series.iter().map(|(k, s)| (k.clone(), s.retained_count)).collect(),
                latency_shaping: latency_shaping.clone(),
                browser_profile: c.config.browser_profile.clone(),
            },
        )?;
    }
    Ok(CampaignOutcome {
        series,
        iterations: run_ids.len(),
        run_ids,
        below_quota,
        latency_shaping,
    })
}

#[cfg(test)]
mod tests {
    use super::browser::testing::FakeLauncher;
    use super::*;
    use crate::sampler::testing::LinearCounter;
    use crate::sampler::MetricProvider;

    struct Linear;

    impl ProviderSource for Linear {
        fn instantiate(&self) -> Result<Vec<(Box<dyn MetricProvider>, Duration)>> {
            let period = Duration::from_millis(10);
            let mut net = LinearCounter::energy("net", 1);
            net.kind = ProviderKind::NetworkCounter;
            Ok(vec![
                (Box::new(LinearCounter::energy("cpu", 10)), period),
                (Box::new(LinearCounter::energy("memory", 2)), period),
                (Box::new(LinearCounter::energy("machine", 25)), period),
                (Box::new(net), period),
            ])
        }
    }

    const SCRIPT: &str = r##"
[[steps]]
action = "navigate"
target = "http://site/index.html"
[[steps]]
action = "click"
target = "#login"
timeout_ms = 50
[[steps]]
action = "wait_for_selector"
target = "#inbox"
timeout_ms = 50
[[steps]]
action = "click"
target = "#logout"
timeout_ms = 50

[[units]]
unit = "login"
steps = [0, 2]
[[units]]
unit = "logout"
steps = [3, 3]
[[units]]
unit = "session"
steps = [0, 3]
"##;

    fn launcher(present: &[&str]) -> FakeLauncher {
        FakeLauncher {
            present: present.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn run_produces_one_result_per_mark_with_nested_session() {
        let script = ScenarioScript::parse(SCRIPT).unwrap();
        let out = execute_run(&script, "r0", &Linear, &launcher(&["#login", "#inbox", "#logout"]), "permissive").unwrap();
        assert!(out.failure.is_none());
        assert_eq!(out.results.len(), 3);
        let (login, logout, session) = (&out.results[0], &out.results[1], &out.results[2]);
        assert!(login.ended_at <= logout.started_at);
        assert_eq!(session.started_at, login.started_at);
        assert_eq!(session.ended_at, logout.ended_at);
        for r in &out.results {
            assert!(r.is_valid());
            let (energy, bytes) = window_totals(&out.samples, r.started_at, r.ended_at).unwrap();
            assert_eq!(energy, r.energy);
            assert_eq!(bytes, r.network_bytes);
        }
    }

    #[test]
    fn timeout_invalidates_every_unit_of_the_run() {
        let script = ScenarioScript::parse(SCRIPT).unwrap();
        let out = execute_run(&script, "r0", &Linear, &launcher(&["#login", "#logout"]), "permissive").unwrap();
        assert!(out.failure.is_some());
        assert!(out.results.iter().all(|r| r.error.is_some()));
        assert!(out.results[0].error.as_ref().unwrap().contains("timeout"));
        assert!(out.results[1].error.as_ref().unwrap().starts_with("run invalid"));
    }

    #[test]
    fn crash_aborts_run() {
        let script = ScenarioScript::parse(SCRIPT).unwrap();
        let mut l = launcher(&["#login", "#inbox", "#logout"]);
        l.crash_on = Some("#inbox".into());
        let out = execute_run(&script, "r0", &Linear, &l, "permissive").unwrap();
        assert!(out.results.iter().all(|r| r.error.as_ref().is_some_and(|e| e.contains("crashed"))));
    }

    #[test]
    fn missing_mandatory_channel_is_rejected() {
        struct Partial;
        impl ProviderSource for Partial {
            fn instantiate(&self) -> Result<Vec<(Box<dyn MetricProvider>, Duration)>> {
                Ok(vec![(Box::new(LinearCounter::energy("machine", 1)), Duration::from_millis(10))])
            }
        }
        let script = ScenarioScript::parse(SCRIPT).unwrap();
        let err = execute_run(&script, "r0", &Partial, &launcher(&[]), "p").unwrap_err();
        assert!(err.to_string().contains("cpu"));
    }

    fn run_campaign(launcher: &dyn BrowserLauncher, cfg: &RunConfig, store: Option<&Store>) -> CampaignOutcome {
        let script = ScenarioScript::parse(SCRIPT).unwrap();
        campaign(&Campaign {
            service: "fake",
            script: &script,
            config: cfg,
            providers: &Linear,
            launcher,
            environment: &EnvironmentConfig::default(),
            system: Arc::new(HostSystem),
            store,
        })
        .unwrap()
    }

    fn quick(iterations: usize, max_iterations: usize) -> RunConfig {
        RunConfig {
            iterations,
            max_iterations,
            settle: Duration::ZERO,
            ..RunConfig::new(ConditionSpec::default())
        }
    }

    #[test]
    fn small_quota_campaign_is_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let out = run_campaign(&launcher(&["#login", "#inbox", "#logout"]), &quick(3, 10), Some(&store));
        assert_eq!(out.iterations, 3);
        assert!(!out.is_below_quota());
        for s in out.series.values() {
            assert_eq!(s.retained_count, 3);
            assert!(s.iqr_bounds.is_none());
        }
        let stored = store.load_series("fake", &ConditionSpec::default()).unwrap();
        assert_eq!(stored, out.series);
        for r in store.load_results("fake", &ConditionSpec::default()).unwrap() {
            let samples = store.load_samples("fake", &ConditionSpec::default(), &r.run_id).unwrap();
            let channels: Vec<ChannelSeries> = samples
                .into_iter()
                .map(|(ch, s)| ChannelSeries {
                    kind: if ch == "net" { ProviderKind::NetworkCounter } else { ProviderKind::EnergyCounter },
                    channel: ch,
                    samples: s,
                    cpu_time_ns: 0,
                    wall_ns: 0,
                })
                .collect();
            let (energy, bytes) = window_totals(&channels, r.started_at, r.ended_at).unwrap();
            assert_eq!(energy, r.energy);
            assert_eq!(bytes, r.network_bytes);
        }
    }

    #[test]
    fn injected_faults_extend_the_campaign() {
        let faulty = FaultInjectingLauncher::new(launcher(&["#login", "#inbox", "#logout"]), 0.3, 11).unwrap();
        let out = run_campaign(&faulty, &quick(5, 40), None);
        assert!(!out.is_below_quota());
        assert!(out.iterations > 5, "{} iterations", out.iterations);
        for s in out.series.values() {
            assert!(s.retained_count >= 5);
        }
    }

    #[test]
    fn failing_script_ends_below_quota() {
        let out = run_campaign(&launcher(&[]), &quick(3, 4), None);
        assert_eq!(out.iterations, 4);
        assert!(out.is_below_quota());
        assert_eq!(out.below_quota.len(), 3);
        assert!(out.series.values().all(|s| s.retained_count == 0 && s.raw_count == 4));
    }
}
