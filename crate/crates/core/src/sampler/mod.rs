//! Metric providers and the background sampling loop.
//!
//! Each provider exposes one cumulative counter (µJ or bytes). A
//! [`SamplerSet`] runs every provider on its own thread at its configured
//! period, appending to a private series; series are only read after
//! [`SamplerSet::stop`]. Window totals come from [`integrate`].

mod integrate;
mod net;
mod power;
mod rapl;

use std::fmt;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use integrate::{integrate, Integral};
pub use net::{Direction, NetworkCounter};
pub use power::{machine_power_estimate, CpuUtilSource, MachineSpec, PowerModelProvider};
pub use rapl::EnergyCounter;

pub const DEFAULT_SAMPLE_PERIOD_MS: u64 = 100;
pub const MIN_SAMPLE_PERIOD_MS: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleUnit {
    Microjoule,
    Byte,
}

/// One reading of a cumulative counter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp_ns: u64,
    pub channel: String,
    /// Counter value in native units (µJ or bytes), wrap-corrected.
    pub raw: u64,
    pub unit: SampleUnit,
    /// Set on the first reading after a counter wrap was corrected.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub wrapped: bool,
}

impl Sample {
    /// Joules for energy counters, bytes for network counters.
    pub fn value(&self) -> f64 {
        match self.unit {
            SampleUnit::Microjoule => self.raw as f64 * 1e-6,
            SampleUnit::Byte => self.raw as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    EnergyCounter,
    NetworkCounter,
    MachinePowerModel,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::EnergyCounter => "energy_counter",
            ProviderKind::NetworkCounter => "network_counter",
            ProviderKind::MachinePowerModel => "machine_power_model",
        })
    }
}

/// Declarative provider configuration.
///
/// `source` is interpreted per kind:
/// - `energy_counter`: a powercap zone directory or its `energy_uj` file
/// - `network_counter`: an interface name, a `statistics` directory, or a
///   `/proc/<pid>/net/dev` style file together with `interface`
/// - `machine_power_model`: `/proc/stat`, or a cgroup v2 `cpu.stat` file
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    pub channel: String,
    pub source: String,
    #[serde(default = "default_period")]
    pub sample_period_ms: u64,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub interface: Option<String>,
    /// Overrides the machine description for this power model.
    #[serde(default)]
    pub idle_w: Option<f64>,
    #[serde(default)]
    pub peak_w: Option<f64>,
}

fn default_period() -> u64 {
    DEFAULT_SAMPLE_PERIOD_MS
}

impl ProviderSpec {
    pub fn new(kind: ProviderKind, channel: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            kind,
            channel: channel.into(),
            source: source.into(),
            sample_period_ms: DEFAULT_SAMPLE_PERIOD_MS,
            direction: Direction::default(),
            interface: None,
            idle_w: None,
            peak_w: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_period_ms < MIN_SAMPLE_PERIOD_MS {
            return Err(Error::InvalidInput(format!(
                "provider '{}': sample_period_ms must be >= {MIN_SAMPLE_PERIOD_MS}, got {}",
                self.channel, self.sample_period_ms
            )));
        }
        if self.channel.trim().is_empty() {
            return Err(Error::InvalidInput("provider channel must not be empty".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> Duration {
        Duration::from_millis(self.sample_period_ms)
    }

    /// Opens the provider described by this spec.
    pub fn open(&self, machine: &MachineSpec) -> Result<Box<dyn MetricProvider>> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::EnergyCounter => Box::new(EnergyCounter::open(&self.channel, &self.source)?),
            ProviderKind::NetworkCounter => Box::new(NetworkCounter::open(
                &self.channel,
                &self.source,
                self.interface.as_deref(),
                self.direction,
            )?),
            ProviderKind::MachinePowerModel => {
                let machine = MachineSpec {
                    idle_w: self.idle_w.unwrap_or(machine.idle_w),
                    peak_w: self.peak_w.unwrap_or(machine.peak_w),
                    cores: machine.cores,
                };
                Box::new(PowerModelProvider::open(&self.channel, &self.source, machine)?)
            }
        })
    }
}

/// A cumulative counter that can be polled.
pub trait MetricProvider: Send {
    fn channel(&self) -> &str;
    fn kind(&self) -> ProviderKind;
    fn read(&mut self) -> Result<Sample>;
}

/// Produces a fresh set of providers for each run.
pub trait ProviderSource {
    fn instantiate(&self) -> Result<Vec<(Box<dyn MetricProvider>, Duration)>>;
}

/// Providers built from configuration.
#[derive(Clone, Debug, Default)]
pub struct ConfiguredProviders {
    pub specs: Vec<ProviderSpec>,
    pub machine: MachineSpec,
}

impl ProviderSource for ConfiguredProviders {
    fn instantiate(&self) -> Result<Vec<(Box<dyn MetricProvider>, Duration)>> {
        self.specs
            .iter()
            .map(|spec| spec.open(&self.machine).map(|p| (p, spec.period())))
            .collect()
    }
}

/// Everything one producer recorded.
#[derive(Clone, Debug)]
pub struct ChannelSeries {
    pub channel: String,
    pub kind: ProviderKind,
    pub samples: Vec<Sample>,
    /// CPU time consumed by the producer thread.
    pub cpu_time_ns: u64,
    pub wall_ns: u64,
}

impl ChannelSeries {
    pub fn overhead_fraction(&self) -> f64 {
        if self.wall_ns == 0 {
            0.0
        } else {
            self.cpu_time_ns as f64 / self.wall_ns as f64
        }
    }
}

struct Producer {
    stop: mpsc::Sender<()>,
    join: thread::JoinHandle<Result<ChannelSeries>>,
}

/// Independent periodic producers, one thread per provider.
pub struct SamplerSet {
    producers: Vec<Producer>,
}

fn thread_cpu_time_ns() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0;
    }
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

fn produce(
    mut provider: Box<dyn MetricProvider>,
    period: Duration,
    ready: mpsc::Sender<Result<()>>,
    stop: mpsc::Receiver<()>,
) -> Result<ChannelSeries> {
    let cpu_start = thread_cpu_time_ns();
    let wall_start = std::time::Instant::now();
    let mut samples: Vec<Sample> = Vec::new();
    let push = |mut s: Sample, samples: &mut Vec<Sample>| {
        if let Some(last) = samples.last() {
            if s.timestamp_ns <= last.timestamp_ns {
                s.timestamp_ns = last.timestamp_ns + 1;
            }
        }
        samples.push(s);
    };
    match provider.read() {
        Ok(s) => {
            push(s, &mut samples);
            let _ = ready.send(Ok(()));
        }
        Err(e) => {
            let msg = e.to_string();
            let _ = ready.send(Err(e));
            return Err(Error::Domain(msg));
        }
    }
    loop {
        match stop.recv_timeout(period) {
            Err(mpsc::RecvTimeoutError::Timeout) => push(provider.read()?, &mut samples),
            // stopped or orphaned: one last reading closes the final window
            _ => {
                push(provider.read()?, &mut samples);
                break;
            }
        }
    }
    Ok(ChannelSeries {
        channel: provider.channel().to_string(),
        kind: provider.kind(),
        samples,
        cpu_time_ns: thread_cpu_time_ns().saturating_sub(cpu_start),
        wall_ns: wall_start.elapsed().as_nanos() as u64,
    })
}

impl SamplerSet {
    /// Spawns every producer and returns once each has its first sample.
    pub fn start(providers: Vec<(Box<dyn MetricProvider>, Duration)>) -> Result<Self> {
        let mut producers = Vec::with_capacity(providers.len());
        let mut first_error = None;
        for (provider, period) in providers {
            let (ready_tx, ready_rx) = mpsc::channel();
            let (stop_tx, stop_rx) = mpsc::channel();
            let name = format!("sampler-{}", provider.channel());
            let join = thread::Builder::new()
                .name(name)
                .spawn(move || produce(provider, period, ready_tx, stop_rx))
                .map_err(|e| Error::Domain(format!("cannot spawn sampler thread: {e}")))?;
            match ready_rx.recv() {
                Ok(Ok(())) => producers.push(Producer { stop: stop_tx, join }),
                Ok(Err(e)) => {
                    let _ = join.join();
                    first_error = Some(e);
                    break;
                }
                Err(_) => {
                    first_error = Some(Error::Domain("sampler thread exited before its first sample".into()));
                    break;
                }
            }
        }
        let set = SamplerSet { producers };
        match first_error {
            Some(e) => {
                let _ = set.stop();
                Err(e)
            }
            None => Ok(set),
        }
    }

    /// Signals every producer, waits for its final sample and returns all series.
    pub fn stop(self) -> Result<Vec<ChannelSeries>> {
        for p in &self.producers {
            let _ = p.stop.send(());
        }
        let mut out = Vec::with_capacity(self.producers.len());
        let mut first_error = None;
        for p in self.producers {
            match p.join.join() {
                Ok(Ok(series)) => out.push(series),
                Ok(Err(e)) => {
                    first_error.get_or_insert(e);
                }
                Err(_) => {
                    first_error.get_or_insert(Error::Domain("sampler thread panicked".into()));
                }
            }
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::clock::now_ns;

    /// A counter that grows at a fixed rate on the harness clock.
    pub struct LinearCounter {
        pub channel: String,
        pub kind: ProviderKind,
        pub per_second: u64,
        pub origin_ns: u64,
    }

    impl LinearCounter {
        pub fn energy(channel: &str, watts: u64) -> Self {
            Self {
                channel: channel.into(),
                kind: ProviderKind::EnergyCounter,
                per_second: watts * 1_000_000,
                origin_ns: now_ns(),
            }
        }
    }

    impl MetricProvider for LinearCounter {
        fn channel(&self) -> &str {
            &self.channel
        }

        fn kind(&self) -> ProviderKind {
            self.kind
        }

        fn read(&mut self) -> Result<Sample> {
            let t = now_ns();
            let elapsed = t - self.origin_ns;
            Ok(Sample {
                timestamp_ns: t,
                channel: self.channel.clone(),
                raw: (elapsed as u128 * self.per_second as u128 / 1_000_000_000) as u64,
                unit: if self.kind == ProviderKind::NetworkCounter {
                    SampleUnit::Byte
                } else {
                    SampleUnit::Microjoule
                },
                wrapped: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::LinearCounter;
    use super::*;

    #[test]
    fn period_below_minimum_is_rejected() {
        let mut spec = ProviderSpec::new(ProviderKind::MachinePowerModel, "machine", "/proc/stat");
        spec.sample_period_ms = 5;
        assert!(spec.validate().is_err());
        spec.sample_period_ms = 10;
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn sampler_collects_increasing_series() {
        let providers: Vec<(Box<dyn MetricProvider>, Duration)> = vec![
            (Box::new(LinearCounter::energy("cpu", 5)), Duration::from_millis(10)),
            (Box::new(LinearCounter::energy("machine", 20)), Duration::from_millis(15)),
        ];
        let set = SamplerSet::start(providers).unwrap();
        thread::sleep(Duration::from_millis(120));
        let series = set.stop().unwrap();
        assert_eq!(series.len(), 2);
        for s in &series {
            assert!(s.samples.len() >= 3, "{} samples", s.samples.len());
            for w in s.samples.windows(2) {
                assert!(w[1].timestamp_ns > w[0].timestamp_ns);
                assert!(w[1].raw >= w[0].raw);
            }
        }
    }

    struct Broken;

    impl MetricProvider for Broken {
        fn channel(&self) -> &str {
            "broken"
        }
        fn kind(&self) -> ProviderKind {
            ProviderKind::EnergyCounter
        }
        fn read(&mut self) -> Result<Sample> {
            Err(Error::ProviderUnavailable {
                path: "/nonexistent".into(),
                reason: "gone".into(),
            })
        }
    }

    #[test]
    fn failing_provider_aborts_start() {
        let providers: Vec<(Box<dyn MetricProvider>, Duration)> = vec![
            (Box::new(LinearCounter::energy("cpu", 5)), Duration::from_millis(10)),
            (Box::new(Broken), Duration::from_millis(10)),
        ];
        let err = SamplerSet::start(providers).err().unwrap();
        assert!(matches!(err, Error::ProviderUnavailable { .. }));
    }
}
