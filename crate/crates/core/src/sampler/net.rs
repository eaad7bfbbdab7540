use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MetricProvider, ProviderKind, Sample, SampleUnit};
use crate::clock::now_ns;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Rx,
    Tx,
    #[default]
    Both,
}

#[derive(Debug)]
enum Source {
    /// A sysfs `statistics` directory with `rx_bytes`/`tx_bytes`.
    Stats(PathBuf),
    /// A `net/dev` table and the interface row to read.
    NetDev { path: PathBuf, interface: String },
}

/// Cumulative byte counter for one interface or network namespace.
#[derive(Debug)]
pub struct NetworkCounter {
    channel: String,
    source: Source,
    direction: Direction,
    base: Option<u64>,
}

fn unavailable(path: &Path, reason: impl Into<String>) -> Error {
    Error::ProviderUnavailable {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_counter(path: &Path) -> Result<u64> {
    let text = fs::read_to_string(path).map_err(|e| unavailable(path, e.to_string()))?;
    text.trim()
        .parse()
        .map_err(|_| unavailable(path, format!("not an integer counter: {:?}", text.trim())))
}

/// Parses the rx and tx byte columns of `interface` from a `net/dev` table.
pub(crate) fn parse_net_dev(text: &str, interface: &str) -> Option<(u64, u64)> {
    text.lines().find_map(|line| {
        let (name, rest) = line.split_once(':')?;
        if name.trim() != interface {
            return None;
        }
        let cols: Vec<u64> = rest.split_whitespace().filter_map(|c| c.parse().ok()).collect();
        // rx: bytes packets errs drop fifo frame compressed multicast, then tx
        Some((*cols.first()?, *cols.get(8)?))
    })
}

impl NetworkCounter {
    /// Opens a counter from an interface name, a `statistics` directory or a
    /// `net/dev` file (which then needs `interface`).
    pub fn open(channel: &str, source: &str, interface: Option<&str>, direction: Direction) -> Result<Self> {
        let path = Path::new(source);
        let source = if !source.contains('/') {
            Source::Stats(Path::new("/sys/class/net").join(source).join("statistics"))
        } else if path.is_dir() {
            Source::Stats(path.to_path_buf())
        } else {
            let interface = interface.ok_or_else(|| {
                Error::InvalidInput(format!("network provider '{channel}': a net/dev source needs `interface`"))
            })?;
            Source::NetDev {
                path: path.to_path_buf(),
                interface: interface.to_string(),
            }
        };
        let mut counter = Self {
            channel: channel.to_string(),
            source,
            direction,
            base: None,
        };
        counter.base = Some(counter.total()?);
        Ok(counter)
    }

    fn total(&self) -> Result<u64> {
        let (rx, tx) = match &self.source {
            Source::Stats(dir) => {
                let rx = match self.direction {
                    Direction::Tx => 0,
                    _ => read_counter(&dir.join("rx_bytes"))?,
                };
                let tx = match self.direction {
                    Direction::Rx => 0,
                    _ => read_counter(&dir.join("tx_bytes"))?,
                };
                (rx, tx)
            }
            Source::NetDev { path, interface } => {
                let text = fs::read_to_string(path).map_err(|e| unavailable(path, e.to_string()))?;
                parse_net_dev(&text, interface)
                    .ok_or_else(|| unavailable(path, format!("interface '{interface}' not listed")))?
            }
        };
        Ok(match self.direction {
            Direction::Rx => rx,
            Direction::Tx => tx,
            Direction::Both => rx + tx,
        })
    }
}

impl MetricProvider for NetworkCounter {
    fn channel(&self) -> &str {
        &self.channel
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::NetworkCounter
    }

    fn read(&mut self) -> Result<Sample> {
        let total = self.total()?;
        let timestamp_ns = now_ns();
        let base = *self.base.get_or_insert(total);
        // interface counters reset when a link is recreated; hold at the last value
        let raw = total.saturating_sub(base);
        Ok(Sample {
            timestamp_ns,
            channel: self.channel.clone(),
            raw,
            unit: SampleUnit::Byte,
            wrapped: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NET_DEV: &str = "\
Inter-|   Receive                                                |  Transmit
 face |bytes    packets errs drop fifo frame compressed multicast|bytes    packets errs drop fifo colls carrier compressed
    lo:  123456     100    0    0    0     0          0         0   123456     100    0    0    0     0       0          0
  eth0: 9876543    5000    0    0    0     0          0         0  1234567    3000    0    0    0     0       0          0
";

    #[test]
    fn parses_net_dev_rows() {
        assert_eq!(parse_net_dev(NET_DEV, "eth0"), Some((9_876_543, 1_234_567)));
        assert_eq!(parse_net_dev(NET_DEV, "lo"), Some((123_456, 123_456)));
        assert_eq!(parse_net_dev(NET_DEV, "wlan0"), None);
    }

    #[test]
    fn net_dev_counter_reports_growth() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("dev");
        fs::write(&file, NET_DEV).unwrap();
        let mut c = NetworkCounter::open("net", file.to_str().unwrap(), Some("eth0"), Direction::Both).unwrap();
        assert_eq!(c.read().unwrap().raw, 0);
        fs::write(&file, NET_DEV.replace("9876543", "9877543")).unwrap();
        assert_eq!(c.read().unwrap().raw, 1000);
    }

    #[test]
    fn stats_dir_respects_direction() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("rx_bytes"), "100").unwrap();
        fs::write(dir.path().join("tx_bytes"), "50").unwrap();
        let src = dir.path().to_str().unwrap();
        let mut rx = NetworkCounter::open("net", src, None, Direction::Rx).unwrap();
        let mut tx = NetworkCounter::open("net", src, None, Direction::Tx).unwrap();
        let mut both = NetworkCounter::open("net", src, None, Direction::Both).unwrap();
        fs::write(dir.path().join("rx_bytes"), "300").unwrap();
        fs::write(dir.path().join("tx_bytes"), "60").unwrap();
        assert_eq!(rx.read().unwrap().raw, 200);
        assert_eq!(tx.read().unwrap().raw, 10);
        assert_eq!(both.read().unwrap().raw, 210);
    }

    #[test]
    fn net_dev_without_interface_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("dev");
        fs::write(&file, NET_DEV).unwrap();
        assert!(NetworkCounter::open("net", file.to_str().unwrap(), None, Direction::Both).is_err());
    }
}
