//! Host environment for a condition: ad-block resolver and injected latency.
//!
//! Every change is undone by [`EnvironmentHandle::release`] (or on drop),
//! and release verifies the host is back to its prior state.

use std::fs;
use std::net::{IpAddr, SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use hickory_proto::op::{Message, Query, ResponseCode};
use hickory_proto::rr::{Name, RData, RecordType};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConditionSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    /// Resolver file rewritten while ad blocking is active.
    pub resolv_conf: PathBuf,
    /// The blocking resolver. Required when a condition enables ad blocking.
    pub blocker_dns: Option<SocketAddr>,
    /// A domain the blocker must refuse to resolve.
    pub blocker_probe_domain: String,
    /// Interface whose egress queue receives the injected delay.
    pub interface: String,
    pub tc_program: String,
    pub probe_timeout_ms: u64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            resolv_conf: "/etc/resolv.conf".into(),
            blocker_dns: None,
            blocker_probe_domain: "doubleclick.net".into(),
            interface: "eth0".into(),
            tc_program: "tc".into(),
            probe_timeout_ms: 2_000,
        }
    }
}

/// Answer of a single A query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DnsAnswer {
    pub response_code: String,
    pub nxdomain: bool,
    pub addresses: Vec<IpAddr>,
}

impl DnsAnswer {
    /// Blocked means NXDOMAIN or only unspecified/loopback addresses.
    pub fn is_blocked(&self) -> bool {
        self.nxdomain
            || (!self.addresses.is_empty() && self.addresses.iter().all(|a| a.is_unspecified() || a.is_loopback()))
    }
}

/// Sends one A query over UDP and decodes the answer.
pub fn dns_query(server: SocketAddr, domain: &str, timeout: Duration) -> Result<DnsAnswer> {
    let name = Name::from_ascii(domain).map_err(|e| Error::InvalidInput(format!("bad domain '{domain}': {e}")))?;
    let mut msg = Message::query();
    msg.metadata.recursion_desired = true;
    msg.add_query(Query::query(name, RecordType::A));
    let id = msg.metadata.id;
    let wire = msg.to_vec().map_err(|e| Error::Condition(format!("encoding DNS query: {e}")))?;
    let bind = if server.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
    let sock = UdpSocket::bind(bind).map_err(|e| Error::io(bind, e))?;
    sock.set_read_timeout(Some(timeout)).map_err(|e| Error::io(bind, e))?;
    sock.send_to(&wire, server)
        .map_err(|e| Error::Condition(format!("DNS query to {server} failed: {e}")))?;
    let mut buf = [0u8; 4096];
    loop {
        let (n, from) = sock
            .recv_from(&mut buf)
            .map_err(|e| Error::Condition(format!("no DNS answer from {server} within {timeout:?}: {e}")))?;
        if from != server {
            continue;
        }
        let reply = Message::from_vec(&buf[..n])
            .map_err(|e| Error::Condition(format!("undecodable DNS answer from {server}: {e}")))?;
        if reply.metadata.id != id {
            continue;
        }
        let addresses = reply
            .answers
            .iter()
            .filter_map(|r| match &r.data {
                RData::A(a) => Some(IpAddr::V4(a.0)),
                RData::AAAA(a) => Some(IpAddr::V6(a.0)),
                _ => None,
            })
            .collect();
        let code = reply.metadata.response_code;
        return Ok(DnsAnswer {
            response_code: format!("{code:?}"),
            nxdomain: code == ResponseCode::NXDomain,
            addresses,
        });
    }
}

/// Host operations needed to set up a condition.
pub trait SystemControl: Send + Sync {
    /// Runs a program, returning stdout; a non-zero exit is an error.
    fn run(&self, program: &str, args: &[String]) -> Result<String>;
    fn probe_dns(&self, server: SocketAddr, domain: &str, timeout: Duration) -> Result<DnsAnswer>;
}

/// The real host.
#[derive(Clone, Copy, Debug, Default)]
pub struct HostSystem;

impl SystemControl for HostSystem {
    fn run(&self, program: &str, args: &[String]) -> Result<String> {
        let out = Command::new(program)
            .args(args)
            .output()
            .map_err(|e| Error::Condition(format!("cannot run {program}: {e}")))?;
        if !out.status.success() {
            return Err(Error::Condition(format!(
                "{program} {} failed ({}): {}",
                args.join(" "),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    fn probe_dns(&self, server: SocketAddr, domain: &str, timeout: Duration) -> Result<DnsAnswer> {
        dns_query(server, domain, timeout)
    }
}

/// Active condition; restores the host on release or drop.
pub struct EnvironmentHandle {
    system: Arc<dyn SystemControl>,
    config: EnvironmentConfig,
    resolv_backup: Option<Vec<u8>>,
    shaped: bool,
    released: bool,
    description: String,
}

impl std::fmt::Debug for EnvironmentHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnvironmentHandle")
            .field("description", &self.description)
            .field("released", &self.released)
            .finish()
    }
}

fn tc_args(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

impl EnvironmentHandle {
    /// How latency was shaped, for run metadata.
    pub fn latency_shaping(&self) -> String {
        self.description.clone()
    }

    fn restore(&mut self) -> Result<()> {
        let mut errors = Vec::new();
        if let Some(backup) = self.resolv_backup.take() {
            let path = &self.config.resolv_conf;
            match fs::write(path, &backup) {
                Ok(()) => {
                    if fs::read(path).ok().as_deref() != Some(backup.as_slice()) {
                        errors.push(format!("{} does not match its backup after restore", path.display()));
                    }
                }
                Err(e) => errors.push(format!("restoring {}: {e}", path.display())),
            }
        }
        if self.shaped {
            self.shaped = false;
            let dev = self.config.interface.as_str();
            let tc = self.config.tc_program.as_str();
            if let Err(e) = self.system.run(tc, &tc_args(&["qdisc", "del", "dev", dev, "root"])) {
                errors.push(e.to_string());
            }
            match self.system.run(tc, &tc_args(&["qdisc", "show", "dev", dev])) {
                Ok(out) if out.contains("netem") => errors.push(format!("netem still active on {dev}")),
                Ok(_) => {}
                Err(e) => errors.push(e.to_string()),
            }
        }
        self.released = true;
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Condition(errors.join("; ")))
        }
    }

    /// Undoes every change and checks the host is back to baseline.
    pub fn release(mut self) -> Result<()> {
        self.restore()
    }
}

impl Drop for EnvironmentHandle {
    fn drop(&mut self) {
        if !self.released {
            if let Err(e) = self.restore() {
                log::error!("restoring environment: {e}");
            }
        }
    }
}

/// Puts the host into the state `condition` requires.
///
/// Anything that cannot be applied is an error; the host is left untouched
/// in that case.
pub fn apply_condition(
    condition: &ConditionSpec,
    config: &EnvironmentConfig,
    system: Arc<dyn SystemControl>,
) -> Result<EnvironmentHandle> {
    let mut handle = EnvironmentHandle {
        system: system.clone(),
        config: config.clone(),
        resolv_backup: None,
        shaped: false,
        released: false,
        description: "none".into(),
    };
    if condition.adblock {
        let blocker = config.blocker_dns.ok_or_else(|| {
            Error::Condition("ad blocking requested but environment.blocker_dns is not configured".into())
        })?;
        if blocker.port() != 53 {
            return Err(Error::Condition(format!(
                "blocker {blocker} must listen on port 53 to serve as the system resolver"
            )));
        }
        let timeout = Duration::from_millis(config.probe_timeout_ms);
        let answer = system.probe_dns(blocker, &config.blocker_probe_domain, timeout)?;
        if !answer.is_blocked() {
            return Err(Error::Condition(format!(
                "blocker {blocker} resolved {} to {:?} ({}); refusing to run an ad-block condition",
                config.blocker_probe_domain, answer.addresses, answer.response_code
            )));
        }
        let path = &config.resolv_conf;
        let backup = fs::read(path).map_err(|e| Error::Condition(format!("reading {}: {e}", path.display())))?;
        let text = format!("# written by greenunit for an ad-block run\nnameserver {}\n", blocker.ip());
        fs::write(path, text).map_err(|e| Error::Condition(format!("writing {}: {e}", path.display())))?;
        handle.resolv_backup = Some(backup);
    }
    if condition.injected_latency_ms > 0 {
        let delay = format!("{}ms", condition.injected_latency_ms);
        let dev = config.interface.as_str();
        system.run(
            &config.tc_program,
            &tc_args(&["qdisc", "replace", "dev", dev, "root", "netem", "delay", &delay]),
        )?;
        handle.shaped = true;
        handle.description = format!("egress netem delay {delay} on {dev}");
    }
    Ok(handle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[derive(Default)]
    struct FakeSystem {
        calls: Mutex<Vec<String>>,
        blocked: bool,
        netem_active: Mutex<bool>,
    }

    impl SystemControl for FakeSystem {
        fn run(&self, program: &str, args: &[String]) -> Result<String> {
            let line = format!("{program} {}", args.join(" "));
            self.calls.lock().unwrap().push(line.clone());
            let mut netem = self.netem_active.lock().unwrap();
            if line.contains("replace") {
                *netem = true;
            } else if line.contains(" del ") {
                *netem = false;
            }
            Ok(if *netem { "qdisc netem 8001: root".into() } else { "qdisc noqueue 0: root".into() })
        }

        fn probe_dns(&self, _server: SocketAddr, _domain: &str, _timeout: Duration) -> Result<DnsAnswer> {
            Ok(DnsAnswer {
                response_code: "NoError".into(),
                nxdomain: false,
                addresses: vec![if self.blocked { [0, 0, 0, 0].into() } else { [93, 184, 216, 34].into() }],
            })
        }
    }

    fn config(dir: &tempfile::TempDir) -> EnvironmentConfig {
        let resolv = dir.path().join("resolv.conf");
        fs::write(&resolv, "nameserver 9.9.9.9\n").unwrap();
        EnvironmentConfig {
            resolv_conf: resolv,
            blocker_dns: Some("127.0.0.53:53".parse().unwrap()),
            interface: "lo".into(),
            ..Default::default()
        }
    }

    #[test]
    fn baseline_changes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(&dir);
        let sys = Arc::new(FakeSystem::default());
        let h = apply_condition(&ConditionSpec::default(), &cfg, sys.clone()).unwrap();
        assert_eq!(h.latency_shaping(), "none");
        h.release().unwrap();
        assert!(sys.calls.lock().unwrap().is_empty());
        assert_eq!(fs::read_to_string(&cfg.resolv_conf).unwrap(), "nameserver 9.9.9.9\n");
    }

    #[test]
    fn adblock_and_latency_are_applied_and_restored() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(&dir);
        let sys = Arc::new(FakeSystem {
            blocked: true,
            ..Default::default()
        });
        let cond = ConditionSpec {
            adblock: true,
            injected_latency_ms: 50,
            ..Default::default()
        };
        let h = apply_condition(&cond, &cfg, sys.clone()).unwrap();
        assert!(fs::read_to_string(&cfg.resolv_conf).unwrap().contains("nameserver 127.0.0.53"));
        assert_eq!(h.latency_shaping(), "egress netem delay 50ms on lo");
        h.release().unwrap();
        assert_eq!(fs::read_to_string(&cfg.resolv_conf).unwrap(), "nameserver 9.9.9.9\n");
        let calls = sys.calls.lock().unwrap();
        assert_eq!(calls[0], "tc qdisc replace dev lo root netem delay 50ms");
        assert_eq!(calls[1], "tc qdisc del dev lo root");
        assert!(!*sys.netem_active.lock().unwrap());
    }

    #[test]
    fn drop_restores() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(&dir);
        let sys = Arc::new(FakeSystem {
            blocked: true,
            ..Default::default()
        });
        let cond = ConditionSpec {
            adblock: true,
            ..Default::default()
        };
        drop(apply_condition(&cond, &cfg, sys).unwrap());
        assert_eq!(fs::read_to_string(&cfg.resolv_conf).unwrap(), "nameserver 9.9.9.9\n");
    }

    #[test]
    fn non_blocking_resolver_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(&dir);
        let cond = ConditionSpec {
            adblock: true,
            ..Default::default()
        };
        let err = apply_condition(&cond, &cfg, Arc::new(FakeSystem::default())).unwrap_err();
        assert!(matches!(err, Error::Condition(_)));
        assert_eq!(fs::read_to_string(&cfg.resolv_conf).unwrap(), "nameserver 9.9.9.9\n");
    }

    #[test]
    fn missing_blocker_is_an_error() {
        let cond = ConditionSpec {
            adblock: true,
            ..Default::default()
        };
        let cfg = EnvironmentConfig::default();
        assert!(apply_condition(&cond, &cfg, Arc::new(HostSystem)).is_err());
    }

    #[test]
    fn failing_tc_is_an_error() {
        let cfg = EnvironmentConfig {
            tc_program: "/nonexistent/tc".into(),
            ..Default::default()
        };
        let cond = ConditionSpec {
            injected_latency_ms: 50,
            ..Default::default()
        };
        assert!(matches!(apply_condition(&cond, &cfg, Arc::new(HostSystem)), Err(Error::Condition(_))));
    }

    #[test]
    fn blocked_answers() {
        let nx = DnsAnswer {
            response_code: "NXDomain".into(),
            nxdomain: true,
            addresses: vec![],
        };
        assert!(nx.is_blocked());
        let empty = DnsAnswer {
            response_code: "NoError".into(),
            nxdomain: false,
            addresses: vec![],
        };
        assert!(!empty.is_blocked());
    }
}
