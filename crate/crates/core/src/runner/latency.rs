use std::io;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PROBE_COUNT: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub count: usize,
    pub failures: usize,
}

/// One TCP-connect round trip. A refused connection still counts: the
/// host's reset took exactly one round trip.
fn probe(addr: SocketAddr, timeout: Duration) -> io::Result<Duration> {
    let start = Instant::now();
    match TcpStream::connect_timeout(&addr, timeout) {
        Ok(_) => Ok(start.elapsed()),
        Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => Ok(start.elapsed()),
        Err(e) => Err(e),
    }
}

/// Round-trip statistics over `count` TCP-connect probes to `host:port`.
pub fn measure_latency(host: &str, port: u16, count: usize, timeout: Duration) -> Result<LatencyStats> {
    if count == 0 {
        return Err(Error::InvalidInput("probe count must be positive".into()));
    }
    let addr = (host, port)
        .to_socket_addrs()
        .map_err(|e| Error::NotFound(format!("cannot resolve '{host}': {e}")))?
        .next()
        .ok_or_else(|| Error::NotFound(format!("'{host}' has no addresses")))?;
    let mut rtts = Vec::with_capacity(count);
    let mut last_error = None;
    for _ in 0..count {
        match probe(addr, timeout) {
            Ok(d) => rtts.push(d.as_secs_f64() * 1e3),
            Err(e) => last_error = Some(e),
        }
    }
    if rtts.is_empty() {
        let why = last_error.map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::Condition(format!("{host} ({addr}) unreachable: {why}")));
    }
    let n = rtts.len() as f64;
    let mean_ms = rtts.iter().sum::<f64>() / n;
    let sd_ms = if rtts.len() > 1 {
        (rtts.iter().map(|r| (r - mean_ms).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(LatencyStats {
        mean_ms,
        sd_ms,
        count: rtts.len(),
        failures: count - rtts.len(),
    })
}
