//! Shared nanosecond clock for unit boundaries and metric samples.
//!
//! Values are epoch-anchored (so they read as wall time in stored records)
//! but advance monotonically for the lifetime of the process.

use std::sync::OnceLock;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

static ANCHOR: OnceLock<(Instant, u64)> = OnceLock::new();

pub fn now_ns() -> u64 {
    let (start, epoch_ns) = ANCHOR.get_or_init(|| {
        let epoch = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        (Instant::now(), epoch)
    });
    epoch_ns + start.elapsed().as_nanos() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone() {
        let a = now_ns();
        let b = now_ns();
        assert!(b >= a);
    }
}
