use serde::{Deserialize, Serialize};

use super::{Sample, SampleUnit};
use crate::error::{Error, Result};

/// Counter increase over a window, in native units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Integral {
    pub amount: u64,
    pub unit: SampleUnit,
    /// True when the window reached outside the sampled span and the
    /// nearest sample was held constant.
    pub extrapolated: bool,
}

impl Integral {
    /// Joules for energy, bytes for traffic.
    pub fn value(&self) -> f64 {
        match self.unit {
            SampleUnit::Microjoule => self.amount as f64 * 1e-6,
            SampleUnit::Byte => self.amount as f64,
        }
    }
}

/// Counter value at `t`, linearly interpolated between neighbours.
///
/// The interpolation floors in integer arithmetic, so the position is a
/// single well-defined number per timestamp and window totals telescope.
fn position(samples: &[Sample], t: u64) -> (u64, bool) {
    let first = &samples[0];
    let last = &samples[samples.len() - 1];
    if t <= first.timestamp_ns {
        return (first.raw, t < first.timestamp_ns);
    }
    if t >= last.timestamp_ns {
        return (last.raw, t > last.timestamp_ns);
    }
    let i = samples.partition_point(|s| s.timestamp_ns <= t) - 1;
    let (a, b) = (&samples[i], &samples[i + 1]);
    let span = u128::from(b.timestamp_ns - a.timestamp_ns);
    let rise = u128::from(b.raw - a.raw);
    let step = rise * u128::from(t - a.timestamp_ns) / span;
    (a.raw + step as u64, false)
}

/// Integrates a cumulative counter series over `[t0, t1]` (ns).
///
/// Samples must be strictly time-ordered with non-decreasing values.
pub fn integrate(samples: &[Sample], t0: u64, t1: u64) -> Result<Integral> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to integrate".into()));
    }
    if t1 < t0 {
        return Err(Error::InvalidInput(format!("window end {t1} precedes start {t0}")));
    }
    let unit = samples[0].unit;
    for w in samples.windows(2) {
        if w[1].timestamp_ns <= w[0].timestamp_ns {
            return Err(Error::InvalidInput(format!(
                "sample timestamps not increasing at {}",
                w[1].timestamp_ns
            )));
        }
        if w[1].raw < w[0].raw {
            return Err(Error::InvalidInput(format!(
                "counter '{}' decreased from {} to {}",
                w[1].channel, w[0].raw, w[1].raw
            )));
        }
        if w[1].unit != unit {
            return Err(Error::InvalidInput("mixed units in one sample series".into()));
        }
    }
    let (p0, e0) = position(samples, t0);
    let (p1, e1) = position(samples, t1);
    Ok(Integral {
        amount: p1 - p0,
        unit,
        extrapolated: e0 || e1,
    })
}
