//! Series cleaning and significance testing.
//!
//! - Outliers: Tukey fences `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]` with type-7
//!   (linear interpolation) quantiles, re-applied until no value falls
//!   outside the fences of the retained set.
//! - Differences in means: Welch's unequal-variance t-test, two-sided.
//! - Normality: D'Agostino-Pearson omnibus K² (skewness + kurtosis), advisory
//!   only. Welch p-values are reported whatever its verdict.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{
    ComparisonDelta, ConditionSpec, DropReason, FilterLogEntry, FunctionalUnitKind, FunctionalUnitResult,
    MeasurementSeries, Metric, SESSION_RECIPE,
};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const QUANTILE_RULE: &str = "type7-linear";
const IQR_FENCE: f64 = 1.5;
const Z_975: f64 = 1.959_963_984_540_054;

/// Outcome of a hypothesis test. `significant` is `p_value < alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
    /// Inputs had no spread; the verdict is by convention, not by test.
    pub degenerate: bool,
}

impl TestVerdict {
    fn new(statistic: f64, p_value: f64, alpha: f64, degenerate: bool) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            statistic,
            p_value,
            alpha,
            significant: p_value < alpha,
            degenerate,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator).
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn check_finite(xs: &[f64]) -> Result<()> {
    match xs.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(Error::InvalidInput(format!("non-finite value {x}"))),
        None => Ok(()),
    }
}

/// Type-7 quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Tukey fences of a sample.
pub fn iqr_bounds(values: &[f64]) -> [f64; 2] {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    [q1 - IQR_FENCE * iqr, q3 + IQR_FENCE * iqr]
}

/// Which positions of the input survive IQR filtering.
#[derive(Clone, Debug, PartialEq)]
pub struct IqrPartition {
    pub keep: Vec<bool>,
    pub bounds: [f64; 2],
    pub passes: usize,
}

pub fn iqr_partition(values: &[f64]) -> Result<IqrPartition> {
    if values.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "IQR filtering needs at least 4 values, got {}",
            values.len()
        )));
    }
    check_finite(values)?;
    let mut keep = vec![true; values.len()];
    let mut passes = 0;
    loop {
        let kept: Vec<f64> = values.iter().zip(&keep).filter(|(_, k)| **k).map(|(v, _)| *v).collect();
        let bounds = iqr_bounds(&kept);
        passes += 1;
        let mut dropped_any = false;
        for (v, k) in values.iter().zip(keep.iter_mut()) {
            if *k && !(bounds[0] <= *v && *v <= bounds[1]) {
                *k = false;
                dropped_any = true;
            }
        }
        let remaining = keep.iter().filter(|k| **k).count();
        if !dropped_any || remaining < 4 {
            let kept: Vec<f64> = values.iter().zip(&keep).filter(|(_, k)| **k).map(|(v, _)| *v).collect();
            let bounds = if dropped_any { iqr_bounds(&kept) } else { bounds };
            return Ok(IqrPartition { keep, bounds, passes });
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IqrOutcome {
    pub retained: Vec<f64>,
    pub dropped: Vec<f64>,
    pub bounds: [f64; 2],
}

/// Splits values into those inside the Tukey fences and the rest, order
/// preserved. Filtering repeats until the retained set is stable, so the
/// operation is idempotent.
pub fn iqr_filter(values: &[f64]) -> Result<IqrOutcome> {
    let part = iqr_partition(values)?;
    let (retained, dropped): (Vec<_>, Vec<_>) = values.iter().zip(&part.keep).partition(|(_, k)| **k);
    Ok(IqrOutcome {
        retained: retained.into_iter().map(|(v, _)| *v).collect(),
        dropped: dropped.into_iter().map(|(v, _)| *v).collect(),
        bounds: part.bounds,
    })
}

/// Welch's two-sample t-test, two-sided. The statistic is positive when
/// `a` has the larger mean.
pub fn welch_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TestVerdict> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "Welch test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_finite(a)?;
    check_finite(b)?;
    welch_from_moments((mean(a), variance(a), a.len()), (mean(b), variance(b), b.len()), alpha)
}

/// Welch test from (mean, sample variance, n) of each side.
fn welch_from_moments(a: (f64, f64, usize), b: (f64, f64, usize), alpha: f64) -> Result<TestVerdict> {
    let (ma, va, na) = (a.0, a.1, a.2 as f64);
    let (mb, vb, nb) = (b.0, b.1, b.2 as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            TestVerdict::new(0.0, 1.0, alpha, true)
        } else {
            let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
            TestVerdict::new(t, 0.0, alpha, true)
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Domain(format!("t distribution: {e}")))?;
    let p = 2.0 * dist.sf(t.abs());
    Ok(TestVerdict::new(t, p, alpha, false))
}

/// D'Agostino-Pearson omnibus normality test. `significant` means normality
/// is rejected at `alpha`.
pub fn normality_check(values: &[f64], alpha: f64) -> Result<TestVerdict> {
    let n = values.len();
    if n < 8 {
        return Err(Error::InsufficientData(format!(
            "normality check needs at least 8 values, got {n}"
        )));
    }
    check_finite(values)?;
    let nf = n as f64;
    let m = mean(values);
    let moment = |k: i32| values.iter().map(|x| (x - m).powi(k)).sum::<f64>() / nf;
    let m2 = moment(2);
    if m2 == 0.0 {
        return Ok(TestVerdict::new(0.0, 1.0, alpha, true));
    }
    let z_skew = skew_z(moment(3) / m2.powf(1.5), nf);
    let z_kurt = kurtosis_z(moment(4) / (m2 * m2), nf);
    let k2 = z_skew * z_skew + z_kurt * z_kurt;
    let chi2 = ChiSquared::new(2.0).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(TestVerdict::new(k2, chi2.sf(k2), alpha, false))
}

fn skew_z(b2: f64, n: f64) -> f64 {
    let y = b2 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let y = if y == 0.0 { 1.0 } else { y };
    let r = y / alpha;
    delta * (r + (r * r + 1.0).sqrt()).ln()
}

fn kurtosis_z(b2: f64, n: f64) -> f64 {
    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let var_b2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / var_b2.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    (term1 - term2) / (2.0 / (9.0 * a)).sqrt()
}

/// Mean, sample standard deviation, count and normal-approximation 95% CI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    pub ci95: [f64; 2],
}

pub fn summarize_values(values: &[f64]) -> Result<Summary> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "summary needs at least 2 values, got {}",
            values.len()
        )));
    }
    check_finite(values)?;
    // sorting makes the floating-point sum independent of input order
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = mean(&sorted);
    let sd = variance(&sorted).sqrt();
    let half = Z_975 * sd / (sorted.len() as f64).sqrt();
    Ok(Summary {
        mean: m,
        sd,
        n: sorted.len(),
        ci95: [m - half, m + half],
    })
}

pub fn summarize(series: &MeasurementSeries, metric: Metric) -> Result<Summary> {
    summarize_values(&series.values(metric))
        .map_err(|e| Error::InsufficientData(format!("{} {} {}: {e}", series.service, series.unit, metric)))
}

fn delta_pct(mean_a: f64, delta: f64) -> Option<f64> {
    if mean_a != 0.0 {
        Some(100.0 * delta / mean_a)
    } else if delta == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

/// Compares two summaries, e.g. synthetic sessions built by [`compose_session`].
///
/// The Welch test runs on the summary moments; no normality verdict is
/// possible without the underlying values.
pub fn compare_summaries(a: &Summary, b: &Summary, metric: Metric, alpha: f64) -> Result<ComparisonDelta> {
    if a.n < 2 || b.n < 2 {
        return Err(Error::InsufficientData(format!(
            "Welch test needs at least 2 values per sample, got {} and {}",
            a.n, b.n
        )));
    }
    let welch = welch_from_moments((a.mean, a.sd * a.sd, a.n), (b.mean, b.sd * b.sd, b.n), alpha)?;
    let delta = a.mean - b.mean;
    Ok(ComparisonDelta {
        metric,
        mean_a: a.mean,
        mean_b: b.mean,
        delta,
        delta_pct: delta_pct(a.mean, delta),
        statistic: welch.statistic,
        p_value: welch.p_value,
        alpha,
        significant: welch.significant,
        degenerate: welch.degenerate,
        normality_a: None,
        normality_b: None,
    })
}

/// Compares one metric between a baseline series `a` and a variant `b`.
pub fn compare_series(
    a: &MeasurementSeries,
    b: &MeasurementSeries,
    metric: Metric,
    alpha: f64,
) -> Result<ComparisonDelta> {
    if a.unit != b.unit {
        return Err(Error::Domain(format!(
            "cannot compare unit {} with unit {}",
            a.unit, b.unit
        )));
    }
    let va = a.values(metric);
    let vb = b.values(metric);
    let sa = summarize_values(&va)?;
    let sb = summarize_values(&vb)?;
    let welch = welch_t_test(&va, &vb, alpha)?;
    let delta = sa.mean - sb.mean;
    Ok(ComparisonDelta {
        metric,
        mean_a: sa.mean,
        mean_b: sb.mean,
        delta,
        delta_pct: delta_pct(sa.mean, delta),
        statistic: welch.statistic,
        p_value: welch.p_value,
        alpha,
        significant: welch.significant,
        degenerate: welch.degenerate,
        normality_a: normality_check(&va, alpha).ok(),
        normality_b: normality_check(&vb, alpha).ok(),
    })
}

/// Summaries of every additive metric for one unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub unit: FunctionalUnitKind,
    pub metrics: BTreeMap<Metric, Summary>,
    /// Built by summing constituents rather than measured directly.
    pub synthetic: bool,
}

impl UnitSummary {
    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.metrics.get(&metric).map(|s| s.mean)
    }
}

pub fn summarize_unit(series: &MeasurementSeries) -> Result<UnitSummary> {
    let metrics = Metric::ALL
        .into_iter()
        .map(|m| summarize(series, m).map(|s| (m, s)))
        .collect::<Result<_>>()?;
    Ok(UnitSummary {
        unit: series.unit.clone(),
        metrics,
        synthetic: false,
    })
}

const ADDITIVE: [Metric; 5] = [
    Metric::Duration,
    Metric::EnergyMachine,
    Metric::EnergyCpu,
    Metric::EnergyMemory,
    Metric::NetworkBytes,
];

/// Builds a synthetic session summary from its constituent units.
///
/// Means add; variances add assuming independent constituents. The recipe
/// counts `Read` twice. Mean power is derived from the summed energy and
/// duration and carries no spread.
pub fn compose_session(units: &BTreeMap<FunctionalUnitKind, UnitSummary>) -> Result<UnitSummary> {
    let mut missing: Vec<String> = Vec::new();
    for kind in &SESSION_RECIPE {
        if !units.contains_key(kind) && !missing.contains(&kind.to_string()) {
            missing.push(kind.to_string());
        }
    }
    if !missing.is_empty() {
        return Err(Error::NotFound(format!(
            "session constituents missing: {}",
            missing.join(", ")
        )));
    }
    let mut metrics = BTreeMap::new();
    for metric in ADDITIVE {
        let mut mean = 0.0;
        let mut var = 0.0;
        let mut var_of_mean = 0.0;
        let mut n = usize::MAX;
        for kind in &SESSION_RECIPE {
            let s = units[kind].metrics.get(&metric).ok_or_else(|| {
                Error::NotFound(format!("{kind} summary lacks metric {metric}"))
            })?;
            mean += s.mean;
            var += s.sd * s.sd;
            var_of_mean += s.sd * s.sd / s.n as f64;
            n = n.min(s.n);
        }
        let half = Z_975 * var_of_mean.sqrt();
        metrics.insert(
            metric,
            Summary {
                mean,
                sd: var.sqrt(),
                n,
                ci95: [mean - half, mean + half],
            },
        );
    }
    let energy = metrics[&Metric::EnergyMachine].mean;
    let duration = metrics[&Metric::Duration].mean;
    let power = if duration > 0.0 { energy / duration } else { 0.0 };
    metrics.insert(
        Metric::MeanPowerMachine,
        Summary {
            mean: power,
            sd: 0.0,
            n: metrics[&Metric::Duration].n,
            ci95: [power, power],
        },
    );
    Ok(UnitSummary {
        unit: FunctionalUnitKind::Session,
        metrics,
        synthetic: true,
    })
}

/// Builds a [`MeasurementSeries`] from every result recorded for one unit.
///
/// Failed results are dropped first. The IQR filter then runs on machine
/// energy; a run outside the fences is dropped whole, with every metric.
pub fn build_series(
    service: &str,
    condition: ConditionSpec,
    unit: FunctionalUnitKind,
    results: impl IntoIterator<Item = FunctionalUnitResult>,
) -> Result<MeasurementSeries> {
    let mut raw_count = 0;
    let mut valid = Vec::new();
    let mut filter_log = Vec::new();
    for r in results {
        if r.unit != unit {
            return Err(Error::Domain(format!(
                "result {} is for unit {}, series is {unit}",
                r.run_id, r.unit
            )));
        }
        raw_count += 1;
        match &r.error {
            Some(message) => filter_log.push(FilterLogEntry {
                run_id: r.run_id.clone(),
                reason: DropReason::Error {
                    message: message.clone(),
                },
            }),
            None => valid.push(r),
        }
    }
    let valid_count = valid.len();
    let filter_metric = Metric::EnergyMachine;
    let (results, iqr_bounds) = if valid.len() >= 4 {
        let values: Vec<f64> = valid
            .iter()
            .map(|r| r.metric(filter_metric).unwrap_or(0.0))
            .collect();
        let part = iqr_partition(&values)?;
        let [lo, hi] = part.bounds;
        let mut kept = Vec::with_capacity(valid.len());
        for ((r, keep), value) in valid.into_iter().zip(part.keep).zip(values) {
            if keep {
                kept.push(r);
            } else {
                filter_log.push(FilterLogEntry {
                    run_id: r.run_id,
                    reason: DropReason::Iqr { value, lo, hi },
                });
            }
        }
        (kept, Some(part.bounds))
    } else {
        (valid, None)
    };
    Ok(MeasurementSeries {
        service: service.to_string(),
        condition,
        unit,
        raw_count,
        valid_count,
        retained_count: results.len(),
        results,
        filter_log,
        filter_metric,
        quantile_rule: QUANTILE_RULE.to_string(),
        iqr_bounds,
    })
}
