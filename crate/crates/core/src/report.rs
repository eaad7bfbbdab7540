//! Comparison tables, CO2e breakdowns and population-scale projections.
//!
//! Deltas are always `baseline - variant`, so a positive number is a saving
//! by the variant. Human formats round to four significant figures; CSV and
//! JSON carry full precision.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::emissions::{emission_breakdown, transfer_intensity, UnitDeltas};
use crate::error::{Error, Result};
use crate::model::{
    ComparisonDelta, ConditionSpec, EmissionEntry, EmissionFactors, EmissionReport, FunctionalUnitKind,
    MeasurementSeries, Metric, ScaleProjection,
};
use crate::stats::{compare_series, compare_summaries, compose_session, summarize_unit, DEFAULT_ALPHA};
use crate::store::Store;

/// tCO2e of one Paris-New York round trip, chosen so that 11.9 kt maps to
/// roughly 9,000 flights.
pub const DEFAULT_FLIGHT_RT_TONNES: f64 = 1.32;

/// A (service, condition) pair in the store.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesRef {
    pub service: String,
    pub condition: ConditionSpec,
}

impl SeriesRef {
    pub fn new(service: impl Into<String>, condition: ConditionSpec) -> Self {
        Self {
            service: service.into(),
            condition,
        }
    }
}

impl fmt::Display for SeriesRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.service, self.condition.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub population: f64,
    pub sessions_per_year: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub baseline: SeriesRef,
    pub variant: SeriesRef,
    pub units: Vec<FunctionalUnitKind>,
    pub factors: EmissionFactors,
    pub projections: Vec<ProjectionSpec>,
    pub alpha: f64,
    pub flight_rt_tonnes: f64,
}

impl ReportSpec {
    /// All seven basic units plus Session, default factors and alpha.
    pub fn new(baseline: SeriesRef, variant: SeriesRef) -> Self {
        let mut units = FunctionalUnitKind::BASIC.to_vec();
        units.push(FunctionalUnitKind::Session);
        Self {
            baseline,
            variant,
            units,
            factors: EmissionFactors::default(),
            projections: Vec::new(),
            alpha: DEFAULT_ALPHA,
            flight_rt_tonnes: DEFAULT_FLIGHT_RT_TONNES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.baseline == self.variant {
            return Err(Error::InvalidInput(format!(
                "baseline and variant are both {}",
                self.baseline
            )));
        }
        if self.units.is_empty() {
            return Err(Error::InvalidInput("no functional units requested".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        crate::model::validate_factors(&self.factors).into_result()
    }
}

/// Colour semantics of a row: decreases are savings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Saving,
    Increase,
    Neutral,
}

impl Direction {
    pub fn of(delta: f64) -> Self {
        if delta > 0.0 {
            Direction::Saving
        } else if delta < 0.0 {
            Direction::Increase
        } else {
            Direction::Neutral
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Saving => "saving",
            Direction::Increase => "increase",
            Direction::Neutral => "neutral",
        }
    }
}

/// Whether a row was computed from a measured series or composed from units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesSource {
    Measured,
    Composed,
}

impl SeriesSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SeriesSource::Measured => "measured",
            SeriesSource::Composed => "composed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub unit: FunctionalUnitKind,
    pub source: SeriesSource,
    #[serde(flatten)]
    pub delta: ComparisonDelta,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline: SeriesRef,
    pub variant: SeriesRef,
    pub alpha: f64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, unit: &FunctionalUnitKind, metric: Metric) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| &r.unit == unit && r.delta.metric == metric)
    }
}

fn retained_enough(s: Option<&MeasurementSeries>) -> bool {
    s.is_some_and(|s| s.retained_count >= 2)
}

fn compare_unit(
    unit: &FunctionalUnitKind,
    a: &BTreeMap<FunctionalUnitKind, MeasurementSeries>,
    b: &BTreeMap<FunctionalUnitKind, MeasurementSeries>,
    alpha: f64,
) -> Result<(SeriesSource, Vec<ComparisonDelta>)> {
    let measured = retained_enough(a.get(unit)) && retained_enough(b.get(unit));
    if measured || *unit != FunctionalUnitKind::Session {
        let (sa, sb) = (&a[unit], &b[unit]);
        let deltas = Metric::ALL
            .into_iter()
            .map(|m| compare_series(sa, sb, m, alpha))
            .collect::<Result<_>>()?;
        return Ok((SeriesSource::Measured, deltas));
    }
    let compose = |side: &BTreeMap<FunctionalUnitKind, MeasurementSeries>| {
        let units = FunctionalUnitKind::BASIC
            .iter()
            .filter_map(|k| side.get(k))
            .map(|s| summarize_unit(s).map(|u| (s.unit.clone(), u)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        compose_session(&units)
    };
    let (ca, cb) = (compose(a)?, compose(b)?);
    let deltas = Metric::ALL
        .into_iter()
        .map(|m| compare_summaries(&ca.metrics[&m], &cb.metrics[&m], m, alpha))
        .collect::<Result<_>>()?;
    Ok((SeriesSource::Composed, deltas))
}

fn missing_units(
    units: &[FunctionalUnitKind],
    side: &SeriesRef,
    series: &BTreeMap<FunctionalUnitKind, MeasurementSeries>,
) -> Vec<String> {
    let mut gaps = Vec::new();
    for unit in units {
        if series.contains_key(unit) {
            continue;
        }
        let composable = *unit == FunctionalUnitKind::Session
            && FunctionalUnitKind::BASIC.iter().all(|k| series.contains_key(k));
        if !composable {
            gaps.push(format!("{side} {unit}"));
        }
    }
    gaps
}

fn load(store: &Store, r: &SeriesRef) -> Result<BTreeMap<FunctionalUnitKind, MeasurementSeries>> {
    store.load_series(&r.service, &r.condition)
}

/// One row per requested unit and metric.
pub fn comparison_table(spec: &ReportSpec, store: &Store) -> Result<ComparisonTable> {
    spec.validate()?;
    let a = load(store, &spec.baseline)?;
    let b = load(store, &spec.variant)?;
    comparison_from_series(spec, &a, &b)
}

/// As [`comparison_table`], over series already in memory.
pub fn comparison_from_series(
    spec: &ReportSpec,
    a: &BTreeMap<FunctionalUnitKind, MeasurementSeries>,
    b: &BTreeMap<FunctionalUnitKind, MeasurementSeries>,
) -> Result<ComparisonTable> {
    let mut gaps = missing_units(&spec.units, &spec.baseline, a);
    gaps.extend(missing_units(&spec.units, &spec.variant, b));
    if !gaps.is_empty() {
        return Err(Error::NotFound(format!("missing series: {}", gaps.join(", "))));
    }
    let mut rows = Vec::new();
    for unit in &spec.units {
        let (source, deltas) = compare_unit(unit, a, b, spec.alpha)?;
        rows.extend(deltas.into_iter().map(|delta| ComparisonRow {
            unit: unit.clone(),
            source,
            direction: Direction::of(delta.delta),
            delta,
        }));
    }
    Ok(ComparisonTable {
        baseline: spec.baseline.clone(),
        variant: spec.variant.clone(),
        alpha: spec.alpha,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionRow {
    pub unit: FunctionalUnitKind,
    pub source: SeriesSource,
    pub deltas: UnitDeltas,
    pub entry: EmissionEntry,
    /// Emissions of the baseline unit itself, all four components.
    pub baseline_total_g: f64,
    /// `100 * entry.total_g / baseline_total_g`.
    pub pct_of_baseline: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionTable {
    pub baseline: SeriesRef,
    pub variant: SeriesRef,
    pub rows: Vec<EmissionRow>,
    pub projections: Vec<ScaleProjection>,
}

impl EmissionTable {
    pub fn row(&self, unit: &FunctionalUnitKind) -> Option<&EmissionRow> {
        self.rows.iter().find(|r| &r.unit == unit)
    }

    pub fn to_report(&self) -> EmissionReport {
        EmissionReport {
            per_unit: self.rows.iter().map(|r| (r.unit.clone(), r.entry)).collect(),
            projections: self.projections.clone(),
        }
    }
}

/// Annual saving of a per-session delta at population scale.
///
/// Population, sessions per year and the flight constant must be positive.
/// A negative per-session value projects a net increase.
pub fn scale_projection(
    per_session_g: f64,
    population: f64,
    sessions_per_year: f64,
    flight_rt_tonnes: f64,
) -> Result<ScaleProjection> {
    for (name, v) in [
        ("population", population),
        ("sessions_per_year", sessions_per_year),
        ("flight_rt_tonnes", flight_rt_tonnes),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidInput(format!("{name} must be positive (got {v})")));
        }
    }
    if !per_session_g.is_finite() {
        return Err(Error::InvalidInput(format!("per_session_g must be finite (got {per_session_g})")));
    }
    let annual_saving_t = per_session_g * population * sessions_per_year * 1e-6;
    Ok(ScaleProjection {
        population,
        sessions_per_year,
        per_session_saving_g: per_session_g,
        annual_saving_t,
        flight_equivalents: annual_saving_t / flight_rt_tonnes,
    })
}

fn mean_of(table: &ComparisonTable, unit: &FunctionalUnitKind, metric: Metric) -> (f64, f64) {
    table
        .row(unit, metric)
        .map(|r| (r.delta.mean_a, r.delta.delta))
        .unwrap_or((0.0, 0.0))
}

/// CO2e breakdown of every unit in a comparison table.
pub fn emissions_from_comparison(spec: &ReportSpec, table: &ComparisonTable) -> Result<EmissionTable> {
    let mut rows = Vec::new();
    for unit in &spec.units {
        let Some(first) = table.rows.iter().find(|r| &r.unit == unit) else {
            continue;
        };
        let (e_a, e_d) = mean_of(table, unit, Metric::EnergyMachine);
        let (b_a, b_d) = mean_of(table, unit, Metric::NetworkBytes);
        let (t_a, t_d) = mean_of(table, unit, Metric::Duration);
        let deltas = UnitDeltas::from_bytes(e_d, b_d, t_d);
        let entry = emission_breakdown(&deltas, &spec.factors)?;
        let baseline_total_g = emission_breakdown(&UnitDeltas::from_bytes(e_a, b_a, t_a), &spec.factors)?.total_g;
        rows.push(EmissionRow {
            unit: unit.clone(),
            source: first.source,
            deltas,
            entry,
            baseline_total_g,
            pct_of_baseline: (baseline_total_g != 0.0).then(|| 100.0 * entry.total_g / baseline_total_g),
        });
    }
    let mut projections = Vec::new();
    if !spec.projections.is_empty() {
        let session = rows
            .iter()
            .find(|r| r.unit == FunctionalUnitKind::Session)
            .ok_or_else(|| Error::InvalidInput("projections need the Session unit in the report".into()))?;
        for p in &spec.projections {
            projections.push(scale_projection(
                session.entry.total_g,
                p.population,
                p.sessions_per_year,
                spec.flight_rt_tonnes,
            )?);
        }
    }
    Ok(EmissionTable {
        baseline: table.baseline.clone(),
        variant: table.variant.clone(),
        rows,
        projections,
    })
}

pub fn emission_table(spec: &ReportSpec, store: &Store) -> Result<EmissionTable> {
    let table = comparison_table(spec, store)?;
    emissions_from_comparison(spec, &table)
}

/// Everything `compare` prints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub comparison: ComparisonTable,
    pub emissions: EmissionTable,
    pub factors: EmissionFactors,
    /// Transfer intensity implied by `factors`, µgCO2e/MB.
    pub transfer_intensity_ug_per_mb: f64,
}

pub fn build_report(spec: &ReportSpec, store: &Store) -> Result<Report> {
    let comparison = comparison_table(spec, store)?;
    report_from_comparison(spec, comparison)
}

pub fn report_from_comparison(spec: &ReportSpec, comparison: ComparisonTable) -> Result<Report> {
    let emissions = emissions_from_comparison(spec, &comparison)?;
    Ok(Report {
        comparison,
        emissions,
        factors: spec.factors,
        transfer_intensity_ug_per_mb: transfer_intensity(&spec.factors)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    PlainTable,
    Csv,
    Json,
    Markdown,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" | "plain_table" | "table" | "text" => Ok(Format::PlainTable),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "markdown" | "md" => Ok(Format::Markdown),
            _ => Err(Error::InvalidInput(format!(
                "unknown format '{s}' (expected plain, csv, json or markdown)"
            ))),
        }
    }
}

/// Four significant figures, plain notation for moderate magnitudes.
pub fn sig4(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        format!("{:.*}", (3 - mag).max(0) as usize, x)
    } else {
        format!("{x:.3e}")
    }
}

fn opt_sig4(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), sig4)
}

struct TextTable {
    headers: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl TextTable {
    fn plain(&self, out: &mut String) {
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r[i].chars().count())
                    .chain([self.headers[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: Vec<&str>, out: &mut String| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        };
        line(self.headers.clone(), out);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(rule.iter().map(String::as_str).collect(), out);
        for r in &self.rows {
            line(r.iter().map(String::as_str).collect(), out);
        }
    }

    fn markdown(&self, out: &mut String) {
        let _ = writeln!(out, "| {} |", self.headers.join(" | "));
        let _ = writeln!(out, "|{}|", vec!["---"; self.headers.len()].join("|"));
        for r in &self.rows {
            let _ = writeln!(out, "| {} |", r.join(" | "));
        }
    }
}

fn comparison_text(table: &ComparisonTable) -> TextTable {
    TextTable {
        headers: vec!["unit", "metric", "source", "baseline", "variant", "delta", "delta_%", "p", "significant", "direction"],
        rows: table
            .rows
            .iter()
            .map(|r| {
                let d = &r.delta;
                vec![
                    r.unit.to_string(),
                    format!("{} [{}]", d.metric, d.metric.unit_symbol()),
                    r.source.as_str().into(),
                    sig4(d.mean_a),
                    sig4(d.mean_b),
                    sig4(d.delta),
                    opt_sig4(d.delta_pct),
                    sig4(d.p_value),
                    if d.significant { "yes" } else { "no" }.into(),
                    r.direction.as_str().into(),
                ]
            })
            .collect(),
    }
}

fn emission_text(table: &EmissionTable) -> TextTable {
    TextTable {
        headers: vec![
            "unit",
            "source",
            "use_user_g",
            "use_network_g",
            "embodied_user_g",
            "embodied_network_g",
            "total_g",
            "baseline_total_g",
            "pct_of_baseline",
        ],
        rows: table
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.unit.to_string(),
                    r.source.as_str().into(),
                    sig4(r.entry.use_user_g),
                    sig4(r.entry.use_network_g),
                    sig4(r.entry.embodied_user_g),
                    sig4(r.entry.embodied_network_g),
                    sig4(r.entry.total_g),
                    sig4(r.baseline_total_g),
                    opt_sig4(r.pct_of_baseline),
                ]
            })
            .collect(),
    }
}

fn projection_text(projections: &[ScaleProjection]) -> TextTable {
    TextTable {
        headers: vec!["population", "sessions_per_year", "per_session_g", "annual_t", "flight_equivalents"],
        rows: projections
            .iter()
            .map(|p| {
                vec![
                    sig4(p.population),
                    sig4(p.sessions_per_year),
                    sig4(p.per_session_saving_g),
                    sig4(p.annual_saving_t),
                    sig4(p.flight_equivalents),
                ]
            })
            .collect(),
    }
}

fn factor_pairs(f: &EmissionFactors) -> Vec<(&'static str, f64)> {
    vec![
        ("grid_intensity", f.grid_intensity),
        ("joule_to_kwh", f.joule_to_kwh),
        ("transfer_intensity_base", f.transfer_intensity_base),
        ("base_year", f64::from(f.base_year)),
        ("halving_period_years", f.halving_period_years),
        ("assessment_year", f64::from(f.assessment_year)),
        ("device_embodied_total", f.device_embodied_total),
        ("device_lifetime_seconds", f.device_lifetime_seconds),
        ("resource_share", f.resource_share),
        ("embodied_to_use_ratio", f.embodied_to_use_ratio),
    ]
}

fn footer(report: &Report) -> String {
    let pairs: Vec<String> = factor_pairs(&report.factors)
        .into_iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    format!(
        "factors: {}\ntransfer intensity {} µgCO2e/MB (halving every {} years since {})\n",
        pairs.join(" "),
        sig4(report.transfer_intensity_ug_per_mb),
        report.factors.halving_period_years,
        report.factors.base_year
    )
}

fn render_human(report: &Report, markdown: bool) -> String {
    let mut out = String::new();
    let c = &report.comparison;
    let section = |out: &mut String, title: &str, t: TextTable| {
        if markdown {
            let _ = writeln!(out, "## {title}\n");
            t.markdown(out);
        } else {
            let _ = writeln!(out, "{title}");
            t.plain(out);
        }
        out.push('\n');
    };
    if markdown {
        let _ = writeln!(out, "# {} vs {}\n", c.baseline, c.variant);
    } else {
        let _ = writeln!(out, "{} vs {}\n", c.baseline, c.variant);
    }
    let _ = writeln!(out, "deltas are baseline minus variant; alpha = {}\n", c.alpha);
    section(&mut out, "Comparison", comparison_text(c));
    section(&mut out, "Emissions (gCO2e)", emission_text(&report.emissions));
    section(&mut out, "Projections", projection_text(&report.emissions.projections));
    out.push_str(&footer(report));
    out
}

fn render_csv(report: &Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::parse("csv", e.to_string());
    w.write_record(["section", "unit", "metric", "field", "value"]).map_err(csv_err)?;
    let mut put = |section: &str, unit: &str, metric: &str, field: &str, value: String| {
        w.write_record([section, unit, metric, field, value.as_str()])
    };
    for r in &report.comparison.rows {
        let (u, m, d) = (r.unit.to_string(), r.delta.metric.as_str(), &r.delta);
        let fields: [(&str, String); 10] = [
            ("source", r.source.as_str().into()),
            ("mean_a", d.mean_a.to_string()),
            ("mean_b", d.mean_b.to_string()),
            ("delta", d.delta.to_string()),
            ("delta_pct", d.delta_pct.map(|v| v.to_string()).unwrap_or_default()),
            ("statistic", d.statistic.to_string()),
            ("p_value", d.p_value.to_string()),
            ("significant", d.significant.to_string()),
            ("degenerate", d.degenerate.to_string()),
            ("direction", r.direction.as_str().into()),
        ];
        for (f, v) in fields {
            put("comparison", &u, m, f, v).map_err(csv_err)?;
        }
    }
    for r in &report.emissions.rows {
        let u = r.unit.to_string();
        let e = &r.entry;
        let fields: [(&str, String); 11] = [
            ("source", r.source.as_str().into()),
            ("delta_energy_j", r.deltas.energy_j.to_string()),
            ("delta_data_mb", r.deltas.data_mb.to_string()),
            ("delta_duration_s", r.deltas.duration_s.to_string()),
            ("use_user_g", e.use_user_g.to_string()),
            ("use_network_g", e.use_network_g.to_string()),
            ("embodied_user_g", e.embodied_user_g.to_string()),
            ("embodied_network_g", e.embodied_network_g.to_string()),
            ("total_g", e.total_g.to_string()),
            ("baseline_total_g", r.baseline_total_g.to_string()),
            ("pct_of_baseline", r.pct_of_baseline.map(|v| v.to_string()).unwrap_or_default()),
        ];
        for (f, v) in fields {
            put("emissions", &u, "", f, v).map_err(csv_err)?;
        }
    }
    for (i, p) in report.emissions.projections.iter().enumerate() {
        let idx = i.to_string();
        for (f, v) in [
            ("population", p.population),
            ("sessions_per_year", p.sessions_per_year),
            ("per_session_saving_g", p.per_session_saving_g),
            ("annual_saving_t", p.annual_saving_t),
            ("flight_equivalents", p.flight_equivalents),
        ] {
            put("projection", &idx, "", f, v.to_string()).map_err(csv_err)?;
        }
    }
    for (f, v) in factor_pairs(&report.factors) {
        put("factors", "", "", f, v.to_string()).map_err(csv_err)?;
    }
    put(
        "factors",
        "",
        "",
        "transfer_intensity_ug_per_mb",
        report.transfer_intensity_ug_per_mb.to_string(),
    )
    .map_err(csv_err)?;
    let bytes = w.into_inner().map_err(|e| Error::parse("csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::parse("csv", e.to_string()))
}

/// Deterministic document for a report.
pub fn render(report: &Report, format: Format) -> Result<String> {
    match format {
        Format::PlainTable => Ok(render_human(report, false)),
        Format::Markdown => Ok(render_human(report, true)),
        Format::Csv => render_csv(report),
        Format::Json => serde_json::to_string_pretty(report)
            .map(|s| s + "\n")
            .map_err(|e| Error::parse("json", e.to_string())),
    }
}

/// Plain or markdown rendering of projections alone.
pub fn render_projection(p: &ScaleProjection, format: Format) -> Result<String> {
    match format {
        Format::Json => serde_json::to_string_pretty(p)
            .map(|s| s + "\n")
            .map_err(|e| Error::parse("json", e.to_string())),
        Format::Csv => {
            let mut out = String::from("field,value\n");
            for (f, v) in [
                ("population", p.population),
                ("sessions_per_year", p.sessions_per_year),
                ("per_session_saving_g", p.per_session_saving_g),
                ("annual_saving_t", p.annual_saving_t),
                ("flight_equivalents", p.flight_equivalents),
            ] {
                let _ = writeln!(out, "{f},{v}");
            }
            Ok(out)
        }
        Format::PlainTable | Format::Markdown => {
            let mut out = String::new();
            let t = projection_text(std::slice::from_ref(p));
            if format == Format::Markdown {
                t.markdown(&mut out);
            } else {
                t.plain(&mut out);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sig4_formatting() {
        assert_eq!(sig4(0.019_783_2), "0.01978");
        assert_eq!(sig4(6072.0), "6072");
        assert_eq!(sig4(11_904.0), "11904");
        assert_eq!(sig4(-1.236_121e-4), "-0.0001236");
        assert_eq!(sig4(2e9), "2.000e9");
        assert_eq!(sig4(0.0), "0");
    }

    #[test]
    fn projection_examples() {
        let p = scale_projection(0.496, 2e9, 12.0, DEFAULT_FLIGHT_RT_TONNES).unwrap();
        assert_relative_eq!(p.annual_saving_t, 11_904.0, max_relative = 1e-12);
        assert_relative_eq!(p.flight_equivalents, 9018.18, max_relative = 1e-4);
        let p = scale_projection(0.0215, 4e8, 52.0, DEFAULT_FLIGHT_RT_TONNES).unwrap();
        assert_relative_eq!(p.annual_saving_t, 447.2, max_relative = 1e-12);
    }

    #[test]
    fn projection_rejects_non_positive() {
        assert!(scale_projection(0.5, 0.0, 12.0, 1.32).is_err());
        assert!(scale_projection(0.5, 1.0, -1.0, 1.32).is_err());
        assert!(scale_projection(f64::NAN, 1.0, 1.0, 1.32).is_err());
    }

    #[test]
    fn projection_is_linear_in_population() {
        for pop in [1.0, 3.7, 2e9, 123_456_789.0] {
            let one = scale_projection(0.123, pop, 12.0, 1.32).unwrap();
            let two = scale_projection(0.123, 2.0 * pop, 12.0, 1.32).unwrap();
            assert_eq!(two.annual_saving_t, 2.0 * one.annual_saving_t);
        }
    }

    #[test]
    fn direction_follows_sign() {
        assert_eq!(Direction::of(1.0), Direction::Saving);
        assert_eq!(Direction::of(-1.0), Direction::Increase);
        assert_eq!(Direction::of(0.0), Direction::Neutral);
    }

    #[test]
    fn spec_rejects_identical_refs() {
        let r = SeriesRef::new("a", ConditionSpec::default());
        assert!(ReportSpec::new(r.clone(), r).validate().is_err());
    }

    #[test]
    fn format_parsing() {
        assert_eq!("md".parse::<Format>().unwrap(), Format::Markdown);
        assert_eq!("plain".parse::<Format>().unwrap(), Format::PlainTable);
        assert!("pdf".parse::<Format>().is_err());
    }
}
