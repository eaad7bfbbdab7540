//! Command-line front end.
//!
//! Exit status is 0 exactly when no error was reported. Usage errors and
//! invalid arguments exit with 2, every other failure with 1.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::emissions::{c_elec, transfer_intensity};
use crate::error::{Error, Result};
use crate::model::{FunctionalUnitKind, Metric};
use crate::report::{build_report, render, render_projection, scale_projection, sig4, Format, ProjectionSpec, ReportSpec};
use crate::runner::{
    campaign, measure_latency, BrowserLauncher, Campaign, FaultInjectingLauncher, HostSystem, RunConfig,
    ScenarioScript, WebDriverLauncher, DEFAULT_PROBE_COUNT,
};
use crate::sampler::ConfiguredProviders;
use crate::stats::summarize;
use crate::store::Store;

#[derive(Debug, Parser)]
#[command(name = "greenunit", version, about = "Functional-unit energy and emissions benchmarking")]
pub struct Cli {
    /// Config file (overrides GREENUNIT_CONFIG and ./greenunit.toml).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Results store directory (overrides store_path).
    #[arg(long, global = true, value_name = "DIR")]
    pub store: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a measurement campaign for one service under one condition.
    Run(RunArgs),
    /// Compare two stored series and convert the deltas to emissions.
    Compare(CompareArgs),
    /// Scale a per-session saving to a population.
    Project(ProjectArgs),
    /// TCP-connect round-trip statistics to a host.
    Ping(PingArgs),
    /// Print the effective emission factors and derived constants.
    Factors,
    /// List the series present in the store.
    List,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub service: String,
    /// Preset name (baseline, adblock, pgp, remote, ...) or a full label.
    pub condition: String,
    /// Retained results required per unit.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Comma-separated subset of units to mark.
    #[arg(long, value_delimiter = ',')]
    pub units: Vec<String>,
    #[arg(long)]
    pub settle_ms: Option<u64>,
    #[arg(long)]
    pub webdriver_url: Option<String>,
    /// Probability that a launched browser session fails mid-run.
    #[arg(long, default_value_t = 0.0)]
    pub inject_failure_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `service[:condition]`, condition defaults to baseline.
    pub baseline: String,
    pub variant: String,
    #[arg(long, default_value = "plain")]
    pub format: String,
    #[arg(long, value_delimiter = ',')]
    pub units: Vec<String>,
    /// Population projection as POPULATION:SESSIONS_PER_YEAR; repeatable.
    #[arg(long, value_name = "POP:SPY")]
    pub project: Vec<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Write the document here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub per_session_g: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub population: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub sessions_per_year: f64,
    #[arg(long)]
    pub flight_rt_tonnes: Option<f64>,
    #[arg(long, default_value = "plain")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct PingArgs {
    pub host: String,
    #[arg(long, default_value_t = 443)]
    pub port: u16,
    #[arg(long, default_value_t = DEFAULT_PROBE_COUNT)]
    pub count: usize,
    #[arg(long, default_value_t = 2000)]
    pub timeout_ms: u64,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Domain(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = Config::discover(cli.config.as_deref())?;
    let store = Store::new(cli.store.clone().unwrap_or_else(|| cfg.store_path.clone()));
    match cli.command {
        Command::Run(a) => cmd_run(&cfg, &store, a, out, err),
        Command::Compare(a) => cmd_compare(&cfg, &store, a, out),
        Command::Project(a) => cmd_project(&cfg, a, out),
        Command::Ping(a) => cmd_ping(a, out),
        Command::Factors => cmd_factors(&cfg, out),
        Command::List => cmd_list(&store, out),
    }
}

fn w(r: std::io::Result<()>) -> Result<()> {
    r.map_err(|e| Error::io("<stdout>", e))
}

fn parse_units(list: &[String]) -> Result<Vec<FunctionalUnitKind>> {
    list.iter().map(|s| FunctionalUnitKind::from_str(s)).collect()
}

fn cmd_run(cfg: &Config, store: &Store, a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let svc = cfg.service(&a.service)?;
    let condition = cfg.resolve_condition(&a.condition)?;
    let path = if condition.pgp {
        svc.pgp_scenario.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!(
                "condition {} needs an encryption scenario but service '{}' has no pgp_scenario",
                condition.label(),
                a.service
            ))
        })?
    } else {
        &svc.scenario
    };
    let mut script = ScenarioScript::load(path)?;
    if !a.units.is_empty() {
        script.restrict(&parse_units(&a.units)?);
        script.validate()?;
    }
    let mut vars = svc.vars.clone();
    if let Some(p) = &cfg.campaign.attachment_path {
        vars.entry("attachment".into()).or_insert_with(|| p.display().to_string());
    }
    let script = script.resolve(&svc.selectors, &vars)?;

    let mut rc = RunConfig::new(condition);
    rc.iterations = a.iterations.unwrap_or(cfg.campaign.quota);
    rc.max_iterations = a.max_iterations.unwrap_or(cfg.campaign.max_iterations.max(rc.iterations));
    rc.settle = Duration::from_millis(a.settle_ms.unwrap_or(cfg.campaign.settle_ms));
    rc.attachment_path = cfg.campaign.attachment_path.clone();

    let mut browser = cfg.browser.clone();
    if let Some(u) = a.webdriver_url {
        browser.webdriver_url = u;
    }
    let webdriver = WebDriverLauncher::new(browser);
    let faulty;
    let launcher: &dyn BrowserLauncher = if a.inject_failure_rate > 0.0 {
        faulty = FaultInjectingLauncher::new(webdriver, a.inject_failure_rate, a.seed)?;
        &faulty
    } else {
        &webdriver
    };
    let providers = ConfiguredProviders {
        specs: cfg.providers.clone(),
        machine: cfg.machine,
    };
    let outcome = campaign(&Campaign {
        service: &a.service,
        script: &script,
        config: &rc,
        providers: &providers,
        launcher,
        environment: &cfg.environment,
        system: Arc::new(HostSystem),
        store: Some(store),
    })?;

    w(writeln!(
        out,
        "{}:{}  runs={}  latency shaping: {}",
        a.service,
        condition.label(),
        outcome.iterations,
        outcome.latency_shaping
    ))?;
    w(writeln!(out, "{:<14} {:>6} {:>6} {:>8} {:>10} {:>12} {:>10}", "unit", "raw", "valid", "retained", "duration_s", "machine_J", "MB"))?;
    for s in outcome.series.values() {
        let mean = |m: Metric, scale: f64| {
            summarize(s, m).map(|x| sig4(x.mean * scale)).unwrap_or_else(|_| "-".into())
        };
        w(writeln!(
            out,
            "{:<14} {:>6} {:>6} {:>8} {:>10} {:>12} {:>10}",
            s.unit.to_string(),
            s.raw_count,
            s.valid_count,
            s.retained_count,
            mean(Metric::Duration, 1.0),
            mean(Metric::EnergyMachine, 1.0),
            mean(Metric::NetworkBytes, 1e-6)
        ))?;
    }
    if outcome.is_below_quota() {
        let units: Vec<String> = outcome.below_quota.iter().map(|u| u.to_string()).collect();
        w(writeln!(
            err,
            "warning: below quota ({} retained results required) for: {}",
            rc.iterations,
            units.join(", ")
        ))?;
    }
    Ok(())
}

fn parse_projection(s: &str) -> Result<ProjectionSpec> {
    let bad = || Error::InvalidInput(format!("--project expects POPULATION:SESSIONS_PER_YEAR, got '{s}'"));
    let (p, y) = s.split_once(':').ok_or_else(bad)?;
    Ok(ProjectionSpec {
        population: p.trim().parse().map_err(|_| bad())?,
        sessions_per_year: y.trim().parse().map_err(|_| bad())?,
    })
}

fn cmd_compare(cfg: &Config, store: &Store, a: CompareArgs, out: &mut dyn Write) -> Result<()> {
    let format = Format::from_str(&a.format)?;
    let mut spec = ReportSpec::new(cfg.series_ref(&a.baseline)?, cfg.series_ref(&a.variant)?);
    if !a.units.is_empty() {
        spec.units = parse_units(&a.units)?;
    }
    spec.factors = cfg.factors;
    spec.alpha = a.alpha.unwrap_or(cfg.report.alpha);
    spec.flight_rt_tonnes = cfg.report.flight_rt_tonnes;
    spec.projections = if a.project.is_empty() {
        cfg.report.projections.clone()
    } else {
        a.project.iter().map(|s| parse_projection(s)).collect::<Result<_>>()?
    };
    spec.validate()?;
    let doc = render(&build_report(&spec, store)?, format)?;
    match a.out {
        Some(path) => std::fs::write(&path, doc).map_err(|e| Error::io(&path, e)),
        None => w(out.write_all(doc.as_bytes())),
    }
}

fn cmd_project(cfg: &Config, a: ProjectArgs, out: &mut dyn Write) -> Result<()> {
    if !(a.per_session_g.is_finite() && a.per_session_g > 0.0) {
        return Err(Error::InvalidInput(format!("--per-session-g must be positive (got {})", a.per_session_g)));
    }
    let format = Format::from_str(&a.format)?;
    let flight = a.flight_rt_tonnes.unwrap_or(cfg.report.flight_rt_tonnes);
    let p = scale_projection(a.per_session_g, a.population, a.sessions_per_year, flight)?;
    w(out.write_all(render_projection(&p, format)?.as_bytes()))
}

fn cmd_ping(a: PingArgs, out: &mut dyn Write) -> Result<()> {
    let s = measure_latency(&a.host, a.port, a.count, Duration::from_millis(a.timeout_ms))?;
    w(writeln!(
        out,
        "{}:{}  rtt mean {} ms  sd {} ms  ({} probes, {} failed)",
        a.host,
        a.port,
        sig4(s.mean_ms),
        sig4(s.sd_ms),
        s.count,
        s.failures
    ))
}

fn cmd_factors(cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let f = &cfg.factors;
    let text = toml::to_string(f).map_err(|e| Error::parse("factors", e.to_string()))?;
    w(write!(out, "{text}"))?;
    w(writeln!(out, "# c_elec = {} gCO2e/J", sig4(c_elec(f))))?;
    w(writeln!(
        out,
        "# transfer intensity ({}) = {} ugCO2e/MB",
        f.assessment_year,
        sig4(transfer_intensity(f)?)
    ))?;
    w(writeln!(
        out,
        "# device embodied rate = {} gCO2e/s",
        sig4(crate::emissions::user_embodied_emissions(1.0, f))
    ))
}

fn cmd_list(store: &Store, out: &mut dyn Write) -> Result<()> {
    for (service, cond) in store.list()? {
        let n = store.load_results(&service, &cond)?.len();
        w(writeln!(out, "{service}:{}  {n} results", cond.label()))?;
    }
    Ok(())
}
