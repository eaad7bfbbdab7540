//! Declarative scenario files.
//!
//! A scenario is an ordered list of browser steps plus inclusive step-index
//! ranges naming the functional unit each block of steps performs. Targets
//! may reference the service's selector map as `@name` and any text may use
//! `{var}` placeholders filled from service variables.
//!
//! ```toml
//! [[steps]]
//! action = "navigate"
//! target = "{base_url}/index.html"
//!
//! [[steps]]
//! action = "click"
//! target = "@sign_in"
//!
//! [[units]]
//! unit = "login"
//! steps = [0, 1]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FunctionalUnitKind;

pub const DEFAULT_STEP_TIMEOUT_MS: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    Navigate,
    Click,
    TypeText,
    WaitForSelector,
    WaitPageComplete,
    AssertPresent,
}

impl fmt::Display for StepAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepAction::Navigate => "navigate",
            StepAction::Click => "click",
            StepAction::TypeText => "type_text",
            StepAction::WaitForSelector => "wait_for_selector",
            StepAction::WaitPageComplete => "wait_page_complete",
            StepAction::AssertPresent => "assert_present",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioStep {
    pub action: StepAction,
    /// CSS selector, `@selector` reference or URL. Unused by `wait_page_complete`.
    #[serde(default)]
    pub target: String,
    #[serde(default)]
    pub payload: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    DEFAULT_STEP_TIMEOUT_MS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitMark {
    pub unit: FunctionalUnitKind,
    /// Inclusive `[first, last]` step indices.
    pub steps: [usize; 2],
}

impl UnitMark {
    pub fn first(&self) -> usize {
        self.steps[0]
    }

    pub fn last(&self) -> usize {
        self.steps[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    #[serde(default)]
    pub service: String,
    pub steps: Vec<ScenarioStep>,
    #[serde(rename = "units")]
    pub unit_marks: Vec<UnitMark>,
}

impl ScenarioScript {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let script: Self = toml::from_str(text).map_err(|e| Error::parse("scenario", e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("scenario: {m}")));
        if self.steps.is_empty() {
            return bad("no steps".into());
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.timeout_ms == 0 {
                return bad(format!("step {i}: timeout_ms must be positive"));
            }
            if s.action != StepAction::WaitPageComplete && s.target.trim().is_empty() {
                return bad(format!("step {i}: {} needs a target", s.action));
            }
            if s.action == StepAction::TypeText && s.payload.is_none() {
                return bad(format!("step {i}: type_text needs a payload"));
            }
        }
        if self.unit_marks.is_empty() {
            return bad("no units marked".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.unit_marks {
            if m.first() > m.last() || m.last() >= self.steps.len() {
                return bad(format!(
                    "unit {} range [{}, {}] outside steps 0..{}",
                    m.unit,
                    m.first(),
                    m.last(),
                    self.steps.len() - 1
                ));
            }
            if !seen.insert(m.unit.clone()) {
                return bad(format!("unit {} marked more than once", m.unit));
            }
        }
        let mut plain: Vec<&UnitMark> = self.unit_marks.iter().filter(|m| !m.unit.is_composite()).collect();
        plain.sort_by_key(|m| m.first());
        for w in plain.windows(2) {
            if w[1].first() <= w[0].last() {
                return bad(format!("units {} and {} overlap", w[0].unit, w[1].unit));
            }
        }
        for m in self.unit_marks.iter().filter(|m| m.unit.is_composite()) {
            let (Some(lo), Some(hi)) = (
                plain.iter().map(|p| p.first()).min(),
                plain.iter().map(|p| p.last()).max(),
            ) else {
                return bad(format!("composite unit {} has no constituents", m.unit));
            };
            if m.steps != [lo, hi] {
                return bad(format!(
                    "composite unit {} must span exactly steps [{lo}, {hi}], got [{}, {}]",
                    m.unit,
                    m.first(),
                    m.last()
                ));
            }
        }
        Ok(())
    }

    /// Keeps only the marks for `units` (the composite needs all its constituents).
    pub fn restrict(&mut self, units: &[FunctionalUnitKind]) {
        self.unit_marks.retain(|m| units.contains(&m.unit));
    }

    /// Resolves `@selector` targets and `{var}` placeholders.
    pub fn resolve(
        &self,
        selectors: &BTreeMap<String, String>,
        vars: &BTreeMap<String, String>,
    ) -> Result<ScenarioScript> {
        let mut out = self.clone();
        for (i, step) in out.steps.iter_mut().enumerate() {
            let ctx = |e: Error| Error::InvalidInput(format!("scenario step {i}: {e}"));
            if let Some(name) = step.target.strip_prefix('@') {
                step.target = selectors
                    .get(name)
                    .cloned()
                    .ok_or_else(|| ctx(Error::NotFound(format!("selector '@{name}' not in the service selector map"))))?;
            }
            step.target = substitute(&step.target, vars).map_err(ctx)?;
            if let Some(p) = &step.payload {
                step.payload = Some(substitute(p, vars).map_err(ctx)?);
            }
        }
        Ok(out)
    }
}

/// Replaces `{name}` with `vars[name]`; `{{` and `}}` are literal braces.
pub fn substitute(text: &str, vars: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with('}') {
            return Err(Error::InvalidInput(format!("unmatched '}}' in '{text}'")));
        }
        let end = tail
            .find('}')
            .ok_or_else(|| Error::InvalidInput(format!("unterminated placeholder in '{text}'")))?;
        let name = &tail[1..end];
        let value = vars
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("variable '{{{name}}}' is not defined")))?;
        out.push_str(value);
        rest = &tail[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
