use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::scenario::{ScenarioStep, StepAction};
use super::webdriver::WebDriverClient;
use crate::error::{Error, Result};

const POLL: Duration = Duration::from_millis(25);

/// Why a browser interaction failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BrowserFault {
    /// The step failed (timeout, missing element, assertion); the browser is usable.
    Step(String),
    /// The browser or driver is gone; the run cannot continue.
    Crash(String),
}

impl BrowserFault {
    pub fn message(&self) -> &str {
        match self {
            BrowserFault::Step(m) | BrowserFault::Crash(m) => m,
        }
    }
}

impl From<BrowserFault> for Error {
    fn from(f: BrowserFault) -> Self {
        Error::Browser(f.message().to_string())
    }
}

pub type StepResult<T> = std::result::Result<T, BrowserFault>;

pub trait BrowserSession {
    fn navigate(&mut self, url: &str, timeout: Duration) -> StepResult<()>;
    fn is_present(&mut self, selector: &str) -> StepResult<bool>;
    fn click(&mut self, selector: &str) -> StepResult<()>;
    fn type_text(&mut self, selector: &str, text: &str) -> StepResult<()>;
    fn ready_state(&mut self) -> StepResult<String>;
    fn close(&mut self) -> StepResult<()>;
}

/// Starts one fresh browser session per run.
pub trait BrowserLauncher {
    fn launch(&self, profile: &str) -> Result<Box<dyn BrowserSession>>;
}

fn wait_until(timeout: Duration, what: &str, mut probe: impl FnMut() -> StepResult<bool>) -> StepResult<()> {
    let deadline = Instant::now() + timeout;
    loop {
        if probe()? {
            return Ok(());
        }
        if Instant::now() >= deadline {
            return Err(BrowserFault::Step(format!(
                "timeout after {} ms waiting for {what}",
                timeout.as_millis()
            )));
        }
        thread::sleep(POLL);
    }
}

/// Executes one resolved scenario step.
pub fn run_step(session: &mut dyn BrowserSession, step: &ScenarioStep) -> StepResult<()> {
    let timeout = Duration::from_millis(step.timeout_ms);
    let target = step.target.as_str();
    match step.action {
        StepAction::Navigate => session.navigate(target, timeout),
        StepAction::Click => {
            wait_until(timeout, target, || session.is_present(target))?;
            session.click(target)
        }
        StepAction::TypeText => {
            wait_until(timeout, target, || session.is_present(target))?;
            session.type_text(target, step.payload.as_deref().unwrap_or_default())
        }
        StepAction::WaitForSelector => wait_until(timeout, target, || session.is_present(target)),
        StepAction::WaitPageComplete => {
            wait_until(timeout, "page load", || Ok(session.ready_state()? == "complete"))
        }
        StepAction::AssertPresent => {
            if session.is_present(target)? {
                Ok(())
            } else {
                Err(BrowserFault::Step(format!("assertion failed: {target} not present")))
            }
        }
    }
}

/// How to reach the driver and which profile templates to copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrowserConfig {
    pub webdriver_url: String,
    /// Capabilities sent on session creation. String values may contain
    /// `{profile_dir}`, replaced with the fresh profile copy of each run.
    pub capabilities: Value,
    /// Profile label to template directory.
    pub profiles: BTreeMap<String, PathBuf>,
    pub request_timeout_ms: u64,
}

impl Default for BrowserConfig {
    fn default() -> Self {
        Self {
            webdriver_url: "http://127.0.0.1:4444".into(),
            capabilities: serde_json::json!({ "browserName": "firefox" }),
            profiles: BTreeMap::new(),
            request_timeout_ms: 60_000,
        }
    }
}

fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    for entry in fs::read_dir(from).map_err(|e| Error::io(from, e))? {
        let entry = entry.map_err(|e| Error::io(from, e))?;
        let dest = to.join(entry.file_name());
        let ty = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
        if ty.is_dir() {
            fs::create_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
            copy_tree(&entry.path(), &dest)?;
        } else if ty.is_file() {
            fs::copy(entry.path(), &dest).map_err(|e| Error::io(&dest, e))?;
        }
    }
    Ok(())
}

fn fill_profile_dir(v: &Value, dir: &str) -> Value {
    match v {
        Value::String(s) => Value::String(s.replace("{profile_dir}", dir)),
        Value::Array(a) => Value::Array(a.iter().map(|x| fill_profile_dir(x, dir)).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, x)| (k.clone(), fill_profile_dir(x, dir))).collect()),
        other => other.clone(),
    }
}

/// Launches sessions on a WebDriver endpoint, each with a fresh profile copy.
#[derive(Debug)]
pub struct WebDriverLauncher {
    client: WebDriverClient,
    config: BrowserConfig,
}

impl WebDriverLauncher {
    pub fn new(config: BrowserConfig) -> Self {
        let client = WebDriverClient::new(&config.webdriver_url, Duration::from_millis(config.request_timeout_ms));
        Self { client, config }
    }
}

struct ProfiledSession {
    inner: super::webdriver::WebDriverSession,
    _profile: tempfile::TempDir,
}

impl BrowserSession for ProfiledSession {
    fn navigate(&mut self, url: &str, timeout: Duration) -> StepResult<()> {
        self.inner.navigate(url, timeout)
    }
    fn is_present(&mut self, selector: &str) -> StepResult<bool> {
        self.inner.is_present(selector)
    }
    fn click(&mut self, selector: &str) -> StepResult<()> {
        self.inner.click(selector)
    }
    fn type_text(&mut self, selector: &str, text: &str) -> StepResult<()> {
        self.inner.type_text(selector, text)
    }
    fn ready_state(&mut self) -> StepResult<String> {
        self.inner.ready_state()
    }
    fn close(&mut self) -> StepResult<()> {
        self.inner.close()
    }
}

impl BrowserLauncher for WebDriverLauncher {
    fn launch(&self, profile: &str) -> Result<Box<dyn BrowserSession>> {
        let dir = tempfile::Builder::new()
            .prefix("greenunit-profile-")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        if let Some(template) = self.config.profiles.get(profile) {
            copy_tree(template, dir.path())?;
        }
        let caps = fill_profile_dir(&self.config.capabilities, &dir.path().to_string_lossy());
        let inner = self
            .client
            .new_session(caps)
            .map_err(|f| Error::Browser(format!("cannot start browser at {}: {}", self.client.base_url(), f.message())))?;
        Ok(Box::new(ProfiledSession { inner, _profile: dir }))
    }
}

/// Wraps a launcher so that a seeded fraction of runs fail part-way.
pub struct FaultInjectingLauncher<L> {
    inner: L,
    rate: f64,
    rng: Mutex<ChaCha8Rng>,
}

impl<L: BrowserLauncher> FaultInjectingLauncher<L> {
    pub fn new(inner: L, rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidInput(format!("failure rate must be in [0,1], got {rate}")));
        }
        Ok(Self {
            inner,
            rate,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }
}

struct FaultySession {
    inner: Box<dyn BrowserSession>,
    calls_left: u32,
}

impl FaultySession {
    fn tick(&mut self) -> StepResult<()> {
        if self.calls_left == 0 {
            return Err(BrowserFault::Step("injected fault".into()));
        }
        self.calls_left -= 1;
        Ok(())
    }
}

impl BrowserSession for FaultySession {
    fn navigate(&mut self, url: &str, timeout: Duration) -> StepResult<()> {
        self.tick()?;
        self.inner.navigate(url, timeout)
    }
    fn is_present(&mut self, selector: &str) -> StepResult<bool> {
        self.tick()?;
        self.inner.is_present(selector)
    }
    fn click(&mut self, selector: &str) -> StepResult<()> {
        self.tick()?;
        self.inner.click(selector)
    }
    fn type_text(&mut self, selector: &str, text: &str) -> StepResult<()> {
        self.tick()?;
        self.inner.type_text(selector, text)
    }
    fn ready_state(&mut self) -> StepResult<String> {
        self.tick()?;
        self.inner.ready_state()
    }
    fn close(&mut self) -> StepResult<()> {
        self.inner.close()
    }
}

impl<L: BrowserLauncher> BrowserLauncher for FaultInjectingLauncher<L> {
    fn launch(&self, profile: &str) -> Result<Box<dyn BrowserSession>> {
        let session = self.inner.launch(profile)?;
        let mut rng = self.rng.lock().expect("fault rng poisoned");
        if rng.random::<f64>() < self.rate {
            let calls_left = rng.random_range(0..8);
            Ok(Box::new(FaultySession { inner: session, calls_left }))
        } else {
            Ok(session)
        }
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use std::collections::BTreeSet;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// In-memory browser: every selector in `present` exists, pages load instantly.
    #[derive(Clone, Default)]
    pub struct FakeLauncher {
        pub present: BTreeSet<String>,
        pub launches: Arc<AtomicUsize>,
        pub crash_on: Option<String>,
    }

    pub struct FakeSession {
        present: BTreeSet<String>,
        crash_on: Option<String>,
        pub(crate) visited: Vec<String>,
    }

    impl BrowserSession for FakeSession {
        fn navigate(&mut self, url: &str, _timeout: Duration) -> StepResult<()> {
            self.visited.push(url.into());
            Ok(())
        }
        fn is_present(&mut self, selector: &str) -> StepResult<bool> {
            if self.crash_on.as_deref() == Some(selector) {
                return Err(BrowserFault::Crash("browser exited".into()));
            }
            Ok(self.present.contains(selector))
        }
        fn click(&mut self, _selector: &str) -> StepResult<()> {
            Ok(())
        }
        fn type_text(&mut self, _selector: &str, _text: &str) -> StepResult<()> {
            Ok(())
        }
        fn ready_state(&mut self) -> StepResult<String> {
            Ok("complete".into())
        }
        fn close(&mut self) -> StepResult<()> {
            Ok(())
        }
    }

    impl BrowserLauncher for FakeLauncher {
        fn launch(&self, _profile: &str) -> Result<Box<dyn BrowserSession>> {
            self.launches.fetch_add(1, Ordering::SeqCst);
            Ok(Box::new(FakeSession {
                present: self.present.clone(),
                crash_on: self.crash_on.clone(),
                visited: Vec::new(),
            }))
        }
    }
}
