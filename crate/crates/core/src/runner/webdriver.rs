//! Minimal W3C WebDriver client.

use std::time::Duration;

use serde_json::{json, Value};

use super::browser::{BrowserFault, BrowserSession, StepResult};

const ELEMENT_KEY: &str = "element-6066-11e4-a52e-4f735466cecf";

#[derive(Clone)]
pub struct WebDriverClient {
    agent: ureq::Agent,
    base: String,
}

impl std::fmt::Debug for WebDriverClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WebDriverClient").field("base", &self.base).finish()
    }
}

fn classify(error: &str, message: &str) -> BrowserFault {
    let text = format!("{error}: {message}");
    match error {
        "invalid session id" | "session not created" => BrowserFault::Crash(text),
        _ => BrowserFault::Step(text),
    }
}

impl WebDriverClient {
    pub fn new(base_url: &str, request_timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(request_timeout))
            .proxy(None)
            .build()
            .into();
        Self {
            agent,
            base: base_url.trim_end_matches('/').to_string(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn call(&self, method: &str, path: &str, body: Option<Value>) -> StepResult<Value> {
        let url = format!("{}{}", self.base, path);
        let sent = match (method, body) {
            ("GET", _) => self.agent.get(&url).call(),
            ("DELETE", _) => self.agent.delete(&url).call(),
            (_, Some(b)) => self.agent.post(&url).send_json(b),
            (_, None) => self.agent.post(&url).send_json(json!({})),
        };
        let mut resp = sent.map_err(|e| BrowserFault::Crash(format!("{method} {url}: {e}")))?;
        let status = resp.status();
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BrowserFault::Crash(format!("{method} {url}: unreadable response ({e})")))?;
        let value = body.get("value").cloned().unwrap_or(Value::Null);
        if status.is_success() {
            return Ok(value);
        }
        let error = value.get("error").and_then(Value::as_str).unwrap_or("unknown error");
        let message = value.get("message").and_then(Value::as_str).unwrap_or("");
        Err(classify(error, message))
    }

    /// Driver readiness as reported by `GET /status`.
    pub fn ready(&self) -> StepResult<bool> {
        Ok(self.call("GET", "/status", None)?.get("ready").and_then(Value::as_bool).unwrap_or(false))
    }

    pub fn new_session(&self, capabilities: Value) -> StepResult<WebDriverSession> {
        let v = self.call("POST", "/session", Some(json!({ "capabilities": { "alwaysMatch": capabilities } })))?;
        let id = v
            .get("sessionId")
            .and_then(Value::as_str)
            .ok_or_else(|| BrowserFault::Crash("new session response lacks sessionId".into()))?;
        Ok(WebDriverSession {
            client: self.clone(),
            id: id.to_string(),
        })
    }
}

#[derive(Debug)]
pub struct WebDriverSession {
    client: WebDriverClient,
    id: String,
}

impl WebDriverSession {
    pub fn id(&self) -> &str {
        &self.id
    }

    fn post(&self, path: &str, body: Value) -> StepResult<Value> {
        self.client.call("POST", &format!("/session/{}{}", self.id, path), Some(body))
    }

    pub fn set_page_load_timeout(&self, ms: u64) -> StepResult<()> {
        self.post("/timeouts", json!({ "pageLoad": ms })).map(drop)
    }

    /// Element id for a CSS selector, `None` when nothing matches.
    pub fn find(&self, css: &str) -> StepResult<Option<String>> {
        match self.post("/element", json!({ "using": "css selector", "value": css })) {
            Ok(v) => v
                .get(ELEMENT_KEY)
                .and_then(Value::as_str)
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| BrowserFault::Step("find element response lacks an element reference".into())),
            Err(BrowserFault::Step(m)) if m.starts_with("no such element") => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn execute(&self, script: &str) -> StepResult<Value> {
        self.post("/execute/sync", json!({ "script": script, "args": [] }))
    }

    fn require(&self, css: &str) -> StepResult<String> {
        self.find(css)?
            .ok_or_else(|| BrowserFault::Step(format!("no such element: {css}")))
    }
}

impl BrowserSession for WebDriverSession {
    fn navigate(&mut self, url: &str, timeout: Duration) -> StepResult<()> {
        self.set_page_load_timeout(timeout.as_millis() as u64)?;
        self.post("/url", json!({ "url": url })).map(drop)
    }

    fn is_present(&mut self, selector: &str) -> StepResult<bool> {
        Ok(self.find(selector)?.is_some())
    }

    fn click(&mut self, selector: &str) -> StepResult<()> {
        let el = self.require(selector)?;
        self.post(&format!("/element/{el}/click"), json!({})).map(drop)
    }

    fn type_text(&mut self, selector: &str, text: &str) -> StepResult<()> {
        let el = self.require(selector)?;
        self.post(&format!("/element/{el}/value"), json!({ "text": text })).map(drop)
    }

    fn ready_state(&mut self) -> StepResult<String> {
        Ok(self
            .execute("return document.readyState")?
            .as_str()
            .unwrap_or_default()
            .to_string())
    }

    fn close(&mut self) -> StepResult<()> {
        self.client.call("DELETE", &format!("/session/{}", self.id), None).map(drop)
    }
}
