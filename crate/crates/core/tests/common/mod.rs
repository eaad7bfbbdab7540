//! Shared helpers: a static file server for the bundled site, an in-process
//! WebDriver stand-in that really fetches pages over loopback, and a config
//! builder wired to both.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use greenunit::config::Config;
use greenunit::sampler::{Direction, ProviderKind, ProviderSpec};
use serde_json::{json, Value};
use tiny_http::{Header, Method, Response, Server};

pub fn core_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixtures() -> PathBuf {
    core_dir().join("fixtures")
}

pub fn fixture_store() -> PathBuf {
    fixtures().join("store")
}

/// Serves a directory on an ephemeral loopback port until dropped.
pub struct StaticSite {
    server: Arc<Server>,
    pub base_url: String,
    handle: Option<thread::JoinHandle<()>>,
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("css") => "text/css",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

impl StaticSite {
    pub fn serve(root: PathBuf) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let s = server.clone();
        let handle = thread::spawn(move || {
            for req in s.incoming_requests() {
                let rel = req.url().split('?').next().unwrap_or("/").trim_start_matches('/');
                let rel = if rel.is_empty() { "index.html" } else { rel };
                let path = root.join(rel);
                let resp = if !rel.contains("..") && path.is_file() {
                    let body = std::fs::read(&path).unwrap();
                    let ct = Header::from_bytes("Content-Type", content_type(&path)).unwrap();
                    Response::from_data(body).with_header(ct).boxed()
                } else {
                    Response::from_string("not found").with_status_code(404).boxed()
                };
                let _ = req.respond(resp);
            }
        });
        Self {
            server,
            base_url: format!("http://127.0.0.1:{port}"),
            handle: Some(handle),
        }
    }

    pub fn site() -> Self {
        Self::serve(fixtures().join("site"))
    }
}

impl Drop for StaticSite {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

const ELEMENT_KEY: &str = "element-6066-11e4-a52e-4f735466cecf";

struct Page {
    url: String,
    html: String,
}

/// Minimal W3C WebDriver endpoint. Pages and their `src` assets are fetched
/// over HTTP, elements are looked up by `#id`, and clicking an element with
/// an `href` follows it.
pub struct MockWebDriver {
    server: Arc<Server>,
    pub url: String,
    pub sessions_created: Arc<AtomicU64>,
    handle: Option<thread::JoinHandle<()>>,
}

fn reply(status: u16, value: Value) -> Response<std::io::Cursor<Vec<u8>>> {
    let ct = Header::from_bytes("Content-Type", "application/json").unwrap();
    Response::from_string(json!({ "value": value }).to_string())
        .with_status_code(status)
        .with_header(ct)
}

fn error(status: u16, error: &str, message: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    reply(status, json!({ "error": error, "message": message }))
}

fn tag_of<'a>(html: &'a str, id: &str) -> Option<&'a str> {
    let at = html.find(&format!("id=\"{id}\""))?;
    let open = html[..at].rfind('<')?;
    let close = at + html[at..].find('>')?;
    Some(&html[open..=close])
}

fn attr<'a>(tag: &'a str, name: &str) -> Option<&'a str> {
    let key = format!(" {name}=\"");
    let at = tag.find(&key)? + key.len();
    Some(&tag[at..at + tag[at..].find('"')?])
}

fn resolve(base: &str, href: &str) -> String {
    if href.starts_with("http://") || href.starts_with("https://") {
        return href.to_string();
    }
    let dir = base.rsplit_once('/').map(|(d, _)| d).unwrap_or(base);
    format!("{dir}/{href}")
}

fn fetch(agent: &ureq::Agent, url: &str) -> Result<String, String> {
    let mut resp = agent.get(url).call().map_err(|e| e.to_string())?;
    if !resp.status().is_success() {
        return Err(format!("{url}: HTTP {}", resp.status()));
    }
    resp.body_mut().read_to_string().map_err(|e| e.to_string())
}

fn load(agent: &ureq::Agent, url: &str) -> Result<Page, String> {
    let html = fetch(agent, url)?;
    let mut rest = html.as_str();
    while let Some(at) = rest.find(" src=\"").or_else(|| rest.find("stylesheet\" href=\"")) {
        let tail = &rest[at..];
        let start = tail.find('"').unwrap() + 1;
        let end = start + tail[start..].find('"').unwrap();
        fetch(agent, &resolve(url, &tail[start..end]))?;
        rest = &tail[end..];
    }
    Ok(Page {
        url: url.to_string(),
        html,
    })
}

impl MockWebDriver {
    pub fn start() -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let sessions_created = Arc::new(AtomicU64::new(0));
        let created = sessions_created.clone();
        let s = server.clone();
        let handle = thread::spawn(move || {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(Duration::from_secs(10)))
                .proxy(None)
                .build()
                .into();
            let pages: Mutex<HashMap<String, Option<Page>>> = Mutex::new(HashMap::new());
            for mut req in s.incoming_requests() {
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let body: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
                let path: Vec<String> = req.url().trim_matches('/').split('/').map(str::to_string).collect();
                let path: Vec<&str> = path.iter().map(String::as_str).collect();
                let mut pages = pages.lock().unwrap();
                let resp = match (req.method(), path.as_slice()) {
                    (Method::Get, ["status"]) => reply(200, json!({ "ready": true, "message": "mock" })),
                    (Method::Post, ["session"]) => {
                        let id = format!("mock-{}", created.fetch_add(1, Ordering::SeqCst));
                        pages.insert(id.clone(), None);
                        reply(200, json!({ "sessionId": id, "capabilities": {} }))
                    }
                    (Method::Delete, ["session", id]) => match pages.remove(*id) {
                        Some(_) => reply(200, Value::Null),
                        None => error(404, "invalid session id", id),
                    },
                    (Method::Post, ["session", id, rest @ ..]) => match pages.get_mut(*id) {
                        None => error(404, "invalid session id", id),
                        Some(page) => match rest {
                            ["timeouts"] => reply(200, Value::Null),
                            ["url"] => {
                                let url = body["url"].as_str().unwrap_or_default();
                                match load(&agent, url) {
                                    Ok(p) => {
                                        *page = Some(p);
                                        reply(200, Value::Null)
                                    }
                                    Err(e) => error(500, "unknown error", &e),
                                }
                            }
                            ["execute", "sync"] => reply(200, json!("complete")),
                            ["element"] => {
                                let css = body["value"].as_str().unwrap_or_default();
                                let found = css
                                    .strip_prefix('#')
                                    .filter(|id| page.as_ref().is_some_and(|p| tag_of(&p.html, id).is_some()));
                                match found {
                                    Some(id) => reply(200, json!({ ELEMENT_KEY: id })),
                                    None => error(404, "no such element", css),
                                }
                            }
                            ["element", eid, "click"] => {
                                let target = page
                                    .as_ref()
                                    .and_then(|p| tag_of(&p.html, eid).map(|t| (p.url.clone(), attr(t, "href").map(str::to_string))));
                                match target {
                                    None => error(404, "stale element reference", eid),
                                    Some((_, None)) => reply(200, Value::Null),
                                    Some((base, Some(href))) => match load(&agent, &resolve(&base, &href)) {
                                        Ok(p) => {
                                            *page = Some(p);
                                            reply(200, Value::Null)
                                        }
                                        Err(e) => error(500, "unknown error", &e),
                                    },
                                }
                            }
                            ["element", eid, "value"] => {
                                if page.as_ref().is_some_and(|p| tag_of(&p.html, eid).is_some()) {
                                    reply(200, Value::Null)
                                } else {
                                    error(404, "stale element reference", eid)
                                }
                            }
                            _ => error(404, "unknown command", req.url()),
                        },
                    },
                    _ => error(404, "unknown command", req.url()),
                };
                drop(pages);
                let _ = req.respond(resp);
            }
        });
        Self {
            server,
            url: format!("http://127.0.0.1:{port}"),
            sessions_created,
            handle: Some(handle),
        }
    }
}

impl Drop for MockWebDriver {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Energy from the utilisation model (no privileged counters needed) and
/// loopback bytes for the network channel.
pub fn unprivileged_providers() -> Vec<ProviderSpec> {
    let model = |channel: &str, idle: f64, peak: f64| {
        let mut p = ProviderSpec::new(ProviderKind::MachinePowerModel, channel, "/proc/stat");
        p.idle_w = Some(idle);
        p.peak_w = Some(peak);
        p.sample_period_ms = 20;
        p
    };
    let mut net = ProviderSpec::new(ProviderKind::NetworkCounter, "net", "lo");
    net.direction = Direction::Tx;
    net.sample_period_ms = 20;
    vec![model("cpu", 2.0, 35.0), model("memory", 1.0, 4.0), model("machine", 10.0, 50.0), net]
}

/// The example config pointed at a live site, driver and private store.
pub fn test_config(site: &StaticSite, driver_url: &str, store: &Path) -> Config {
    let mut cfg = Config::load(&fixtures().join("greenunit.toml")).expect("example config loads");
    cfg.store_path = store.to_path_buf();
    cfg.providers = unprivileged_providers();
    cfg.browser.webdriver_url = driver_url.to_string();
    cfg.campaign.settle_ms = 0;
    let svc = cfg.services.get_mut("localmail").unwrap();
    svc.vars.insert("base_url".into(), site.base_url.clone());
    cfg
}

/// Writes `cfg` as TOML into `dir` and returns the file path.
pub fn write_config(cfg: &Config, dir: &Path) -> PathBuf {
    let path = dir.join("greenunit.toml");
    std::fs::write(&path, toml::to_string(cfg).expect("config serializes")).unwrap();
    path
}

/// Serializes tests that measure host-wide counters.
pub fn host_lock() -> std::sync::MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}
