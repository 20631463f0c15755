//! HTTP adapter shared by every remote backend (chat, embeddings, web search).
//!
//! Providers differ only in URL, auth header and JSON shape, so the adapter
//! is configured with templates: string values of the form `{{name}}` in the
//! URL, query parameters or body are filled from call variables, and the
//! result is read from a dot-separated path (`choices.0.message.content`).

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{stop_response, BackendKind, ChatBackend, ChatRequest, ChatResponse, GatewayError};

fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_factor() -> u32 {
    2
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpAdapter {
    pub url: String,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub auth_header: Option<String>,
    /// Prepended to the key, e.g. "Bearer ".
    #[serde(default)]
    pub auth_prefix: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default)]
    pub query: BTreeMap<String, String>,
    #[serde(default)]
    pub body: Option<Value>,
    /// Where the payload sits in the JSON response.
    pub response_path: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_factor")]
    pub backoff_factor: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl HttpAdapter {
    pub fn new(url: impl Into<String>, response_path: impl Into<String>) -> Self {
        HttpAdapter {
            url: url.into(),
            method: None,
            auth_header: None,
            auth_prefix: None,
            api_key_env: None,
            headers: BTreeMap::new(),
            query: BTreeMap::new(),
            body: None,
            response_path: response_path.into(),
            max_retries: default_retries(),
            backoff_base_ms: default_backoff_ms(),
            backoff_factor: default_factor(),
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout(),
        }
    }
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().expect("gate poisoned");
        while *n >= self.cap {
            n = self.freed.wait(n).expect("gate poisoned");
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// An [`HttpAdapter`] with its connection agent and in-flight cap.
#[derive(Clone)]
pub struct HttpClient {
    adapter: HttpAdapter,
    agent: ureq::Agent,
    gate: Arc<Gate>,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient").field("url", &self.adapter.url).finish()
    }
}

enum Attempt {
    Transient(String),
    Fatal(GatewayError),
}

impl HttpClient {
    pub fn new(adapter: HttpAdapter) -> Result<Self, GatewayError> {
        if adapter.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be positive".into()));
        }
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(adapter.timeout_secs)))
            .build();
        let gate = Arc::new(Gate { in_flight: Mutex::new(0), freed: Condvar::new(), cap: adapter.max_in_flight });
        Ok(HttpClient { agent: config.into(), gate, adapter })
    }

    pub fn adapter(&self) -> &HttpAdapter {
        &self.adapter
    }

    /// Issue one templated call, retrying transport failures, 429 and 5xx
    /// with exponential backoff. Returns the value at `response_path`.
    pub fn call(&self, vars: &BTreeMap<&str, Value>) -> Result<Value, GatewayError> {
        let _slot = self.gate.acquire();
        let attempts = self.adapter.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.adapter.backoff_base_ms * u64::from(self.adapter.backoff_factor).pow(attempt - 1);
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(vars) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(msg)) => {
                    log::warn!("{} attempt {} failed: {msg}", self.adapter.url, attempt + 1);
                    last = msg;
                }
            }
        }
        Err(GatewayError::UpstreamUnavailable { attempts, message: last })
    }

    fn attempt(&self, vars: &BTreeMap<&str, Value>) -> Result<Value, Attempt> {
        let url = fill_str(&self.adapter.url, vars);
        let method = self.adapter.method.as_deref().unwrap_or(if self.adapter.body.is_some() { "POST" } else { "GET" });
        let key =
            match &self.adapter.api_key_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    Attempt::Fatal(GatewayError::Config(format!("environment variable {var} is not set")))
                })?),
                None => None,
            };
        let auth = match (&self.adapter.auth_header, key) {
            (Some(h), Some(k)) => {
                Some((h.clone(), format!("{}{}", self.adapter.auth_prefix.as_deref().unwrap_or(""), k)))
            }
            _ => None,
        };
        let query: Vec<(String, String)> =
            self.adapter.query.iter().map(|(k, v)| (k.clone(), fill_str(v, vars))).collect();

        let response = match method {
            "GET" => {
                let mut req = self.agent.get(&url);
                for (k, v) in &self.adapter.headers {
                    req = req.header(k, v);
                }
                if let Some((h, v)) = &auth {
                    req = req.header(h, v);
                }
                for (k, v) in &query {
                    req = req.query(k, v);
                }
                req.call()
            }
            "POST" => {
                let body = self.adapter.body.as_ref().map(|b| fill_value(b, vars)).unwrap_or(Value::Null);
                let mut req = self.agent.post(&url).header("content-type", "application/json");
                for (k, v) in &self.adapter.headers {
                    req = req.header(k, v);
                }
                if let Some((h, v)) = &auth {
                    req = req.header(h, v);
                }
                for (k, v) in &query {
                    req = req.query(k, v);
                }
                req.send(body.to_string())
            }
            other => return Err(Attempt::Fatal(GatewayError::Config(format!("unsupported method {other}")))),
        };
        let mut response = response.map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| Attempt::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Transient(format!("status {status}")));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(GatewayError::Upstream { status, message: truncate(&text, 500) }));
        }
        let json: Value = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(GatewayError::Upstream { status, message: format!("invalid JSON: {e}") }))?;
        lookup_path(&json, &self.adapter.response_path).cloned().ok_or_else(|| {
            Attempt::Fatal(GatewayError::Upstream {
                status,
                message: format!("response has no value at {}", self.adapter.response_path),
            })
        })
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

fn value_as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn fill_str(template: &str, vars: &BTreeMap<&str, Value>) -> String {
    let mut out = template.to_string();
    for (name, v) in vars {
        out = out.replace(&format!("{{{{{name}}}}}"), &value_as_text(v));
    }
    out
}

/// Substitute `{{name}}` placeholders; a string that is exactly one
/// placeholder takes the variable's JSON type.
pub(crate) fn fill_value(template: &Value, vars: &BTreeMap<&str, Value>) -> Value {
    match template {
        Value::String(s) => {
            let exact = s.strip_prefix("{{").and_then(|r| r.strip_suffix("}}")).and_then(|name| vars.get(name));
            match exact {
                Some(v) => v.clone(),
                None => Value::String(fill_str(s, vars)),
            }
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| fill_value(v, vars)).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), fill_value(v, vars))).collect()),
        other => other.clone(),
    }
}

pub(crate) fn lookup_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').filter(|s| !s.is_empty()).try_fold(value, |v, seg| match v {
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
        Value::Object(map) => map.get(seg),
        _ => None,
    })
}

/// Chat completion over an [`HttpAdapter`]. Variables available to the
/// templates: `model`, `system`, `user`, `temperature`, `max_tokens`.
#[derive(Clone)]
pub struct RemoteBackend {
    client: HttpClient,
}

impl RemoteBackend {
    pub fn new(adapter: HttpAdapter) -> Result<Self, GatewayError> {
        Ok(RemoteBackend { client: HttpClient::new(adapter)? })
    }
}

impl ChatBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::RemoteHttp
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let vars = BTreeMap::from([
            ("model", Value::from(req.model_id.clone())),
            ("system", Value::from(req.system_prompt.clone())),
            ("user", Value::from(req.user_prompt.clone())),
            ("temperature", Value::from(req.temperature)),
            ("max_tokens", Value::from(req.max_output_tokens)),
        ]);
        let value = self.client.call(&vars)?;
        Ok(stop_response(value_as_text(&value), &req.model_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    #[test]
    fn templates_fill_typed_and_interpolated() {
        let vars = BTreeMap::from([("user", json!("hi")), ("temperature", json!(0.1))]);
        let body = json!({"t": "{{temperature}}", "msgs": [{"content": "say {{user}}"}]});
        assert_eq!(fill_value(&body, &vars), json!({"t": 0.1, "msgs": [{"content": "say hi"}]}));
    }

    #[test]
    fn path_lookup() {
        let v = json!({"choices": [{"message": {"content": "x"}}]});
        assert_eq!(lookup_path(&v, "choices.0.message.content"), Some(&json!("x")));
        assert_eq!(lookup_path(&v, "choices.1"), None);
    }

    /// Serves the given raw responses in order, one per connection.
    fn serve(responses: Vec<&'static str>) -> (String, std::thread::JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut served = 0;
            for body in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 65536];
                let mut req = Vec::new();
                loop {
                    let n = stream.read(&mut buf).unwrap();
                    req.extend_from_slice(&buf[..n]);
                    let text = String::from_utf8_lossy(&req);
                    if let Some(head_end) = text.find("\r\n\r\n") {
                        let len = text[..head_end]
                            .lines()
                            .find_map(|l| {
                                l.to_ascii_lowercase()
                                    .strip_prefix("content-length:")
                                    .map(|v| v.trim().parse::<usize>().unwrap())
                            })
                            .unwrap_or(0);
                        if req.len() >= head_end + 4 + len {
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                stream.write_all(body.as_bytes()).unwrap();
                served += 1;
            }
            served
        });
        (url, handle)
    }

    fn adapter(url: String) -> HttpAdapter {
        let mut a = HttpAdapter::new(url, "choices.0.message.content");
        a.body = Some(json!({"model": "{{model}}", "messages": [{"role": "user", "content": "{{user}}"}]}));
        a.backoff_base_ms = 1;
        a
    }

    fn req() -> ChatRequest {
        ChatRequest {
            model_id: "m".into(),
            system_prompt: "s".into(),
            user_prompt: "u".into(),
            temperature: 0.1,
            max_output_tokens: 8,
        }
    }

    const OK: &str = "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: 43\r\nconnection: close\r\n\r\n{\"choices\":[{\"message\":{\"content\":\"yes\"}}]}";
    const UNAVAILABLE: &str = "HTTP/1.1 503 Service Unavailable\r\ncontent-length: 0\r\nconnection: close\r\n\r\n";
    const BAD_REQUEST: &str = "HTTP/1.1 400 Bad Request\r\ncontent-length: 4\r\nconnection: close\r\n\r\nnope";

    #[test]
    fn retries_transient_then_succeeds() {
        let (url, server) = serve(vec![UNAVAILABLE, UNAVAILABLE, OK]);
        let backend = RemoteBackend::new(adapter(url)).unwrap();
        assert_eq!(backend.complete(&req()).unwrap().text, "yes");
        assert_eq!(server.join().unwrap(), 3);
    }

    #[test]
    fn gives_up_after_three_retries() {
        let (url, server) = serve(vec![UNAVAILABLE; 4]);
        let backend = RemoteBackend::new(adapter(url)).unwrap();
        let err = backend.complete(&req()).unwrap_err();
        assert!(matches!(err, GatewayError::UpstreamUnavailable { attempts: 4, .. }), "{err:?}");
        assert_eq!(server.join().unwrap(), 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, server) = serve(vec![BAD_REQUEST]);
        let backend = RemoteBackend::new(adapter(url)).unwrap();
        assert!(matches!(backend.complete(&req()), Err(GatewayError::Upstream { status: 400, .. })));
        assert_eq!(server.join().unwrap(), 1);
    }
}
