use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::{stop_response, BackendKind, ChatBackend, ChatRequest, ChatResponse, GatewayError};

type ScriptFn = dyn Fn(&ChatRequest) -> Option<String> + Send + Sync;

/// Match rule: every present condition must hold.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    #[serde(default)]
    pub digest: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Substrings that must all occur in the user prompt.
    #[serde(default)]
    pub contains: Vec<String>,
    /// Matches when the temperature rounds to this value (two decimals).
    #[serde(default)]
    pub temperature: Option<f64>,
    pub response: String,
}

impl ScriptRule {
    fn matches(&self, req: &ChatRequest, digest: &str) -> bool {
        self.digest.as_deref().is_none_or(|d| d == digest)
            && self.model.as_deref().is_none_or(|m| m == req.model_id)
            && self.contains.iter().all(|s| req.user_prompt.contains(s.as_str()))
            && self.temperature.is_none_or(|t| format!("{t:.2}") == format!("{:.2}", req.temperature))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default)]
    default: Option<String>,
    #[serde(default)]
    rules: Vec<ScriptRule>,
}

/// Deterministic backend: exact digests first, then rules in order, then an
/// optional handler function, then the default response.
#[derive(Clone, Default)]
pub struct ScriptedBackend {
    by_digest: HashMap<String, String>,
    rules: Vec<ScriptRule>,
    handler: Option<Arc<ScriptFn>>,
    default: Option<String>,
}

impl fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScriptedBackend")
            .field("digests", &self.by_digest.len())
            .field("rules", &self.rules.len())
            .field("handler", &self.handler.is_some())
            .finish()
    }
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_digest(mut self, digest: impl Into<String>, response: impl Into<String>) -> Self {
        self.by_digest.insert(digest.into(), response.into());
        self
    }

    pub fn with_rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_handler(mut self, f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        self.handler = Some(Arc::new(f));
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }

    /// Load rules from a TOML script file:
    ///
    /// ```toml
    /// default = "no"
    /// [[rules]]
    /// contains = ["aspirin"]
    /// response = "yes"
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self, GatewayError> {
        let file: ScriptFile = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(ScriptedBackend { rules: file.rules, default: file.default, ..Self::default() })
    }

    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("script {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

impl ChatBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let digest = req.digest();
        let text = self
            .by_digest
            .get(&digest)
            .cloned()
            .or_else(|| self.rules.iter().find(|r| r.matches(req, &digest)).map(|r| r.response.clone()))
            .or_else(|| self.handler.as_ref().and_then(|f| f(req)))
            .or_else(|| self.default.clone())
            .ok_or(GatewayError::ScriptMiss { digest })?;
        Ok(stop_response(text, &req.model_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str, t: f64) -> ChatRequest {
        ChatRequest {
            model_id: "m".into(),
            system_prompt: "s".into(),
            user_prompt: user.into(),
            temperature: t,
            max_output_tokens: 16,
        }
    }

    #[test]
    fn digest_lookup_is_deterministic() {
        let r = req("question", 0.1);
        let b = ScriptedBackend::new().with_digest(r.digest(), "yes");
        assert_eq!(b.complete(&r).unwrap().text, "yes");
        assert_eq!(b.complete(&r).unwrap(), b.complete(&r).unwrap());
    }

    #[test]
    fn rules_from_toml() {
        let b = ScriptedBackend::from_toml_str(
            r#"
            [[rules]]
            contains = ["aspirin"]
            temperature = 0.0
            response = "cold"
            [[rules]]
            contains = ["aspirin"]
            response = "warm"
            "#,
        )
        .unwrap();
        assert_eq!(b.complete(&req("about aspirin", 0.0)).unwrap().text, "cold");
        assert_eq!(b.complete(&req("about aspirin", 0.1)).unwrap().text, "warm");
        assert!(matches!(b.complete(&req("other", 0.1)), Err(GatewayError::ScriptMiss { .. })));
    }
}
