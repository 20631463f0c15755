use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{stop_response, BackendKind, CallRecord, ChatBackend, ChatRequest, ChatResponse, GatewayError};

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub response: String,
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, GatewayError> {
    let file = File::open(path).map_err(|e| GatewayError::Config(format!("transcript {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Config(format!("transcript {}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| GatewayError::Config(format!("transcript {} line {}: {e}", path.display(), i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

/// Write successful calls as transcript lines, first occurrence per digest.
pub fn write_transcript(path: &Path, calls: &[CallRecord]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut seen = std::collections::HashSet::new();
    for call in calls {
        let Some(response) = &call.response else { continue };
        if !seen.insert(call.digest.clone()) {
            continue;
        }
        let entry = TranscriptEntry {
            digest: call.digest.clone(),
            model_id: Some(call.model_id.clone()),
            response: response.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&entry).expect("entry serializes"))?;
    }
    out.flush()
}

/// Answers strictly from a recorded transcript; a miss is a hard error.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        ReplayBackend { responses: entries.into_iter().map(|e| (e.digest, e.response)).collect() }
    }

    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_entries(read_transcript(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let digest = req.digest();
        match self.responses.get(&digest) {
            Some(text) => Ok(stop_response(text.clone(), &req.model_id)),
            None => Err(GatewayError::ReplayMiss { digest }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miss_is_hard_error_and_hit_replays() {
        let req = ChatRequest {
            model_id: "m".into(),
            system_prompt: "s".into(),
            user_prompt: "u".into(),
            temperature: 0.0,
            max_output_tokens: 4,
        };
        let empty = ReplayBackend::default();
        assert!(matches!(empty.complete(&req), Err(GatewayError::ReplayMiss { .. })));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let call = CallRecord {
            digest: req.digest(),
            model_id: "m".into(),
            temperature: 0.0,
            response: Some("recorded".into()),
            error: None,
        };
        write_transcript(&path, &[call.clone(), call]).unwrap();
        let replay = ReplayBackend::from_path(&path).unwrap();
        assert_eq!(replay.len(), 1);
        assert_eq!(replay.complete(&req).unwrap().text, "recorded");
    }
}
