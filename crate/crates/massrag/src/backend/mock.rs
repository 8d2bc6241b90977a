//! Deterministic scripted backend for offline, reproducible runs.
//!
//! The script is a line-delimited JSON file; each record maps either a
//! (role, query_id) pair or a prompt digest to a fixed response. Unmatched
//! requests get the sentinel `NO-SCRIPT` so tests fail loudly instead of
//! silently passing on fabricated text.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::Deserialize;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

/// Response for any request the script does not cover.
pub const NO_SCRIPT: &str = "NO-SCRIPT";

#[derive(Debug, Deserialize)]
struct ScriptRecord {
    #[serde(default)]
    role: Option<String>,
    #[serde(default)]
    query_id: Option<String>,
    #[serde(default)]
    prompt_digest: Option<String>,
    response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum ScriptKey {
    Route(String, String),
    Digest(String),
}

/// Scripted mock backend. Also records every call it serves so tests can
/// assert on call counts and stage routing.
#[derive(Debug)]
pub struct MockBackend {
    table: HashMap<ScriptKey, String>,
    calls: AtomicU64,
    call_log: Mutex<Vec<(String, String)>>,
    label: String,
}

impl MockBackend {
    /// Empty mock; everything answers `NO-SCRIPT`.
    pub fn empty() -> Self {
        MockBackend {
            table: HashMap::new(),
            calls: AtomicU64::new(0),
            call_log: Mutex::new(Vec::new()),
            label: "mock:empty".into(),
        }
    }

    /// Build a mock from (role, query_id) -> response entries.
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: Into<String>,
    {
        let mut mock = MockBackend::empty();
        mock.label = "mock:inline".into();
        for (role, qid, resp) in entries {
            mock.table.insert(
                ScriptKey::Route(role.into(), qid.into()),
                resp.into(),
            );
        }
        mock
    }

    /// Load a script file. Duplicate keys and malformed records are parse
    /// errors carrying the offending line number.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let content = std::fs::read_to_string(path).map_err(|e| BackendError::ScriptParse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        let mut table = HashMap::new();
        for (idx, line) in content.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| BackendError::ScriptParse {
                path: path.display().to_string(),
                line: lineno,
                message,
            };
            let record: ScriptRecord =
                serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            let key = match (&record.role, &record.query_id, &record.prompt_digest) {
                (Some(role), Some(qid), None) => {
                    ScriptKey::Route(role.clone(), qid.clone())
                }
                (None, None, Some(digest)) => ScriptKey::Digest(digest.clone()),
                _ => {
                    return Err(parse_err(
                        "record needs either (role, query_id) or prompt_digest".into(),
                    ))
                }
            };
            if table.insert(key, record.response).is_some() {
                return Err(parse_err("duplicate script key".into()));
            }
        }
        // Script content determines the fingerprint so reruns against an
        // edited script are distinguishable in manifests.
        let digest = {
            use sha2::{Digest, Sha256};
            hex::encode(Sha256::digest(content.as_bytes()))
        };
        Ok(MockBackend {
            table,
            calls: AtomicU64::new(0),
            call_log: Mutex::new(Vec::new()),
            label: format!("mock:{}", &digest[..12]),
        })
    }

    /// Total completed calls.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// (role, query_id) of every routed call so far, in service order.
    pub fn call_log(&self) -> Vec<(String, String)> {
        self.call_log.lock().unwrap().clone()
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let routed = req.route.as_ref().and_then(|tag| {
            self.call_log
                .lock()
                .unwrap()
                .push((tag.role.clone(), tag.query_id.clone()));
            self.table
                .get(&ScriptKey::Route(tag.role.clone(), tag.query_id.clone()))
        });
        let by_digest = || {
            self.table
                .get(&ScriptKey::Digest(req.cache_key().0.clone()))
        };
        let text = routed
            .or_else(by_digest)
            .cloned()
            .unwrap_or_else(|| NO_SCRIPT.to_string());
        Ok(ChatResponse {
            text,
            prompt_tokens: None,
            completion_tokens: None,
            from_cache: false,
        })
    }

    fn fingerprint(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::RouteTag;
    use crate::core::DecodeParams;
    use std::io::Write;

    fn req(role: &str, qid: &str) -> ChatRequest {
        ChatRequest {
            system_prompt: "sys".into(),
            user_prompt: "user".into(),
            decode: DecodeParams::default(),
            model_name: "m".into(),
            route: Some(RouteTag {
                role: role.into(),
                query_id: qid.into(),
            }),
        }
    }

    #[test]
    fn scripted_lookup() {
        let mock = MockBackend::from_entries([("summarizer", "q1", "Sum1")]);
        let resp = mock.complete(&req("summarizer", "q1")).unwrap();
        assert_eq!(resp.text, "Sum1");
    }

    #[test]
    fn unscripted_call_returns_sentinel() {
        let mock = MockBackend::from_entries([("summarizer", "q1", "Sum1")]);
        let resp = mock.complete(&req("reasoner", "q9")).unwrap();
        assert_eq!(resp.text, NO_SCRIPT);
    }

    #[test]
    fn duplicate_key_is_a_parse_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"role":"summarizer","query_id":"q1","response":"a"}}"#).unwrap();
        writeln!(f, r#"{{"role":"summarizer","query_id":"q1","response":"b"}}"#).unwrap();
        let err = MockBackend::load(f.path()).unwrap_err();
        match err {
            BackendError::ScriptParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"role":"summarizer","query_id":"q1","response":"a"}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        let err = MockBackend::load(f.path()).unwrap_err();
        match err {
            BackendError::ScriptParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn digest_lookup_works_without_route() {
        let mut r = req("x", "y");
        r.route = None;
        let digest = r.cache_key().0;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"prompt_digest":"{digest}","response":"Paris"}}"#
        )
        .unwrap();
        let mock = MockBackend::load(f.path()).unwrap();
        assert_eq!(mock.complete(&r).unwrap().text, "Paris");
    }
}
