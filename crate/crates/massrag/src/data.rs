//! Dataset ingestion: line-delimited benchmark files (canonical schema or
//! the released retrieval-file formats) into validated `Query` values.
//!
//! Canonical schema, one JSON object per line:
//! `{query_id?, question, answers[]?, answer_groups[[]]?, options[]?,
//!   gold_option?, reference?, ctxs: [{id?, title?, text, score?}]}`
//! Adapters also accept the field spellings used by the released eval
//! files (`golden_answers`, `choices`/`answerKey`, `qa_pairs`).

use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::core::{ChoiceOption, Document, Query, TaskKind};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error(
        "{malformed} of {total} records malformed (> 1%); first: line {first_line}: {first_message} — wrong schema?"
    )]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        first_line: usize,
        first_message: String,
    },
    #[error("file {0} holds no records")]
    Empty(String),
}

/// One schema violation, reported with its line number.
#[derive(Debug, Clone)]
pub struct RecordIssue {
    pub line: usize,
    pub message: String,
}

/// Loaded queries plus the per-record violations that were skipped.
#[derive(Debug)]
pub struct LoadedDataset {
    pub queries: Vec<Query>,
    pub issues: Vec<RecordIssue>,
}

/// Load and validate a dataset file. Individual malformed records are
/// collected and skipped; more than 1% malformed aborts the load since
/// that almost always means the wrong schema was selected.
pub fn load_dataset(path: &Path, task_kind: TaskKind) -> Result<LoadedDataset, DataError> {
    let content = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut queries = Vec::new();
    let mut issues = Vec::new();
    let mut total = 0usize;
    for (idx, line) in content.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse_record(line, lineno, task_kind) {
            Ok(q) => queries.push(q),
            Err(message) => issues.push(RecordIssue {
                line: lineno,
                message,
            }),
        }
    }
    if total == 0 {
        return Err(DataError::Empty(path.display().to_string()));
    }
    if issues.len() * 100 > total {
        let first = &issues[0];
        return Err(DataError::TooManyMalformed {
            malformed: issues.len(),
            total,
            first_line: first.line,
            first_message: first.message.clone(),
        });
    }
    Ok(LoadedDataset { queries, issues })
}

fn parse_record(line: &str, lineno: usize, task_kind: TaskKind) -> Result<Query, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("record is not a JSON object")?;

    let question = obj
        .get("question")
        .or_else(|| obj.get("query"))
        .or_else(|| obj.get("instruction"))
        .and_then(Value::as_str)
        .ok_or("missing question")?
        .to_string();

    let query_id = obj
        .get("query_id")
        .or_else(|| obj.get("id"))
        .and_then(|v| match v {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        })
        .unwrap_or_else(|| format!("q{lineno:05}"));

    let mut gold_answers = string_list(
        obj.get("answers")
            .or_else(|| obj.get("golden_answers"))
            .or_else(|| obj.get("answer")),
    );

    let mut gold_groups: Option<Vec<Vec<String>>> = None;
    let mut reference = obj
        .get("reference")
        .and_then(Value::as_str)
        .map(str::to_string);
    if task_kind == TaskKind::LongForm {
        let groups = obj
            .get("answer_groups")
            .map(group_list)
            .or_else(|| obj.get("qa_pairs").map(qa_pair_groups));
        if let Some(groups) = groups {
            let groups: Vec<Vec<String>> =
                groups.into_iter().filter(|g| !g.is_empty()).collect();
            if !groups.is_empty() {
                if gold_answers.is_empty() {
                    gold_answers = groups.iter().flatten().cloned().collect();
                }
                gold_groups = Some(groups);
            }
        }
        if reference.is_none() {
            // ASQA files carry the long reference under "answer".
            reference = obj.get("answer").and_then(Value::as_str).map(str::to_string);
        }
    }

    let (options, gold_option) = if task_kind == TaskKind::ClosedSet {
        let options = parse_options(obj)?;
        let gold = obj
            .get("gold_option")
            .or_else(|| obj.get("answerKey"))
            .or_else(|| obj.get("answer"))
            .and_then(Value::as_str)
            .ok_or("closed_set record missing gold option")?
            .to_string();
        (options, Some(gold))
    } else {
        if gold_answers.is_empty() {
            return Err("record missing answers list".into());
        }
        (Vec::new(), None)
    };

    let raw_docs: Vec<RawDoc> = obj
        .get("ctxs")
        .or_else(|| obj.get("documents"))
        .and_then(Value::as_array)
        .map(|docs| docs.iter().map(RawDoc::from_value).collect())
        .unwrap_or_default();
    let documents = normalize_docs(raw_docs);

    let q = Query {
        query_id,
        question,
        gold_answers,
        gold_groups,
        gold_option,
        options,
        reference,
        documents,
        task_kind,
    };
    q.validate().map_err(|e| e.to_string())?;
    Ok(q)
}

fn string_list(value: Option<&Value>) -> Vec<String> {
    match value {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(Value::as_str)
            .map(str::to_string)
            .collect(),
        Some(Value::String(s)) => vec![s.clone()],
        _ => Vec::new(),
    }
}

fn group_list(value: &Value) -> Vec<Vec<String>> {
    value
        .as_array()
        .map(|groups| groups.iter().map(|g| string_list(Some(g))).collect())
        .unwrap_or_default()
}

fn qa_pair_groups(value: &Value) -> Vec<Vec<String>> {
    value
        .as_array()
        .map(|pairs| {
            pairs
                .iter()
                .map(|p| string_list(p.get("short_answers")))
                .collect()
        })
        .unwrap_or_default()
}

fn parse_options(obj: &serde_json::Map<String, Value>) -> Result<Vec<ChoiceOption>, String> {
    if let Some(options) = obj.get("options").and_then(Value::as_array) {
        return options
            .iter()
            .map(|o| {
                let label = o
                    .get("label")
                    .and_then(Value::as_str)
                    .ok_or("option missing label")?;
                let text = o
                    .get("text")
                    .and_then(Value::as_str)
                    .ok_or("option missing text")?;
                Ok(ChoiceOption {
                    label: label.to_string(),
                    text: text.to_string(),
                })
            })
            .collect();
    }
    // ARC release format: {"choices": {"label": [...], "text": [...]}} or
    // {"choices": [{"label": ..., "text": ...}, ...]}.
    match obj.get("choices") {
        Some(Value::Object(ch)) => {
            let labels = string_list(ch.get("label"));
            let texts = string_list(ch.get("text"));
            if labels.len() != texts.len() || labels.is_empty() {
                return Err("choices label/text arrays disagree".into());
            }
            Ok(labels
                .into_iter()
                .zip(texts)
                .map(|(label, text)| ChoiceOption { label, text })
                .collect())
        }
        Some(Value::Array(items)) => items
            .iter()
            .map(|o| {
                let label = o
                    .get("label")
                    .and_then(Value::as_str)
                    .ok_or("choice missing label")?;
                let text = o
                    .get("text")
                    .and_then(Value::as_str)
                    .ok_or("choice missing text")?;
                Ok(ChoiceOption {
                    label: label.to_string(),
                    text: text.to_string(),
                })
            })
            .collect(),
        _ => Err("closed_set record missing options/choices".into()),
    }
}

/// A document record as found on disk, before normalization.
#[derive(Debug, Clone, Default)]
pub struct RawDoc {
    pub id: Option<String>,
    pub title: Option<String>,
    pub text: String,
    pub score: Option<f64>,
}

impl RawDoc {
    fn from_value(v: &Value) -> RawDoc {
        RawDoc {
            id: v.get("id").and_then(|x| match x {
                Value::String(s) => Some(s.clone()),
                Value::Number(n) => Some(n.to_string()),
                _ => None,
            }),
            title: v.get("title").and_then(Value::as_str).map(str::to_string),
            text: v
                .get("text")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
            score: v.get("score").and_then(|s| match s {
                Value::Number(n) => n.as_f64(),
                // Released files sometimes carry scores as strings.
                Value::String(s) => s.parse().ok(),
                _ => None,
            }),
        }
    }
}

/// Turn raw records into ranked documents. Records with scores are sorted
/// by descending score; if any record lacks a score, synthetic strictly
/// decreasing scores are assigned by input position. Empty-text records
/// are dropped with a warning.
pub fn normalize_docs(raw: Vec<RawDoc>) -> Vec<Document> {
    let mut kept: Vec<RawDoc> = Vec::with_capacity(raw.len());
    for doc in raw {
        if doc.text.trim().is_empty() {
            eprintln!(
                "warning: dropping document {} with empty text",
                doc.id.as_deref().unwrap_or("<no id>")
            );
            continue;
        }
        kept.push(doc);
    }
    let all_scored = kept.iter().all(|d| d.score.is_some());
    if all_scored {
        kept.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    } else {
        let n = kept.len();
        for (i, doc) in kept.iter_mut().enumerate() {
            doc.score = Some((n - i) as f64);
        }
    }
    kept.into_iter()
        .enumerate()
        .map(|(i, doc)| {
            let title = doc.title.unwrap_or_default();
            let doc_id = doc
                .id
                .unwrap_or_else(|| derived_doc_id(&title, &doc.text));
            Document {
                doc_id,
                title,
                score: doc.score.unwrap(),
                rank: (i + 1) as u32,
                text: doc.text,
            }
        })
        .collect()
}

/// Stable content-derived id for files that lack one.
pub fn derived_doc_id(title: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(title.as_bytes());
    hasher.update(text.as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

/// Serialize a query to its canonical on-disk line. Reloading the line
/// yields an equal value.
pub fn query_to_canonical_line(q: &Query) -> String {
    serde_json::to_string(&CanonicalRecord::from(q)).expect("query serializes")
}

#[derive(serde::Serialize)]
struct CanonicalRecord<'a> {
    query_id: &'a str,
    question: &'a str,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    answers: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    answer_groups: Option<&'a Vec<Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold_option: Option<&'a str>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    options: Vec<&'a ChoiceOption>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<&'a str>,
    ctxs: Vec<CanonicalDoc<'a>>,
}

#[derive(serde::Serialize)]
struct CanonicalDoc<'a> {
    id: &'a str,
    title: &'a str,
    text: &'a str,
    score: f64,
}

impl<'a> From<&'a Query> for CanonicalRecord<'a> {
    fn from(q: &'a Query) -> Self {
        CanonicalRecord {
            query_id: &q.query_id,
            question: &q.question,
            answers: q.gold_answers.iter().map(String::as_str).collect(),
            answer_groups: q.gold_groups.as_ref(),
            gold_option: q.gold_option.as_deref(),
            options: q.options.iter().collect(),
            reference: q.reference.as_deref(),
            ctxs: q
                .documents
                .iter()
                .map(|d| CanonicalDoc {
                    id: &d.doc_id,
                    title: &d.title,
                    text: &d.text,
                    score: d.score,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn raw(text: &str, score: Option<f64>) -> RawDoc {
        RawDoc {
            id: None,
            title: Some("T".into()),
            text: text.into(),
            score,
        }
    }

    #[test]
    fn positional_scores_when_missing() {
        let docs = normalize_docs(vec![raw("a", None), raw("b", None), raw("c", None)]);
        let scores: Vec<f64> = docs.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![3.0, 2.0, 1.0]);
        let ranks: Vec<u32> = docs.iter().map(|d| d.rank).collect();
        assert_eq!(ranks, vec![1, 2, 3]);
    }

    #[test]
    fn scored_records_sort_by_descending_score() {
        let docs = normalize_docs(vec![raw("low", Some(0.9)), raw("high", Some(0.95))]);
        assert_eq!(docs[0].text, "high");
        assert_eq!(docs[0].rank, 1);
    }

    #[test]
    fn empty_text_record_is_dropped() {
        let docs = normalize_docs(vec![raw("a", None), raw("   ", None)]);
        assert_eq!(docs.len(), 1);
    }

    #[test]
    fn derived_doc_id_is_stable() {
        assert_eq!(derived_doc_id("t", "x"), derived_doc_id("t", "x"));
        assert_ne!(derived_doc_id("t", "x"), derived_doc_id("t", "y"));
    }

    #[test]
    fn load_odqa_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"question":"who wrote 1984?","answers":["George Orwell"],"ctxs":[{{"title":"1984","text":"1984 was written by George Orwell.","score":1.2}}]}}"#
        )
        .unwrap();
        let loaded = load_dataset(f.path(), TaskKind::Odqa).unwrap();
        assert_eq!(loaded.queries.len(), 1);
        assert!(loaded.issues.is_empty());
        let q = &loaded.queries[0];
        assert_eq!(q.gold_answers, vec!["George Orwell"]);
        assert_eq!(q.documents.len(), 1);
        assert_eq!(q.documents[0].rank, 1);
        // No explicit id: derived from content.
        assert_eq!(q.documents[0].doc_id.len(), 16);
    }

    #[test]
    fn missing_answers_is_reported_with_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..200 {
            writeln!(
                f,
                r#"{{"question":"q{i}","answers":["a"],"ctxs":[{{"text":"t"}}]}}"#
            )
            .unwrap();
        }
        writeln!(f, r#"{{"question":"bad one","ctxs":[{{"text":"t"}}]}}"#).unwrap();
        let loaded = load_dataset(f.path(), TaskKind::Odqa).unwrap();
        assert_eq!(loaded.queries.len(), 200);
        assert_eq!(loaded.issues.len(), 1);
        assert_eq!(loaded.issues[0].line, 201);
        assert!(loaded.issues[0].message.contains("answers"));
    }

    #[test]
    fn mostly_malformed_file_is_a_hard_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"question":"ok","answers":["a"],"ctxs":[]}}"#).unwrap();
        writeln!(f, r#"{{"totally":"different schema"}}"#).unwrap();
        let err = load_dataset(f.path(), TaskKind::Odqa).unwrap_err();
        assert!(matches!(err, DataError::TooManyMalformed { .. }));
    }

    #[test]
    fn arc_release_format_loads() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"id":"arc1","question":"Which gas?","choices":{{"label":["A","B","C","D"],"text":["O2","CO2","N2","H2"]}},"answerKey":"B","ctxs":[{{"text":"Plants absorb carbon dioxide."}}]}}"#
        )
        .unwrap();
        let loaded = load_dataset(f.path(), TaskKind::ClosedSet).unwrap();
        let q = &loaded.queries[0];
        assert_eq!(q.gold_option.as_deref(), Some("B"));
        assert_eq!(q.options.len(), 4);
        assert_eq!(q.options[1].text, "CO2");
    }

    #[test]
    fn asqa_qa_pairs_become_gold_groups() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"question":"ambiguous?","qa_pairs":[{{"short_answers":["x","x2"]}},{{"short_answers":["y"]}}],"answer":"the long reference answer","ctxs":[{{"text":"some context"}}]}}"#
        )
        .unwrap();
        let loaded = load_dataset(f.path(), TaskKind::LongForm).unwrap();
        let q = &loaded.queries[0];
        assert_eq!(
            q.gold_groups,
            Some(vec![vec!["x".into(), "x2".into()], vec!["y".into()]])
        );
        assert_eq!(q.reference.as_deref(), Some("the long reference answer"));
    }

    #[test]
    fn canonical_round_trip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"question":"who?","answers":["A"],"ctxs":[{{"title":"t1","text":"body one"}},{{"title":"t2","text":"body two"}}]}}"#
        )
        .unwrap();
        let loaded = load_dataset(f.path(), TaskKind::Odqa).unwrap();
        let line = query_to_canonical_line(&loaded.queries[0]);
        let mut f2 = tempfile::NamedTempFile::new().unwrap();
        writeln!(f2, "{line}").unwrap();
        let reloaded = load_dataset(f2.path(), TaskKind::Odqa).unwrap();
        assert_eq!(loaded.queries[0], reloaded.queries[0]);
    }
}
