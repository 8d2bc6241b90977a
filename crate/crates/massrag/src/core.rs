//! Domain types shared by every stage of the engine.
//!
//! All types here are plain immutable values; construction validates the
//! structural invariants and nothing in this module performs I/O.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Structural violations in core values.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("query {query_id}: {reason}")]
    InvalidQuery { query_id: String, reason: String },
    #[error("filtered-response map is missing kind `{0}`")]
    MissingKind(FilterKind),
    #[error("filtered-response map must hold exactly 3 kinds, got {0}")]
    WrongKindCount(usize),
}

/// What kind of benchmark a query belongs to. Drives metric selection and
/// the answer-agent default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Odqa,
    LongForm,
    ClosedSet,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskKind::Odqa => "odqa",
            TaskKind::LongForm => "long_form",
            TaskKind::ClosedSet => "closed_set",
        };
        f.write_str(s)
    }
}

/// One retrieved document, already ranked by the upstream retriever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    /// Retriever relevance score, unitless; non-increasing with rank.
    pub score: f64,
    /// 1 = best. Unique and contiguous within a query.
    pub rank: u32,
}

/// A multiple-choice option for closed-set tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceOption {
    pub label: String,
    pub text: String,
}

/// One benchmark question with its gold answers and ranked documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub question: String,
    /// Non-empty for odqa/long_form.
    #[serde(default)]
    pub gold_answers: Vec<String>,
    /// Disambiguated short-answer groups for long-form str-em scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_groups: Option<Vec<Vec<String>>>,
    /// Single gold label for closed-set tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_option: Option<String>,
    /// Answer choices for closed-set tasks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<ChoiceOption>,
    /// Long reference answer, used for ROUGE on long-form tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub documents: Vec<Document>,
    pub task_kind: TaskKind,
}

impl Query {
    /// Check all structural invariants; rejects rank gaps, empty gold lists,
    /// empty document text and out-of-order scores.
    pub fn validate(&self) -> Result<(), CoreError> {
        let fail = |reason: String| CoreError::InvalidQuery {
            query_id: self.query_id.clone(),
            reason,
        };
        if self.question.trim().is_empty() {
            return Err(fail("question is empty".into()));
        }
        match self.task_kind {
            TaskKind::Odqa | TaskKind::LongForm => {
                if self.gold_answers.is_empty() {
                    return Err(fail("odqa/long_form query has no gold answers".into()));
                }
                if self.gold_answers.iter().any(|a| a.trim().is_empty()) {
                    return Err(fail("gold answer is empty".into()));
                }
            }
            TaskKind::ClosedSet => {
                if self.gold_option.is_none() {
                    return Err(fail("closed_set query has no gold option".into()));
                }
                if self.options.is_empty() {
                    return Err(fail("closed_set query has no answer options".into()));
                }
            }
        }
        for (i, doc) in self.documents.iter().enumerate() {
            if doc.text.trim().is_empty() {
                return Err(fail(format!("document {} has empty text", doc.doc_id)));
            }
            let expected = (i + 1) as u32;
            if doc.rank != expected {
                return Err(fail(format!(
                    "rank gap: position {i} holds rank {}, expected {expected}",
                    doc.rank
                )));
            }
            if i > 0 && doc.score > self.documents[i - 1].score {
                return Err(fail(format!(
                    "score increases with rank at position {i}"
                )));
            }
        }
        Ok(())
    }
}

/// The three evidence-filtering perspectives. Canonical order is
/// (summary, extraction, reasoning) everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Summary,
    Extraction,
    Reasoning,
}

impl FilterKind {
    /// All kinds in canonical order.
    pub const ALL: [FilterKind; 3] = [
        FilterKind::Summary,
        FilterKind::Extraction,
        FilterKind::Reasoning,
    ];

    /// Single-letter tag used in reports ("s", "e", "r").
    pub fn short(self) -> &'static str {
        match self {
            FilterKind::Summary => "s",
            FilterKind::Extraction => "e",
            FilterKind::Reasoning => "r",
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FilterKind::Summary => "summary",
            FilterKind::Extraction => "extraction",
            FilterKind::Reasoning => "reasoning",
        };
        f.write_str(s)
    }
}

/// Output of one filter agent over the retrieved documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredResponse {
    pub kind: FilterKind,
    pub text: String,
    /// Present iff kind == Extraction: whether every returned fragment is a
    /// verbatim substring of some input document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbatim_ok: Option<bool>,
    pub source_query_id: String,
}

/// Per-view candidate answer produced by the answer agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub kind: FilterKind,
    pub text: String,
}

/// Greedy decoding defaults per the deterministic-generation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 256,
        }
    }
}

/// Run configuration for the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub top_k_docs: u32,
    pub use_answer_agent: bool,
    pub decode: DecodeParams,
    pub prompt_set_id: String,
    pub max_context_chars: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            top_k_docs: 10,
            use_answer_agent: true,
            decode: DecodeParams::default(),
            prompt_set_id: "v1".into(),
            max_context_chars: 24_000,
        }
    }
}

impl PipelineConfig {
    /// Closed-set tasks never run the answer agent; everything else keeps
    /// the configured setting.
    pub fn normalized_for(&self, task: TaskKind) -> PipelineConfig {
        let mut cfg = self.clone();
        if task == TaskKind::ClosedSet {
            cfg.use_answer_agent = false;
        }
        cfg
    }
}

/// Final answer plus every intermediate artifact and the call accounting
/// for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub query_id: String,
    /// Exactly three entries, keyed by filter kind.
    pub filtered: BTreeMap<FilterKind, FilteredResponse>,
    /// Present iff the answer agent ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<BTreeMap<FilterKind, CandidateAnswer>>,
    pub final_answer: String,
    /// 7 with the answer agent, 4 without. Verbatim retries are excluded
    /// and tracked in `verbatim_retries`.
    pub agent_calls: u32,
    pub verbatim_retries: u32,
    pub backend_fingerprint: String,
}

impl PipelineResult {
    pub fn check_invariants(&self) -> Result<(), CoreError> {
        let fail = |reason: &str| CoreError::InvalidQuery {
            query_id: self.query_id.clone(),
            reason: reason.into(),
        };
        if self.filtered.len() != 3 {
            return Err(CoreError::WrongKindCount(self.filtered.len()));
        }
        let expected = if self.candidates.is_some() { 7 } else { 4 };
        if self.agent_calls != expected {
            return Err(fail("agent_calls does not match answer-agent mode"));
        }
        Ok(())
    }
}

/// Return the three filtered responses in canonical (summary, extraction,
/// reasoning) order regardless of how the map was built.
pub fn canonical_order(
    responses: &BTreeMap<FilterKind, FilteredResponse>,
) -> Result<Vec<&FilteredResponse>, CoreError> {
    if responses.len() != 3 {
        return Err(CoreError::WrongKindCount(responses.len()));
    }
    FilterKind::ALL
        .iter()
        .map(|k| responses.get(k).ok_or(CoreError::MissingKind(*k)))
        .collect()
}
