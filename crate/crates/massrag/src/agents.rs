//! The five agent roles: prompt templates plus output contracts over a
//! chat backend.
//!
//! Filter agents (summarizer, extractor, reasoner) each distill one
//! evidence view from the retrieved documents. The answer agent turns one
//! view into a candidate answer. The synthesis agent reconciles either the
//! three candidates or the three evidence views into the final answer.

use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatRequest, RouteTag};
use crate::core::{
    CandidateAnswer, ChoiceOption, DecodeParams, Document, FilterKind, FilteredResponse, Query,
    TaskKind,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{role} agent: {source}")]
    Backend {
        role: &'static str,
        #[source]
        source: BackendError,
    },
    #[error("{role} agent returned empty output")]
    EmptyOutput { role: &'static str },
    #[error("synthesis output carries no recognizable option label: {text:?}")]
    UnparseableAnswer { text: String },
    #[error("synthesis requires exactly one input per filter kind")]
    BadSynthesisInputs,
    #[error("prompt template for {role}: {message}")]
    Template { role: &'static str, message: String },
    #[error("prompt set {0}: {1}")]
    PromptSetIo(String, String),
}

/// The agent roles a prompt set must cover. Synthesis has two mode
/// variants because its input block is either candidates or evidence,
/// never both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentRole {
    Summarizer,
    Extractor,
    Reasoner,
    Answer,
    SynthesisCandidates,
    SynthesisEvidence,
}

impl AgentRole {
    fn name(self) -> &'static str {
        match self {
            AgentRole::Summarizer => "summarizer",
            AgentRole::Extractor => "extractor",
            AgentRole::Reasoner => "reasoner",
            AgentRole::Answer => "answer",
            AgentRole::SynthesisCandidates => "synthesis",
            AgentRole::SynthesisEvidence => "synthesis",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            AgentRole::SynthesisCandidates => "synthesis",
            AgentRole::SynthesisEvidence => "synthesis_evidence",
            other => other.name(),
        }
    }

    /// Placeholders the role's user skeleton must contain, and the full
    /// set it may contain.
    fn placeholders(self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            AgentRole::Summarizer | AgentRole::Extractor | AgentRole::Reasoner => {
                (&["question", "documents"], &["question", "documents"])
            }
            AgentRole::Answer => (&["question", "evidence"], &["question", "evidence"]),
            AgentRole::SynthesisCandidates => (
                &["question", "candidates"],
                &["question", "candidates", "options"],
            ),
            AgentRole::SynthesisEvidence => (
                &["question", "evidence"],
                &["question", "evidence", "options"],
            ),
        }
    }
}

/// One role's system text and user skeleton.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub role: AgentRole,
    pub system_text: String,
    pub user_skeleton: String,
    pub max_tokens: u32,
}

static PLACEHOLDER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

impl PromptTemplate {
    /// Parse the `system --- skeleton` file format and check that the
    /// skeleton carries exactly the placeholders the role needs.
    fn parse(role: AgentRole, content: &str, max_tokens: u32) -> Result<Self, AgentError> {
        let err = |message: String| AgentError::Template {
            role: role.file_stem(),
            message,
        };
        let mut parts = content.splitn(2, "\n---\n");
        let system_text = parts.next().unwrap_or("").trim().to_string();
        let user_skeleton = parts
            .next()
            .ok_or_else(|| err("missing `---` separator between system and user text".into()))?
            .trim()
            .to_string();
        let found: Vec<&str> = PLACEHOLDER_RE
            .captures_iter(&user_skeleton)
            .map(|c| c.get(1).unwrap().as_str())
            .collect();
        let (required, allowed) = role.placeholders();
        for name in required {
            if !found.contains(name) {
                return Err(err(format!("missing required placeholder {{{name}}}")));
            }
        }
        for name in &found {
            if !allowed.contains(name) {
                return Err(err(format!("unexpected placeholder {{{name}}}")));
            }
        }
        Ok(PromptTemplate {
            role,
            system_text,
            user_skeleton,
            max_tokens,
        })
    }

    fn fill(&self, values: &[(&str, &str)]) -> String {
        let map: HashMap<&str, &str> = values.iter().copied().collect();
        PLACEHOLDER_RE
            .replace_all(&self.user_skeleton, |caps: &regex::Captures<'_>| {
                map.get(&caps[1]).copied().unwrap_or("").to_string()
            })
            .into_owned()
    }
}

/// A versioned set of templates for every role.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub id: String,
    pub summarizer: PromptTemplate,
    pub extractor: PromptTemplate,
    pub reasoner: PromptTemplate,
    pub answer: PromptTemplate,
    pub synthesis_candidates: PromptTemplate,
    pub synthesis_evidence: PromptTemplate,
}

const MAX_TOKENS_SUMMARIZER: u32 = 256;
const MAX_TOKENS_EXTRACTOR: u32 = 256;
const MAX_TOKENS_REASONER: u32 = 384;
const MAX_TOKENS_SHORT: u32 = 64;
const MAX_TOKENS_LONG_FORM: u32 = 512;

impl PromptSet {
    /// The shipped "v1" prompt set, embedded at compile time.
    pub fn builtin_v1() -> Self {
        let parse = |role, content| {
            PromptTemplate::parse(role, content, default_max_tokens(role))
                .expect("builtin v1 templates are well-formed")
        };
        PromptSet {
            id: "v1".into(),
            summarizer: parse(
                AgentRole::Summarizer,
                include_str!("../prompts/v1/summarizer.txt"),
            ),
            extractor: parse(
                AgentRole::Extractor,
                include_str!("../prompts/v1/extractor.txt"),
            ),
            reasoner: parse(
                AgentRole::Reasoner,
                include_str!("../prompts/v1/reasoner.txt"),
            ),
            answer: parse(AgentRole::Answer, include_str!("../prompts/v1/answer.txt")),
            synthesis_candidates: parse(
                AgentRole::SynthesisCandidates,
                include_str!("../prompts/v1/synthesis.txt"),
            ),
            synthesis_evidence: parse(
                AgentRole::SynthesisEvidence,
                include_str!("../prompts/v1/synthesis_evidence.txt"),
            ),
        }
    }

    /// Load a prompt set from `dir/<role>.txt` files.
    pub fn load(dir: &Path, id: &str) -> Result<Self, AgentError> {
        let read = |role: AgentRole| -> Result<PromptTemplate, AgentError> {
            let path = dir.join(format!("{}.txt", role.file_stem()));
            let content = std::fs::read_to_string(&path).map_err(|e| {
                AgentError::PromptSetIo(id.into(), format!("{}: {e}", path.display()))
            })?;
            PromptTemplate::parse(role, &content, default_max_tokens(role))
        };
        Ok(PromptSet {
            id: id.into(),
            summarizer: read(AgentRole::Summarizer)?,
            extractor: read(AgentRole::Extractor)?,
            reasoner: read(AgentRole::Reasoner)?,
            answer: read(AgentRole::Answer)?,
            synthesis_candidates: read(AgentRole::SynthesisCandidates)?,
            synthesis_evidence: read(AgentRole::SynthesisEvidence)?,
        })
    }
}

fn default_max_tokens(role: AgentRole) -> u32 {
    match role {
        AgentRole::Summarizer => MAX_TOKENS_SUMMARIZER,
        AgentRole::Extractor => MAX_TOKENS_EXTRACTOR,
        AgentRole::Reasoner => MAX_TOKENS_REASONER,
        AgentRole::Answer | AgentRole::SynthesisCandidates | AgentRole::SynthesisEvidence => {
            MAX_TOKENS_SHORT
        }
    }
}

/// Render documents as numbered blocks, ranks ascending. This exact
/// serialization feeds the cache key, so it must stay stable.
pub fn render_documents(docs: &[Document]) -> String {
    docs.iter()
        .map(render_document)
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn render_document(doc: &Document) -> String {
    format!("[{}] {} — {}", doc.rank, doc.title, doc.text)
}

fn render_options(options: &[ChoiceOption]) -> String {
    if options.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nOptions:\n");
    for opt in options {
        out.push_str(&format!("{}. {}\n", opt.label, opt.text));
    }
    out.push_str("Answer with the single letter of the correct option.\n");
    out
}

/// Inputs for the synthesis stage: candidate answers when the answer
/// agent ran, filtered evidence otherwise.
pub enum SynthesisInputs<'a> {
    Candidates(&'a [CandidateAnswer]),
    Evidence(&'a [&'a FilteredResponse]),
}

/// Stateless agent suite over a shared backend; safe to call from
/// concurrent tasks.
pub struct AgentSuite<'a> {
    backend: &'a dyn ChatBackend,
    prompts: &'a PromptSet,
    model_name: &'a str,
    decode: DecodeParams,
    task_kind: TaskKind,
}

/// A filter-agent result plus the number of verbatim retries it cost
/// (non-zero only for the extractor).
pub struct FilterOutcome {
    pub response: FilteredResponse,
    pub retries: u32,
}

impl<'a> AgentSuite<'a> {
    pub fn new(
        backend: &'a dyn ChatBackend,
        prompts: &'a PromptSet,
        model_name: &'a str,
        decode: DecodeParams,
        task_kind: TaskKind,
    ) -> Self {
        AgentSuite {
            backend,
            prompts,
            model_name,
            decode,
            task_kind,
        }
    }

    fn call(
        &self,
        role: &'static str,
        query_id: &str,
        system: &str,
        user: String,
        max_tokens: u32,
    ) -> Result<String, AgentError> {
        let req = ChatRequest {
            system_prompt: system.to_string(),
            user_prompt: user,
            decode: DecodeParams {
                max_tokens,
                ..self.decode.clone()
            },
            model_name: self.model_name.to_string(),
            route: Some(RouteTag {
                role: role.to_string(),
                query_id: query_id.to_string(),
            }),
        };
        let resp = self
            .backend
            .complete(&req)
            .map_err(|source| AgentError::Backend { role, source })?;
        if resp.text.trim().is_empty() {
            return Err(AgentError::EmptyOutput { role });
        }
        Ok(resp.text)
    }

    pub fn summarize(&self, q: &Query, docs: &[Document]) -> Result<FilteredResponse, AgentError> {
        let t = &self.prompts.summarizer;
        let user = t.fill(&[
            ("question", &q.question),
            ("documents", &render_documents(docs)),
        ]);
        let text = self.call("summarizer", &q.query_id, &t.system_text, user, t.max_tokens)?;
        Ok(FilteredResponse {
            kind: FilterKind::Summary,
            text,
            verbatim_ok: None,
            source_query_id: q.query_id.clone(),
        })
    }

    /// Extract verbatim spans. A non-verbatim output is retried once with a
    /// sterner instruction, then accepted with `verbatim_ok = false`.
    pub fn extract(&self, q: &Query, docs: &[Document]) -> Result<FilterOutcome, AgentError> {
        let t = &self.prompts.extractor;
        let user = t.fill(&[
            ("question", &q.question),
            ("documents", &render_documents(docs)),
        ]);
        let text = self.call(
            "extractor",
            &q.query_id,
            &t.system_text,
            user.clone(),
            t.max_tokens,
        )?;
        let (text, retries) = if verbatim_ok(&text, docs) {
            (text, 0)
        } else {
            let sterner = format!(
                "{}\nYour previous output was not copied exactly. Copy the spans \
                 character for character from the documents; change nothing.",
                t.system_text
            );
            let retried = self.call("extractor", &q.query_id, &sterner, user, t.max_tokens)?;
            (retried, 1)
        };
        let ok = verbatim_ok(&text, docs);
        Ok(FilterOutcome {
            response: FilteredResponse {
                kind: FilterKind::Extraction,
                text,
                verbatim_ok: Some(ok),
                source_query_id: q.query_id.clone(),
            },
            retries,
        })
    }

    pub fn reason(&self, q: &Query, docs: &[Document]) -> Result<FilteredResponse, AgentError> {
        let t = &self.prompts.reasoner;
        let user = t.fill(&[
            ("question", &q.question),
            ("documents", &render_documents(docs)),
        ]);
        let text = self.call("reasoner", &q.query_id, &t.system_text, user, t.max_tokens)?;
        Ok(FilteredResponse {
            kind: FilterKind::Reasoning,
            text,
            verbatim_ok: None,
            source_query_id: q.query_id.clone(),
        })
    }

    pub fn answer(
        &self,
        q: &Query,
        evidence: &FilteredResponse,
    ) -> Result<CandidateAnswer, AgentError> {
        let t = &self.prompts.answer;
        let user = t.fill(&[
            ("question", &q.question),
            ("evidence", &evidence.text),
        ]);
        let role = match evidence.kind {
            FilterKind::Summary => "answer_summary",
            FilterKind::Extraction => "answer_extraction",
            FilterKind::Reasoning => "answer_reasoning",
        };
        let max_tokens = match self.task_kind {
            TaskKind::LongForm => MAX_TOKENS_LONG_FORM,
            _ => t.max_tokens,
        };
        let text = self.call(role, &q.query_id, &t.system_text, user, max_tokens)?;
        Ok(CandidateAnswer {
            kind: evidence.kind,
            text,
        })
    }

    /// Produce the final answer. Inputs are canonicalized to (summary,
    /// extraction, reasoning) order before rendering, so the prompt (and
    /// therefore the cached completion) does not depend on input order.
    /// For closed-set tasks the raw output is parsed down to one option
    /// label.
    pub fn synthesize(
        &self,
        q: &Query,
        inputs: SynthesisInputs<'_>,
    ) -> Result<String, AgentError> {
        let options_block = render_options(&q.options);
        let (t, user) = match inputs {
            SynthesisInputs::Candidates(cands) => {
                let ordered = ordered_by_kind(cands, |c| c.kind)?;
                let block = numbered_block(ordered.iter().map(|c| c.text.as_str()));
                let t = &self.prompts.synthesis_candidates;
                let user = t.fill(&[
                    ("question", &q.question),
                    ("candidates", &block),
                    ("options", &options_block),
                ]);
                (t, user)
            }
            SynthesisInputs::Evidence(responses) => {
                let ordered = ordered_by_kind(responses, |r| r.kind)?;
                let block = numbered_block(ordered.iter().map(|r| r.text.as_str()));
                let t = &self.prompts.synthesis_evidence;
                let user = t.fill(&[
                    ("question", &q.question),
                    ("evidence", &block),
                    ("options", &options_block),
                ]);
                (t, user)
            }
        };
        let max_tokens = match self.task_kind {
            TaskKind::LongForm => MAX_TOKENS_LONG_FORM,
            _ => t.max_tokens,
        };
        let text = self.call("synthesis", &q.query_id, &t.system_text, user, max_tokens)?;
        if self.task_kind == TaskKind::ClosedSet {
            let labels: Vec<&str> = q.options.iter().map(|o| o.label.as_str()).collect();
            return parse_option_label(&text, &labels)
                .ok_or(AgentError::UnparseableAnswer { text });
        }
        Ok(text)
    }
}

fn ordered_by_kind<T>(
    items: &[T],
    kind_of: impl Fn(&T) -> FilterKind,
) -> Result<Vec<&T>, AgentError> {
    if items.len() != 3 {
        return Err(AgentError::BadSynthesisInputs);
    }
    FilterKind::ALL
        .iter()
        .map(|k| {
            items
                .iter()
                .find(|item| kind_of(item) == *k)
                .ok_or(AgentError::BadSynthesisInputs)
        })
        .collect()
}

fn numbered_block<'s>(texts: impl Iterator<Item = &'s str>) -> String {
    texts
        .enumerate()
        .map(|(i, t)| format!("[{}] {}", i + 1, t))
        .collect::<Vec<_>>()
        .join("\n")
}

// --- extractor verbatim check -------------------------------------------

/// Collapse whitespace runs and unify curly quotes so that LLM reflowing
/// does not defeat the substring test.
pub fn normalize_span(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut last_space = true;
    for ch in s.chars() {
        let ch = match ch {
            '\u{2018}' | '\u{2019}' => '\'',
            '\u{201C}' | '\u{201D}' => '"',
            c => c,
        };
        if ch.is_whitespace() {
            if !last_space {
                out.push(' ');
                last_space = true;
            }
        } else {
            out.push(ch);
            last_space = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

static BULLET_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]|\d+[.)])\s+").unwrap());

/// Split extractor output into fragments on newlines, stripping bullet
/// markers. Empty fragments are dropped.
pub fn split_fragments(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| BULLET_RE.replace(line, "").into_owned())
        .map(|line| normalize_span(&line))
        .filter(|line| !line.is_empty())
        .collect()
}

/// True iff every fragment of `text` is, after normalization, a substring
/// of some document's text. Pure predicate.
pub fn verbatim_ok(text: &str, docs: &[Document]) -> bool {
    let normalized_docs: Vec<String> = docs.iter().map(|d| normalize_span(&d.text)).collect();
    let fragments = split_fragments(text);
    if fragments.is_empty() {
        return false;
    }
    fragments
        .iter()
        .all(|frag| normalized_docs.iter().any(|doc| doc.contains(frag.as_str())))
}

// --- closed-set label parsing -------------------------------------------

static LABEL_PATTERNS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    vec![
        Regex::new(r"answer\s+is\s*:?\s*\(?([a-z0-9])\)?").unwrap(),
        Regex::new(r"\(([a-z0-9])\)").unwrap(),
        Regex::new(r"\b([a-z0-9])[.):]").unwrap(),
        Regex::new(r"\b([a-z0-9])\s*$").unwrap(),
        Regex::new(r"^\s*([a-z0-9])\s*$").unwrap(),
    ]
});

/// Pull a standalone option label out of a synthesis output. Only labels
/// from `labels` are accepted; the earliest match in the string wins.
/// Returns the label in its configured casing, or None if nothing parses.
pub fn parse_option_label(text: &str, labels: &[&str]) -> Option<String> {
    let lower = text.to_lowercase();
    let mut best: Option<(usize, usize, String)> = None;
    for (prio, re) in LABEL_PATTERNS.iter().enumerate() {
        for caps in re.captures_iter(&lower) {
            let m = caps.get(1).unwrap();
            let candidate = m.as_str();
            let Some(canonical) = labels
                .iter()
                .find(|l| l.eq_ignore_ascii_case(candidate))
            else {
                continue;
            };
            let entry = (m.start(), prio, canonical.to_string());
            if best.as_ref().map_or(true, |b| entry < *b) {
                best = Some(entry);
            }
        }
    }
    best.map(|(_, _, label)| label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    fn doc(text: &str) -> Document {
        Document {
            doc_id: "d1".into(),
            title: "Title".into(),
            text: text.into(),
            score: 1.0,
            rank: 1,
        }
    }

    fn query(id: &str, question: &str) -> Query {
        Query {
            query_id: id.into(),
            question: question.into(),
            gold_answers: vec!["1948".into()],
            gold_groups: None,
            gold_option: None,
            options: vec![],
            reference: None,
            documents: vec![doc("George Orwell wrote 1984 in 1948.")],
            task_kind: TaskKind::Odqa,
        }
    }

    #[test]
    fn builtin_prompt_set_parses() {
        let set = PromptSet::builtin_v1();
        assert_eq!(set.id, "v1");
        assert!(set.summarizer.user_skeleton.contains("{documents}"));
    }

    #[test]
    fn template_rejects_missing_placeholder() {
        let bad = "system\n---\nQuestion: {question}\n";
        assert!(PromptTemplate::parse(AgentRole::Summarizer, bad, 256).is_err());
    }

    #[test]
    fn template_rejects_foreign_placeholder() {
        let bad = "system\n---\n{question} {documents} {candidates}\n";
        assert!(PromptTemplate::parse(AgentRole::Summarizer, bad, 256).is_err());
    }

    #[test]
    fn verbatim_exact_copy_passes() {
        let docs = [doc("George Orwell wrote 1984 in 1948.")];
        assert!(verbatim_ok("George Orwell wrote 1984 in 1948.", &docs));
    }

    #[test]
    fn verbatim_paraphrase_fails() {
        let docs = [doc("George Orwell wrote 1984 in 1948.")];
        assert!(!verbatim_ok("Orwell authored 1984", &docs));
    }

    #[test]
    fn verbatim_two_fragments_both_substrings_pass() {
        let docs = [
            doc("George Orwell wrote 1984 in 1948."),
            doc("The novel was published by Secker and Warburg."),
        ];
        let out = "- George Orwell wrote 1984\n- published by Secker and Warburg";
        assert!(verbatim_ok(out, &docs));
    }

    #[test]
    fn verbatim_tolerates_whitespace_reflow_and_quotes() {
        let docs = [doc("He said \u{201C}never again\u{201D}  to  the press.")];
        assert!(verbatim_ok("He said \"never again\" to the press.", &docs));
    }

    #[test]
    fn parse_label_variants() {
        let labels = ["A", "B", "C", "D"];
        assert_eq!(parse_option_label("The answer is (B)", &labels).as_deref(), Some("B"));
        assert_eq!(parse_option_label("b.", &labels).as_deref(), Some("B"));
        assert_eq!(parse_option_label("answer is c", &labels).as_deref(), Some("C"));
        assert_eq!(parse_option_label("D", &labels).as_deref(), Some("D"));
        assert_eq!(parse_option_label("no label here", &labels), None);
    }

    #[test]
    fn parse_label_never_invents() {
        // "(E)" is not a configured option.
        assert_eq!(parse_option_label("The answer is (E)", &["A", "B"]), None);
    }

    #[test]
    fn parse_label_first_match_wins() {
        let labels = ["A", "B"];
        assert_eq!(
            parse_option_label("(A) seems right, not (B)", &labels).as_deref(),
            Some("A")
        );
    }

    #[test]
    fn scripted_summarize_round_trip() {
        let mock = MockBackend::from_entries([("summarizer", "q1", "The film was made in 1972.")]);
        let prompts = PromptSet::builtin_v1();
        let suite = AgentSuite::new(&mock, &prompts, "m", DecodeParams::default(), TaskKind::Odqa);
        let q = query("q1", "when was the film made?");
        let resp = suite.summarize(&q, &q.documents).unwrap();
        assert_eq!(resp.kind, FilterKind::Summary);
        assert_eq!(resp.text, "The film was made in 1972.");
        assert_eq!(resp.source_query_id, "q1");
    }

    #[test]
    fn extract_sets_verbatim_flag_and_counts_retry() {
        // Mock always returns a paraphrase, so the retry also fails and the
        // response is accepted with verbatim_ok = false after 1 retry.
        let mock = MockBackend::from_entries([("extractor", "q1", "Orwell authored 1984")]);
        let prompts = PromptSet::builtin_v1();
        let suite = AgentSuite::new(&mock, &prompts, "m", DecodeParams::default(), TaskKind::Odqa);
        let q = query("q1", "when was 1984 written?");
        let out = suite.extract(&q, &q.documents).unwrap();
        assert_eq!(out.response.verbatim_ok, Some(false));
        assert_eq!(out.retries, 1);
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn extract_verbatim_costs_no_retry() {
        let mock = MockBackend::from_entries([(
            "extractor",
            "q1",
            "George Orwell wrote 1984 in 1948.",
        )]);
        let prompts = PromptSet::builtin_v1();
        let suite = AgentSuite::new(&mock, &prompts, "m", DecodeParams::default(), TaskKind::Odqa);
        let q = query("q1", "when was 1984 written?");
        let out = suite.extract(&q, &q.documents).unwrap();
        assert_eq!(out.response.verbatim_ok, Some(true));
        assert_eq!(out.retries, 0);
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn synthesize_prompt_is_input_order_invariant() {
        let mk = |kind, text: &str| CandidateAnswer {
            kind,
            text: text.into(),
        };
        let a = [
            mk(FilterKind::Reasoning, "rr"),
            mk(FilterKind::Summary, "ss"),
            mk(FilterKind::Extraction, "ee"),
        ];
        let b = [
            mk(FilterKind::Summary, "ss"),
            mk(FilterKind::Extraction, "ee"),
            mk(FilterKind::Reasoning, "rr"),
        ];
        let ordered_a = ordered_by_kind(&a, |c| c.kind).unwrap();
        let ordered_b = ordered_by_kind(&b, |c| c.kind).unwrap();
        let block_a = numbered_block(ordered_a.iter().map(|c| c.text.as_str()));
        let block_b = numbered_block(ordered_b.iter().map(|c| c.text.as_str()));
        assert_eq!(block_a, block_b);
        assert_eq!(block_a, "[1] ss\n[2] ee\n[3] rr");
    }

    #[test]
    fn synthesize_rejects_two_inputs() {
        let mock = MockBackend::empty();
        let prompts = PromptSet::builtin_v1();
        let suite = AgentSuite::new(&mock, &prompts, "m", DecodeParams::default(), TaskKind::Odqa);
        let q = query("q1", "who?");
        let two = [
            CandidateAnswer {
                kind: FilterKind::Summary,
                text: "a".into(),
            },
            CandidateAnswer {
                kind: FilterKind::Extraction,
                text: "b".into(),
            },
        ];
        let err = suite
            .synthesize(&q, SynthesisInputs::Candidates(&two))
            .unwrap_err();
        assert!(matches!(err, AgentError::BadSynthesisInputs));
    }

    #[test]
    fn closed_set_synthesis_parses_label() {
        let mock = MockBackend::from_entries([("synthesis", "q1", "The answer is (B)")]);
        let prompts = PromptSet::builtin_v1();
        let suite = AgentSuite::new(
            &mock,
            &prompts,
            "m",
            DecodeParams::default(),
            TaskKind::ClosedSet,
        );
        let mut q = query("q1", "which one?");
        q.task_kind = TaskKind::ClosedSet;
        q.gold_option = Some("B".into());
        q.options = (b'A'..=b'D')
            .map(|c| ChoiceOption {
                label: (c as char).to_string(),
                text: format!("option {}", c as char),
            })
            .collect();
        let mk = |kind| FilteredResponse {
            kind,
            text: format!("{kind} view"),
            verbatim_ok: (kind == FilterKind::Extraction).then_some(true),
            source_query_id: "q1".into(),
        };
        let views = [
            mk(FilterKind::Summary),
            mk(FilterKind::Extraction),
            mk(FilterKind::Reasoning),
        ];
        let refs: Vec<&FilteredResponse> = views.iter().collect();
        let label = suite
            .synthesize(&q, SynthesisInputs::Evidence(&refs))
            .unwrap();
        assert_eq!(label, "B");
    }
}
