//! Per-query orchestration: top-k selection, concurrent filter fan-out,
//! optional answer fan-out, synthesis, and call accounting.
//!
//! Failures are isolated per query; a dataset run never aborts because one
//! query hit a backend error.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentSuite, PromptSet, SynthesisInputs};
use crate::backend::ChatBackend;
use crate::core::{
    CandidateAnswer, Document, FilterKind, FilteredResponse, PipelineConfig, PipelineResult,
    Query,
};

/// Calls per query: 3 filters + synthesis, plus 3 answer calls when the
/// answer agent is enabled.
pub const CALLS_WITH_ANSWER_AGENT: u32 = 7;
pub const CALLS_WITHOUT_ANSWER_AGENT: u32 = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("query {0} has no retrieved documents")]
    EmptyRetrieval(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// Per-query failure record, one line in the failure log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub query_id: String,
    pub stage: String,
    pub error_kind: String,
    pub message: String,
}

pub type QueryOutcome = Result<PipelineResult, QueryFailure>;

/// Select the first min(k, n) documents by rank, then drop lowest-ranked
/// documents until the rendered context fits the character budget. The
/// rank-1 document is always kept so the pipeline has something to work
/// with.
pub fn select_top_k(
    q: &Query,
    k: u32,
    max_context_chars: usize,
) -> Result<Vec<Document>, PipelineError> {
    if q.documents.is_empty() {
        return Err(PipelineError::EmptyRetrieval(q.query_id.clone()));
    }
    let take = (k as usize).min(q.documents.len());
    let mut selected = Vec::with_capacity(take);
    let mut used = 0usize;
    for doc in &q.documents[..take] {
        let block_len = crate::agents::render_document(doc).chars().count() + 1;
        if !selected.is_empty() && used + block_len > max_context_chars {
            break;
        }
        used += block_len;
        selected.push(doc.clone());
    }
    Ok(selected)
}

/// Everything a run needs besides the per-run config: the backend, the
/// prompt set, and the model name sent on the wire.
pub struct Engine<'a> {
    pub backend: &'a dyn ChatBackend,
    pub prompts: &'a PromptSet,
    pub model_name: String,
}

impl Engine<'_> {
    /// Run one query end to end. The three filter calls fan out
    /// concurrently, then (optionally) the three answer calls, then
    /// synthesis.
    pub fn run_query(&self, q: &Query, cfg: &PipelineConfig) -> QueryOutcome {
        let cfg = cfg.normalized_for(q.task_kind);
        let fail = |stage: &str, err: &dyn std::fmt::Display, kind: &str| QueryFailure {
            query_id: q.query_id.clone(),
            stage: stage.into(),
            error_kind: kind.into(),
            message: err.to_string(),
        };

        let docs = select_top_k(q, cfg.top_k_docs, cfg.max_context_chars)
            .map_err(|e| fail("select", &e, "empty_retrieval"))?;

        let suite = AgentSuite::new(
            self.backend,
            self.prompts,
            &self.model_name,
            cfg.decode.clone(),
            q.task_kind,
        );

        // Filter fan-out. Errors are surfaced in canonical kind order so
        // the failure record does not depend on thread scheduling.
        let (summary_res, extract_res, reason_res) = std::thread::scope(|s| {
            let h_sum = s.spawn(|| suite.summarize(q, &docs));
            let h_ext = s.spawn(|| suite.extract(q, &docs));
            let h_rea = s.spawn(|| suite.reason(q, &docs));
            (
                h_sum.join().expect("summarizer thread"),
                h_ext.join().expect("extractor thread"),
                h_rea.join().expect("reasoner thread"),
            )
        });
        let summary = summary_res.map_err(|e| fail("summary", &e, agent_error_kind(&e)))?;
        let extraction = extract_res.map_err(|e| fail("extraction", &e, agent_error_kind(&e)))?;
        let reasoning = reason_res.map_err(|e| fail("reasoning", &e, agent_error_kind(&e)))?;
        let verbatim_retries = extraction.retries;
        let extraction = extraction.response;

        let mut filtered = BTreeMap::new();
        filtered.insert(FilterKind::Summary, summary);
        filtered.insert(FilterKind::Extraction, extraction);
        filtered.insert(FilterKind::Reasoning, reasoning);

        // Answer fan-out is issued only after all three filter responses
        // exist; synthesis only after its inputs exist.
        let (candidates, final_answer) = if cfg.use_answer_agent {
            let views: Vec<&FilteredResponse> =
                FilterKind::ALL.iter().map(|k| &filtered[k]).collect();
            let answers: Vec<Result<CandidateAnswer, AgentError>> = std::thread::scope(|s| {
                let handles: Vec<_> = views
                    .iter()
                    .map(|&view| {
                        let suite = &suite;
                        s.spawn(move || suite.answer(q, view))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("answer thread"))
                    .collect()
            });
            let mut cands = Vec::with_capacity(3);
            for (kind, res) in FilterKind::ALL.iter().zip(answers) {
                cands.push(res.map_err(|e| {
                    fail(&format!("answer_{}", kind.short()), &e, agent_error_kind(&e))
                })?);
            }
            let final_answer =
                match suite.synthesize(q, SynthesisInputs::Candidates(&cands)) {
                    Ok(ans) => ans,
                    Err(AgentError::UnparseableAnswer { text }) => {
                        eprintln!(
                            "warning: query {} synthesis output unparseable, scored incorrect: {text:?}",
                            q.query_id
                        );
                        String::new()
                    }
                    Err(e) => return Err(fail("synthesis", &e, agent_error_kind(&e))),
                };
            let map: BTreeMap<FilterKind, CandidateAnswer> =
                cands.into_iter().map(|c| (c.kind, c)).collect();
            (Some(map), final_answer)
        } else {
            let views: Vec<&FilteredResponse> =
                FilterKind::ALL.iter().map(|k| &filtered[k]).collect();
            let final_answer = match suite.synthesize(q, SynthesisInputs::Evidence(&views)) {
                Ok(ans) => ans,
                Err(AgentError::UnparseableAnswer { text }) => {
                    eprintln!(
                        "warning: query {} synthesis output unparseable, scored incorrect: {text:?}",
                        q.query_id
                    );
                    String::new()
                }
                Err(e) => return Err(fail("synthesis", &e, agent_error_kind(&e))),
            };
            (None, final_answer)
        };

        let agent_calls = if candidates.is_some() {
            CALLS_WITH_ANSWER_AGENT
        } else {
            CALLS_WITHOUT_ANSWER_AGENT
        };
        let result = PipelineResult {
            query_id: q.query_id.clone(),
            filtered,
            candidates,
            final_answer,
            agent_calls,
            verbatim_retries,
            backend_fingerprint: self.backend.fingerprint(),
        };
        debug_assert!(result.check_invariants().is_ok());
        Ok(result)
    }

    /// Run every query with bounded across-query parallelism. Outcomes are
    /// returned in input order; `on_item` is invoked in input order as
    /// soon as each prefix completes, so results can be persisted
    /// incrementally without the file depending on the schedule.
    pub fn run_dataset<F>(
        &self,
        queries: &[Query],
        cfg: &PipelineConfig,
        parallelism: usize,
        on_item: F,
    ) -> Vec<QueryOutcome>
    where
        F: Fn(usize, &QueryOutcome) + Sync,
    {
        let parallelism = parallelism.max(1);
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<QueryOutcome>>> = Mutex::new(vec![None; queries.len()]);
        let emit_next = Mutex::new(0usize);

        std::thread::scope(|s| {
            for _ in 0..parallelism.min(queries.len().max(1)) {
                s.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::SeqCst);
                    if idx >= queries.len() {
                        break;
                    }
                    let outcome = self.run_query(&queries[idx], cfg);
                    slots.lock().unwrap()[idx] = Some(outcome);
                    // Flush the completed prefix in input order.
                    let mut cursor = emit_next.lock().unwrap();
                    let slots = slots.lock().unwrap();
                    while *cursor < queries.len() {
                        match &slots[*cursor] {
                            Some(done) => {
                                on_item(*cursor, done);
                                *cursor += 1;
                            }
                            None => break,
                        }
                    }
                });
            }
        });

        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|slot| slot.expect("every query produced an outcome"))
            .collect()
    }
}

fn agent_error_kind(e: &AgentError) -> &'static str {
    match e {
        AgentError::Backend { .. } => "backend",
        AgentError::EmptyOutput { .. } => "empty_output",
        AgentError::UnparseableAnswer { .. } => "unparseable_answer",
        AgentError::BadSynthesisInputs => "bad_inputs",
        AgentError::Template { .. } | AgentError::PromptSetIo(..) => "template",
    }
}
