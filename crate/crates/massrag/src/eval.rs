//! Metrics and analyses: accuracy, str-em, ROUGE-L, evidence coverage
//! rate (ECR), per-agent accuracy, and the uniquely-attributable-subset
//! construction.
//!
//! Everything here is a pure function over immutable inputs; aggregates
//! are means of per-query values and do not depend on query order.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{FilterKind, PipelineConfig, PipelineResult, Query, TaskKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric undefined over an empty query set")]
    EmptyQuerySet,
    #[error("result for query {0} has no matching dataset entry")]
    UnknownQueryId(String),
    #[error("query {0} lacks an indicator for kind {1}")]
    MissingIndicator(String, FilterKind),
}

/// Text normalization applied before substring matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Casefold and collapse whitespace; punctuation preserved.
    #[default]
    CasefoldWs,
    /// Casefold, collapse whitespace, and strip punctuation.
    CasefoldWsPunct,
}

impl Normalization {
    pub fn apply(self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut last_space = true;
        for ch in text.chars() {
            if ch.is_whitespace() {
                if !last_space {
                    out.push(' ');
                    last_space = true;
                }
                continue;
            }
            if self == Normalization::CasefoldWsPunct && ch.is_ascii_punctuation() {
                continue;
            }
            for low in ch.to_lowercase() {
                out.push(low);
            }
            last_space = false;
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out
    }
}

/// True iff any normalized gold answer occurs as a substring of the
/// normalized prediction.
pub fn accuracy(pred: &str, golds: &[String], norm: Normalization) -> bool {
    let pred = norm.apply(pred);
    golds
        .iter()
        .any(|g| !g.is_empty() && pred.contains(&norm.apply(g)))
}

/// Fraction of gold groups with at least one member occurring in the
/// prediction.
pub fn str_em(pred: &str, gold_groups: &[Vec<String>], norm: Normalization) -> f64 {
    if gold_groups.is_empty() {
        return 0.0;
    }
    let pred = norm.apply(pred);
    let covered = gold_groups
        .iter()
        .filter(|group| {
            group
                .iter()
                .any(|g| !g.is_empty() && pred.contains(&norm.apply(g)))
        })
        .count();
    covered as f64 / gold_groups.len() as f64
}

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[a-z0-9]+").unwrap());

fn tokenize(text: &str) -> Vec<String> {
    TOKEN_RE
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                curr[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-L F1 with casefolded alphanumeric tokenization.
pub fn rouge_l(pred: &str, reference: &str) -> f64 {
    let p = tokenize(&pred.to_lowercase());
    let r = tokenize(&reference.to_lowercase());
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&p, &r) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / p.len() as f64;
    let recall = lcs / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Per-query truth table: does each filter response contain ground-truth
/// evidence?
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorRow {
    pub query_id: String,
    pub captured: BTreeMap<FilterKind, bool>,
}

/// Build the indicator table from pipeline results and their queries,
/// using normalized gold-substring matching as the relevance indicator.
pub fn indicator_table(
    results: &[PipelineResult],
    queries_by_id: &BTreeMap<&str, &Query>,
    norm: Normalization,
) -> Result<Vec<IndicatorRow>, EvalError> {
    results
        .iter()
        .map(|r| {
            let q = queries_by_id
                .get(r.query_id.as_str())
                .ok_or_else(|| EvalError::UnknownQueryId(r.query_id.clone()))?;
            let golds = effective_golds(q);
            let captured = FilterKind::ALL
                .iter()
                .map(|k| {
                    let text = r.filtered.get(k).map(|f| f.text.as_str()).unwrap_or("");
                    (*k, accuracy(text, &golds, norm))
                })
                .collect();
            Ok(IndicatorRow {
                query_id: r.query_id.clone(),
                captured,
            })
        })
        .collect()
}

/// Evidence coverage rate of an agent set: the fraction of queries where
/// at least one kind in the set captured ground-truth evidence.
pub fn ecr(agent_set: &[FilterKind], table: &[IndicatorRow]) -> Result<f64, EvalError> {
    if table.is_empty() {
        return Err(EvalError::EmptyQuerySet);
    }
    let mut covered = 0usize;
    for row in table {
        let mut any = false;
        for kind in agent_set {
            let hit = row
                .captured
                .get(kind)
                .ok_or_else(|| EvalError::MissingIndicator(row.query_id.clone(), *kind))?;
            any |= hit;
        }
        if any {
            covered += 1;
        }
    }
    Ok(covered as f64 / table.len() as f64)
}

/// The seven non-empty agent subsets, in report order.
pub fn agent_subsets() -> Vec<Vec<FilterKind>> {
    use FilterKind::*;
    vec![
        vec![Summary],
        vec![Extraction],
        vec![Reasoning],
        vec![Summary, Extraction],
        vec![Summary, Reasoning],
        vec![Extraction, Reasoning],
        vec![Summary, Extraction, Reasoning],
    ]
}

/// Short key for a subset, e.g. "s+e+r".
pub fn subset_key(set: &[FilterKind]) -> String {
    set.iter()
        .map(|k| k.short())
        .collect::<Vec<_>>()
        .join("+")
}

/// Queries whose evidence is captured by exactly one filter kind.
pub fn uniquely_attributable_subset(table: &[IndicatorRow]) -> Vec<String> {
    table
        .iter()
        .filter(|row| row.captured.values().filter(|v| **v).count() == 1)
        .map(|row| row.query_id.clone())
        .collect()
}

/// Gold strings used for substring scoring: answer list for odqa and
/// long-form, the option label plus its text for closed-set.
pub fn effective_golds(q: &Query) -> Vec<String> {
    match q.task_kind {
        TaskKind::ClosedSet => {
            let label = q.gold_option.clone().unwrap_or_default();
            let mut golds = vec![label.clone()];
            if let Some(opt) = q.options.iter().find(|o| o.label == label) {
                golds.push(opt.text.clone());
            }
            golds
        }
        _ => q.gold_answers.clone(),
    }
}

/// Is this final answer correct for its query? Closed-set compares option
/// labels case-insensitively; everything else uses substring accuracy.
pub fn final_answer_correct(pred: &str, q: &Query, norm: Normalization) -> bool {
    match q.task_kind {
        TaskKind::ClosedSet => q
            .gold_option
            .as_deref()
            .is_some_and(|gold| pred.trim().eq_ignore_ascii_case(gold)),
        _ => accuracy(pred, &q.gold_answers, norm),
    }
}

/// Accuracy of each filter response text and of the synthesis output,
/// all scored by the substring-accuracy op against the same golds.
pub fn per_agent_accuracy(
    results: &[PipelineResult],
    queries_by_id: &BTreeMap<&str, &Query>,
    norm: Normalization,
) -> Result<BTreeMap<String, f64>, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyQuerySet);
    }
    let mut hits: BTreeMap<String, usize> = BTreeMap::new();
    for r in results {
        let q = queries_by_id
            .get(r.query_id.as_str())
            .ok_or_else(|| EvalError::UnknownQueryId(r.query_id.clone()))?;
        let golds = effective_golds(q);
        for kind in FilterKind::ALL {
            let text = r
                .filtered
                .get(&kind)
                .map(|f| f.text.as_str())
                .unwrap_or("");
            if accuracy(text, &golds, norm) {
                *hits.entry(kind.to_string()).or_default() += 1;
            }
        }
        if final_answer_correct(&r.final_answer, q, norm) {
            *hits.entry("synthesis".into()).or_default() += 1;
        }
    }
    let n = results.len() as f64;
    let mut out = BTreeMap::new();
    for key in ["summary", "extraction", "reasoning", "synthesis"] {
        out.insert(key.to_string(), *hits.get(key).unwrap_or(&0) as f64 / n);
    }
    Ok(out)
}

/// Per-dataset evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub task_kind: TaskKind,
    pub n: usize,
    pub n_failures: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub str_em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    pub per_agent_accuracy: BTreeMap<String, f64>,
    pub ecr: BTreeMap<String, f64>,
    pub uas_size: usize,
    pub normalization: Normalization,
    pub config_echo: PipelineConfig,
}

/// Join results to their queries and compute the full report. Queries in
/// `failed_ids` are counted into `n` as incorrect.
pub fn build_report(
    dataset: &str,
    task_kind: TaskKind,
    queries: &[Query],
    results: &[PipelineResult],
    failed_ids: &[String],
    cfg: &PipelineConfig,
    norm: Normalization,
) -> Result<EvalReport, EvalError> {
    let by_id: BTreeMap<&str, &Query> =
        queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let n = results.len() + failed_ids.len();
    if n == 0 {
        return Err(EvalError::EmptyQuerySet);
    }
    let mut correct = 0usize;
    let mut str_em_sum = 0.0;
    let mut rouge_sum = 0.0;
    for r in results {
        let q = by_id
            .get(r.query_id.as_str())
            .ok_or_else(|| EvalError::UnknownQueryId(r.query_id.clone()))?;
        if final_answer_correct(&r.final_answer, q, norm) {
            correct += 1;
        }
        if task_kind == TaskKind::LongForm {
            let groups: Vec<Vec<String>> = q.gold_groups.clone().unwrap_or_else(|| {
                q.gold_answers.iter().map(|a| vec![a.clone()]).collect()
            });
            str_em_sum += str_em(&r.final_answer, &groups, norm);
            let reference = q
                .reference
                .clone()
                .or_else(|| {
                    q.gold_answers
                        .iter()
                        .max_by_key(|a| a.len())
                        .cloned()
                })
                .unwrap_or_default();
            rouge_sum += rouge_l(&r.final_answer, &reference);
        }
    }
    let table = indicator_table(results, &by_id, norm)?;
    let mut ecr_map = BTreeMap::new();
    if !table.is_empty() {
        for set in agent_subsets() {
            ecr_map.insert(subset_key(&set), ecr(&set, &table)?);
        }
    }
    let uas = uniquely_attributable_subset(&table);
    let per_agent = if results.is_empty() {
        BTreeMap::new()
    } else {
        per_agent_accuracy(results, &by_id, norm)?
    };
    Ok(EvalReport {
        dataset: dataset.to_string(),
        task_kind,
        n,
        n_failures: failed_ids.len(),
        accuracy: correct as f64 / n as f64,
        str_em: (task_kind == TaskKind::LongForm && !results.is_empty())
            .then(|| str_em_sum / n as f64),
        rouge_l: (task_kind == TaskKind::LongForm && !results.is_empty())
            .then(|| rouge_sum / n as f64),
        per_agent_accuracy: per_agent,
        ecr: ecr_map,
        uas_size: uas.len(),
        normalization: norm,
        config_echo: cfg.clone(),
    })
}

impl EvalReport {
    /// Human-readable summary table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "dataset: {} ({}), n = {} ({} failures)\n",
            self.dataset, self.task_kind, self.n, self.n_failures
        ));
        out.push_str(&format!("accuracy      {:.4}\n", self.accuracy));
        if let Some(em) = self.str_em {
            out.push_str(&format!("str-em        {em:.4}\n"));
        }
        if let Some(rg) = self.rouge_l {
            out.push_str(&format!("rouge-l       {rg:.4}\n"));
        }
        out.push_str("per-agent accuracy:\n");
        for (agent, acc) in &self.per_agent_accuracy {
            out.push_str(&format!("  {agent:<12} {acc:.4}\n"));
        }
        out.push_str("ecr:\n");
        for set in agent_subsets() {
            let key = subset_key(&set);
            if let Some(v) = self.ecr.get(&key) {
                out.push_str(&format!("  {key:<12} {v:.4}\n"));
            }
        }
        out.push_str(&format!("uas size      {}\n", self.uas_size));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_substring_containment() {
        let golds = vec!["Francis Ford Coppola".to_string()];
        assert!(accuracy(
            "It was Francis Ford Coppola.",
            &golds,
            Normalization::CasefoldWs
        ));
        assert!(!accuracy("unknown", &["Paris".into()], Normalization::CasefoldWs));
        assert!(accuracy(
            "paris, france",
            &["Paris".into()],
            Normalization::CasefoldWs
        ));
    }

    #[test]
    fn punctuation_stripping_variant() {
        assert!(!accuracy(
            "U.S.A",
            &["USA".into()],
            Normalization::CasefoldWs
        ));
        assert!(accuracy(
            "U.S.A",
            &["USA".into()],
            Normalization::CasefoldWsPunct
        ));
    }

    #[test]
    fn str_em_fractions() {
        let norm = Normalization::CasefoldWs;
        let groups = vec![vec!["A1".to_string()], vec!["B1".to_string()]];
        assert_eq!(str_em("contains a1 only", &groups, norm), 0.5);
        assert_eq!(str_em("a1 and b1", &groups, norm), 1.0);
        assert_eq!(str_em("neither", &groups, norm), 0.0);
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        assert!((rouge_l("a b c", "a b c") - 1.0).abs() < 1e-12);
        assert_eq!(rouge_l("a b c", "x y z"), 0.0);
    }

    #[test]
    fn rouge_hand_computed_case() {
        // pred "a b c d", ref "a c d e": LCS = 3, P = R = 3/4, F = 0.75.
        assert!((rouge_l("a b c d", "a c d e") - 0.75).abs() < 1e-12);
    }

    fn row(id: &str, s: bool, e: bool, r: bool) -> IndicatorRow {
        let mut captured = BTreeMap::new();
        captured.insert(FilterKind::Summary, s);
        captured.insert(FilterKind::Extraction, e);
        captured.insert(FilterKind::Reasoning, r);
        IndicatorRow {
            query_id: id.into(),
            captured,
        }
    }

    #[test]
    fn ecr_all_and_none() {
        let all = vec![row("a", true, false, false), row("b", true, true, false)];
        assert_eq!(ecr(&[FilterKind::Summary], &all).unwrap(), 1.0);
        let none = vec![row("a", false, false, false)];
        assert_eq!(ecr(&[FilterKind::Summary], &none).unwrap(), 0.0);
    }

    #[test]
    fn ecr_two_of_three() {
        let table = vec![
            row("a", true, false, false),
            row("b", true, false, false),
            row("c", false, false, false),
        ];
        let got = ecr(&[FilterKind::Summary], &table).unwrap();
        assert!((got - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ecr_empty_set_is_an_error() {
        assert!(matches!(
            ecr(&[FilterKind::Summary], &[]),
            Err(EvalError::EmptyQuerySet)
        ));
    }

    #[test]
    fn uas_exactly_one_rule() {
        let table = vec![
            row("in", true, false, false),
            row("multi", true, true, false),
            row("none", false, false, false),
        ];
        assert_eq!(uniquely_attributable_subset(&table), vec!["in".to_string()]);
    }
}
