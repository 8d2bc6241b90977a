//! Command-line entry points: reproducible runs, evaluation reports,
//! coverage analyses, and ablations. All inputs come from flags, a config
//! file, and environment variables; there is no interactive mode.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agents::PromptSet;
use crate::backend::{CachedBackend, ChatBackend, HttpBackend, HttpConfig, MockBackend};
use crate::core::{DecodeParams, PipelineConfig, PipelineResult, Query, TaskKind};
use crate::data::load_dataset;
use crate::eval::{
    agent_subsets, build_report, ecr, indicator_table, subset_key, uniquely_attributable_subset,
    Normalization,
};
use crate::pipeline::Engine;

/// Exit codes: 0 success, 2 config error, 3 data error, 4 storage error.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_STORAGE: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Storage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Storage(_) => EXIT_STORAGE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Storage(m) => write!(f, "storage error: {m}"),
        }
    }
}

// --- config file ----------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub decode: DecodeSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
}

fn default_model() -> String {
    "default".into()
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            base_url: None,
            model: default_model(),
            mock_script: None,
            cache_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Mock,
    Http,
    CachedHttp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default = "default_top_k")]
    pub top_k: u32,
    #[serde(default)]
    pub answer_agent: AnswerAgentMode,
    #[serde(default = "default_prompt_set")]
    pub prompt_set: String,
    #[serde(default)]
    pub prompt_dir: Option<PathBuf>,
    #[serde(default = "default_max_context_chars")]
    pub max_context_chars: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_top_k() -> u32 {
    10
}
fn default_prompt_set() -> String {
    "v1".into()
}
fn default_max_context_chars() -> usize {
    24_000
}
fn default_parallelism() -> usize {
    4
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            top_k: default_top_k(),
            answer_agent: AnswerAgentMode::Auto,
            prompt_set: default_prompt_set(),
            prompt_dir: None,
            max_context_chars: default_max_context_chars(),
            parallelism: default_parallelism(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerAgentMode {
    On,
    Off,
    /// Task-kind defaults: on for odqa, off for long-form and closed-set.
    #[default]
    Auto,
}

impl AnswerAgentMode {
    pub fn resolve(self, task: TaskKind) -> bool {
        match self {
            AnswerAgentMode::On => true,
            AnswerAgentMode::Off => false,
            AnswerAgentMode::Auto => task == TaskKind::Odqa,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
}

fn default_top_p() -> f64 {
    1.0
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            temperature: 0.0,
            top_p: default_top_p(),
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let content = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&content)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

// --- argument parsing -----------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "massrag",
    about = "Multi-agent evidence filtering and synthesis over pre-retrieved documents",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Config file (TOML); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file, one JSON record per line.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Task kind of the dataset.
    #[arg(long, value_enum)]
    pub task_kind: TaskKindArg,
    /// Output directory for manifest, results, failures and reports.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub top_k: Option<u32>,
    #[arg(long, value_enum)]
    pub answer_agent: Option<AnswerAgentMode>,
    #[arg(long)]
    pub prompt_set: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline over a dataset.
    Run(RunArgs),
    /// Compute metrics over a results file.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        task_kind: TaskKindArg,
        /// Failure log; failed queries are scored incorrect.
        #[arg(long)]
        failures: Option<PathBuf>,
        /// Where to write the report JSON (defaults next to the results).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Strip punctuation before substring matching.
        #[arg(long)]
        strip_punct: bool,
    },
    /// Evidence coverage rate table for every filter-agent subset.
    Ecr {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        task_kind: TaskKindArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Queries captured by exactly one filter agent.
    Subset {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        task_kind: TaskKindArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a configuration sweep over one shared cache.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        task_kind: TaskKindArg,
        #[arg(long, value_enum)]
        axis: AblationAxis,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        #[arg(long)]
        mock_script: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskKindArg {
    Odqa,
    LongForm,
    ClosedSet,
}

impl From<TaskKindArg> for TaskKind {
    fn from(t: TaskKindArg) -> TaskKind {
        match t {
            TaskKindArg::Odqa => TaskKind::Odqa,
            TaskKindArg::LongForm => TaskKind::LongForm,
            TaskKindArg::ClosedSet => TaskKind::ClosedSet,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationAxis {
    AnswerAgent,
    TopK,
}

// --- run ------------------------------------------------------------------

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Built backend plus handles for cache statistics.
enum BuiltBackend {
    Mock(MockBackend),
    Http(HttpBackend),
    Cached(CachedBackend<HttpBackend>),
}

impl BuiltBackend {
    fn as_chat(&self) -> &dyn ChatBackend {
        match self {
            BuiltBackend::Mock(b) => b,
            BuiltBackend::Http(b) => b,
            BuiltBackend::Cached(b) => b,
        }
    }

    fn cache_stats(&self) -> Option<(u64, u64)> {
        match self {
            BuiltBackend::Cached(b) => Some((b.hits(), b.misses())),
            _ => None,
        }
    }
}

fn build_backend(cfg: &BackendConfig, out_dir: Option<&Path>) -> Result<BuiltBackend, CliError> {
    match cfg.kind {
        BackendKind::Mock => {
            let script = cfg.backend_script()?;
            let mock = MockBackend::load(&script)
                .map_err(|e| CliError::Config(format!("backend.mock_script: {e}")))?;
            Ok(BuiltBackend::Mock(mock))
        }
        BackendKind::Http => {
            let http = HttpConfig::resolve(cfg.base_url.clone(), cfg.model.clone())
                .and_then(HttpBackend::new)
                .map_err(|e| CliError::Config(format!("backend: {e}")))?;
            Ok(BuiltBackend::Http(http))
        }
        BackendKind::CachedHttp => {
            let http = HttpConfig::resolve(cfg.base_url.clone(), cfg.model.clone())
                .and_then(HttpBackend::new)
                .map_err(|e| CliError::Config(format!("backend: {e}")))?;
            let cache_path = cfg
                .cache_path
                .clone()
                .or_else(|| out_dir.map(|d| d.join("cache.jsonl")))
                .ok_or_else(|| {
                    CliError::Config("backend.cache_path: required for cached-http".into())
                })?;
            let cached = CachedBackend::open(http, &cache_path)
                .map_err(|e| CliError::Storage(format!("backend.cache_path: {e}")))?;
            Ok(BuiltBackend::Cached(cached))
        }
    }
}

impl BackendConfig {
    fn backend_script(&self) -> Result<PathBuf, CliError> {
        self.mock_script
            .clone()
            .ok_or_else(|| CliError::Config("backend.mock_script: required for mock".into()))
    }
}

fn load_prompts(section: &PipelineSection) -> Result<PromptSet, CliError> {
    match (&section.prompt_dir, section.prompt_set.as_str()) {
        (None, "v1") => Ok(PromptSet::builtin_v1()),
        (None, other) => Err(CliError::Config(format!(
            "pipeline.prompt_set: unknown built-in set {other:?}; set pipeline.prompt_dir to load from disk"
        ))),
        (Some(dir), id) => PromptSet::load(&dir.join(id), id)
            .map_err(|e| CliError::Config(format!("pipeline.prompt_dir: {e}"))),
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    schema_version: u32,
    started_at_unix: u64,
    finished_at_unix: u64,
    dataset: String,
    task_kind: TaskKind,
    n_queries: usize,
    n_results: usize,
    n_failures: usize,
    parallelism: usize,
    prompt_set_id: &'a str,
    backend_fingerprint: String,
    config_echo: &'a FileConfig,
    pipeline_config: &'a PipelineConfig,
    total_agent_calls: u64,
    total_verbatim_retries: u64,
    stage_call_counts: BTreeMap<String, u64>,
    cache_hits: Option<u64>,
    cache_misses: Option<u64>,
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut file_cfg = FileConfig::load(args.config.as_deref())?;
    if let Some(kind) = args.backend {
        file_cfg.backend.kind = kind;
    }
    if let Some(script) = &args.mock_script {
        file_cfg.backend.mock_script = Some(script.clone());
    }
    if let Some(p) = args.parallelism {
        file_cfg.pipeline.parallelism = p;
    }
    if let Some(k) = args.top_k {
        file_cfg.pipeline.top_k = k;
    }
    if let Some(mode) = args.answer_agent {
        file_cfg.pipeline.answer_agent = mode;
    }
    if let Some(set) = &args.prompt_set {
        file_cfg.pipeline.prompt_set = set.clone();
    }
    let task_kind: TaskKind = args.task_kind.into();

    let started = now_unix();
    let loaded = load_dataset(&args.dataset, task_kind)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.dataset.display())))?;
    for issue in &loaded.issues {
        eprintln!(
            "warning: {} line {}: {}",
            args.dataset.display(),
            issue.line,
            issue.message
        );
    }
    eprintln!(
        "loaded {} queries from {}",
        loaded.queries.len(),
        args.dataset.display()
    );

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Storage(format!("{}: {e}", args.out.display())))?;
    std::fs::create_dir_all(args.out.join("reports"))
        .map_err(|e| CliError::Storage(e.to_string()))?;
    std::fs::create_dir_all(args.out.join("plotdata"))
        .map_err(|e| CliError::Storage(e.to_string()))?;

    let backend = build_backend(&file_cfg.backend, Some(&args.out))?;
    let prompts = load_prompts(&file_cfg.pipeline)?;
    let pipeline_cfg = PipelineConfig {
        top_k_docs: file_cfg.pipeline.top_k,
        use_answer_agent: file_cfg.pipeline.answer_agent.resolve(task_kind),
        decode: DecodeParams {
            temperature: file_cfg.decode.temperature,
            top_p: file_cfg.decode.top_p,
            max_tokens: 256,
        },
        prompt_set_id: prompts.id.clone(),
        max_context_chars: file_cfg.pipeline.max_context_chars,
    };

    let (outcomes, write_err) = {
        let results_file = std::fs::File::create(args.out.join("results.jsonl"))
            .map_err(|e| CliError::Storage(e.to_string()))?;
        let failures_file = std::fs::File::create(args.out.join("failures.jsonl"))
            .map_err(|e| CliError::Storage(e.to_string()))?;
        let writer = Mutex::new((results_file, failures_file, None::<std::io::Error>));
        let engine = Engine {
            backend: backend.as_chat(),
            prompts: &prompts,
            model_name: file_cfg.backend.model.clone(),
        };
        let outcomes = engine.run_dataset(
            &loaded.queries,
            &pipeline_cfg,
            file_cfg.pipeline.parallelism,
            |_, outcome| {
                let mut guard = writer.lock().unwrap();
                let (results_file, failures_file, err) = &mut *guard;
                if err.is_some() {
                    return;
                }
                let write = match outcome {
                    Ok(result) => serde_json::to_string(result)
                        .map_err(std::io::Error::other)
                        .and_then(|line| writeln!(results_file, "{line}")),
                    Err(failure) => serde_json::to_string(failure)
                        .map_err(std::io::Error::other)
                        .and_then(|line| writeln!(failures_file, "{line}")),
                };
                if let Err(e) = write {
                    *err = Some(e);
                }
            },
        );
        let (_, _, err) = writer.into_inner().unwrap();
        (outcomes, err)
    };
    if let Some(e) = write_err {
        return Err(CliError::Storage(format!("writing results: {e}")));
    }

    let results: Vec<&PipelineResult> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let n_failures = outcomes.len() - results.len();
    let total_agent_calls: u64 = results.iter().map(|r| r.agent_calls as u64).sum();
    let total_retries: u64 = results.iter().map(|r| r.verbatim_retries as u64).sum();
    let answered = results.iter().filter(|r| r.candidates.is_some()).count() as u64;
    let mut stage_call_counts = BTreeMap::new();
    stage_call_counts.insert("filters".into(), results.len() as u64 * 3);
    stage_call_counts.insert("answers".into(), answered * 3);
    stage_call_counts.insert("synthesis".into(), results.len() as u64);

    let (cache_hits, cache_misses) = match backend.cache_stats() {
        Some((h, m)) => (Some(h), Some(m)),
        None => (None, None),
    };
    let manifest = RunManifest {
        schema_version: 1,
        started_at_unix: started,
        finished_at_unix: now_unix(),
        dataset: args.dataset.display().to_string(),
        task_kind,
        n_queries: loaded.queries.len(),
        n_results: results.len(),
        n_failures,
        parallelism: file_cfg.pipeline.parallelism,
        prompt_set_id: &prompts.id,
        backend_fingerprint: backend.as_chat().fingerprint(),
        config_echo: &file_cfg,
        pipeline_config: &pipeline_cfg,
        total_agent_calls,
        total_verbatim_retries: total_retries,
        stage_call_counts,
        cache_hits,
        cache_misses,
    };
    let manifest_json =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Storage(e.to_string()))?;
    std::fs::write(args.out.join("manifest.json"), manifest_json)
        .map_err(|e| CliError::Storage(e.to_string()))?;

    eprintln!(
        "run complete: {} results, {} failures, {} agent calls",
        results.len(),
        n_failures,
        total_agent_calls
    );
    Ok(())
}

// --- eval / ecr / subset ----------------------------------------------------

pub fn load_results(path: &Path) -> Result<Vec<PipelineResult>, CliError> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| {
                CliError::Data(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

fn load_failed_ids(path: Option<&Path>) -> Result<Vec<String>, CliError> {
    let Some(path) = path else {
        return Ok(Vec::new());
    };
    let content = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str::<crate::pipeline::QueryFailure>(line)
                .map(|f| f.query_id)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn load_queries(path: &Path, task_kind: TaskKind) -> Result<Vec<Query>, CliError> {
    let loaded = load_dataset(path, task_kind)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(loaded.queries)
}

pub fn cmd_eval(
    results_path: &Path,
    dataset_path: &Path,
    task_kind: TaskKind,
    failures: Option<&Path>,
    out: Option<&Path>,
    strip_punct: bool,
) -> Result<(), CliError> {
    let results = load_results(results_path)?;
    let queries = load_queries(dataset_path, task_kind)?;
    let failed_ids = load_failed_ids(failures)?;
    let norm = if strip_punct {
        Normalization::CasefoldWsPunct
    } else {
        Normalization::CasefoldWs
    };
    let dataset_name = dataset_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let report = build_report(
        &dataset_name,
        task_kind,
        &queries,
        &results,
        &failed_ids,
        &PipelineConfig::default(),
        norm,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    print!("{}", report.render_table());
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| results_path.with_file_name("report.json"));
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Storage(e.to_string()))?;
    std::fs::write(&out_path, json).map_err(|e| CliError::Storage(e.to_string()))?;
    eprintln!("report written to {}", out_path.display());
    Ok(())
}

fn build_table(
    results_path: &Path,
    dataset_path: &Path,
    task_kind: TaskKind,
) -> Result<Vec<crate::eval::IndicatorRow>, CliError> {
    let results = load_results(results_path)?;
    let queries = load_queries(dataset_path, task_kind)?;
    let by_id: BTreeMap<&str, &Query> =
        queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    indicator_table(&results, &by_id, Normalization::CasefoldWs)
        .map_err(|e| CliError::Data(e.to_string()))
}

pub fn cmd_ecr(
    results_path: &Path,
    dataset_path: &Path,
    task_kind: TaskKind,
    out: &Path,
) -> Result<(), CliError> {
    let table = build_table(results_path, dataset_path, task_kind)?;
    let mut rows = Vec::new();
    println!("{:<12} ecr", "agents");
    for set in agent_subsets() {
        let value = ecr(&set, &table).map_err(|e| CliError::Data(e.to_string()))?;
        println!("{:<12} {value:.4}", subset_key(&set));
        rows.push((subset_key(&set), value));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::Storage(e.to_string()))?;
    let json_map: BTreeMap<_, _> = rows.iter().cloned().collect();
    let json = serde_json::to_string_pretty(&json_map)
        .map_err(|e| CliError::Storage(e.to_string()))?;
    std::fs::write(out.join("ecr.json"), json).map_err(|e| CliError::Storage(e.to_string()))?;
    // Plot-data file: one (category, value) pair per line for external tools.
    let mut csv = String::from("category,value\n");
    for (key, value) in &rows {
        csv.push_str(&format!("{key},{value:.6}\n"));
    }
    std::fs::write(out.join("ecr.csv"), csv).map_err(|e| CliError::Storage(e.to_string()))?;
    Ok(())
}

pub fn cmd_subset(
    results_path: &Path,
    dataset_path: &Path,
    task_kind: TaskKind,
    out: &Path,
) -> Result<(), CliError> {
    let table = build_table(results_path, dataset_path, task_kind)?;
    let subset = uniquely_attributable_subset(&table);
    println!("uniquely attributable subset: {} of {}", subset.len(), table.len());
    std::fs::create_dir_all(out).map_err(|e| CliError::Storage(e.to_string()))?;
    std::fs::write(out.join("subset_ids.txt"), subset.join("\n") + "\n")
        .map_err(|e| CliError::Storage(e.to_string()))?;
    Ok(())
}

// --- ablation ---------------------------------------------------------------

#[derive(Serialize)]
struct AblationRow {
    label: String,
    n_results: usize,
    n_failures: usize,
    accuracy: f64,
    total_agent_calls: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_ablate(
    config: Option<&Path>,
    dataset_path: &Path,
    task_kind: TaskKind,
    axis: AblationAxis,
    out: &Path,
    backend_override: Option<BackendKind>,
    mock_script: Option<&Path>,
    parallelism: Option<usize>,
) -> Result<(), CliError> {
    let mut file_cfg = FileConfig::load(config)?;
    if let Some(kind) = backend_override {
        file_cfg.backend.kind = kind;
    }
    if let Some(script) = mock_script {
        file_cfg.backend.mock_script = Some(script.to_path_buf());
    }
    if let Some(p) = parallelism {
        file_cfg.pipeline.parallelism = p;
    }
    let queries = load_queries(dataset_path, task_kind)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Storage(e.to_string()))?;
    // One backend (and therefore one cache) shared across all settings.
    let backend = build_backend(&file_cfg.backend, Some(out))?;
    let prompts = load_prompts(&file_cfg.pipeline)?;
    let engine = Engine {
        backend: backend.as_chat(),
        prompts: &prompts,
        model_name: file_cfg.backend.model.clone(),
    };

    let base = PipelineConfig {
        top_k_docs: file_cfg.pipeline.top_k,
        use_answer_agent: file_cfg.pipeline.answer_agent.resolve(task_kind),
        decode: DecodeParams {
            temperature: file_cfg.decode.temperature,
            top_p: file_cfg.decode.top_p,
            max_tokens: 256,
        },
        prompt_set_id: prompts.id.clone(),
        max_context_chars: file_cfg.pipeline.max_context_chars,
    };
    let settings: Vec<(String, PipelineConfig)> = match axis {
        AblationAxis::AnswerAgent => vec![
            (
                "answer_agent=on".into(),
                PipelineConfig {
                    use_answer_agent: true,
                    ..base.clone()
                },
            ),
            (
                "answer_agent=off".into(),
                PipelineConfig {
                    use_answer_agent: false,
                    ..base.clone()
                },
            ),
        ],
        AblationAxis::TopK => [5u32, 10]
            .iter()
            .map(|k| {
                (
                    format!("top_k={k}"),
                    PipelineConfig {
                        top_k_docs: *k,
                        ..base.clone()
                    },
                )
            })
            .collect(),
    };

    let mut rows = Vec::new();
    for (label, cfg) in &settings {
        let outcomes =
            engine.run_dataset(&queries, cfg, file_cfg.pipeline.parallelism, |_, _| {});
        let results: Vec<&PipelineResult> =
            outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        let by_id: BTreeMap<&str, &Query> =
            queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
        let correct = results
            .iter()
            .filter(|r| {
                by_id
                    .get(r.query_id.as_str())
                    .is_some_and(|q| {
                        crate::eval::final_answer_correct(
                            &r.final_answer,
                            q,
                            Normalization::CasefoldWs,
                        )
                    })
            })
            .count();
        let n = outcomes.len();
        rows.push(AblationRow {
            label: label.clone(),
            n_results: results.len(),
            n_failures: n - results.len(),
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            total_agent_calls: results.iter().map(|r| r.agent_calls as u64).sum(),
        });
    }

    println!(
        "{:<18} {:>8} {:>10} {:>12}",
        "setting", "n", "accuracy", "agent_calls"
    );
    for row in &rows {
        println!(
            "{:<18} {:>8} {:>10.4} {:>12}",
            row.label,
            row.n_results + row.n_failures,
            row.accuracy,
            row.total_agent_calls
        );
    }
    let json =
        serde_json::to_string_pretty(&rows).map_err(|e| CliError::Storage(e.to_string()))?;
    std::fs::write(out.join("ablation.json"), json)
        .map_err(|e| CliError::Storage(e.to_string()))?;
    Ok(())
}

/// Dispatch a parsed command line.
pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Eval {
            results,
            dataset,
            task_kind,
            failures,
            out,
            strip_punct,
        } => cmd_eval(
            &results,
            &dataset,
            task_kind.into(),
            failures.as_deref(),
            out.as_deref(),
            strip_punct,
        ),
        Command::Ecr {
            results,
            dataset,
            task_kind,
            out,
        } => cmd_ecr(&results, &dataset, task_kind.into(), &out),
        Command::Subset {
            results,
            dataset,
            task_kind,
            out,
        } => cmd_subset(&results, &dataset, task_kind.into(), &out),
        Command::Ablate {
            config,
            dataset,
            task_kind,
            axis,
            out,
            backend,
            mock_script,
            parallelism,
        } => cmd_ablate(
            config.as_deref(),
            &dataset,
            task_kind.into(),
            axis,
            &out,
            backend,
            mock_script.as_deref(),
            parallelism,
        ),
    }
}
