//! Experiment orchestration: strategy x prompt version x instance, with
//! resumable JSONL records and report aggregation.

pub mod aggregate;
pub mod config;

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cove::{default_checklists, run_cove, Checklist, CoveConfig, CoveContext, CoveError, CoveTrace};
use crate::cypher::{execute_with, explain, parse, ExecOptions, Schema};
use crate::graph::{GraphError, KnowledgeGraph};
use crate::metrics::{
    classify_error, score_multi_step, score_single_step, text_scores, ErrorLabel, Outcome,
    PathScores, RetrievalScores, TextScores,
};
use crate::par::{self, Mode};
use crate::prompts::{
    default_banks, render_prompt, select_exemplar, ExemplarBank, PromptError, PromptVersion,
    SemanticIndex, Strategy, VERSIONS,
};
use crate::providers::{
    extract_code_fence, ChatProvider, Embedder, GoldEchoProvider, HttpChatProvider, HttpEmbedder,
    LocalTrigramEmbedder, ProviderError, ScriptedProvider,
};
use crate::tasks::{load_suite, table_paths, table_rows, GoldAnswer, Setting, TaskError, TaskInstance};

pub use aggregate::{aggregate, aggregate_records, Report};
pub use config::{AssetConfig, EmbedderConfig, EmbedderKind, ProviderConfig, ProviderKind, RunConfig};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Cove(#[from] CoveError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("no records in {0}")]
    Empty(String),
}

impl RunError {
    pub fn is_config(&self) -> bool {
        matches!(self, RunError::Config(_))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io(format!("{}: {e}", path.display()))
}

/// Budget for executing generated queries.
pub fn predicted_exec_options() -> ExecOptions {
    ExecOptions {
        max_rows: 100_000,
        max_expansions: 5_000_000,
        ..ExecOptions::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Execution {
    pub executable: bool,
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Scores and label for one executed (or failed) query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub execution: Execution,
    pub text: TextScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<PathScores>,
    pub error_label: Option<ErrorLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub task_type: String,
    pub setting: Setting,
    pub strategy: String,
    pub version: u8,
    pub cove: bool,
    pub exemplars: Vec<String>,
    pub raw_reply: Option<String>,
    pub final_query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<CoveTrace>,
    #[serde(flatten)]
    pub eval: Evaluation,
    /// Set when generation itself failed; such records are excluded from
    /// metric means.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_error: Option<String>,
}

impl RunRecord {
    pub fn key(&self) -> (String, String, u8) {
        (self.instance_id.clone(), self.strategy.clone(), self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Timing<'a> {
    instance_id: &'a str,
    strategy: &'a str,
    version: u8,
    wall_ms: f64,
}

fn setting_of(inst: &TaskInstance) -> Result<Setting, RunError> {
    inst.task()
        .map(|t| t.setting)
        .ok_or_else(|| RunError::Task(TaskError::UnknownType(inst.task_type.clone())))
}

/// Executes `query` against the graph and scores it against the instance.
pub fn evaluate(
    g: &KnowledgeGraph,
    inst: &TaskInstance,
    query: Option<&str>,
    embedder: Option<&dyn Embedder>,
) -> Evaluation {
    let text = query
        .map(|q| text_scores(q, &inst.gold_cypher))
        .unwrap_or_default();
    let failed = |error: String| Evaluation {
        execution: Execution {
            executable: false,
            rows: 0,
            error: Some(error),
        },
        text,
        retrieval: matches!(inst.gold_answer, GoldAnswer::Rows(_))
            .then(|| RetrievalScores::from_counts(0, 0, 0)),
        paths: matches!(inst.gold_answer, GoldAnswer::Paths(_)).then(PathScores::default),
        error_label: Some(ErrorLabel::InvalidQuery),
    };
    let Some(q) = query else {
        return failed("no query".into());
    };
    let report = explain(q, &Schema::default());
    if !report.executable {
        return failed(report.error_summary());
    }
    let table = match parse(q)
        .map_err(|e| e.to_string())
        .and_then(|ast| execute_with(&ast, g, &predicted_exec_options()).map_err(|e| e.to_string()))
    {
        Ok(t) => t,
        Err(e) => return failed(e),
    };
    let execution = Execution {
        executable: true,
        rows: table.len(),
        error: None,
    };
    match &inst.gold_answer {
        GoldAnswer::Rows(gold) => {
            let pred = table_rows(&table, g);
            let r = score_single_step(&pred, gold, embedder);
            let label = classify_error(&inst.params, Some(q), Outcome::Single(&r));
            Evaluation {
                execution,
                text,
                retrieval: Some(r.scores),
                paths: None,
                error_label: label,
            }
        }
        GoldAnswer::Paths(gold) => {
            let pred = table_paths(&table, g);
            let s = score_multi_step(&pred, gold);
            let label = classify_error(
                &inst.params,
                Some(q),
                Outcome::Multi {
                    scores: &s,
                    predicted: &pred,
                },
            );
            Evaluation {
                execution,
                text,
                retrieval: None,
                paths: Some(s),
                error_label: label,
            }
        }
    }
}

/// Prompt ladders, exemplar banks and checklists for both settings.
#[derive(Debug, Clone)]
pub struct Assets {
    pub single_prompts: Vec<PromptVersion>,
    pub multi_prompts: Vec<PromptVersion>,
    pub single_bank: ExemplarBank,
    pub multi_bank: ExemplarBank,
    pub single_checklist: Checklist,
    pub multi_checklist: Checklist,
}

impl Assets {
    pub fn builtin() -> Self {
        let ladder = |s| {
            VERSIONS
                .map(|v| PromptVersion::builtin(s, v).expect("shipped prompt"))
                .collect()
        };
        let (single_bank, multi_bank) = default_banks();
        let (single_checklist, multi_checklist) = default_checklists();
        Self {
            single_prompts: ladder(Setting::SingleStep),
            multi_prompts: ladder(Setting::MultiStep),
            single_bank,
            multi_bank,
            single_checklist,
            multi_checklist,
        }
    }

    pub fn load(cfg: &AssetConfig) -> Result<Self, RunError> {
        let mut a = Self::builtin();
        if let Some(dir) = &cfg.prompts_dir {
            for v in VERSIONS {
                a.single_prompts[usize::from(v - 1)] = PromptVersion::load(dir, Setting::SingleStep, v)?;
                a.multi_prompts[usize::from(v - 1)] = PromptVersion::load(dir, Setting::MultiStep, v)?;
            }
        }
        if let Some(p) = &cfg.single_bank {
            a.single_bank = ExemplarBank::load(p, Setting::SingleStep)?;
        }
        if let Some(p) = &cfg.multi_bank {
            a.multi_bank = ExemplarBank::load(p, Setting::MultiStep)?;
        }
        if let Some(p) = &cfg.single_checklist {
            a.single_checklist = Checklist::load(p, Setting::SingleStep)?;
        }
        if let Some(p) = &cfg.multi_checklist {
            a.multi_checklist = Checklist::load(p, Setting::MultiStep)?;
        }
        Ok(a)
    }

    fn prompt(&self, s: Setting, v: u8) -> Result<&PromptVersion, RunError> {
        let ladder = match s {
            Setting::SingleStep => &self.single_prompts,
            Setting::MultiStep => &self.multi_prompts,
        };
        ladder
            .get(usize::from(v).wrapping_sub(1))
            .ok_or(RunError::Prompt(PromptError::UnknownVersion(v)))
    }

    fn bank(&self, s: Setting) -> &ExemplarBank {
        match s {
            Setting::SingleStep => &self.single_bank,
            Setting::MultiStep => &self.multi_bank,
        }
    }

    fn checklist(&self, s: Setting) -> &Checklist {
        match s {
            Setting::SingleStep => &self.single_checklist,
            Setting::MultiStep => &self.multi_checklist,
        }
    }
}

/// Per-instance exemplar seed derived from the run seed and instance id.
pub fn exemplar_seed(run_seed: u64, instance_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(instance_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Everything one run needs, with providers supplied by the caller.
pub struct Experiment<'a> {
    pub graph: &'a KnowledgeGraph,
    pub suite: &'a [TaskInstance],
    pub provider: &'a dyn ChatProvider,
    pub embedder: &'a dyn Embedder,
    pub assets: Assets,
    pub strategies: Vec<Strategy>,
    pub versions: Vec<u8>,
    pub cove: bool,
    pub seed: u64,
    pub concurrency: usize,
    pub model: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub written: usize,
    pub skipped: usize,
}

struct Indexes<'a> {
    single: Option<SemanticIndex<'a>>,
    multi: Option<SemanticIndex<'a>>,
}

impl<'a> Experiment<'a> {
    fn triples(&self) -> Vec<(&'a TaskInstance, Strategy, u8)> {
        let mut out = Vec::new();
        for inst in self.suite {
            for &s in &self.strategies {
                for &v in &self.versions {
                    out.push((inst, s, v));
                }
            }
        }
        out
    }

    fn run_one(
        &self,
        inst: &TaskInstance,
        strategy: Strategy,
        version: u8,
        idx: &Indexes,
    ) -> Result<RunRecord, RunError> {
        let setting = setting_of(inst)?;
        let bank = self.assets.bank(setting);
        let exemplars = match strategy {
            Strategy::OneShotSemantic => {
                let index = match setting {
                    Setting::SingleStep => idx.single.as_ref(),
                    Setting::MultiStep => idx.multi.as_ref(),
                };
                match index {
                    Some(i) => vec![i.select(&inst.nl_question, self.embedder)?],
                    None => select_exemplar(strategy, bank, &inst.nl_question, Some(self.embedder), 0)?,
                }
            }
            _ => select_exemplar(
                strategy,
                bank,
                &inst.nl_question,
                Some(self.embedder),
                exemplar_seed(self.seed, &inst.id),
            )?,
        };
        let schema_text = self.graph.schema_text();
        let prompt = render_prompt(
            self.assets.prompt(setting, version)?,
            &schema_text,
            &inst.nl_question,
            &exemplars,
        )?;
        let schema = Schema::default();
        let known = |s: &str| self.graph.molecule(s).is_some();
        let ctx = CoveContext {
            schema_text: &schema_text,
            schema: &schema,
            question: &inst.nl_question,
            known: &known,
            model: &self.model,
            temperature: self.temperature,
        };
        let cfg = CoveConfig {
            enabled: self.cove,
            ..CoveConfig::default()
        };
        let mut record = RunRecord {
            instance_id: inst.id.clone(),
            task_type: inst.task_type.clone(),
            setting,
            strategy: strategy.as_str().to_string(),
            version,
            cove: self.cove,
            exemplars: exemplars.iter().map(|e| e.title.clone()).collect(),
            raw_reply: None,
            final_query: None,
            trace: None,
            eval: evaluate(self.graph, inst, None, None),
            provider_error: None,
        };
        match run_cove(&prompt, self.assets.checklist(setting), &ctx, self.provider, &cfg) {
            Ok(out) => {
                record.eval = evaluate(
                    self.graph,
                    inst,
                    out.final_query.as_deref(),
                    Some(self.embedder),
                );
                record.raw_reply = Some(out.raw_reply);
                record.final_query = out.final_query;
                if out.trace.error.is_some() {
                    record.provider_error = out.trace.error.clone();
                }
                record.trace = Some(out.trace);
            }
            Err(e) => {
                log::warn!("{} {} p{}: {e}", inst.id, strategy, version);
                record.provider_error = Some(e.to_string());
            }
        }
        Ok(record)
    }

    /// Runs every missing triple, appending records to `out_dir` in canonical
    /// order. Triples already recorded there are skipped.
    pub fn run(&self, out_dir: &Path) -> Result<RunStats, RunError> {
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let records_path = out_dir.join(RECORDS_FILE);
        let done = read_done(&records_path)?;
        let todo: Vec<_> = self
            .triples()
            .into_iter()
            .filter(|(i, s, v)| !done.contains(&(i.id.clone(), s.as_str().to_string(), *v)))
            .collect();
        let stats = RunStats {
            written: todo.len(),
            skipped: done.len(),
        };
        if todo.is_empty() {
            return Ok(stats);
        }
        let needs_semantic = self.strategies.contains(&Strategy::OneShotSemantic);
        let index_for = |s: Setting| -> Result<Option<SemanticIndex>, RunError> {
            let used = self.suite.iter().any(|i| setting_of(i).ok() == Some(s));
            if needs_semantic && used {
                Ok(Some(SemanticIndex::new(self.assets.bank(s), self.embedder)?))
            } else {
                Ok(None)
            }
        };
        let idx = Indexes {
            single: index_for(Setting::SingleStep)?,
            multi: index_for(Setting::MultiStep)?,
        };
        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map(BufWriter::new)
                .map_err(io_err(p))
        };
        let mut records = open(&records_path)?;
        let timings_path = out_dir.join(TIMINGS_FILE);
        let mut timings = open(&timings_path)?;
        let mode = Mode::with_workers(self.concurrency);
        let chunk = (self.concurrency * 4).max(16);
        for batch in todo.chunks(chunk) {
            let results = par::map(batch, mode, |(inst, s, v)| {
                let start = Instant::now();
                let r = self.run_one(inst, *s, *v, &idx);
                (r, start.elapsed().as_secs_f64() * 1000.0)
            });
            for (r, ms) in results {
                let r = r?;
                let line = serde_json::to_string(&r).map_err(|e| RunError::Io(e.to_string()))?;
                writeln!(records, "{line}").map_err(io_err(&records_path))?;
                let t = Timing {
                    instance_id: &r.instance_id,
                    strategy: &r.strategy,
                    version: r.version,
                    wall_ms: ms,
                };
                let line = serde_json::to_string(&t).map_err(|e| RunError::Io(e.to_string()))?;
                writeln!(timings, "{line}").map_err(io_err(&timings_path))?;
            }
            records.flush().map_err(io_err(&records_path))?;
            timings.flush().map_err(io_err(&timings_path))?;
        }
        Ok(stats)
    }
}

/// Keys of complete records. A torn final line from an interrupted write is
/// cut off so appends continue from a clean boundary.
fn read_done(path: &Path) -> Result<HashSet<(String, String, u8)>, RunError> {
    let mut done = HashSet::new();
    if !path.exists() {
        return Ok(done);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut good = 0;
    for line in text.split_inclusive('\n') {
        if !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<RunRecord>(line.trim_end()) {
            Ok(r) => {
                done.insert(r.key());
                good += line.len();
            }
            Err(_) => break,
        }
    }
    if good < text.len() {
        log::warn!("{}: dropping {} trailing bytes", path.display(), text.len() - good);
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(good as u64).map_err(io_err(path))?;
    }
    Ok(done)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, RunError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| RunError::Io(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn build_provider(
    cfg: &ProviderConfig,
    suite: &[TaskInstance],
) -> Result<Box<dyn ChatProvider>, RunError> {
    Ok(match cfg.kind {
        ProviderKind::Scripted => {
            let path = cfg
                .script
                .as_ref()
                .ok_or_else(|| RunError::Config("scripted provider needs `script`".into()))?;
            Box::new(ScriptedProvider::load(path).map_err(|e| RunError::Config(e.to_string()))?)
        }
        ProviderKind::GoldEcho => Box::new(GoldEchoProvider::new(
            suite
                .iter()
                .map(|i| (i.nl_question.clone(), i.gold_cypher.clone())),
        )),
        ProviderKind::Openai => Box::new(
            HttpChatProvider::new(cfg.http("https://api.openai.com/v1/chat/completions"))
                .map_err(|e| RunError::Config(e.to_string()))?,
        ),
    })
}

pub fn build_embedder(cfg: &EmbedderConfig) -> Result<Box<dyn Embedder>, RunError> {
    Ok(match cfg.kind {
        EmbedderKind::Local => Box::new(LocalTrigramEmbedder),
        EmbedderKind::Openai => {
            let p = ProviderConfig {
                kind: ProviderKind::Openai,
                script: None,
                endpoint: cfg.endpoint.clone(),
                api_key_env: cfg.api_key_env.clone(),
                model: Some(cfg.model.clone().unwrap_or_else(|| "text-embedding-3-small".into())),
                max_concurrency: None,
                timeout_secs: None,
                temperature: 0.0,
            };
            Box::new(
                HttpEmbedder::new(p.http("https://api.openai.com/v1/embeddings"))
                    .map_err(|e| RunError::Config(e.to_string()))?,
            )
        }
    })
}

/// Loads inputs named by `cfg`, runs all triples and aggregates. Returns the
/// output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<PathBuf, RunError> {
    cfg.validate()?;
    let graph = KnowledgeGraph::load(&cfg.graph)?;
    let suite = load_suite(&cfg.suite, None)?;
    let provider = build_provider(&cfg.provider, &suite)?;
    let embedder = build_embedder(&cfg.embedder)?;
    let exp = Experiment {
        graph: &graph,
        suite: &suite,
        provider: provider.as_ref(),
        embedder: embedder.as_ref(),
        assets: Assets::load(&cfg.assets)?,
        strategies: cfg.strategies.clone(),
        versions: cfg.versions.clone(),
        cove: cfg.cove,
        seed: cfg.seed,
        concurrency: cfg.concurrency,
        model: cfg.provider.model.clone().unwrap_or_default(),
        temperature: cfg.provider.temperature,
    };
    let stats = exp.run(&cfg.output)?;
    log::info!("{} records written, {} already present", stats.written, stats.skipped);
    aggregate(&cfg.output)?;
    Ok(cfg.output.clone())
}

/// One externally produced query to score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalQuery {
    pub instance_id: String,
    pub query: String,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub version: Option<u8>,
}

/// Scores queries without generation. Raw text is fence-stripped first.
pub fn score_queries(
    g: &KnowledgeGraph,
    suite: &[TaskInstance],
    queries: &[ExternalQuery],
    embedder: &dyn Embedder,
) -> Result<Vec<RunRecord>, RunError> {
    queries
        .iter()
        .map(|q| {
            let inst = suite
                .iter()
                .find(|i| i.id == q.instance_id)
                .ok_or_else(|| RunError::Config(format!("unknown instance {}", q.instance_id)))?;
            let query = extract_code_fence(&q.query);
            Ok(RunRecord {
                instance_id: inst.id.clone(),
                task_type: inst.task_type.clone(),
                setting: setting_of(inst)?,
                strategy: q.strategy.clone().unwrap_or_else(|| "external".into()),
                version: q.version.unwrap_or(0),
                cove: false,
                exemplars: Vec::new(),
                raw_reply: Some(q.query.clone()),
                eval: evaluate(g, inst, Some(&query), Some(embedder)),
                final_query: Some(query),
                trace: None,
                provider_error: None,
            })
        })
        .collect()
}

pub fn read_external(path: &Path) -> Result<Vec<ExternalQuery>, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| RunError::Config(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn write_records(records: &[RunRecord], path: &Path) -> Result<(), RunError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| RunError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
