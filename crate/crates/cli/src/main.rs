use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use retrocypher::cypher::{explain, Schema};
use retrocypher::graph::{build_graph, KnowledgeGraph};
use retrocypher::ingest::synth::{generate, SynthConfig};
use retrocypher::ingest::{
    filter_and_sample, filter_by_role_counts, filter_rare, load_reactions, normalize_and_dedupe,
    write_error_report, write_jsonl, Format, ReactionRecord,
};
use retrocypher::metrics::prf;
use retrocypher::prompts::Strategy;
use retrocypher::providers::LocalTrigramEmbedder;
use retrocypher::runner::{
    aggregate, aggregate_records, read_external, run_experiment, score_queries, write_records,
    ProviderKind, RunConfig, RunError,
};
use retrocypher::tasks::{generate_suite, load_suite, save_suite, SuiteCounts};

/// Text-to-Cypher benchmark over a reaction knowledge graph.
#[derive(Parser)]
#[command(name = "retrocypher", version)]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load, normalize, filter and sample reactions, or synthesize them.
    Ingest(IngestArgs),
    /// Build the bipartite graph from ingested reactions.
    BuildGraph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate the task suite with gold answers.
    GenSuite(GenSuiteArgs),
    /// Run an experiment from a TOML config.
    Run(RunArgs),
    /// Recompute summary and taxonomy reports for a run directory.
    Aggregate {
        #[arg(long)]
        run: PathBuf,
    },
    /// Score externally produced queries (JSONL of {instance_id, query}).
    ScoreFile {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Directory for records and reports.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check that a query is executable against the graph schema.
    Explain {
        /// Query text; reads --file when absent.
        query: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Args)]
struct IngestArgs {
    /// CSV or JSONL reactions.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    /// Generate this many synthetic reactions instead of reading a file.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Input format; inferred from the extension when absent.
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    output: PathBuf,
    /// Where to write rejected rows.
    #[arg(long)]
    errors: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    max_per_role: usize,
    /// Drop reactions containing a molecule seen fewer than this many times.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Sample exactly this many reactions after filtering.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenSuiteArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Use the full-scale counts (200 single-step, 300 multi-step per type).
    #[arg(long)]
    full: bool,
    #[arg(long)]
    single_per_type: Option<usize>,
    #[arg(long)]
    multi_per_type: Option<usize>,
    /// Step counts for multi-step tasks.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<u32>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    versions: Option<Vec<u8>>,
    /// Enable the verification loop.
    #[arg(long)]
    cove: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// scripted, gold-echo or openai.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    script: Option<PathBuf>,
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn lift(e: RunError) -> anyhow::Error {
    if e.is_config() {
        config_err(e.to_string())
    } else {
        e.into()
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let records: Vec<ReactionRecord> = match (&a.input, a.synthetic) {
        (_, Some(n)) => generate(&SynthConfig::new(n, a.seed)),
        (Some(path), None) => {
            let format = match a.format {
                Some(f) => f,
                None => Format::from_path(path).map_err(|e| config_err(e.to_string()))?,
            };
            let loaded = load_reactions(path, format)?;
            if !loaded.errors.is_empty() {
                log::warn!("{} rows rejected", loaded.errors.len());
                if let Some(p) = &a.errors {
                    write_error_report(&loaded.errors, p)
                        .with_context(|| format!("writing {}", p.display()))?;
                }
            }
            loaded.records
        }
        (None, None) => return Err(config_err("either --input or --synthetic is required")),
    };
    let records = filter_rare(normalize_and_dedupe(records, None), a.min_count);
    let records = match a.sample {
        Some(k) => filter_and_sample(records, a.max_per_role, k, a.seed)?,
        None => filter_by_role_counts(records, a.max_per_role),
    };
    write_jsonl(&records, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    println!("{} reactions -> {}", records.len(), a.output.display());
    Ok(())
}

fn build(input: &Path, output: &Path) -> Result<()> {
    let loaded = load_reactions(input, Format::Jsonl)?;
    if !loaded.errors.is_empty() {
        bail!("{} malformed rows in {}", loaded.errors.len(), input.display());
    }
    let g = build_graph(&loaded.records)?;
    g.save(output)?;
    println!(
        "{} molecules, {} reactions, {} edges -> {}",
        g.molecule_count(),
        g.reaction_count(),
        g.edge_count(),
        output.display()
    );
    Ok(())
}

fn gen_suite(a: GenSuiteArgs) -> Result<()> {
    let g = KnowledgeGraph::load(&a.graph)?;
    let mut counts = if a.full {
        SuiteCounts::full()
    } else {
        SuiteCounts::desk()
    };
    if let Some(n) = a.single_per_type {
        counts.single_per_type = n;
    }
    if let Some(n) = a.multi_per_type {
        counts.multi_per_type = n;
    }
    if let Some(s) = a.steps {
        if s.is_empty() || s.contains(&0) {
            return Err(config_err("--steps must list positive step counts"));
        }
        counts.steps = s;
    }
    let suite = generate_suite(&g, &counts, a.seed)?;
    save_suite(&suite, &a.output)?;
    println!("{} instances -> {}", suite.len(), a.output.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config).map_err(lift)?;
    if let Some(o) = a.output {
        cfg.output = o;
    }
    if let Some(s) = a.strategies {
        cfg.strategies = s
            .iter()
            .map(|x| x.parse::<Strategy>().map_err(|e| config_err(e.to_string())))
            .collect::<Result<_>>()?;
    }
    if let Some(v) = a.versions {
        cfg.versions = v;
    }
    if a.cove {
        cfg.cove = true;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(c) = a.concurrency {
        cfg.concurrency = c;
    }
    if let Some(p) = a.provider {
        cfg.provider.kind = match p.as_str() {
            "scripted" => ProviderKind::Scripted,
            "gold-echo" => ProviderKind::GoldEcho,
            "openai" => ProviderKind::Openai,
            other => return Err(config_err(format!("unknown provider {other:?}"))),
        };
    }
    if let Some(s) = a.script {
        cfg.provider.script = Some(s);
    }
    let dir = run_experiment(&cfg).map_err(lift)?;
    println!("run complete: {}", dir.display());
    Ok(())
}

fn print_overview(records: &[retrocypher::runner::RunRecord]) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let (mut exact, mut ppr, mut paths) = (0.0, 0.0, 0usize);
    for r in records {
        if let Some(s) = &r.eval.retrieval {
            tp += s.tp;
            fp += s.fp;
            fn_ += s.fn_;
        }
        if let Some(p) = &r.eval.paths {
            exact += p.f1;
            ppr += p.ppr;
            paths += 1;
        }
    }
    let (_, _, f1) = prf(tp, fp, fn_);
    println!("single-step micro F1: {f1:.4} (tp={tp} fp={fp} fn={fn_})");
    if paths > 0 {
        println!(
            "multi-step exact F1: {:.4}  PPR: {:.4}  ({paths} records)",
            exact / paths as f64,
            ppr / paths as f64
        );
    }
}

fn score_file(graph: &Path, suite: &Path, queries: &Path, output: Option<PathBuf>) -> Result<()> {
    let g = KnowledgeGraph::load(graph)?;
    let suite = load_suite(suite, None)?;
    let queries = read_external(queries).map_err(lift)?;
    let records = score_queries(&g, &suite, &queries, &LocalTrigramEmbedder).map_err(lift)?;
    print_overview(&records);
    if let Some(dir) = output {
        fs::create_dir_all(&dir)?;
        write_records(&records, &dir.join(retrocypher::runner::RECORDS_FILE)).map_err(lift)?;
        retrocypher::runner::aggregate::write_report(&aggregate_records(&records), &dir).map_err(lift)?;
        println!("records and reports -> {}", dir.display());
    }
    Ok(())
}

fn explain_cmd(query: Option<String>, file: Option<PathBuf>) -> Result<bool> {
    let text = match (query, file) {
        (Some(q), _) => q,
        (None, Some(f)) => fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?,
        (None, None) => return Err(config_err("give a query or --file")),
    };
    let report = explain(&text, &Schema::default());
    if report.executable {
        println!("executable");
    } else {
        println!("not executable");
    }
    for d in &report.diagnostics {
        println!("  {d}");
    }
    Ok(report.executable)
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Ingest(a) => ingest(a)?,
        Cmd::BuildGraph { input, output } => build(&input, &output)?,
        Cmd::GenSuite(a) => gen_suite(a)?,
        Cmd::Run(a) => run(a)?,
        Cmd::Aggregate { run } => {
            let report = aggregate(&run).map_err(lift)?;
            println!(
                "{} summary groups, {} taxonomy rows -> {}",
                report.summary.len(),
                report.taxonomy.len(),
                run.display()
            );
        }
        Cmd::ScoreFile {
            graph,
            suite,
            queries,
            output,
        } => score_file(&graph, &suite, &queries, output)?,
        Cmd::Explain { query, file } => return explain_cmd(query, file),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
