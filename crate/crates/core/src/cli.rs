//! Command-line surface and artifact orchestration.
//!
//! Pipeline stages persist to files so a graph or cohort partition built
//! once is reused across many queries. Every artifact embeds the SHA-256 of
//! its upstream inputs; any mismatch is rejected before computation starts.
//!
//! Exit codes: 0 success, 2 input error, 3 oracle/transport error,
//! 4 internal invariant violation.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohorts::{discover_cohorts, load_cohorts, save_cohorts, CohortPartition, Method};
use crate::corpus::{ingest_corpus, load_queries, write_corpus, Corpus, Query};
use crate::gain::{
    BlackboxOracle, EntropyOracle, GainError, GainOracle, HttpChatBackend, HttpCompletionsBackend,
    HttpLmConfig,
};
use crate::graph::{build_knn_graph, load_graph, save_graph, SimilarityGraph};
use crate::harness::{
    generate, run_pilot, LabelRule, Manifest, PilotMethod, PilotParams, SyntheticSpec,
};
use crate::prompts::{length_estimate, PromptTemplate, Task};
use crate::search::{
    select_demonstrations, Ablation, SearchError, SearchMode, SelectConfig, SelectionTrace,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Oracle(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Oracle(_) => EXIT_ORACLE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

fn input_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "demoselect",
    about = "Cohort-aware demonstration selection for in-context learning",
    version
)]
pub struct Cli {
    /// Bound on concurrent queries and in-flight oracle calls.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct SpecArgs {
    #[arg(long, default_value_t = 4)]
    pub n_cohorts: usize,
    #[arg(long, default_value_t = 25)]
    pub cohort_size: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.15)]
    pub intra_spread: f64,
    #[arg(long, default_value_t = 4.0)]
    pub inter_separation: f64,
    #[arg(long, default_value_t = 0.8)]
    pub redundancy: f64,
    #[arg(long, default_value_t = 0.1)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

impl SpecArgs {
    fn to_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_cohorts: self.n_cohorts,
            cohort_size: self.cohort_size,
            dim: self.dim,
            intra_spread: self.intra_spread,
            inter_separation: self.inter_separation,
            redundancy: self.redundancy,
            label_rule: LabelRule {
                noise: self.label_noise,
            },
            seed: self.seed,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus, query set, and benchmark manifest.
    Gen {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 40)]
        queries: usize,
        /// Output directory (corpus.jsonl, queries.jsonl, manifest.json).
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the symmetrized kNN graph from a corpus.
    BuildGraph {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 8)]
        k_g: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Discover cohorts on a graph by modularity optimization.
    Cohorts {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Leiden)]
        method: Method,
        #[arg(long, default_value_t = 0.9)]
        resolution: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select demonstrations for each query and render prompts.
    Select {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        cohorts: PathBuf,
        /// Demonstration budget K.
        #[arg(long, default_value_t = 4)]
        budget: usize,
        #[arg(long, default_value_t = 3)]
        kc: usize,
        #[arg(long, default_value_t = 3)]
        ka: usize,
        #[arg(long, value_enum, default_value_t = SearchMode::LazyGreedy)]
        mode: SearchMode,
        #[arg(long)]
        no_early_stop: bool,
        #[arg(long, value_enum, default_value_t = Ablation::None)]
        ablation: Ablation,
        #[arg(long, value_enum, default_value_t = OracleKind::Coverage)]
        oracle: OracleKind,
        /// Base URL of the model endpoint (entropy/blackbox oracles).
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        /// Name of the environment variable holding the API key.
        #[arg(long)]
        api_key_env: Option<String>,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
        /// Benchmark manifest (required by the coverage oracle).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Task::Generic)]
        task: Task,
        /// Optional template file overriding the built-in prompt template.
        #[arg(long)]
        template: Option<PathBuf>,
        /// Output directory (trace_<id>.json, prompt_<id>.txt per query).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the synthetic benchmark and write a report.
    Bench {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, value_enum, value_delimiter = ',',
              default_values_t = vec![
                  PilotMethod::Random,
                  PilotMethod::TopkEmbedding,
                  PilotMethod::PerExampleEntropy,
                  PilotMethod::EngineLazy,
              ])]
        methods: Vec<PilotMethod>,
        #[arg(long, default_value_t = 4)]
        k_max: usize,
        /// Also report the k = 0 (zero-shot) row.
        #[arg(long)]
        include_zero_shot: bool,
        #[arg(long, default_value_t = 40)]
        queries: usize,
        #[arg(long, default_value_t = 8)]
        k_g: usize,
        #[arg(long, default_value_t = 3)]
        kc: usize,
        #[arg(long, default_value_t = 3)]
        ka: usize,
        #[arg(long, default_value_t = 0.9)]
        resolution: f64,
        /// Output directory (report.json, report.csv).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OracleKind {
    Entropy,
    Blackbox,
    Coverage,
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    use sha2::{Digest, Sha256};
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Runs a parsed command, printing progress to stdout and errors to stderr.
/// Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.parallel {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { spec, queries, out } => cmd_gen(&spec.to_spec(), queries, &out),
        Command::BuildGraph { corpus, k_g, out } => cmd_build_graph(&corpus, k_g, &out),
        Command::Cohorts {
            graph,
            corpus,
            method,
            resolution,
            seed,
            out,
        } => cmd_cohorts(&graph, &corpus, method, resolution, seed, &out),
        Command::Select {
            query,
            corpus,
            graph,
            cohorts,
            budget,
            kc,
            ka,
            mode,
            no_early_stop,
            ablation,
            oracle,
            endpoint,
            model,
            api_key_env,
            timeout_secs,
            manifest,
            task,
            template,
            out,
        } => {
            let oracle_cfg = OracleCli {
                kind: oracle,
                endpoint,
                model,
                api_key_env,
                timeout_secs,
                manifest,
                max_in_flight: cli.parallel.unwrap_or(8),
            };
            let select_cfg = SelectConfig {
                budget,
                k_c: kc,
                k_a: ka,
                mode,
                early_stop: !no_early_stop,
                ablation,
            };
            cmd_select(
                &query,
                &corpus,
                &graph,
                &cohorts,
                &select_cfg,
                &oracle_cfg,
                task,
                template.as_deref(),
                &out,
            )
        }
        Command::Bench {
            spec,
            methods,
            k_max,
            include_zero_shot,
            queries,
            k_g,
            kc,
            ka,
            resolution,
            out,
        } => {
            let mut k_range: Vec<usize> = if include_zero_shot { vec![0] } else { vec![] };
            k_range.extend(1..=k_max);
            let params = PilotParams {
                k_g,
                k_c: kc,
                k_a: ka,
                resolution,
                partition_seed: spec.seed,
                n_queries: queries,
                f1_threshold: 0.5,
            };
            cmd_bench(&spec.to_spec(), &methods, &k_range, &params, &out)
        }
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| {
        CliError::Input(format!(
            "cannot create output directory {}: {e}",
            path.display()
        ))
    })
}

pub fn cmd_gen(spec: &SyntheticSpec, n_queries: usize, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let data = generate(spec, n_queries);
    let corpus_path = out.join("corpus.jsonl");
    let mut buf = Vec::new();
    write_corpus(&data.corpus, &mut buf).map_err(input_err)?;
    std::fs::write(&corpus_path, &buf).map_err(input_err)?;

    let queries_path = out.join("queries.jsonl");
    let mut qbuf = String::new();
    for q in &data.queries {
        let line = serde_json::json!({
            "id": q.id,
            "vector": q.embedding,
            "record": q.record_text,
        });
        qbuf.push_str(&line.to_string());
        qbuf.push('\n');
    }
    std::fs::write(&queries_path, qbuf).map_err(input_err)?;

    let corpus_hash = sha256_file(&corpus_path).map_err(input_err)?;
    let manifest = Manifest::from_data(spec, &data, &corpus_hash);
    manifest
        .save(&out.join("manifest.json"))
        .map_err(input_err)?;
    println!(
        "generated {} records, {} queries into {}",
        data.corpus.len(),
        data.queries.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_build_graph(corpus_path: &Path, k_g: usize, out: &Path) -> Result<(), CliError> {
    let corpus = ingest_corpus(corpus_path).map_err(input_err)?;
    let corpus_hash = sha256_file(corpus_path).map_err(input_err)?;
    let graph = build_knn_graph(&corpus, k_g).map_err(input_err)?;
    save_graph(&graph, &corpus_hash, out)
        .map_err(|e| CliError::Internal(format!("cannot write graph: {e}")))?;
    println!(
        "graph: {} nodes, {} edges (k_g = {}) -> {}",
        graph.n(),
        graph.m(),
        graph.k_g(),
        out.display()
    );
    Ok(())
}

pub fn cmd_cohorts(
    graph_path: &Path,
    corpus_path: &Path,
    method: Method,
    resolution: f64,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let corpus = ingest_corpus(corpus_path).map_err(input_err)?;
    let corpus_hash = sha256_file(corpus_path).map_err(input_err)?;
    let graph_hash = sha256_file(graph_path).map_err(input_err)?;
    let (graph, meta) = load_graph(graph_path).map_err(input_err)?;
    if meta.corpus_hash != corpus_hash {
        return Err(CliError::Input(format!(
            "graph {} was built from a different corpus (hash {} != {})",
            graph_path.display(),
            meta.corpus_hash,
            corpus_hash
        )));
    }
    let mut partition = discover_cohorts(&graph, method, resolution, seed).map_err(input_err)?;
    partition
        .attach_prototypes(&corpus)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    save_cohorts(&partition, &corpus_hash, &graph_hash, out)
        .map_err(|e| CliError::Internal(format!("cannot write cohorts: {e}")))?;
    println!(
        "cohorts: {} cohorts, modularity {:.6} ({}) -> {}",
        partition.n_cohorts(),
        partition.modularity,
        method,
        out.display()
    );
    Ok(())
}

struct OracleCli {
    kind: OracleKind,
    endpoint: Option<String>,
    model: Option<String>,
    api_key_env: Option<String>,
    timeout_secs: u64,
    manifest: Option<PathBuf>,
    max_in_flight: usize,
}

impl OracleCli {
    fn http_config(&self) -> Result<HttpLmConfig, CliError> {
        let endpoint = self
            .endpoint
            .as_deref()
            .ok_or_else(|| CliError::Input("--endpoint is required for this oracle".into()))?;
        let model = self
            .model
            .as_deref()
            .ok_or_else(|| CliError::Input("--model is required for this oracle".into()))?;
        let mut cfg = HttpLmConfig::new(endpoint, model);
        cfg.api_key_env = self.api_key_env.clone();
        cfg.timeout_secs = self.timeout_secs;
        cfg.max_in_flight = self.max_in_flight;
        Ok(cfg)
    }
}

enum BuiltOracle {
    Shared(Box<dyn GainOracle>),
    PerQuery(Manifest),
}

fn build_oracle(
    oracle_cli: &OracleCli,
    template: &PromptTemplate,
    corpus_hash: &str,
) -> Result<BuiltOracle, CliError> {
    match oracle_cli.kind {
        OracleKind::Entropy => {
            let backend = HttpCompletionsBackend::new(oracle_cli.http_config()?);
            Ok(BuiltOracle::Shared(Box::new(EntropyOracle::new(
                backend,
                template.clone(),
            ))))
        }
        OracleKind::Blackbox => {
            let backend = HttpChatBackend::new(oracle_cli.http_config()?);
            Ok(BuiltOracle::Shared(Box::new(BlackboxOracle::new(
                backend,
                template.task,
            ))))
        }
        OracleKind::Coverage => {
            let path = oracle_cli.manifest.as_deref().ok_or_else(|| {
                CliError::Input("--manifest is required for the coverage oracle".into())
            })?;
            let manifest = Manifest::load(path).map_err(input_err)?;
            if !manifest.corpus_hash.is_empty() && manifest.corpus_hash != corpus_hash {
                return Err(CliError::Input(format!(
                    "manifest {} belongs to a different corpus (hash {} != {})",
                    path.display(),
                    manifest.corpus_hash,
                    corpus_hash
                )));
            }
            Ok(BuiltOracle::PerQuery(manifest))
        }
    }
}

/// Trace file contents: the selection trace plus run provenance.
#[derive(Serialize, Deserialize)]
pub struct TraceFile {
    pub query_id: String,
    pub selected_ids: Vec<String>,
    pub oracle: crate::gain::OracleIdentity,
    pub inputs: BTreeMap<String, String>,
    pub prompt_tokens_estimate: usize,
    #[serde(flatten)]
    pub trace: SelectionTrace,
}

#[allow(clippy::too_many_arguments)]
fn cmd_select(
    query_path: &Path,
    corpus_path: &Path,
    graph_path: &Path,
    cohorts_path: &Path,
    config: &SelectConfig,
    oracle_cli: &OracleCli,
    task: Task,
    template_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let corpus = ingest_corpus(corpus_path).map_err(input_err)?;
    let corpus_hash = sha256_file(corpus_path).map_err(input_err)?;
    let graph_hash = sha256_file(graph_path).map_err(input_err)?;
    let cohorts_hash = sha256_file(cohorts_path).map_err(input_err)?;

    let (mut graph, graph_meta) = load_graph(graph_path).map_err(input_err)?;
    let (partition, cohort_meta) = load_cohorts(cohorts_path).map_err(input_err)?;
    if graph_meta.corpus_hash != corpus_hash {
        return Err(CliError::Input(
            "graph/corpus hash mismatch: rebuild the graph from this corpus".into(),
        ));
    }
    if cohort_meta.corpus_hash != corpus_hash || cohort_meta.graph_hash != graph_hash {
        return Err(CliError::Input(
            "cohort file does not match the given corpus/graph (hash mismatch)".into(),
        ));
    }
    if partition.prototypes.iter().any(|p| p.len() != corpus.dim()) {
        return Err(CliError::Input(format!(
            "cohort prototypes do not match the corpus dimension {}",
            corpus.dim()
        )));
    }
    graph.sort_by_similarity(&corpus);

    let template = match template_path {
        Some(p) => PromptTemplate::from_file(p, task).map_err(input_err)?,
        None => PromptTemplate::for_task(task),
    };
    let queries = load_queries(query_path, Some(corpus.dim())).map_err(input_err)?;
    if queries.is_empty() {
        return Err(CliError::Input(format!(
            "no queries in {}",
            query_path.display()
        )));
    }
    let oracle = build_oracle(oracle_cli, &template, &corpus_hash)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("corpus_hash".to_string(), corpus_hash);
    inputs.insert("graph_hash".to_string(), graph_hash);
    inputs.insert("cohorts_hash".to_string(), cohorts_hash);

    let results: Vec<Result<(), CliError>> = queries
        .par_iter()
        .map(|query| {
            run_one_query(
                query, &corpus, &graph, &partition, config, &oracle, &template, &inputs, out,
            )
        })
        .collect();
    let mut failure: Option<CliError> = None;
    for r in results {
        if let Err(e) = r {
            // Oracle failures dominate the exit code.
            let replace = matches!(
                (&failure, &e),
                (None, _) | (Some(CliError::Input(_)), CliError::Oracle(_))
            );
            if replace {
                failure = Some(e);
            }
        }
    }
    match failure {
        Some(e) => Err(e),
        None => {
            println!(
                "selected demonstrations for {} queries -> {}",
                queries.len(),
                out.display()
            );
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_one_query(
    query: &Query,
    corpus: &Corpus,
    graph: &SimilarityGraph,
    partition: &CohortPartition,
    config: &SelectConfig,
    oracle: &BuiltOracle,
    template: &PromptTemplate,
    inputs: &BTreeMap<String, String>,
    out: &Path,
) -> Result<(), CliError> {
    let per_query_oracle;
    let oracle_ref: &dyn GainOracle = match oracle {
        BuiltOracle::Shared(o) => o.as_ref(),
        BuiltOracle::PerQuery(manifest) => {
            per_query_oracle = manifest
                .coverage_oracle_for(&query.id)
                .map_err(|e| CliError::Input(e.to_string()))?;
            &per_query_oracle
        }
    };
    let identity = oracle_ref.identity();
    let (trace, search_failure) =
        match select_demonstrations(query, corpus, graph, partition, oracle_ref, config) {
            Ok(trace) => (trace, None),
            Err(SearchError::Oracle { partial, source }) => (*partial, Some(source)),
            Err(SearchError::Corpus(e)) => return Err(CliError::Input(e.to_string())),
        };

    let demos: Vec<&crate::corpus::InstanceRecord> = trace
        .selected_nodes()
        .iter()
        .map(|&v| corpus.record(v))
        .collect();
    let prompt = template
        .render(query, &demos)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let trace_file = TraceFile {
        query_id: query.id.clone(),
        selected_ids: demos.iter().map(|d| d.id.clone()).collect(),
        oracle: identity,
        inputs: inputs.clone(),
        prompt_tokens_estimate: length_estimate(&prompt),
        trace,
    };
    let trace_json =
        serde_json::to_string_pretty(&trace_file).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(out.join(format!("trace_{}.json", query.id)), trace_json)
        .map_err(|e| CliError::Input(e.to_string()))?;
    std::fs::write(out.join(format!("prompt_{}.txt", query.id)), prompt)
        .map_err(|e| CliError::Input(e.to_string()))?;

    match search_failure {
        Some(source) => Err(match source {
            GainError::Unavailable { .. } | GainError::Protocol(_) => {
                CliError::Oracle(format!("query '{}': {source}", query.id))
            }
            other => CliError::Internal(format!("query '{}': {other}", query.id)),
        }),
        None => Ok(()),
    }
}

pub fn cmd_bench(
    spec: &SyntheticSpec,
    methods: &[PilotMethod],
    k_range: &[usize],
    params: &PilotParams,
    out: &Path,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let report = run_pilot(spec, methods, k_range, params).map_err(|e| {
        use crate::harness::PilotError;
        match e {
            PilotError::Gain(g) => CliError::Oracle(g.to_string()),
            PilotError::Search(SearchError::Oracle { source, .. }) => {
                CliError::Oracle(source.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    })?;
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(out.join("report.json"), json).map_err(input_err)?;
    std::fs::write(out.join("report.csv"), report.to_csv()).map_err(input_err)?;
    println!(
        "bench: {} rows ({} methods x {} shot counts) -> {}",
        report.rows.len(),
        methods.len(),
        k_range.len(),
        out.display()
    );
    Ok(())
}
