//! Benchmark harness: synthetic data, baselines, metrics, pilot runs.
//!
//! The generator plants cohort structure twice over: in embedding space
//! (members scatter around separated cohort centers) and in feature space
//! (members of a cohort share a common feature base — the redundancy — plus
//! per-member unique features of strictly decreasing size). A query's
//! coverage target is its cohort's full feature pool, so independently
//! ranked picks are mutually redundant while composition-aware picks keep
//! adding uncovered features.

pub mod metrics;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohorts::{discover_cohorts, CohortError, CohortPartition, Method};
use crate::corpus::{cosine_sim, Corpus, InstanceRecord, Label, Query};
use crate::gain::{make_coverage_oracle, pilot_delta_h, CoverageOracle, GainError, GainOracle};
use crate::graph::{build_knn_graph, GraphError, SimilarityGraph};
use crate::search::{select_demonstrations, Ablation, SearchError, SearchMode, SelectConfig};

#[derive(Debug, Error)]
pub enum PilotError {
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("manifest error: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    /// Probability of flipping the cohort-majority label.
    pub noise: f64,
}

/// Everything needed to regenerate a synthetic benchmark bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_cohorts: usize,
    pub cohort_size: usize,
    pub dim: usize,
    pub intra_spread: f64,
    pub inter_separation: f64,
    /// Share of a member's features drawn from the cohort-common base.
    pub redundancy: f64,
    pub label_rule: LabelRule,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_cohorts: 4,
            cohort_size: 25,
            dim: 16,
            intra_spread: 0.15,
            inter_separation: 4.0,
            redundancy: 0.8,
            label_rule: LabelRule { noise: 0.1 },
            seed: 7,
        }
    }
}

/// Per-member feature budget; the base share is `redundancy * FEATURES_PER_MEMBER`.
const FEATURES_PER_MEMBER: usize = 20;
/// Unique-feature count for the first member of a cohort; later members get
/// strictly fewer (floored at one) so individual rankings have a clear order.
const UNIQUE_START: usize = 7;

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub queries: Vec<Query>,
    /// corpus record index -> planted cohort.
    pub planted: Vec<usize>,
    pub query_cohorts: Vec<usize>,
    pub query_labels: Vec<bool>,
    pub features: HashMap<String, BTreeSet<u32>>,
    /// query id -> coverage target.
    pub targets: HashMap<String, BTreeSet<u32>>,
}

impl SyntheticData {
    pub fn coverage_oracle_for(&self, query_id: &str) -> Result<CoverageOracle, GainError> {
        let target = self
            .targets
            .get(query_id)
            .cloned()
            .ok_or_else(|| GainError::Protocol(format!("no target for query '{query_id}'")))?;
        make_coverage_oracle(self.features.clone(), target)
    }
}

fn gauss_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn record_text(id: &str, embedding: &[f64]) -> String {
    let mut lines = vec![format!(
        "Measurements for case {id}: {} features",
        embedding.len()
    )];
    for (d, v) in embedding.iter().enumerate() {
        lines.push(format!(
            "Feature {d:02} (unit: U): [{:.2}, {:.2}, {:.2}]",
            v,
            v * 1.02 + 0.01,
            v * 0.98 - 0.01
        ));
    }
    lines.join("\n")
}

/// Generates a corpus, queries, planted cohorts, and coverage instances.
/// Same spec and query count produce identical output.
pub fn generate(spec: &SyntheticSpec, n_queries: usize) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base_count = ((spec.redundancy * FEATURES_PER_MEMBER as f64).round() as usize).max(1);

    // Cohort centers sit near distinct coordinate axes, pushed out by the
    // separation factor so cosine similarity cleanly separates cohorts.
    let centers: Vec<Vec<f64>> = (0..spec.n_cohorts)
        .map(|c| {
            let mut center = gauss_vec(&mut rng, spec.dim);
            for x in center.iter_mut() {
                *x *= 0.3;
            }
            center[c % spec.dim] += spec.inter_separation;
            center
        })
        .collect();

    let mut records = Vec::new();
    let mut planted = Vec::new();
    let mut features: HashMap<String, BTreeSet<u32>> = HashMap::new();
    let mut cohort_pools: Vec<BTreeSet<u32>> = Vec::new();
    let mut next_feature: u32 = 0;

    for (c, center) in centers.iter().enumerate() {
        let base: BTreeSet<u32> = (next_feature..next_feature + base_count as u32).collect();
        next_feature += base_count as u32;
        let mut pool = base.clone();
        let majority = c % 2 == 1;
        for j in 0..spec.cohort_size {
            let id = records.len().to_string();
            // Earlier members are both closer to the center and richer in
            // unique features, so similarity ranking correlates with
            // informativeness.
            let noise_scale = spec.intra_spread * (1.0 + 0.3 * j as f64);
            let noise = gauss_vec(&mut rng, spec.dim);
            let embedding: Vec<f64> = center
                .iter()
                .zip(&noise)
                .map(|(m, n)| m + n * noise_scale)
                .collect();
            let unique_count = UNIQUE_START.saturating_sub(j).max(1);
            let unique: BTreeSet<u32> =
                (next_feature..next_feature + unique_count as u32).collect();
            next_feature += unique_count as u32;
            pool.extend(unique.iter().copied());
            let mut member_features = base.clone();
            member_features.extend(unique);
            features.insert(id.clone(), member_features);
            let label = if rng.gen_bool(spec.label_rule.noise) {
                !majority
            } else {
                majority
            };
            records.push(InstanceRecord {
                record_text: record_text(&id, &embedding),
                id,
                embedding,
                label: Label::Int(label as i64),
            });
            planted.push(c);
        }
        cohort_pools.push(pool);
    }

    let mut queries = Vec::new();
    let mut query_cohorts = Vec::new();
    let mut query_labels = Vec::new();
    let mut targets: HashMap<String, BTreeSet<u32>> = HashMap::new();
    for i in 0..n_queries {
        let c = i % spec.n_cohorts;
        let id = format!("q{i}");
        let noise = gauss_vec(&mut rng, spec.dim);
        let embedding: Vec<f64> = centers[c]
            .iter()
            .zip(&noise)
            .map(|(m, n)| m + n * spec.intra_spread * 0.5)
            .collect();
        let majority = c % 2 == 1;
        let label = if rng.gen_bool(spec.label_rule.noise) {
            !majority
        } else {
            majority
        };
        targets.insert(id.clone(), cohort_pools[c].clone());
        queries.push(Query {
            record_text: record_text(&id, &embedding),
            id,
            embedding,
        });
        query_cohorts.push(c);
        query_labels.push(label);
    }

    SyntheticData {
        corpus: Corpus::new(records).expect("generated corpus is valid"),
        queries,
        planted,
        query_cohorts,
        query_labels,
        features,
        targets,
    }
}

/// Sidecar manifest tying a generated corpus to its planted structure and
/// coverage instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticSpec,
    pub n_queries: usize,
    #[serde(default)]
    pub corpus_hash: String,
    pub features: BTreeMap<String, Vec<u32>>,
    pub targets: BTreeMap<String, Vec<u32>>,
    pub planted: BTreeMap<String, usize>,
    pub query_labels: BTreeMap<String, u8>,
}

impl Manifest {
    pub fn from_data(spec: &SyntheticSpec, data: &SyntheticData, corpus_hash: &str) -> Self {
        Manifest {
            spec: spec.clone(),
            n_queries: data.queries.len(),
            corpus_hash: corpus_hash.to_string(),
            features: data
                .features
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().copied().collect()))
                .collect(),
            targets: data
                .targets
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().copied().collect()))
                .collect(),
            planted: data
                .planted
                .iter()
                .enumerate()
                .map(|(i, &c)| (i.to_string(), c))
                .collect(),
            query_labels: data
                .queries
                .iter()
                .zip(&data.query_labels)
                .map(|(q, &l)| (q.id.clone(), l as u8))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PilotError> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| PilotError::Manifest(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| PilotError::Manifest(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PilotError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PilotError::Manifest(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| PilotError::Manifest(e.to_string()))
    }

    pub fn coverage_oracle_for(&self, query_id: &str) -> Result<CoverageOracle, GainError> {
        let target: BTreeSet<u32> = self
            .targets
            .get(query_id)
            .ok_or_else(|| GainError::Protocol(format!("no target for query '{query_id}'")))?
            .iter()
            .copied()
            .collect();
        let features: HashMap<String, BTreeSet<u32>> = self
            .features
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().copied().collect()))
            .collect();
        make_coverage_oracle(features, target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Random,
    TopkEmbedding,
    PerExampleEntropy,
}

/// Baseline demonstration selectors. Returns the selected node indices in
/// pick order and the number of oracle calls spent.
pub fn baseline_select(
    method: BaselineMethod,
    query: &Query,
    corpus: &Corpus,
    oracle: &dyn GainOracle,
    k: usize,
    seed: u64,
) -> Result<(Vec<usize>, usize), GainError> {
    let k = k.min(corpus.len());
    match method {
        BaselineMethod::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picks = rand::seq::index::sample(&mut rng, corpus.len(), k).into_vec();
            Ok((picks, 0))
        }
        BaselineMethod::TopkEmbedding => {
            let mut ranked: Vec<(f64, usize)> = (0..corpus.len())
                .map(|v| (cosine_sim(&query.embedding, corpus.embedding(v)), v))
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            Ok((ranked.into_iter().take(k).map(|(_, v)| v).collect(), 0))
        }
        BaselineMethod::PerExampleEntropy => {
            let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(corpus.len());
            for v in 0..corpus.len() {
                let gain = oracle.evaluate(query, &[], corpus.record(v))?;
                ranked.push((gain, v));
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            Ok((
                ranked.into_iter().take(k).map(|(_, v)| v).collect(),
                corpus.len(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PilotMethod {
    Random,
    TopkEmbedding,
    PerExampleEntropy,
    EngineFull,
    EngineLazy,
}

impl std::fmt::Display for PilotMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PilotMethod::Random => "random",
            PilotMethod::TopkEmbedding => "topk_embedding",
            PilotMethod::PerExampleEntropy => "per_example_entropy",
            PilotMethod::EngineFull => "engine_full",
            PilotMethod::EngineLazy => "engine_lazy",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone)]
pub struct PilotParams {
    pub k_g: usize,
    pub k_c: usize,
    pub k_a: usize,
    pub resolution: f64,
    pub partition_seed: u64,
    pub n_queries: usize,
    pub f1_threshold: f64,
}

impl Default for PilotParams {
    fn default() -> Self {
        PilotParams {
            k_g: 8,
            k_c: 3,
            k_a: 3,
            resolution: 0.9,
            partition_seed: 0,
            n_queries: 40,
            f1_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub k: usize,
    pub auroc: f64,
    pub auprc: f64,
    pub f1: f64,
    pub mean_delta_h: f64,
    /// Total oracle calls the method spent across all queries.
    pub oracle_calls: usize,
    /// Total wall time for the method across all queries and shot counts.
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,k,auroc,auprc,f1,mean_delta_h,oracle_calls,wall_time_ms\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{:.3}\n",
                r.method,
                r.k,
                r.auroc,
                r.auprc,
                r.f1,
                r.mean_delta_h,
                r.oracle_calls,
                r.wall_time_ms
            ));
        }
        out
    }
}

struct QueryOutcome {
    picks: Vec<usize>,
    calls: usize,
}

/// Runs the pilot comparison: for each method and each shot count k, the
/// mean information gain over the query set and the classification metrics
/// of a demo-label vote. Selection runs once per query at the largest k;
/// smaller shot counts reuse prefixes (greedy sequences are prefix-stable).
pub fn run_pilot(
    spec: &SyntheticSpec,
    methods: &[PilotMethod],
    k_range: &[usize],
    params: &PilotParams,
) -> Result<EvalReport, PilotError> {
    let data = generate(spec, params.n_queries);
    let graph = build_knn_graph(&data.corpus, params.k_g)?;
    let mut partition = discover_cohorts(
        &graph,
        Method::Leiden,
        params.resolution,
        params.partition_seed,
    )?;
    partition.attach_prototypes(&data.corpus)?;
    let k_max = k_range.iter().copied().max().unwrap_or(0);

    let mut report = EvalReport::default();
    for &method in methods {
        let start = Instant::now();
        let outcomes: Vec<Result<QueryOutcome, PilotError>> = data
            .queries
            .par_iter()
            .enumerate()
            .map(|(qi, query)| {
                run_query(method, qi, query, &data, &graph, &partition, params, k_max)
            })
            .collect();
        let outcomes: Vec<QueryOutcome> = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
        let wall_time_ms = start.elapsed().as_secs_f64() * 1000.0;
        let total_calls: usize = outcomes.iter().map(|o| o.calls).sum();

        for &k in k_range {
            let mut scores = Vec::with_capacity(data.queries.len());
            let mut delta_hs = Vec::with_capacity(data.queries.len());
            for (qi, outcome) in outcomes.iter().enumerate() {
                let take = k.min(outcome.picks.len());
                let demos: Vec<&InstanceRecord> = outcome.picks[..take]
                    .iter()
                    .map(|&v| data.corpus.record(v))
                    .collect();
                let oracle = data.coverage_oracle_for(&data.queries[qi].id)?;
                delta_hs.push(pilot_delta_h(&oracle, &data.queries[qi], &demos)?);
                scores.push(vote_score(&demos));
            }
            let mean_delta_h = delta_hs.iter().sum::<f64>() / delta_hs.len().max(1) as f64;
            report.rows.push(EvalRow {
                method: method.to_string(),
                k,
                auroc: metrics::auroc(&scores, &data.query_labels)?,
                auprc: metrics::auprc(&scores, &data.query_labels)?,
                f1: metrics::f1(&scores, &data.query_labels, params.f1_threshold)?,
                mean_delta_h,
                oracle_calls: total_calls,
                wall_time_ms,
            });
        }
    }
    Ok(report)
}

/// Desk-scale stand-in prediction: the mean of the selected demos' binary
/// labels (0.5 when nothing was selected).
pub fn vote_score(demos: &[&InstanceRecord]) -> f64 {
    if demos.is_empty() {
        return 0.5;
    }
    let sum: f64 = demos
        .iter()
        .map(|d| d.label.as_binary().map(|b| b as u8 as f64).unwrap_or(0.5))
        .sum();
    sum / demos.len() as f64
}

#[allow(clippy::too_many_arguments)]
fn run_query(
    method: PilotMethod,
    qi: usize,
    query: &Query,
    data: &SyntheticData,
    graph: &SimilarityGraph,
    partition: &CohortPartition,
    params: &PilotParams,
    k_max: usize,
) -> Result<QueryOutcome, PilotError> {
    let oracle = data.coverage_oracle_for(&query.id)?;
    match method {
        PilotMethod::Random | PilotMethod::TopkEmbedding | PilotMethod::PerExampleEntropy => {
            let baseline = match method {
                PilotMethod::Random => BaselineMethod::Random,
                PilotMethod::TopkEmbedding => BaselineMethod::TopkEmbedding,
                _ => BaselineMethod::PerExampleEntropy,
            };
            let (picks, calls) = baseline_select(
                baseline,
                query,
                &data.corpus,
                &oracle,
                k_max,
                data.corpus.len() as u64 ^ (qi as u64).wrapping_mul(0x9e37),
            )?;
            Ok(QueryOutcome { picks, calls })
        }
        PilotMethod::EngineFull | PilotMethod::EngineLazy => {
            let config = SelectConfig {
                budget: k_max,
                k_c: params.k_c,
                k_a: params.k_a,
                mode: if method == PilotMethod::EngineFull {
                    SearchMode::FullGreedy
                } else {
                    SearchMode::LazyGreedy
                },
                early_stop: true,
                ablation: Ablation::None,
            };
            let trace =
                select_demonstrations(query, &data.corpus, graph, partition, &oracle, &config)?;
            Ok(QueryOutcome {
                picks: trace.selected_nodes(),
                calls: trace.oracle_calls,
            })
        }
    }
}
