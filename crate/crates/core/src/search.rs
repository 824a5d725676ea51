//! Greedy demonstration search with frontier expansion.
//!
//! Each round scores frontier candidates by marginal gain against the
//! current selection, takes the argmax (ties to the lower node id), removes
//! it from the frontier and adds its graph neighbors. With early stopping
//! on, selection halts as soon as the best available gain is non-positive;
//! the winning candidate is discarded, never added.
//!
//! The lazy variant keeps cached gains in a max-priority queue. Cached
//! values are upper bounds under a diminishing-returns objective, so a
//! popped entry whose recomputed gain still beats every remaining cached key
//! is the true argmax. Acceptance on an exact tie additionally requires the
//! popped node id to be below the next entry's id, which keeps the selected
//! sequence identical to full greedy even through ties. For objectives that
//! are not submodular (live LLMs), lazy greedy is a heuristic and no
//! equivalence is claimed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohorts::CohortPartition;
use crate::corpus::{Corpus, InstanceRecord, Query};
use crate::gain::{GainError, GainOracle};
use crate::graph::SimilarityGraph;
use crate::retrieval::{init_anchors, init_anchors_global, retrieve_cohorts, Frontier, Origin};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("oracle failed during selection: {source}")]
    Oracle {
        /// Selection state up to the failure, flagged incomplete.
        partial: Box<SelectionTrace>,
        #[source]
        source: GainError,
    },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetReached,
    NoPositiveGain,
    FrontierExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[clap(name = "full")]
    FullGreedy,
    #[clap(name = "lazy")]
    LazyGreedy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionStep {
    pub node: usize,
    pub gain: f64,
    pub round: usize,
    /// Frontier entrants contributed by this pick's neighborhood.
    #[serde(default)]
    pub expanded: usize,
}

/// Ordered selection result with enough bookkeeping to audit the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub selected: Vec<SelectionStep>,
    /// Frontier size at the start of each scoring round.
    pub frontier_sizes: Vec<usize>,
    pub oracle_calls: usize,
    pub stop_reason: StopReason,
    pub mode: SearchMode,
    /// Set when the oracle failed and the trace covers only part of the run.
    pub incomplete: bool,
    /// Provenance of every node that ever entered the frontier.
    pub frontier_log: Vec<(usize, Origin)>,
}

impl SelectionTrace {
    fn new(mode: SearchMode) -> Self {
        SelectionTrace {
            selected: Vec::new(),
            frontier_sizes: Vec::new(),
            oracle_calls: 0,
            stop_reason: StopReason::BudgetReached,
            mode,
            incomplete: false,
            frontier_log: Vec::new(),
        }
    }

    pub fn selected_nodes(&self) -> Vec<usize> {
        self.selected.iter().map(|s| s.node).collect()
    }

    pub fn total_gain(&self) -> f64 {
        self.selected.iter().map(|s| s.gain).sum()
    }

    fn finish(mut self, frontier: &Frontier, reason: StopReason) -> Self {
        self.stop_reason = reason;
        self.frontier_log = frontier
            .provenance()
            .iter()
            .map(|(&node, &origin)| (node, origin))
            .collect();
        self
    }

    fn abort(mut self, frontier: &Frontier, source: GainError) -> SearchError {
        self.incomplete = true;
        self.frontier_log = frontier
            .provenance()
            .iter()
            .map(|(&node, &origin)| (node, origin))
            .collect();
        SearchError::Oracle {
            partial: Box::new(self),
            source,
        }
    }
}

/// Shared immutable inputs for one query's search.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub query: &'a Query,
    pub corpus: &'a Corpus,
    pub graph: &'a SimilarityGraph,
    pub oracle: &'a dyn GainOracle,
}

impl<'a> SearchContext<'a> {
    fn records_of(&self, nodes: &[SelectionStep]) -> Vec<&'a InstanceRecord> {
        nodes.iter().map(|s| self.corpus.record(s.node)).collect()
    }

    fn expand(&self, frontier: &mut Frontier, selected: usize) -> Vec<usize> {
        let mut added = Vec::new();
        for &u in self
            .graph
            .neighbors(selected)
            .expect("selected node in range")
        {
            if frontier.insert(u, Origin::Expansion) {
                added.push(u);
            }
        }
        added
    }
}

/// Full greedy: rescans the whole frontier every round.
pub fn full_greedy_select(
    ctx: SearchContext<'_>,
    mut frontier: Frontier,
    budget: usize,
    early_stop: bool,
) -> Result<SelectionTrace, SearchError> {
    let mut trace = SelectionTrace::new(SearchMode::FullGreedy);
    loop {
        if trace.selected.len() >= budget {
            return Ok(trace.finish(&frontier, StopReason::BudgetReached));
        }
        if frontier.is_empty() {
            return Ok(trace.finish(&frontier, StopReason::FrontierExhausted));
        }
        trace.frontier_sizes.push(frontier.len());
        let demos = ctx.records_of(&trace.selected);
        let mut best: Option<(usize, f64)> = None;
        for v in frontier.iter() {
            let gain = match ctx.oracle.evaluate(ctx.query, &demos, ctx.corpus.record(v)) {
                Ok(g) => g,
                Err(e) => return Err(trace.abort(&frontier, e)),
            };
            trace.oracle_calls += 1;
            // Strict comparison keeps the lowest id on gain ties.
            if best.is_none_or(|(_, bg)| gain > bg) {
                best = Some((v, gain));
            }
        }
        let (node, gain) = best.expect("frontier non-empty");
        if early_stop && gain <= 0.0 {
            return Ok(trace.finish(&frontier, StopReason::NoPositiveGain));
        }
        let round = trace.selected.len();
        trace.selected.push(SelectionStep {
            node,
            gain,
            round,
            expanded: 0,
        });
        frontier.exclude(node);
        let added = ctx.expand(&mut frontier, node);
        trace.selected.last_mut().expect("just pushed").expanded = added.len();
    }
}

// Max-heap entry: higher gain first, lower node id on ties.
#[derive(Debug)]
struct QueueEntry {
    gain: f64,
    node: usize,
    stamp: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.gain == other.gain && self.node == other.node
    }
}

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Lazy greedy: pops the best cached gain, recomputes it only when stale,
/// and accepts when the fresh value still dominates the queue.
pub fn lazy_greedy_select(
    ctx: SearchContext<'_>,
    mut frontier: Frontier,
    budget: usize,
    early_stop: bool,
) -> Result<SelectionTrace, SearchError> {
    use std::collections::BinaryHeap;

    let mut trace = SelectionTrace::new(SearchMode::LazyGreedy);
    if budget == 0 {
        return Ok(trace.finish(&frontier, StopReason::BudgetReached));
    }

    let mut queue: BinaryHeap<QueueEntry> = BinaryHeap::new();
    let mut round = 0usize;
    let initial: Vec<usize> = frontier.iter().collect();
    for v in initial {
        let gain = match ctx.oracle.evaluate(ctx.query, &[], ctx.corpus.record(v)) {
            Ok(g) => g,
            Err(e) => return Err(trace.abort(&frontier, e)),
        };
        trace.oracle_calls += 1;
        queue.push(QueueEntry {
            gain,
            node: v,
            stamp: 0,
        });
    }

    loop {
        if trace.selected.len() >= budget {
            return Ok(trace.finish(&frontier, StopReason::BudgetReached));
        }
        if queue.is_empty() {
            return Ok(trace.finish(&frontier, StopReason::FrontierExhausted));
        }
        if trace.frontier_sizes.len() == round {
            trace.frontier_sizes.push(frontier.len());
        }

        let entry = queue.pop().expect("queue non-empty");
        if !frontier.contains(entry.node) {
            continue;
        }
        let gain = if entry.stamp == round {
            entry.gain
        } else {
            let demos = ctx.records_of(&trace.selected);
            let fresh = match ctx
                .oracle
                .evaluate(ctx.query, &demos, ctx.corpus.record(entry.node))
            {
                Ok(g) => g,
                Err(e) => return Err(trace.abort(&frontier, e)),
            };
            trace.oracle_calls += 1;
            let dominates = match queue.peek() {
                None => true,
                Some(next) => fresh > next.gain || (fresh == next.gain && entry.node < next.node),
            };
            if !dominates {
                queue.push(QueueEntry {
                    gain: fresh,
                    node: entry.node,
                    stamp: round,
                });
                continue;
            }
            fresh
        };

        if early_stop && gain <= 0.0 {
            return Ok(trace.finish(&frontier, StopReason::NoPositiveGain));
        }
        let node = entry.node;
        trace.selected.push(SelectionStep {
            node,
            gain,
            round,
            expanded: 0,
        });
        frontier.exclude(node);
        round += 1;
        let added = ctx.expand(&mut frontier, node);
        trace.selected.last_mut().expect("just pushed").expanded = added.len();
        // With the budget met there is no further round, so entrants need
        // no evaluation; full greedy would never score them either.
        if trace.selected.len() >= budget {
            continue;
        }
        let demos = ctx.records_of(&trace.selected);
        for u in added {
            let g = match ctx.oracle.evaluate(ctx.query, &demos, ctx.corpus.record(u)) {
                Ok(g) => g,
                Err(e) => return Err(trace.abort(&frontier, e)),
            };
            trace.oracle_calls += 1;
            queue.push(QueueEntry {
                gain: g,
                node: u,
                stamp: round,
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    None,
    /// Bypass cohort retrieval: seed the frontier with the global
    /// top-(K_c * K_a) nearest nodes.
    NoCohort,
    /// Rank the initial frontier by each candidate's individual gain from
    /// the empty set and take the top-K; no search, no expansion.
    NoGreedy,
}

#[derive(Debug, Clone)]
pub struct SelectConfig {
    pub budget: usize,
    pub k_c: usize,
    pub k_a: usize,
    pub mode: SearchMode,
    pub early_stop: bool,
    pub ablation: Ablation,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            budget: 4,
            k_c: 3,
            k_a: 3,
            mode: SearchMode::LazyGreedy,
            early_stop: true,
            ablation: Ablation::None,
        }
    }
}

/// Whole pipeline for one query: cohort retrieval, anchor initialization,
/// then the configured search mode (or an ablated variant).
pub fn select_demonstrations(
    query: &Query,
    corpus: &Corpus,
    graph: &SimilarityGraph,
    partition: &CohortPartition,
    oracle: &dyn GainOracle,
    config: &SelectConfig,
) -> Result<SelectionTrace, SearchError> {
    corpus.check_query(query)?;
    let frontier = match config.ablation {
        Ablation::NoCohort => init_anchors_global(query, corpus, config.k_c * config.k_a),
        _ => {
            let retrieved = retrieve_cohorts(query, partition, config.k_c);
            init_anchors(query, partition, &retrieved, config.k_a, corpus)
        }
    };
    let ctx = SearchContext {
        query,
        corpus,
        graph,
        oracle,
    };
    match config.ablation {
        Ablation::NoGreedy => individual_topk(ctx, frontier, config),
        _ => match config.mode {
            SearchMode::FullGreedy => {
                full_greedy_select(ctx, frontier, config.budget, config.early_stop)
            }
            SearchMode::LazyGreedy => {
                lazy_greedy_select(ctx, frontier, config.budget, config.early_stop)
            }
        },
    }
}

// "No greedy" ablation: one scoring round of individual gains from the
// empty set, then take the top-K. Early stopping still refuses non-positive
// entries so recorded gains stay positive.
fn individual_topk(
    ctx: SearchContext<'_>,
    mut frontier: Frontier,
    config: &SelectConfig,
) -> Result<SelectionTrace, SearchError> {
    let mut trace = SelectionTrace::new(config.mode);
    if config.budget == 0 {
        return Ok(trace.finish(&frontier, StopReason::BudgetReached));
    }
    if frontier.is_empty() {
        return Ok(trace.finish(&frontier, StopReason::FrontierExhausted));
    }
    trace.frontier_sizes.push(frontier.len());
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(frontier.len());
    for v in frontier.iter() {
        let gain = match ctx.oracle.evaluate(ctx.query, &[], ctx.corpus.record(v)) {
            Ok(g) => g,
            Err(e) => return Err(trace.abort(&frontier, e)),
        };
        trace.oracle_calls += 1;
        scored.push((gain, v));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut reason = if scored.len() >= config.budget {
        StopReason::BudgetReached
    } else {
        StopReason::FrontierExhausted
    };
    for &(gain, node) in scored.iter().take(config.budget) {
        if config.early_stop && gain <= 0.0 {
            reason = StopReason::NoPositiveGain;
            break;
        }
        trace.selected.push(SelectionStep {
            node,
            gain,
            round: 0,
            expanded: 0,
        });
        frontier.exclude(node);
    }
    Ok(trace.finish(&frontier, reason))
}
