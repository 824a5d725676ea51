//! Cohort discovery by modularity optimization.
//!
//! Partitions the similarity graph into cohorts with either Louvain
//! (local moving + aggregation) or Leiden (local moving + refinement +
//! aggregation). Leiden's refinement phase only ever grows a refined group
//! across an edge inside the parent community, which is what keeps every
//! returned cohort connected. Both methods are deterministic given a seed:
//! the node sweep order is shuffled once per level, ties in move gain are
//! broken toward the current community, then toward the smallest community
//! label.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::graph::SimilarityGraph;

/// A strict improvement smaller than this is treated as a tie.
const MOVE_EPS: f64 = 1e-12;
/// Sweep convergence tolerance on accumulated modularity gain.
const SWEEP_TOL: f64 = 1e-10;
/// Hard cap on aggregation levels.
const MAX_LEVELS: usize = 100;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("modularity is undefined on a graph with no edges")]
    UndefinedModularity,
    #[error("assignment covers {got} nodes, graph has {expected}")]
    PartialAssignment { expected: usize, got: usize },
    #[error("resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error("partition covers {got} nodes, corpus has {expected}")]
    CorpusMismatch { expected: usize, got: usize },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid cohort file {path}: {reason}")]
    Malformed { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Leiden,
    Louvain,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Leiden => write!(f, "leiden"),
            Method::Louvain => write!(f, "louvain"),
        }
    }
}

/// Disjoint node communities plus per-cohort prototypes.
#[derive(Debug, Clone)]
pub struct CohortPartition {
    /// node -> cohort id (cohort ids are compact, ordered by smallest member).
    pub assignment: Vec<usize>,
    /// cohort id -> sorted member list.
    pub cohorts: Vec<Vec<usize>>,
    /// cohort id -> mean embedding; empty until attached from a corpus.
    pub prototypes: Vec<Vec<f64>>,
    pub modularity: f64,
    pub method: Method,
    pub resolution: f64,
    pub seed: u64,
    /// Modularity recorded after each optimization level; non-decreasing.
    pub level_modularity: Vec<f64>,
}

impl CohortPartition {
    pub fn n_cohorts(&self) -> usize {
        self.cohorts.len()
    }

    pub fn cohort_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    /// Computes and stores per-cohort mean embeddings.
    pub fn attach_prototypes(&mut self, corpus: &Corpus) -> Result<(), CohortError> {
        self.prototypes = prototypes(self, corpus)?;
        Ok(())
    }
}

/// Modularity of an assignment at resolution `gamma`:
/// Q = (1/2m) * sum_{i,j} (A_ij - gamma * d_i * d_j / 2m) * [c_i = c_j],
/// computed per community from intra-edge counts and degree sums.
pub fn modularity(
    g: &SimilarityGraph,
    assignment: &[usize],
    resolution: f64,
) -> Result<f64, CohortError> {
    if g.m() == 0 {
        return Err(CohortError::UndefinedModularity);
    }
    if assignment.len() != g.n() {
        return Err(CohortError::PartialAssignment {
            expected: g.n(),
            got: assignment.len(),
        });
    }
    let two_m = 2.0 * g.m() as f64;
    let n_comms = assignment.iter().max().map_or(0, |&c| c + 1);
    let mut intra = vec![0.0f64; n_comms];
    let mut degree_sum = vec![0.0f64; n_comms];
    for i in 0..g.n() {
        degree_sum[assignment[i]] += g.degree(i) as f64;
        for &j in g.neighbors(i).expect("node in range") {
            if i < j && assignment[i] == assignment[j] {
                intra[assignment[i]] += 1.0;
            }
        }
    }
    let mut q = 0.0;
    for c in 0..n_comms {
        q += 2.0 * intra[c] / two_m - resolution * (degree_sum[c] / two_m).powi(2);
    }
    Ok(q)
}

/// True when the induced subgraph over `members` is connected.
pub fn is_connected(g: &SimilarityGraph, members: &[usize]) -> bool {
    if members.is_empty() {
        return false;
    }
    let member_set: std::collections::HashSet<usize> = members.iter().copied().collect();
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![members[0]];
    seen.insert(members[0]);
    while let Some(v) = stack.pop() {
        for &u in g.neighbors(v).expect("node in range") {
            if member_set.contains(&u) && seen.insert(u) {
                stack.push(u);
            }
        }
    }
    seen.len() == members.len()
}

// Weighted multigraph view used across aggregation levels. `two_m` is the
// total edge weight times two and stays constant through aggregation.
struct LevelGraph {
    n: usize,
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    degree: Vec<f64>,
    two_m: f64,
}

impl LevelGraph {
    fn from_similarity(g: &SimilarityGraph) -> Self {
        let n = g.n();
        let adj: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = g
                    .neighbors(i)
                    .expect("node in range")
                    .iter()
                    .map(|&j| (j, 1.0))
                    .collect();
                row.sort_unstable_by_key(|&(j, _)| j);
                row
            })
            .collect();
        let degree: Vec<f64> = adj
            .iter()
            .map(|row| row.iter().map(|&(_, w)| w).sum())
            .collect();
        let two_m = degree.iter().sum();
        LevelGraph {
            n,
            adj,
            self_loop: vec![0.0; n],
            degree,
            two_m,
        }
    }

    /// Collapses refined groups into super-nodes. Returns the aggregated
    /// graph and the node -> super-node map.
    fn aggregate(&self, refined: &[usize]) -> (LevelGraph, Vec<usize>) {
        let mut labels: Vec<usize> = refined.to_vec();
        labels.sort_unstable();
        labels.dedup();
        let compact: BTreeMap<usize, usize> =
            labels.iter().enumerate().map(|(s, &l)| (l, s)).collect();
        let n_super = labels.len();
        let node_to_super: Vec<usize> = refined.iter().map(|l| compact[l]).collect();

        let mut inter: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_super];
        let mut self_loop = vec![0.0f64; n_super];
        for u in 0..self.n {
            let su = node_to_super[u];
            self_loop[su] += self.self_loop[u];
            for &(v, w) in &self.adj[u] {
                if u < v {
                    let sv = node_to_super[v];
                    if su == sv {
                        self_loop[su] += w;
                    } else {
                        *inter[su].entry(sv).or_insert(0.0) += w;
                        *inter[sv].entry(su).or_insert(0.0) += w;
                    }
                }
            }
        }
        let adj: Vec<Vec<(usize, f64)>> = inter
            .into_iter()
            .map(|row| row.into_iter().collect())
            .collect();
        let degree: Vec<f64> = (0..n_super)
            .map(|s| adj[s].iter().map(|&(_, w)| w).sum::<f64>() + 2.0 * self_loop[s])
            .collect();
        (
            LevelGraph {
                n: n_super,
                adj,
                self_loop,
                degree,
                two_m: self.two_m,
            },
            node_to_super,
        )
    }
}

/// One local-moving phase. Sweeps nodes in `order` until the accumulated
/// modularity gain of a full sweep drops below tolerance. Returns whether
/// any move was made.
fn local_move(
    lg: &LevelGraph,
    comm: &mut [usize],
    comm_tot: &mut [f64],
    order: &[usize],
    resolution: f64,
) -> bool {
    let mut moved_any = false;
    loop {
        let mut sweep_gain = 0.0;
        for &v in order {
            let c0 = comm[v];
            let d_v = lg.degree[v];
            comm_tot[c0] -= d_v;

            // Edge weight from v into each adjacent community.
            let mut w_to: BTreeMap<usize, f64> = BTreeMap::new();
            for &(u, w) in &lg.adj[v] {
                *w_to.entry(comm[u]).or_insert(0.0) += w;
            }
            let score = |c: usize, w: f64| w - resolution * d_v * comm_tot[c] / lg.two_m;
            let stay = score(c0, w_to.get(&c0).copied().unwrap_or(0.0));
            let mut best_comm = c0;
            let mut best_score = stay;
            for (&c, &w) in &w_to {
                if c == c0 {
                    continue;
                }
                let s = score(c, w);
                if s > best_score + MOVE_EPS {
                    best_comm = c;
                    best_score = s;
                }
            }
            comm[v] = best_comm;
            comm_tot[best_comm] += d_v;
            if best_comm != c0 {
                moved_any = true;
                sweep_gain += 2.0 * (best_score - stay) / lg.two_m;
            }
        }
        if sweep_gain < SWEEP_TOL {
            break;
        }
    }
    moved_any
}

/// Leiden refinement: starting from singletons, each node still alone may
/// merge into an adjacent refined group within its own community when the
/// move strictly improves modularity. Every merge crosses an edge, so each
/// refined group induces a connected subgraph.
fn refine(lg: &LevelGraph, comm: &[usize], order: &[usize], resolution: f64) -> Vec<usize> {
    let mut refined: Vec<usize> = (0..lg.n).collect();
    let mut ref_tot: Vec<f64> = lg.degree.clone();
    let mut group_size: Vec<usize> = vec![1; lg.n];
    for &v in order {
        if group_size[refined[v]] != 1 {
            continue;
        }
        let d_v = lg.degree[v];
        let mut w_to: BTreeMap<usize, f64> = BTreeMap::new();
        for &(u, w) in &lg.adj[v] {
            if comm[u] == comm[v] && refined[u] != refined[v] {
                *w_to.entry(refined[u]).or_insert(0.0) += w;
            }
        }
        let mut best_group = refined[v];
        let mut best_score = 0.0;
        for (&r, &w) in &w_to {
            let s = w - resolution * d_v * ref_tot[r] / lg.two_m;
            if s > best_score + MOVE_EPS {
                best_group = r;
                best_score = s;
            }
        }
        if best_group != refined[v] {
            ref_tot[refined[v]] -= d_v;
            ref_tot[best_group] += d_v;
            group_size[best_group] += group_size[refined[v]];
            refined[v] = best_group;
        }
    }
    refined
}

fn compact_labels(labels: &[usize]) -> Vec<usize> {
    let mut sorted: Vec<usize> = labels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let map: BTreeMap<usize, usize> = sorted.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    labels.iter().map(|l| map[l]).collect()
}

/// Splits any disconnected cohort into its connected components. Splitting a
/// disconnected community never lowers modularity (intra edges are untouched
/// while the degree penalty shrinks), so the recorded trail stays monotone.
fn split_disconnected(g: &SimilarityGraph, assignment: &mut [usize]) -> bool {
    let cohorts = members_by_cohort(assignment);
    let mut next = assignment.iter().max().map_or(0, |&c| c + 1);
    let mut changed = false;
    for members in cohorts {
        if members.is_empty() || is_connected(g, &members) {
            continue;
        }
        changed = true;
        let member_set: std::collections::HashSet<usize> = members.iter().copied().collect();
        let mut seen: std::collections::HashSet<usize> = std::collections::HashSet::new();
        let mut first_component = true;
        for &start in &members {
            if seen.contains(&start) {
                continue;
            }
            let mut stack = vec![start];
            let mut component = Vec::new();
            seen.insert(start);
            while let Some(v) = stack.pop() {
                component.push(v);
                for &u in g.neighbors(v).expect("node in range") {
                    if member_set.contains(&u) && seen.insert(u) {
                        stack.push(u);
                    }
                }
            }
            if first_component {
                first_component = false;
            } else {
                for v in component {
                    assignment[v] = next;
                }
                next += 1;
            }
        }
    }
    changed
}

fn members_by_cohort(assignment: &[usize]) -> Vec<Vec<usize>> {
    let n_comms = assignment.iter().max().map_or(0, |&c| c + 1);
    let mut cohorts = vec![Vec::new(); n_comms];
    for (node, &c) in assignment.iter().enumerate() {
        cohorts[c].push(node);
    }
    cohorts
}

/// Renumbers cohorts by their smallest member so the output is independent
/// of internal label churn.
fn canonical_partition(assignment: &[usize]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut cohorts: Vec<Vec<usize>> = members_by_cohort(assignment)
        .into_iter()
        .filter(|m| !m.is_empty())
        .collect();
    cohorts.sort_by_key(|m| m[0]);
    let mut canonical = vec![0usize; assignment.len()];
    for (id, members) in cohorts.iter().enumerate() {
        for &v in members {
            canonical[v] = id;
        }
    }
    (canonical, cohorts)
}

/// Discovers cohorts by modularity optimization. Deterministic given
/// (graph, method, resolution, seed). A graph with no edges yields the
/// all-singleton partition.
pub fn discover_cohorts(
    g: &SimilarityGraph,
    method: Method,
    resolution: f64,
    seed: u64,
) -> Result<CohortPartition, CohortError> {
    if resolution <= 0.0 {
        return Err(CohortError::InvalidResolution(resolution));
    }
    let n = g.n();
    if g.m() == 0 {
        let assignment: Vec<usize> = (0..n).collect();
        let (canonical, cohorts) = canonical_partition(&assignment);
        return Ok(CohortPartition {
            assignment: canonical,
            cohorts,
            prototypes: Vec::new(),
            modularity: 0.0,
            method,
            resolution,
            seed,
            level_modularity: Vec::new(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lg = LevelGraph::from_similarity(g);
    // original node -> current level node
    let mut node_map: Vec<usize> = (0..n).collect();
    let mut comm: Vec<usize> = (0..lg.n).collect();
    let mut trail = Vec::new();

    for _level in 0..MAX_LEVELS {
        let mut order: Vec<usize> = (0..lg.n).collect();
        order.shuffle(&mut rng);
        let mut comm_tot = vec![0.0f64; lg.n];
        for v in 0..lg.n {
            comm_tot[comm[v]] += lg.degree[v];
        }
        let moved = local_move(&lg, &mut comm, &mut comm_tot, &order, resolution);

        let assignment: Vec<usize> =
            compact_labels(&node_map.iter().map(|&v| comm[v]).collect::<Vec<_>>());
        trail.push(modularity(g, &assignment, resolution)?);

        let refined = match method {
            Method::Leiden => refine(&lg, &comm, &order, resolution),
            Method::Louvain => comm.clone(),
        };
        let n_groups = {
            let mut labels = refined.clone();
            labels.sort_unstable();
            labels.dedup();
            labels.len()
        };
        if n_groups == lg.n && !moved {
            break;
        }
        if n_groups == lg.n {
            // Nothing left to aggregate; the local optimum is final.
            break;
        }

        let (agg, node_to_super) = lg.aggregate(&refined);
        // Carry community labels onto super-nodes; Louvain restarts each
        // level from singleton super-nodes instead.
        let mut next_comm = vec![0usize; agg.n];
        match method {
            Method::Leiden => {
                for v in 0..lg.n {
                    next_comm[node_to_super[v]] = comm[v];
                }
                next_comm = compact_labels(&next_comm);
            }
            Method::Louvain => {
                for (s, c) in next_comm.iter_mut().enumerate() {
                    *c = s;
                }
            }
        }
        for nm in node_map.iter_mut() {
            *nm = node_to_super[*nm];
        }
        lg = agg;
        comm = next_comm;
    }

    let mut assignment: Vec<usize> =
        compact_labels(&node_map.iter().map(|&v| comm[v]).collect::<Vec<_>>());
    if method == Method::Leiden && split_disconnected(g, &mut assignment) {
        trail.push(modularity(g, &compact_labels(&assignment), resolution)?);
    }
    let (canonical, cohorts) = canonical_partition(&assignment);
    let q = modularity(g, &canonical, resolution)?;

    Ok(CohortPartition {
        assignment: canonical,
        cohorts,
        prototypes: Vec::new(),
        modularity: q,
        method,
        resolution,
        seed,
        level_modularity: trail,
    })
}

/// Per-cohort mean embedding: z_m = (1/|C_m|) * sum of member embeddings.
pub fn prototypes(
    partition: &CohortPartition,
    corpus: &Corpus,
) -> Result<Vec<Vec<f64>>, CohortError> {
    if partition.assignment.len() != corpus.len() {
        return Err(CohortError::CorpusMismatch {
            expected: corpus.len(),
            got: partition.assignment.len(),
        });
    }
    let dim = corpus.dim();
    let mut protos = Vec::with_capacity(partition.cohorts.len());
    for members in &partition.cohorts {
        let mut mean = vec![0.0f64; dim];
        for &v in members {
            for (acc, x) in mean.iter_mut().zip(corpus.embedding(v)) {
                *acc += x;
            }
        }
        let inv = 1.0 / members.len() as f64;
        for acc in &mut mean {
            *acc *= inv;
        }
        protos.push(mean);
    }
    Ok(protos)
}

#[derive(Serialize, Deserialize)]
pub struct CohortFileEntry {
    pub id: usize,
    pub members: Vec<usize>,
    pub prototype: Vec<f64>,
}

/// On-disk cohort schema.
#[derive(Serialize, Deserialize)]
pub struct CohortFile {
    pub method: Method,
    pub resolution: f64,
    pub seed: u64,
    pub modularity: f64,
    pub cohorts: Vec<CohortFileEntry>,
    #[serde(default)]
    pub corpus_hash: String,
    #[serde(default)]
    pub graph_hash: String,
}

pub fn save_cohorts(
    partition: &CohortPartition,
    corpus_hash: &str,
    graph_hash: &str,
    path: &Path,
) -> Result<(), CohortError> {
    let file = CohortFile {
        method: partition.method,
        resolution: partition.resolution,
        seed: partition.seed,
        modularity: partition.modularity,
        cohorts: partition
            .cohorts
            .iter()
            .enumerate()
            .map(|(id, members)| CohortFileEntry {
                id,
                members: members.clone(),
                prototype: partition.prototypes.get(id).cloned().unwrap_or_default(),
            })
            .collect(),
        corpus_hash: corpus_hash.to_string(),
        graph_hash: graph_hash.to_string(),
    };
    let out = File::create(path).map_err(|source| CohortError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = BufWriter::new(out);
    serde_json::to_writer(&mut writer, &file).map_err(|e| CohortError::Malformed {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    writer.flush().map_err(|source| CohortError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn load_cohorts(path: &Path) -> Result<(CohortPartition, CohortFile), CohortError> {
    let file = File::open(path).map_err(|source| CohortError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parsed: CohortFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| CohortError::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    let n_nodes = parsed
        .cohorts
        .iter()
        .map(|c| c.members.iter().copied().max().map_or(0, |m| m + 1))
        .max()
        .unwrap_or(0);
    let mut assignment = vec![usize::MAX; n_nodes];
    let mut cohorts = Vec::with_capacity(parsed.cohorts.len());
    let mut prototypes = Vec::with_capacity(parsed.cohorts.len());
    for (idx, entry) in parsed.cohorts.iter().enumerate() {
        if entry.members.is_empty() {
            return Err(CohortError::Malformed {
                path: path.display().to_string(),
                reason: format!("cohort {} is empty", entry.id),
            });
        }
        for &v in &entry.members {
            if assignment[v] != usize::MAX {
                return Err(CohortError::Malformed {
                    path: path.display().to_string(),
                    reason: format!("node {v} assigned to multiple cohorts"),
                });
            }
            assignment[v] = idx;
        }
        let mut members = entry.members.clone();
        members.sort_unstable();
        cohorts.push(members);
        prototypes.push(entry.prototype.clone());
    }
    if assignment.contains(&usize::MAX) {
        return Err(CohortError::Malformed {
            path: path.display().to_string(),
            reason: "cohorts do not cover all nodes".into(),
        });
    }
    Ok((
        CohortPartition {
            assignment,
            cohorts,
            prototypes,
            modularity: parsed.modularity,
            method: parsed.method,
            resolution: parsed.resolution,
            seed: parsed.seed,
            level_modularity: Vec::new(),
        },
        parsed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InstanceRecord, Label};
    use crate::graph::SimilarityGraph;
    use approx::assert_abs_diff_eq;

    /// Literal double-sum over all ordered pairs (i, j), including i = j.
    fn brute_force_modularity(g: &SimilarityGraph, assignment: &[usize], gamma: f64) -> f64 {
        let two_m = 2.0 * g.m() as f64;
        let mut q = 0.0;
        for i in 0..g.n() {
            for j in 0..g.n() {
                if assignment[i] != assignment[j] {
                    continue;
                }
                let a_ij = if g.has_edge(i, j) { 1.0 } else { 0.0 };
                q += a_ij - gamma * (g.degree(i) * g.degree(j)) as f64 / two_m;
            }
        }
        q / two_m
    }

    fn two_triangles() -> SimilarityGraph {
        SimilarityGraph::from_edges(6, 2, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
            .unwrap()
    }

    #[test]
    fn two_triangles_modularity_is_half() {
        let g = two_triangles();
        let assignment = vec![0, 0, 0, 1, 1, 1];
        let q = modularity(&g, &assignment, 1.0).unwrap();
        assert_eq!(q, 0.5);
        assert_abs_diff_eq!(
            q,
            brute_force_modularity(&g, &assignment, 1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn one_community_triangle_matches_brute_force() {
        let g = SimilarityGraph::from_edges(3, 2, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let assignment = vec![0, 0, 0];
        let q = modularity(&g, &assignment, 1.0).unwrap();
        assert_abs_diff_eq!(
            q,
            brute_force_modularity(&g, &assignment, 1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn singleton_triangle_is_minus_third() {
        let g = SimilarityGraph::from_edges(3, 2, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let q = modularity(&g, &[0, 1, 2], 1.0).unwrap();
        assert_abs_diff_eq!(q, -1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            q,
            brute_force_modularity(&g, &[0, 1, 2], 1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn empty_graph_modularity_errors() {
        let g = SimilarityGraph::from_edges(3, 1, &[]).unwrap();
        assert!(matches!(
            modularity(&g, &[0, 1, 2], 1.0),
            Err(CohortError::UndefinedModularity)
        ));
    }

    // Restricted-growth-string enumeration of all set partitions of n items.
    fn all_partitions(n: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut rgs = vec![0usize; n];
        loop {
            out.push(rgs.clone());
            let mut i = n - 1;
            loop {
                if i == 0 {
                    return out;
                }
                let max_prev = rgs[..i].iter().max().copied().unwrap();
                if rgs[i] <= max_prev {
                    rgs[i] += 1;
                    for r in rgs[i + 1..].iter_mut() {
                        *r = 0;
                    }
                    break;
                }
                i -= 1;
            }
        }
    }

    #[test]
    fn two_triangle_partition_is_the_global_optimum() {
        let g = two_triangles();
        let mut best = f64::NEG_INFINITY;
        let mut argmax = Vec::new();
        for partition in all_partitions(6) {
            let q = modularity(&g, &partition, 1.0).unwrap();
            if q > best {
                best = q;
                argmax = partition;
            }
        }
        assert_eq!(best, 0.5);
        assert_eq!(argmax, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn discovers_two_triangles_exactly() {
        let g = two_triangles();
        for method in [Method::Leiden, Method::Louvain] {
            let p = discover_cohorts(&g, method, 1.0, 7).unwrap();
            assert_eq!(p.n_cohorts(), 2);
            assert_eq!(p.cohorts[0], vec![0, 1, 2]);
            assert_eq!(p.cohorts[1], vec![3, 4, 5]);
            assert_eq!(p.modularity, 0.5);
        }
    }

    #[test]
    fn single_node_single_cohort() {
        let g = SimilarityGraph::from_edges(1, 1, &[]).unwrap();
        let p = discover_cohorts(&g, Method::Leiden, 0.9, 0).unwrap();
        assert_eq!(p.n_cohorts(), 1);
        assert_eq!(p.cohorts[0], vec![0]);
    }

    #[test]
    fn edgeless_graph_yields_singletons() {
        let g = SimilarityGraph::from_edges(4, 1, &[]).unwrap();
        let p = discover_cohorts(&g, Method::Louvain, 1.0, 3).unwrap();
        assert_eq!(p.n_cohorts(), 4);
    }

    #[test]
    fn deterministic_given_seed() {
        let g = two_triangles();
        let a = discover_cohorts(&g, Method::Leiden, 0.9, 42).unwrap();
        let b = discover_cohorts(&g, Method::Leiden, 0.9, 42).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.level_modularity, b.level_modularity);
    }

    #[test]
    fn trail_is_non_decreasing_and_beats_singletons() {
        let g = karate_like(40, 4, 11);
        for method in [Method::Leiden, Method::Louvain] {
            let p = discover_cohorts(&g, method, 1.0, 5).unwrap();
            for w in p.level_modularity.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "trail decreased: {w:?}");
            }
            let singleton: Vec<usize> = (0..g.n()).collect();
            let q_singleton = modularity(&g, &singleton, 1.0).unwrap();
            assert!(p.modularity >= q_singleton);
        }
    }

    #[test]
    fn leiden_cohorts_are_connected() {
        for seed in 0..5u64 {
            let g = karate_like(60, 5, seed);
            let p = discover_cohorts(&g, Method::Leiden, 0.9, seed).unwrap();
            for members in &p.cohorts {
                assert!(is_connected(&g, members), "disconnected cohort {members:?}");
            }
        }
    }

    // Random blocky graph: ring of cliques with sparse bridges.
    fn karate_like(n: usize, block: usize, seed: u64) -> SimilarityGraph {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for b in (0..n).step_by(block) {
            let hi = (b + block).min(n);
            for i in b..hi {
                for j in (i + 1)..hi {
                    if rng.gen_bool(0.8) {
                        edges.push((i, j));
                    }
                }
            }
            if hi < n {
                edges.push((hi - 1, hi));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        SimilarityGraph::from_edges(n, block, &edges).unwrap()
    }

    #[test]
    fn modularity_agrees_with_brute_force_on_random_graphs() {
        use rand::Rng;
        for seed in 0..10u64 {
            let g = karate_like(50, 6, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let assignment: Vec<usize> = (0..g.n()).map(|_| rng.gen_range(0..5)).collect();
            let fast = modularity(&g, &assignment, 0.9).unwrap();
            let slow = brute_force_modularity(&g, &assignment, 0.9);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-9);
        }
    }

    #[test]
    fn prototype_of_singleton_is_the_embedding() {
        let records = vec![
            InstanceRecord {
                id: "0".into(),
                embedding: vec![1.0, 0.0],
                label: Label::Int(0),
                record_text: "r0".into(),
            },
            InstanceRecord {
                id: "1".into(),
                embedding: vec![0.0, 1.0],
                label: Label::Int(1),
                record_text: "r1".into(),
            },
        ];
        let corpus = Corpus::new(records).unwrap();
        let partition = CohortPartition {
            assignment: vec![0, 0],
            cohorts: vec![vec![0, 1]],
            prototypes: Vec::new(),
            modularity: 0.0,
            method: Method::Leiden,
            resolution: 1.0,
            seed: 0,
            level_modularity: Vec::new(),
        };
        let protos = prototypes(&partition, &corpus).unwrap();
        assert_eq!(protos, vec![vec![0.5, 0.5]]);

        let singleton = CohortPartition {
            assignment: vec![0, 1],
            cohorts: vec![vec![0], vec![1]],
            ..partition
        };
        let protos = prototypes(&singleton, &corpus).unwrap();
        assert_eq!(protos[0], vec![1.0, 0.0]);
        assert_eq!(protos[1], vec![0.0, 1.0]);
    }

    #[test]
    fn mean_matches_compensated_sum_on_large_cohort() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let records: Vec<InstanceRecord> = (0..100)
            .map(|i| InstanceRecord {
                id: i.to_string(),
                embedding: (0..8).map(|_| rng.gen_range(-100.0..100.0)).collect(),
                label: Label::Int(0),
                record_text: String::new(),
            })
            .collect();
        let corpus = Corpus::new(records).unwrap();
        let partition = CohortPartition {
            assignment: vec![0; 100],
            cohorts: vec![(0..100).collect()],
            prototypes: Vec::new(),
            modularity: 0.0,
            method: Method::Leiden,
            resolution: 1.0,
            seed: 0,
            level_modularity: Vec::new(),
        };
        let protos = prototypes(&partition, &corpus).unwrap();
        // Kahan-compensated reference.
        for (d, &proto_d) in protos[0].iter().enumerate() {
            let mut sum = 0.0f64;
            let mut c = 0.0f64;
            for i in 0..100 {
                let y = corpus.embedding(i)[d] - c;
                let t = sum + y;
                c = (t - sum) - y;
                sum = t;
            }
            assert_abs_diff_eq!(proto_d, sum / 100.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let g = two_triangles();
        let mut p = discover_cohorts(&g, Method::Leiden, 0.9, 1).unwrap();
        let records: Vec<InstanceRecord> = (0..6)
            .map(|i| InstanceRecord {
                id: i.to_string(),
                embedding: vec![i as f64, 1.0],
                label: Label::Int(0),
                record_text: String::new(),
            })
            .collect();
        let corpus = Corpus::new(records).unwrap();
        p.attach_prototypes(&corpus).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohorts.json");
        save_cohorts(&p, "ch", "gh", &path).unwrap();
        let (loaded, meta) = load_cohorts(&path).unwrap();
        assert_eq!(loaded.assignment, p.assignment);
        assert_eq!(loaded.prototypes, p.prototypes);
        assert_eq!(meta.corpus_hash, "ch");
        assert_eq!(meta.graph_hash, "gh");
    }
}
