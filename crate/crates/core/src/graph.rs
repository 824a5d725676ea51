//! Symmetrized kNN similarity graph over corpus embeddings.
//!
//! A directed edge (i, j) exists when j ranks among i's top-k_g neighbors by
//! cosine similarity; the undirected graph is the union-symmetrization of the
//! directed edge set, so frontier expansion can walk in either direction.
//! Construction is exact all-pairs, computed one source row at a time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{cosine_sim, Corpus};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph construction needs at least 2 records, got {0}")]
    TooFewNodes(usize),
    #[error("k_g must be at least 1")]
    ZeroK,
    #[error("node {node} out of range for graph with {n} nodes")]
    InvalidNode { node: usize, n: usize },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid graph file {path}: {reason}")]
    Malformed { path: String, reason: String },
}

/// Undirected kNN graph. Neighbor lists are kept in a deterministic order:
/// descending similarity, then ascending id (ascending id alone when the
/// graph was rebuilt without embeddings).
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    n: usize,
    k_g: usize,
    adjacency: Vec<Vec<usize>>,
    degrees: Vec<usize>,
    m: usize,
    /// Raw top-k_g edge set before symmetrization; retained for audit when
    /// the graph was built from a corpus, absent after a file reload.
    directed_edges: Option<Vec<(usize, usize)>>,
}

impl SimilarityGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_g(&self) -> usize {
        self.k_g
    }

    /// Total undirected edge count.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn degree(&self, v: usize) -> usize {
        self.degrees[v]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn directed_edges(&self) -> Option<&[(usize, usize)]> {
        self.directed_edges.as_deref()
    }

    /// Symmetrized neighbor list of `v` in deterministic order.
    pub fn neighbors(&self, v: usize) -> Result<&[usize], GraphError> {
        if v >= self.n {
            return Err(GraphError::InvalidNode { node: v, n: self.n });
        }
        Ok(&self.adjacency[v])
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && self.adjacency[i].contains(&j)
    }

    /// Undirected edge list, lexicographically sorted with i < j.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::with_capacity(self.m);
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            for &j in nbrs {
                if i < j {
                    edges.push((i, j));
                }
            }
        }
        edges.sort_unstable();
        edges
    }

    /// Rebuilds a graph from an undirected edge list. Neighbor lists are
    /// sorted by ascending id; call [`SimilarityGraph::sort_by_similarity`]
    /// to restore similarity order when embeddings are available.
    pub fn from_edges(n: usize, k_g: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::InvalidNode { node: i.max(j), n });
            }
            if i == j {
                return Err(GraphError::Malformed {
                    path: String::new(),
                    reason: format!("self-loop on node {i}"),
                });
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
            let before = nbrs.len();
            nbrs.dedup();
            if nbrs.len() != before {
                return Err(GraphError::Malformed {
                    path: String::new(),
                    reason: "duplicate edge".into(),
                });
            }
        }
        let degrees: Vec<usize> = adjacency.iter().map(Vec::len).collect();
        let m = degrees.iter().sum::<usize>() / 2;
        Ok(SimilarityGraph {
            n,
            k_g,
            adjacency,
            degrees,
            m,
            directed_edges: None,
        })
    }

    /// Reorders every neighbor list by descending similarity then ascending
    /// id, using the corpus embeddings.
    pub fn sort_by_similarity(&mut self, corpus: &Corpus) {
        for (i, nbrs) in self.adjacency.iter_mut().enumerate() {
            let base = corpus.embedding(i);
            nbrs.sort_by(|&a, &b| {
                let sa = cosine_sim(base, corpus.embedding(a));
                let sb = cosine_sim(base, corpus.embedding(b));
                sb.total_cmp(&sa).then(a.cmp(&b))
            });
        }
    }
}

/// Builds the symmetrized kNN graph. `k_g >= n` is clamped to `n - 1` with
/// a warning.
pub fn build_knn_graph(corpus: &Corpus, k_g: usize) -> Result<SimilarityGraph, GraphError> {
    let n = corpus.len();
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    if k_g == 0 {
        return Err(GraphError::ZeroK);
    }
    let k = if k_g >= n {
        log::warn!("k_g = {k_g} >= corpus size {n}; clamping to {}", n - 1);
        n - 1
    } else {
        k_g
    };

    // Top-k per source node; each row is independent.
    let top: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let base = corpus.embedding(i);
            let mut sims: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (cosine_sim(base, corpus.embedding(j)), j))
                .collect();
            sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            sims.truncate(k);
            sims.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let directed: Vec<(usize, usize)> = top
        .iter()
        .enumerate()
        .flat_map(|(i, nbrs)| nbrs.iter().map(move |&j| (i, j)))
        .collect();

    let mut adjacency = vec![Vec::new(); n];
    for (i, nbrs) in top.iter().enumerate() {
        for &j in nbrs {
            if !adjacency[i].contains(&j) {
                adjacency[i].push(j);
            }
            if !adjacency[j].contains(&i) {
                adjacency[j].push(i);
            }
        }
    }
    let degrees: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let m = degrees.iter().sum::<usize>() / 2;
    let mut graph = SimilarityGraph {
        n,
        k_g: k,
        adjacency,
        degrees,
        m,
        directed_edges: Some(directed),
    };
    graph.sort_by_similarity(corpus);
    Ok(graph)
}

/// On-disk graph schema.
#[derive(Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub k_g: usize,
    #[serde(default)]
    pub corpus_hash: String,
    pub edges: Vec<(usize, usize)>,
}

/// Writes the graph as JSON with a lexicographically sorted edge list, so
/// identical inputs produce byte-identical files.
pub fn save_graph(
    graph: &SimilarityGraph,
    corpus_hash: &str,
    path: &Path,
) -> Result<(), GraphError> {
    let file = GraphFile {
        n: graph.n,
        k_g: graph.k_g,
        corpus_hash: corpus_hash.to_string(),
        edges: graph.edge_list(),
    };
    let out = File::create(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = BufWriter::new(out);
    serde_json::to_writer(&mut writer, &file).map_err(|e| GraphError::Malformed {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    writer.flush().map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Loads a graph file, re-deriving adjacency and degrees from the edge list.
pub fn load_graph(path: &Path) -> Result<(SimilarityGraph, GraphFile), GraphError> {
    let file = File::open(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parsed: GraphFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| GraphError::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    let graph =
        SimilarityGraph::from_edges(parsed.n, parsed.k_g, &parsed.edges).map_err(|e| match e {
            GraphError::Malformed { reason, .. } => GraphError::Malformed {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })?;
    Ok((graph, parsed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InstanceRecord, Label};
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    fn corpus_from(vectors: &[Vec<f64>]) -> Corpus {
        let records = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| InstanceRecord {
                id: i.to_string(),
                embedding: v.clone(),
                label: Label::Int(0),
                record_text: format!("record {i}"),
            })
            .collect();
        Corpus::new(records).unwrap()
    }

    fn angled(deg: f64) -> Vec<f64> {
        let r = deg.to_radians();
        vec![r.cos(), r.sin()]
    }

    #[test]
    fn three_angled_vectors_symmetrize() {
        // Unit vectors at 0, 10 and 90 degrees, k_g = 1: node 2's nearest is
        // node 1, so symmetrization adds (1,2) on top of the mutual (0,1).
        let corpus = corpus_from(&[angled(0.0), angled(10.0), angled(90.0)]);
        let g = build_knn_graph(&corpus, 1).unwrap();
        assert_eq!(g.directed_edges().unwrap(), &[(0, 1), (1, 0), (2, 1)][..]);
        assert_eq!(g.edge_list(), vec![(0, 1), (1, 2)]);
        assert_eq!(g.m(), 2);
        assert_eq!(g.neighbors(1).unwrap(), &[0, 2]);
    }

    #[test]
    fn two_identical_vectors() {
        let corpus = corpus_from(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let g = build_knn_graph(&corpus, 1).unwrap();
        assert_eq!(g.edge_list(), vec![(0, 1)]);
        assert_eq!(g.m(), 1);
        assert_eq!(g.degrees(), &[1, 1]);
    }

    #[test]
    fn k_clamped_when_too_large() {
        let corpus = corpus_from(&[angled(0.0), angled(10.0), angled(20.0)]);
        let g = build_knn_graph(&corpus, 10).unwrap();
        assert_eq!(g.k_g(), 2);
        // With k = n-1 the graph is complete.
        assert_eq!(g.m(), 3);
    }

    #[test]
    fn neighbors_out_of_range_errors() {
        let corpus = corpus_from(&[angled(0.0), angled(10.0)]);
        let g = build_knn_graph(&corpus, 1).unwrap();
        assert!(matches!(
            g.neighbors(7),
            Err(GraphError::InvalidNode { node: 7, n: 2 })
        ));
    }

    #[test]
    fn edgeless_node_has_empty_neighbors() {
        let g = SimilarityGraph::from_edges(3, 1, &[(0, 1)]).unwrap();
        assert_eq!(g.neighbors(2).unwrap(), &[] as &[usize]);
    }

    fn random_corpus(n: usize, dim: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        corpus_from(&vectors)
    }

    /// O(n^2) reference: directed top-k by (sim desc, id asc), then union.
    fn brute_force_edges(corpus: &Corpus, k: usize) -> Vec<(usize, usize)> {
        let n = corpus.len();
        let mut edges = std::collections::BTreeSet::new();
        for i in 0..n {
            let mut sims: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (cosine_sim(corpus.embedding(i), corpus.embedding(j)), j))
                .collect();
            sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, j) in sims.iter().take(k) {
                edges.insert((i.min(j), i.max(j)));
            }
        }
        edges.into_iter().collect()
    }

    #[test]
    fn matches_brute_force_on_random_corpus() {
        for seed in 0..4u64 {
            let corpus = random_corpus(50, 6, seed);
            let g = build_knn_graph(&corpus, 4).unwrap();
            assert_eq!(g.edge_list(), brute_force_edges(&corpus, 4));
            for v in 0..corpus.len() {
                let mut got = g.neighbors(v).unwrap().to_vec();
                got.sort_unstable();
                let expected: Vec<usize> = g
                    .edge_list()
                    .iter()
                    .filter_map(|&(a, b)| {
                        if a == v {
                            Some(b)
                        } else if b == v {
                            Some(a)
                        } else {
                            None
                        }
                    })
                    .collect();
                assert_eq!(got, expected);
            }
        }
    }

    #[test]
    fn save_load_round_trip_is_deterministic() {
        let corpus = random_corpus(30, 4, 9);
        let g = build_knn_graph(&corpus, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("g1.json");
        let p2 = dir.path().join("g2.json");
        save_graph(&g, "hash", &p1).unwrap();
        save_graph(&build_knn_graph(&corpus, 3).unwrap(), "hash", &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let (mut loaded, meta) = load_graph(&p1).unwrap();
        assert_eq!(meta.corpus_hash, "hash");
        loaded.sort_by_similarity(&corpus);
        for v in 0..g.n() {
            assert_eq!(loaded.neighbors(v).unwrap(), g.neighbors(v).unwrap());
        }
        assert!(loaded.directed_edges().is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn symmetry_and_degree_sum(seed in 0u64..500, n in 4usize..40, k in 1usize..6) {
            let corpus = random_corpus(n, 5, seed);
            let g = build_knn_graph(&corpus, k).unwrap();
            let mut degree_sum = 0;
            for i in 0..n {
                degree_sum += g.degree(i);
                for &j in g.neighbors(i).unwrap() {
                    prop_assert!(i != j);
                    prop_assert!(g.neighbors(j).unwrap().contains(&i));
                }
            }
            prop_assert_eq!(degree_sum, 2 * g.m());
        }
    }
}
