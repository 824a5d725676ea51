//! Instance-aware cohort retrieval and anchor initialization.
//!
//! For a query, the top-K_c cohorts are ranked by prototype similarity and
//! each contributes its top-K_a most query-similar members as anchors. The
//! anchors form the initial search frontier.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cohorts::CohortPartition;
use crate::corpus::{cosine_sim, Corpus, Query};

/// How a node entered the frontier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Anchor,
    Expansion,
}

/// The evolving candidate set. Members never overlap the excluded set
/// (nodes already selected).
#[derive(Debug, Clone, Default)]
pub struct Frontier {
    members: BTreeSet<usize>,
    origin: BTreeMap<usize, Origin>,
    excluded: BTreeSet<usize>,
}

impl Frontier {
    pub fn new() -> Self {
        Frontier::default()
    }

    /// Adds a node unless it is excluded or already present. Returns whether
    /// the node was inserted.
    pub fn insert(&mut self, node: usize, origin: Origin) -> bool {
        if self.excluded.contains(&node) {
            return false;
        }
        if self.members.insert(node) {
            self.origin.insert(node, origin);
            true
        } else {
            false
        }
    }

    /// Removes a node and bars it from re-entering.
    pub fn exclude(&mut self, node: usize) {
        self.members.remove(&node);
        self.excluded.insert(node);
    }

    pub fn contains(&self, node: usize) -> bool {
        self.members.contains(&node)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members in ascending node order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    pub fn origin_of(&self, node: usize) -> Option<Origin> {
        self.origin.get(&node).copied()
    }

    /// Every node that ever entered, with its provenance.
    pub fn provenance(&self) -> &BTreeMap<usize, Origin> {
        &self.origin
    }
}

/// Ranks cohorts by cosine similarity between the query embedding and each
/// prototype, descending; ties go to the lower cohort id. Returns at most
/// `k_c` cohort ids.
pub fn retrieve_cohorts(query: &Query, partition: &CohortPartition, k_c: usize) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = partition
        .prototypes
        .iter()
        .enumerate()
        .map(|(m, proto)| (cosine_sim(&query.embedding, proto), m))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(k_c).map(|(_, m)| m).collect()
}

/// Selects the top-`k_a` members of each retrieved cohort by similarity to
/// the query (ties to the lower id) and unions them into the initial
/// frontier. Cohorts smaller than `k_a` contribute all members.
pub fn init_anchors(
    query: &Query,
    partition: &CohortPartition,
    retrieved: &[usize],
    k_a: usize,
    corpus: &Corpus,
) -> Frontier {
    let mut frontier = Frontier::new();
    for &m in retrieved {
        let mut ranked: Vec<(f64, usize)> = partition.cohorts[m]
            .iter()
            .map(|&v| (cosine_sim(&query.embedding, corpus.embedding(v)), v))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, v) in ranked.iter().take(k_a) {
            frontier.insert(v, Origin::Anchor);
        }
    }
    frontier
}

/// Cohort-bypass frontier: the global top-`count` nodes nearest to the
/// query, ignoring the partition entirely.
pub fn init_anchors_global(query: &Query, corpus: &Corpus, count: usize) -> Frontier {
    let mut ranked: Vec<(f64, usize)> = (0..corpus.len())
        .map(|v| (cosine_sim(&query.embedding, corpus.embedding(v)), v))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut frontier = Frontier::new();
    for &(_, v) in ranked.iter().take(count) {
        frontier.insert(v, Origin::Anchor);
    }
    frontier
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohorts::Method;
    use crate::corpus::{InstanceRecord, Label};

    fn query(embedding: Vec<f64>) -> Query {
        Query {
            id: "q".into(),
            embedding,
            record_text: "qr".into(),
        }
    }

    fn partition_with(prototypes: Vec<Vec<f64>>, cohorts: Vec<Vec<usize>>) -> CohortPartition {
        let n = cohorts.iter().map(Vec::len).sum();
        let mut assignment = vec![0usize; n];
        for (c, members) in cohorts.iter().enumerate() {
            for &v in members {
                assignment[v] = c;
            }
        }
        CohortPartition {
            assignment,
            cohorts,
            prototypes,
            modularity: 0.0,
            method: Method::Leiden,
            resolution: 0.9,
            seed: 0,
            level_modularity: Vec::new(),
        }
    }

    fn corpus_from(vectors: &[Vec<f64>]) -> Corpus {
        Corpus::new(
            vectors
                .iter()
                .enumerate()
                .map(|(i, v)| InstanceRecord {
                    id: i.to_string(),
                    embedding: v.clone(),
                    label: Label::Int(0),
                    record_text: format!("r{i}"),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_cohort_always_retrieved() {
        let p = partition_with(vec![vec![0.0, 1.0]], vec![vec![0, 1]]);
        assert_eq!(retrieve_cohorts(&query(vec![1.0, 0.0]), &p, 3), vec![0]);
    }

    #[test]
    fn ranks_cohorts_by_prototype_similarity() {
        // Hand cosines against [1, 0.1]: proto 0 -> ~0.995, proto 2 -> ~0.774,
        // proto 1 -> ~0.0995.
        let p = partition_with(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.7, 0.7]],
            vec![vec![0], vec![1], vec![2]],
        );
        assert_eq!(retrieve_cohorts(&query(vec![1.0, 0.1]), &p, 2), vec![0, 2]);
    }

    #[test]
    fn small_cohort_contributes_all_members() {
        let corpus = corpus_from(&[vec![1.0, 0.0], vec![0.9, 0.1]]);
        let p = partition_with(vec![vec![0.95, 0.05]], vec![vec![0, 1]]);
        let f = init_anchors(&query(vec![1.0, 0.0]), &p, &[0], 3, &corpus);
        assert_eq!(f.iter().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(f.origin_of(0), Some(Origin::Anchor));
    }

    #[test]
    fn one_anchor_per_disjoint_cohort() {
        let corpus = corpus_from(&[
            vec![1.0, 0.0],
            vec![0.9, 0.1],
            vec![0.0, 1.0],
            vec![0.1, 0.9],
        ]);
        let p = partition_with(
            vec![vec![0.95, 0.05], vec![0.05, 0.95]],
            vec![vec![0, 1], vec![2, 3]],
        );
        let f = init_anchors(&query(vec![1.0, 0.05]), &p, &[0, 1], 1, &corpus);
        assert_eq!(f.len(), 2);
        assert!(f.contains(0));
        // Within cohort 1, node 3 is closer to the query than node 2.
        assert!(f.contains(3));
    }

    #[test]
    fn anchor_union_size_is_sum_of_clamped_cohort_sizes() {
        let corpus = corpus_from(&[
            vec![1.0, 0.0],
            vec![0.9, 0.2],
            vec![0.8, 0.3],
            vec![0.0, 1.0],
            vec![0.2, 0.9],
        ]);
        let p = partition_with(
            vec![vec![0.9, 0.16], vec![0.1, 0.95]],
            vec![vec![0, 1, 2], vec![3, 4]],
        );
        let retrieved = retrieve_cohorts(&query(vec![1.0, 0.1]), &p, 3);
        let k_a = 3;
        let f = init_anchors(&query(vec![1.0, 0.1]), &p, &retrieved, k_a, &corpus);
        let expected: usize = retrieved.iter().map(|&m| k_a.min(p.cohorts[m].len())).sum();
        assert_eq!(f.len(), expected);
    }

    #[test]
    fn global_bypass_takes_nearest_overall() {
        let corpus = corpus_from(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.9, 0.1],
            vec![-1.0, 0.0],
        ]);
        let f = init_anchors_global(&query(vec![1.0, 0.0]), &corpus, 2);
        let members: Vec<usize> = f.iter().collect();
        assert_eq!(members, vec![0, 2]);
    }

    #[test]
    fn excluded_nodes_never_reenter() {
        let mut f = Frontier::new();
        assert!(f.insert(4, Origin::Anchor));
        f.exclude(4);
        assert!(!f.insert(4, Origin::Expansion));
        assert!(!f.contains(4));
        assert!(f.is_empty());
    }
}
