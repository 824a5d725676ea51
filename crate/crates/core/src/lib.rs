//! Cohort-aware demonstration selection for in-context learning.
//!
//! The pipeline has three stages: build a symmetrized kNN graph over
//! instance embeddings ([`graph`]), partition it into cohorts by modularity
//! optimization ([`cohorts`]), and for each query retrieve the closest
//! cohorts, seed anchor candidates, and grow a budgeted demonstration set by
//! greedy maximization of composition-aware marginal information gain with
//! graph-based frontier expansion ([`retrieval`], [`search`]). Gains come
//! from pluggable oracles ([`gain`]); [`prompts`] assembles the final
//! few-shot prompt; [`harness`] holds baselines, metrics, and the synthetic
//! benchmark generator; [`cli`] wires everything into a command-line tool.

pub mod cli;
pub mod cohorts;
pub mod corpus;
pub mod gain;
pub mod graph;
pub mod harness;
pub mod prompts;
pub mod retrieval;
pub mod search;
