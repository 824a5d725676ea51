//! Set-coverage oracle: exactly monotone submodular by construction.
//!
//! The conditional score of a demo set is the number of target features its
//! members leave uncovered; a candidate's gain is the count of target
//! features it newly covers. Used to verify the greedy machinery against
//! properties that only hold under exact submodularity.

use std::collections::{BTreeSet, HashMap};

use super::{reject_duplicate_candidate, GainError, GainOracle, OracleIdentity};
use crate::corpus::{InstanceRecord, Query};

pub struct CoverageOracle {
    features: HashMap<String, BTreeSet<u32>>,
    target: BTreeSet<u32>,
}

/// Builds a coverage oracle from per-candidate feature sets (keyed by record
/// id) and a non-empty target set. Candidates missing from the map cover
/// nothing.
pub fn make_coverage_oracle(
    features: HashMap<String, BTreeSet<u32>>,
    target: BTreeSet<u32>,
) -> Result<CoverageOracle, GainError> {
    if target.is_empty() {
        return Err(GainError::Protocol("coverage target is empty".into()));
    }
    Ok(CoverageOracle { features, target })
}

impl CoverageOracle {
    fn covered(&self, demos: &[&InstanceRecord]) -> BTreeSet<u32> {
        let mut covered = BTreeSet::new();
        for demo in demos {
            if let Some(f) = self.features.get(&demo.id) {
                covered.extend(f.iter().copied());
            }
        }
        covered
    }

    fn uncovered_count(&self, demos: &[&InstanceRecord]) -> usize {
        let covered = self.covered(demos);
        self.target.difference(&covered).count()
    }
}

impl GainOracle for CoverageOracle {
    fn evaluate(
        &self,
        _query: &Query,
        demos: &[&InstanceRecord],
        candidate: &InstanceRecord,
    ) -> Result<f64, GainError> {
        reject_duplicate_candidate(demos, candidate)?;
        let covered = self.covered(demos);
        let newly = self
            .features
            .get(&candidate.id)
            .map(|f| {
                f.iter()
                    .filter(|x| self.target.contains(x) && !covered.contains(x))
                    .count()
            })
            .unwrap_or(0);
        Ok(newly as f64)
    }

    fn cond_score(
        &self,
        _query: &Query,
        demos: &[&InstanceRecord],
    ) -> Result<Option<f64>, GainError> {
        Ok(Some(self.uncovered_count(demos) as f64))
    }

    fn identity(&self) -> OracleIdentity {
        OracleIdentity::new(
            "coverage",
            &format!(
                "candidates={} target={}",
                self.features.len(),
                self.target.len()
            ),
        )
    }
}
