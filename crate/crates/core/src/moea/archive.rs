use serde::{Deserialize, Serialize};

use super::{dominates_points, MoeaError, ObjectiveSpec, ScoredGenome};
use crate::genome::GenomeId;

/// Mutually non-dominated, valid, id-unique members.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    members: Vec<ScoredGenome>,
}

impl ParetoArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn members(&self) -> &[ScoredGenome] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &GenomeId) -> bool {
        self.members.iter().any(|m| m.id() == id)
    }

    pub fn ids(&self) -> Vec<GenomeId> {
        self.members.iter().map(|m| m.id().clone()).collect()
    }
}

/// Non-dominated subset of the archive plus the valid members of `batch`.
pub fn update_hall_of_fame(
    hof: &ParetoArchive,
    batch: &[ScoredGenome],
    spec: &ObjectiveSpec,
) -> Result<ParetoArchive, MoeaError> {
    let mut union: Vec<ScoredGenome> = hof.members.clone();
    for s in batch {
        if s.fitness.is_valid() && !union.iter().any(|m| m.id() == s.id()) {
            union.push(s.clone());
        }
    }
    let points = spec.points(&union)?;
    let members = union
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            !points
                .iter()
                .any(|other| dominates_points(other.as_deref(), points[*i].as_deref()))
        })
        .map(|(_, s)| s.clone())
        .collect();
    Ok(ParetoArchive { members })
}
