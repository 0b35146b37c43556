//! Multi-objective selection machinery.
//!
//! Objective values are converted once into a "minimization vector" (maximize
//! objectives negated) and every algorithm here works on those vectors, so
//! direction handling lives in exactly one place.

mod archive;
mod nsga2;
mod spea2;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{Genome, GenomeId};

pub use archive::{update_hall_of_fame, ParetoArchive};
pub use nsga2::{crowding_distance, fast_nondominated_sort, nsga2_select, nsga2_tournaments, Tournament};
pub use spea2::{spea2_environmental_select, spea2_fitness, Spea2Fitness};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MoeaError {
    #[error("fitness has no value for objective `{0}`")]
    ObjectiveMismatch(String),
    #[error("invalid objective spec: {0}")]
    InvalidSpec(String),
    #[error("objective `{name}` has non-finite value {value}")]
    NonFinite { name: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Maximize => Direction::Minimize,
            Direction::Minimize => Direction::Maximize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub name: String,
    pub direction: Direction,
}

impl Objective {
    pub fn new(name: impl Into<String>, direction: Direction) -> Self {
        Self {
            name: name.into(),
            direction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Objective>", into = "Vec<Objective>")]
pub struct ObjectiveSpec {
    objectives: Vec<Objective>,
}

impl TryFrom<Vec<Objective>> for ObjectiveSpec {
    type Error = MoeaError;

    fn try_from(objectives: Vec<Objective>) -> Result<Self, Self::Error> {
        ObjectiveSpec::new(objectives)
    }
}

impl From<ObjectiveSpec> for Vec<Objective> {
    fn from(spec: ObjectiveSpec) -> Self {
        spec.objectives
    }
}

impl ObjectiveSpec {
    pub fn new(objectives: Vec<Objective>) -> Result<Self, MoeaError> {
        if objectives.is_empty() {
            return Err(MoeaError::InvalidSpec("at least one objective is required".into()));
        }
        let mut names = HashSet::new();
        for o in &objectives {
            if o.name.is_empty() {
                return Err(MoeaError::InvalidSpec("objective names must be non-empty".into()));
            }
            if !names.insert(o.name.as_str()) {
                return Err(MoeaError::InvalidSpec(format!("duplicate objective `{}`", o.name)));
            }
        }
        Ok(Self { objectives })
    }

    pub fn objectives(&self) -> &[Objective] {
        &self.objectives
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.objectives.iter().map(|o| o.name.as_str())
    }

    /// Values in spec order with maximize objectives negated; `None` for
    /// invalid fitness.
    pub fn minimization_vector(&self, fitness: &Fitness) -> Result<Option<Vec<f64>>, MoeaError> {
        if !fitness.valid {
            return Ok(None);
        }
        self.objectives
            .iter()
            .map(|o| {
                let v = *fitness
                    .values
                    .get(&o.name)
                    .ok_or_else(|| MoeaError::ObjectiveMismatch(o.name.clone()))?;
                Ok(match o.direction {
                    Direction::Minimize => v,
                    Direction::Maximize => -v,
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub(crate) fn points(&self, pop: &[ScoredGenome]) -> Result<Vec<Option<Vec<f64>>>, MoeaError> {
        pop.iter().map(|s| self.minimization_vector(&s.fitness)).collect()
    }
}

/// Validity flag plus named objective values (present iff valid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    valid: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    values: BTreeMap<String, f64>,
}

impl Fitness {
    pub fn valid(values: BTreeMap<String, f64>) -> Result<Self, MoeaError> {
        if let Some((name, value)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(MoeaError::NonFinite {
                name: name.clone(),
                value: *value,
            });
        }
        Ok(Self { valid: true, values })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self, MoeaError> {
        Self::valid(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    pub fn invalid() -> Self {
        Self {
            valid: false,
            values: BTreeMap::new(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.valid
    }

    pub fn values(&self) -> &BTreeMap<String, f64> {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredGenome {
    pub genome: Genome,
    pub fitness: Fitness,
}

impl ScoredGenome {
    pub fn new(genome: Genome, fitness: Fitness) -> Self {
        Self { genome, fitness }
    }

    pub fn id(&self) -> &GenomeId {
        self.genome.id()
    }
}

/// Pareto dominance on minimization vectors. Any valid point dominates any
/// invalid one; invalid never dominates.
pub(crate) fn dominates_points(a: Option<&[f64]>, b: Option<&[f64]>) -> bool {
    match (a, b) {
        (None, _) => false,
        (Some(_), None) => true,
        (Some(a), Some(b)) => {
            let mut strictly = false;
            for (x, y) in a.iter().zip(b) {
                if x > y {
                    return false;
                }
                if x < y {
                    strictly = true;
                }
            }
            strictly
        }
    }
}

pub fn dominates(a: &Fitness, b: &Fitness, spec: &ObjectiveSpec) -> Result<bool, MoeaError> {
    let pa = spec.minimization_vector(a)?;
    let pb = spec.minimization_vector(b)?;
    Ok(dominates_points(pa.as_deref(), pb.as_deref()))
}

/// Keeps the first occurrence of each genome id.
pub fn dedup_by_id(pop: &[ScoredGenome]) -> Vec<ScoredGenome> {
    let mut seen = HashSet::new();
    pop.iter()
        .filter(|s| seen.insert(s.id().clone()))
        .cloned()
        .collect()
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::genome::{CodeBlock, Provenance};

    pub fn scored(tag: &str, values: &[f64], spec: &ObjectiveSpec) -> ScoredGenome {
        let genome = Genome::from_blocks(
            vec![CodeBlock::new("B", tag, Provenance::Seed, 0)],
            Vec::new(),
            0,
        );
        let fitness =
            Fitness::from_pairs(spec.names().zip(values.iter().copied())).expect("finite values");
        ScoredGenome::new(genome, fitness)
    }

    pub fn invalid(tag: &str) -> ScoredGenome {
        let genome = Genome::from_blocks(
            vec![CodeBlock::new("B", tag, Provenance::Seed, 0)],
            Vec::new(),
            0,
        );
        ScoredGenome::new(genome, Fitness::invalid())
    }

    pub fn min_spec(n: usize) -> ObjectiveSpec {
        ObjectiveSpec::new(
            (0..n)
                .map(|i| Objective::new(format!("f{i}"), Direction::Minimize))
                .collect(),
        )
        .unwrap()
    }
}
