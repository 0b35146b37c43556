//! Run state, lineage events and the checkpoint file format.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EngineError, RunConfig};
use crate::genome::{GenomeId, SeedTemplate};
use crate::llm::PromptKey;
use crate::moea::{Fitness, ParetoArchive, ScoredGenome};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Seed,
    Initialized,
    InitFallback,
    Evaluated,
    Elite,
    Selected,
    TournamentTie,
    Mated,
    MateFailed,
    PassedThrough,
    Mutated,
    MutationFailed,
    DroppedElite,
    Survivor,
}

/// One entry of the lineage log. Contains nothing time- or host-dependent,
/// so identical runs produce identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEvent {
    pub generation: u32,
    pub event_type: EventType,
    pub genome_id: GenomeId,
    #[serde(default)]
    pub parent_ids: Vec<GenomeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<String>,
    /// Objective values; absent for unevaluated or invalid genomes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objectives: Option<BTreeMap<String, f64>>,
}

impl LineageEvent {
    pub fn new(generation: u32, event_type: EventType, genome_id: &GenomeId) -> Self {
        Self {
            generation,
            event_type,
            genome_id: genome_id.clone(),
            parent_ids: Vec::new(),
            operator: None,
            prompt_key: None,
            block: None,
            objectives: None,
        }
    }

    pub fn scored(generation: u32, event_type: EventType, s: &ScoredGenome) -> Self {
        let mut e = Self::new(generation, event_type, s.id());
        e.parent_ids = s.genome.parent_ids.clone();
        e.objectives = s.fitness.is_valid().then(|| s.fitness.values().clone());
        e
    }

    pub fn parents(mut self, parent_ids: Vec<GenomeId>) -> Self {
        self.parent_ids = parent_ids;
        self
    }

    pub fn operator(mut self, op: &str) -> Self {
        self.operator = Some(op.to_string());
        self
    }

    pub fn prompt(mut self, key: Option<&PromptKey>, block: Option<&str>) -> Self {
        self.prompt_key = key.map(PromptKey::label);
        self.block = block.map(str::to_string);
        self
    }
}

/// First evaluation of a distinct genome id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub generation: u32,
    pub genome_id: GenomeId,
    pub fitness: Fitness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    /// Index of the current (evaluated) population; 0 after initialization.
    pub generation: u32,
    pub population: Vec<ScoredGenome>,
    /// Elites selected from the previous population; empty at generation 0.
    pub elites: Vec<ScoredGenome>,
    pub hall_of_fame: ParetoArchive,
    pub baseline: ScoredGenome,
    pub rng: ChaCha8Rng,
    pub lineage: Vec<LineageEvent>,
    pub history: Vec<HistoryEntry>,
    /// Consecutive generations without a hall-of-fame change.
    pub stagnant_generations: u32,
}

impl RunState {
    pub fn lineage_ndjson(&self) -> String {
        lineage_ndjson(&self.lineage)
    }

    pub fn has_evaluated(&self, id: &GenomeId) -> bool {
        self.history.iter().any(|h| &h.genome_id == id)
    }
}

pub fn lineage_ndjson(events: &[LineageEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_digest: String,
    pub config: RunConfig,
    pub template: SeedTemplate,
    pub state: RunState,
}

pub fn checkpoint_path(dir: &Path, generation: u32) -> PathBuf {
    dir.join(format!("gen-{generation:04}.json"))
}

impl Checkpoint {
    /// Atomic write via a sibling temp file and rename.
    pub fn write(&self, path: &Path) -> Result<(), EngineError> {
        let io = |source| EngineError::Io {
            path: path.to_path_buf(),
            source,
        };
        let dir = path.parent().unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        serde_json::to_writer(&mut tmp, self).map_err(|e| EngineError::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        tmp.flush().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, EngineError> {
        let err = |message: String| EngineError::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let found = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| err("missing format_version".into()))?;
        if found != u64::from(CHECKPOINT_VERSION) {
            return Err(EngineError::Version {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let cp: Checkpoint = serde_json::from_value(raw).map_err(|e| err(e.to_string()))?;
        if cp.config.digest() != cp.config_digest {
            return Err(err("config digest does not match embedded config".into()));
        }
        if let Some(bad) = cp
            .state
            .population
            .iter()
            .chain(cp.state.hall_of_fame.members())
            .find(|s| !s.genome.verify_id())
        {
            return Err(err(format!("genome {} fails its content hash", bad.id())));
        }
        Ok(cp)
    }
}

/// Checkpoint files in `dir` sorted by generation.
pub fn list_checkpoints(dir: &Path) -> std::io::Result<Vec<(u32, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(g) = name
            .strip_prefix("gen-")
            .and_then(|r| r.strip_suffix(".json"))
            .and_then(|n| n.parse().ok())
        {
            out.push((g, path));
        }
    }
    out.sort();
    Ok(out)
}
