//! The generational loop.
//!
//! Each generation: SPEA-2 elites from the current population, NSGA-II
//! tournaments for mating selection, LLM mating of sequential parent pairs,
//! LLM mutation, batch evaluation, hall-of-fame update and elite-preserving
//! combination into the next population. All randomness flows from one
//! seeded ChaCha stream stored in [`RunState`], so a resumed run continues
//! exactly where the uninterrupted one would have.

mod config;
mod state;

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::evaluator::{EvalError, Evaluator};
use crate::genome::{parse_seed_with_leader, read_source_tree, Genome, GenomeError, GenomeId, SeedTemplate};
use crate::llm::{HttpBackend, HttpConfig, LlmBackend, LlmClient, LlmError, MockBackend, Transcript};
use crate::moea::{
    dedup_by_id, dominates, nsga2_tournaments, spea2_environmental_select, update_hall_of_fame, MoeaError,
    ObjectiveSpec, ParetoArchive, ScoredGenome,
};
use crate::operators::{mate, mutate, OperatorContext, OperatorError, PromptLibrary, TemplateError, Variation};

pub use config::{
    BackendKind, EvaluationConfig, LlmConfig, PromptsConfig, RunConfig, RunParams, SeedConfig,
};
pub use state::{
    checkpoint_path, lineage_ndjson, list_checkpoints, Checkpoint, EventType, HistoryEntry, LineageEvent,
    RunState, CHECKPOINT_VERSION,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Moea(#[from] MoeaError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u32 },
}

/// Result of merging elites with offspring.
#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub population: Vec<ScoredGenome>,
    /// Elites removed because an offspring dominates them.
    pub dropped: Vec<ScoredGenome>,
}

/// Elite-preserving merge. Elites survive unless some offspring dominates
/// them; the remaining slots (up to `population_size`) go to the rest of the
/// id-deduplicated pool by SPEA-2 environmental selection, then to invalid
/// offspring. Never exceeds `population_size`, and returns the whole pool
/// when it is smaller.
pub fn combine_elites(
    elites: &[ScoredGenome],
    offspring: &[ScoredGenome],
    population_size: usize,
    spec: &ObjectiveSpec,
) -> Result<Combination, MoeaError> {
    let elites = dedup_by_id(elites);
    let mut surviving = Vec::new();
    let mut dropped = Vec::new();
    for e in elites {
        let mut beaten = false;
        for o in offspring {
            if dominates(&o.fitness, &e.fitness, spec)? {
                beaten = true;
                break;
            }
        }
        if beaten {
            dropped.push(e);
        } else {
            surviving.push(e);
        }
    }
    surviving.truncate(population_size);

    let taken = |id: &GenomeId, list: &[ScoredGenome]| list.iter().any(|s| s.id() == id);
    let rest: Vec<ScoredGenome> = dedup_by_id(offspring)
        .into_iter()
        .filter(|o| !taken(o.id(), &surviving) && !taken(o.id(), &dropped))
        .collect();
    let slots = population_size - surviving.len();
    let mut population = surviving;
    population.extend(spea2_environmental_select(&rest, slots, spec)?);
    for o in rest.iter().filter(|o| !o.fitness.is_valid()) {
        if population.len() >= population_size {
            break;
        }
        population.push(o.clone());
    }
    Ok(Combination { population, dropped })
}

/// Tops `selected` up to `population_size` with members of `previous` not
/// already represented (multiset difference, in order), then with repeats of
/// `selected` if still short.
pub fn fill_population(
    mut selected: Vec<ScoredGenome>,
    previous: &[ScoredGenome],
    population_size: usize,
) -> Vec<ScoredGenome> {
    let mut skip: HashMap<GenomeId, usize> = HashMap::new();
    for s in &selected {
        *skip.entry(s.id().clone()).or_default() += 1;
    }
    for p in previous {
        if selected.len() >= population_size {
            break;
        }
        match skip.get_mut(p.id()) {
            Some(n) if *n > 0 => *n -= 1,
            _ => selected.push(p.clone()),
        }
    }
    let base = selected.len();
    let mut i = 0;
    while selected.len() < population_size && base > 0 {
        selected.push(selected[i % base].clone());
        i += 1;
    }
    selected.truncate(population_size);
    selected
}

pub fn convergence_condition(state: &RunState, params: &RunParams) -> bool {
    if state.generation >= params.max_generations {
        return true;
    }
    matches!(params.stagnation_window, Some(w) if w > 0 && state.stagnant_generations >= w)
}

fn hof_ids(h: &ParetoArchive) -> BTreeSet<GenomeId> {
    h.ids().into_iter().collect()
}

/// Builds the configured backend wrapped in a client logging to `transcript`.
pub fn build_llm(cfg: &LlmConfig, transcript: Transcript) -> Result<LlmClient, EngineError> {
    let backend: Box<dyn LlmBackend> = match cfg.backend {
        BackendKind::Mock => {
            let mock = match &cfg.mock_corpus {
                Some(path) => MockBackend::from_file(path)?,
                None => MockBackend::new(Default::default()),
            };
            Box::new(mock.strict(cfg.mock_strict).on_miss(cfg.mock_miss))
        }
        BackendKind::Http => {
            let api_key = cfg.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
            Box::new(HttpBackend::new(HttpConfig {
                base_url: cfg.base_url.clone(),
                model: cfg.model.clone(),
                api_key,
                request_timeout: Duration::from_secs(cfg.request_timeout_secs),
                retry: cfg.retry.clone(),
            })?)
        }
    };
    Ok(LlmClient::new(backend, transcript, cfg.max_concurrent))
}

pub fn load_seed(cfg: &SeedConfig) -> Result<SeedTemplate, EngineError> {
    let tree = read_source_tree(&cfg.path)?;
    Ok(parse_seed_with_leader(&tree, &cfg.comment_leader)?)
}

pub struct Engine {
    cfg: RunConfig,
    template: SeedTemplate,
    seed: Genome,
    library: PromptLibrary,
    llm: LlmClient,
    evaluator: Evaluator,
}

impl Engine {
    pub fn new(cfg: RunConfig, template: SeedTemplate, llm: LlmClient) -> Result<Self, EngineError> {
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.run.output_dir).map_err(|source| EngineError::Io {
            path: cfg.run.output_dir.clone(),
            source,
        })?;
        let library = match &cfg.prompts.dir {
            Some(dir) => PromptLibrary::load(dir)?,
            None => PromptLibrary::builtin(),
        };
        let evaluator = Evaluator::new(template.clone(), cfg.eval_config())?;
        let seed = template.seed_genome();
        Ok(Self {
            cfg,
            template,
            seed,
            library,
            llm,
            evaluator,
        })
    }

    /// Reads the seed and builds the backend named in the config. The
    /// transcript goes to `transcript.ndjson` in the output directory.
    pub fn from_config(cfg: RunConfig) -> Result<Self, EngineError> {
        let template = load_seed(&cfg.seed)?;
        let llm = build_llm(&cfg.llm, Self::open_transcript(&cfg)?)?;
        Self::new(cfg, template, llm)
    }

    /// Rebuilds the engine recorded in a checkpoint, with its state.
    pub fn from_checkpoint(cp: Checkpoint) -> Result<(Self, RunState), EngineError> {
        let llm = build_llm(&cp.config.llm, Self::open_transcript(&cp.config)?)?;
        let engine = Self::new(cp.config, cp.template, llm)?;
        Ok((engine, cp.state))
    }

    fn open_transcript(cfg: &RunConfig) -> Result<Transcript, EngineError> {
        let dir = &cfg.run.output_dir;
        let io = |source| EngineError::Io {
            path: dir.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        Transcript::to_file(&dir.join("transcript.ndjson")).map_err(io)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn template(&self) -> &SeedTemplate {
        &self.template
    }

    pub fn seed(&self) -> &Genome {
        &self.seed
    }

    pub fn llm(&self) -> &LlmClient {
        &self.llm
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.cfg.run.output_dir.join("checkpoints")
    }

    fn spec(&self) -> &ObjectiveSpec {
        &self.cfg.objectives
    }

    fn context<'a>(&'a self, elites: &'a [ScoredGenome], generation: u32, eot: bool) -> OperatorContext<'a> {
        OperatorContext {
            library: &self.library,
            llm: &self.llm,
            sampling: &self.cfg.llm.sampling,
            seed: &self.seed,
            elites,
            prob_eot: self.cfg.run.prob_eot,
            crp_enabled: self.cfg.run.crp_enabled,
            eot_enabled: eot && self.cfg.run.eot_enabled,
            generation,
        }
    }

    /// Runs `f` once per seed on up to `llm.max_concurrent` threads, each
    /// call with its own rng. Output order follows `seeds`.
    fn parallel<T, F>(&self, seeds: &[u64], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
    {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
        let workers = self.cfg.llm.max_concurrent.min(seeds.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= seeds.len() {
                        break;
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
                    let out = f(i, &mut rng);
                    slots.lock().expect("slots lock")[i] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("slots lock")
            .into_iter()
            .map(|o| o.expect("every task ran"))
            .collect()
    }

    /// Evaluates `genomes`, logging one `evaluated` event per distinct id and
    /// recording first-time evaluations in the history.
    fn score(&self, genomes: Vec<Genome>, generation: u32, state: &mut RunState) -> Result<Vec<ScoredGenome>, EngineError> {
        let records = self.evaluator.evaluate_batch(&genomes)?;
        let scored: Vec<ScoredGenome> = genomes
            .into_iter()
            .zip(records)
            .map(|(g, r)| ScoredGenome::new(g, r.fitness))
            .collect();
        let mut seen = BTreeSet::new();
        for s in &scored {
            if !seen.insert(s.id().clone()) {
                continue;
            }
            state.lineage.push(LineageEvent::scored(generation, EventType::Evaluated, s));
            if !state.has_evaluated(s.id()) {
                state.history.push(HistoryEntry {
                    generation,
                    genome_id: s.id().clone(),
                    fitness: s.fitness.clone(),
                });
            }
        }
        Ok(scored)
    }

    /// Evaluates the seed as the baseline and builds generation 0 from
    /// fixed-prompt mutations of seed copies.
    pub fn initialize(&self) -> Result<RunState, EngineError> {
        let seed_record = self.evaluator.evaluate(&self.seed)?;
        let baseline = ScoredGenome::new(self.seed.clone(), seed_record.fitness);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.run.rng_seed);
        let mut state = RunState {
            generation: 0,
            population: Vec::new(),
            elites: Vec::new(),
            hall_of_fame: update_hall_of_fame(&ParetoArchive::new(), std::slice::from_ref(&baseline), self.spec())?,
            baseline: baseline.clone(),
            rng: rng.clone(),
            lineage: vec![LineageEvent::scored(0, EventType::Seed, &baseline)],
            history: vec![HistoryEntry {
                generation: 0,
                genome_id: baseline.id().clone(),
                fitness: baseline.fitness.clone(),
            }],
            stagnant_generations: 0,
        };

        let seeds: Vec<u64> = (0..self.cfg.run.population_size).map(|_| rng.gen()).collect();
        state.rng = rng;
        let ctx = self.context(&[], 0, false);
        let attempts = self.cfg.run.init_attempts;
        let results = self.parallel(&seeds, |_, rng| {
            let mut last = None;
            for _ in 0..attempts {
                match mutate(&self.seed, &ctx, rng) {
                    Ok(v) => return Ok(v),
                    Err(e @ OperatorError::MutationFailed(_)) => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last.expect("at least one attempt"))
        });

        let seed_id = self.seed.id().clone();
        let mut genomes = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(v) => {
                    state.lineage.push(variation_event(0, EventType::Initialized, &v, vec![seed_id.clone()]));
                    genomes.push(v.genome);
                }
                Err(OperatorError::MutationFailed(e)) => {
                    log::warn!("initial mutation failed {attempts} times, using a seed copy: {e}");
                    let copy = self.seed.with_lineage(vec![seed_id.clone()], 0);
                    state
                        .lineage
                        .push(LineageEvent::new(0, EventType::InitFallback, &seed_id).parents(vec![seed_id.clone()]));
                    genomes.push(copy);
                }
                Err(e) => return Err(e.into()),
            }
        }
        let population = self.score(genomes, 0, &mut state)?;
        state.hall_of_fame = update_hall_of_fame(&state.hall_of_fame, &population, self.spec())?;
        for s in &population {
            state.lineage.push(LineageEvent::scored(0, EventType::Survivor, s));
        }
        state.population = population;
        Ok(state)
    }

    pub fn run_generation(&self, prev: &RunState) -> Result<RunState, EngineError> {
        let mut state = prev.clone();
        let spec = self.spec().clone();
        let params = &self.cfg.run;
        let n = params.population_size;
        let g = prev.generation + 1;

        let elites = spea2_environmental_select(&prev.population, params.elite_archive_size, &spec)?;
        for e in &elites {
            state.lineage.push(LineageEvent::scored(prev.generation, EventType::Elite, e));
        }

        let tournaments = nsga2_tournaments(&prev.population, n, &spec, &mut state.rng)?;
        let parents: Vec<&ScoredGenome> = tournaments.iter().map(|t| &prev.population[t.winner]).collect();
        for t in &tournaments {
            let winner = prev.population[t.winner].id();
            state.lineage.push(LineageEvent::new(g, EventType::Selected, winner));
            if t.coin_flip {
                state.lineage.push(
                    LineageEvent::new(g, EventType::TournamentTie, winner)
                        .parents(vec![prev.population[t.first].id().clone(), prev.population[t.second].id().clone()]),
                );
            }
        }

        // Mating plan: (first parent, second parent, rng seed) or a pass-through.
        let mut plan: Vec<Option<(usize, usize)>> = Vec::with_capacity(n);
        let mut pass: Vec<usize> = Vec::with_capacity(n);
        let mut mate_jobs: Vec<(usize, usize)> = Vec::new();
        let mut mate_seeds: Vec<u64> = Vec::new();
        let mut i = 0;
        while i < parents.len() {
            let pair = i + 1 < parents.len();
            if pair && state.rng.gen_bool(params.mating_rate) {
                for (a, b) in [(i, i + 1), (i + 1, i)] {
                    plan.push(Some((a, b)));
                    pass.push(a);
                    mate_jobs.push((a, b));
                    mate_seeds.push(state.rng.gen());
                }
            } else {
                for k in i..(i + if pair { 2 } else { 1 }) {
                    plan.push(None);
                    pass.push(k);
                }
            }
            i += 2;
        }

        let ctx = self.context(&elites, g, true);
        let mated = self.parallel(&mate_seeds, |j, rng| {
            let (a, b) = mate_jobs[j];
            mate(&parents[a].genome, &parents[b].genome, &ctx, rng)
        });
        let mut mated = mated.into_iter();
        let mut children = Vec::with_capacity(n);
        for (slot, &a) in plan.iter().zip(&pass) {
            let pa = &parents[a].genome;
            let child = match slot {
                None => {
                    let genome = pa.with_lineage(vec![pa.id().clone()], g);
                    state.lineage.push(
                        LineageEvent::new(g, EventType::PassedThrough, genome.id())
                            .parents(genome.parent_ids.clone())
                            .operator("clone"),
                    );
                    genome
                }
                Some((_, b)) => {
                    let pb = &parents[*b].genome;
                    match mated.next().expect("one result per mating job") {
                        Ok(v) => {
                            let ids = vec![pa.id().clone(), pb.id().clone()];
                            state.lineage.push(variation_event(g, EventType::Mated, &v, ids));
                            v.genome
                        }
                        Err(OperatorError::MatingFailed(e)) => {
                            log::warn!("mating failed, passing parent through: {e}");
                            let genome = pa.with_lineage(vec![pa.id().clone()], g);
                            state.lineage.push(
                                LineageEvent::new(g, EventType::MateFailed, genome.id())
                                    .parents(vec![pa.id().clone(), pb.id().clone()]),
                            );
                            genome
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            children.push(child);
        }

        let mut mutate_jobs = Vec::new();
        let mut mutate_seeds = Vec::new();
        for k in 0..children.len() {
            if state.rng.gen_bool(params.mutation_rate) {
                mutate_jobs.push(k);
                mutate_seeds.push(state.rng.gen());
            }
        }
        let mutated = self.parallel(&mutate_seeds, |j, rng| mutate(&children[mutate_jobs[j]], &ctx, rng));
        for (&k, result) in mutate_jobs.iter().zip(mutated) {
            let child = &mut children[k];
            match result {
                Ok(v) => {
                    state
                        .lineage
                        .push(variation_event(g, EventType::Mutated, &v, vec![child.id().clone()]));
                    // Lineage points at population members, not the intermediate.
                    *child = v.genome.with_lineage(child.parent_ids.clone(), g);
                }
                Err(OperatorError::MutationFailed(e)) => {
                    log::warn!("mutation failed, keeping unmutated child: {e}");
                    state.lineage.push(
                        LineageEvent::new(g, EventType::MutationFailed, child.id())
                            .parents(child.parent_ids.clone()),
                    );
                }
                Err(e) => return Err(e.into()),
            }
        }

        let offspring = self.score(children, g, &mut state)?;
        let hof = update_hall_of_fame(&prev.hall_of_fame, &offspring, &spec)?;
        let combined = combine_elites(&elites, &offspring, n, &spec)?;
        for d in &combined.dropped {
            state.lineage.push(LineageEvent::scored(g, EventType::DroppedElite, d));
        }
        let population = fill_population(combined.population, &prev.population, n);
        for s in &population {
            state.lineage.push(LineageEvent::scored(g, EventType::Survivor, s));
        }

        state.stagnant_generations = if hof_ids(&hof) == hof_ids(&prev.hall_of_fame) {
            prev.stagnant_generations + 1
        } else {
            0
        };
        state.hall_of_fame = hof;
        state.elites = elites;
        state.population = population;
        state.generation = g;
        Ok(state)
    }

    pub fn to_checkpoint(&self, state: &RunState) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config_digest: self.cfg.digest(),
            config: self.cfg.clone(),
            template: self.template.clone(),
            state: state.clone(),
        }
    }

    /// Writes `checkpoints/gen-NNNN.json` and rewrites `lineage.ndjson`.
    pub fn write_checkpoint(&self, state: &RunState) -> Result<PathBuf, EngineError> {
        let path = checkpoint_path(&self.checkpoint_dir(), state.generation);
        self.to_checkpoint(state).write(&path)?;
        let lineage = self.cfg.run.output_dir.join("lineage.ndjson");
        std::fs::write(&lineage, state.lineage_ndjson()).map_err(|source| EngineError::Io { path: lineage, source })?;
        Ok(path)
    }

    /// Runs generations until convergence, checkpointing after each one.
    /// `after` sees every completed state and may stop the loop early by
    /// returning false. On failure the last completed state is checkpointed.
    pub fn run(&self, mut state: RunState, mut after: impl FnMut(&RunState) -> bool) -> Result<RunState, EngineError> {
        while !convergence_condition(&state, &self.cfg.run) {
            match self.run_generation(&state) {
                Ok(next) => state = next,
                Err(e) => {
                    if let Err(c) = self.write_checkpoint(&state) {
                        log::error!("could not checkpoint after failure: {c}");
                    }
                    return Err(e);
                }
            }
            self.write_checkpoint(&state)?;
            if !after(&state) {
                break;
            }
        }
        Ok(state)
    }
}

fn variation_event(generation: u32, kind: EventType, v: &Variation, parents: Vec<GenomeId>) -> LineageEvent {
    LineageEvent::new(generation, kind, v.genome.id())
        .parents(parents)
        .operator(v.operator.as_str())
        .prompt(v.prompt_key.as_ref(), v.block.as_deref())
}

/// Reads a checkpoint, checking its format version.
pub fn resume(path: &Path) -> Result<Checkpoint, EngineError> {
    Checkpoint::read(path)
}
