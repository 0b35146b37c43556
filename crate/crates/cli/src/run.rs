//! `gevo run` and `gevo resume`.

use std::path::{Path, PathBuf};

use clap::Args;
use gevo_core::engine::{list_checkpoints, load_seed, resume, BackendKind, Engine, RunConfig, RunState};

use crate::error::CliError;

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "gevo.toml")]
    pub config: PathBuf,
    /// Replace an existing run in the output directory.
    #[arg(long)]
    pub force: bool,
    /// Validate the config, parse the seed and ping the backend, then exit.
    #[arg(long)]
    pub dry_run: bool,
    /// Use the mock backend with this corpus.
    #[arg(long)]
    pub mock_corpus: Option<PathBuf>,
    /// Disable evolution-of-thought mutation.
    #[arg(long)]
    pub no_eot: bool,
    /// Disable persona preambles.
    #[arg(long)]
    pub no_crp: bool,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    /// Checkpoint file, or a run directory to resume from its latest checkpoint.
    pub checkpoint: PathBuf,
}

fn checkpoint_dir(run_dir: &Path) -> PathBuf {
    let nested = run_dir.join("checkpoints");
    if nested.is_dir() {
        nested
    } else {
        run_dir.to_path_buf()
    }
}

/// Latest checkpoint under a run directory (or the directory of checkpoints itself).
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf, CliError> {
    let dir = checkpoint_dir(run_dir);
    let list = list_checkpoints(&dir).map_err(|e| CliError::io(dir.display(), e))?;
    list.into_iter()
        .next_back()
        .map(|(_, p)| p)
        .ok_or_else(|| CliError::Usage(format!("no checkpoints in {}", run_dir.display())))
}

fn apply_overrides(cfg: &mut RunConfig, args: &RunArgs) -> Result<(), CliError> {
    if let Some(corpus) = &args.mock_corpus {
        let abs = std::path::absolute(corpus).map_err(|e| CliError::io(corpus.display(), e))?;
        cfg.llm.backend = BackendKind::Mock;
        cfg.llm.mock_corpus = Some(abs);
    }
    if args.no_eot {
        cfg.run.eot_enabled = false;
    }
    if args.no_crp {
        cfg.run.crp_enabled = false;
    }
    Ok(())
}

fn clear_previous_run(cfg: &RunConfig) -> Result<(), CliError> {
    let out = &cfg.run.output_dir;
    let checkpoints = out.join("checkpoints");
    if checkpoints.exists() {
        std::fs::remove_dir_all(&checkpoints).map_err(|e| CliError::io(checkpoints.display(), e))?;
    }
    let mut files = vec![out.join("lineage.ndjson"), out.join("transcript.ndjson")];
    if cfg.evaluation.cache_path.is_none() {
        files.push(out.join("eval_cache.ndjson"));
    }
    for f in files {
        if f.exists() {
            std::fs::remove_file(&f).map_err(|e| CliError::io(f.display(), e))?;
        }
    }
    Ok(())
}

fn progress(engine: &Engine, state: &RunState) {
    let valid = state.population.iter().filter(|s| s.fitness.is_valid()).count();
    eprintln!(
        "generation {}/{}: {} valid of {}, hall of fame {}, {} evaluations, {} llm calls",
        state.generation,
        engine.config().run.max_generations,
        valid,
        state.population.len(),
        state.hall_of_fame.len(),
        state.history.len(),
        engine.llm().transcript().len(),
    );
}

fn summary(engine: &Engine, state: &RunState) -> String {
    format!(
        "finished at generation {} with {} hall-of-fame members; results in {}",
        state.generation,
        state.hall_of_fame.len(),
        engine.config().run.output_dir.display()
    )
}

fn drive(engine: &Engine, state: RunState) -> Result<RunState, CliError> {
    Ok(engine.run(state, |s| {
        progress(engine, s);
        true
    })?)
}

pub fn cmd_run(args: &RunArgs) -> Result<String, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    apply_overrides(&mut cfg, args)?;
    cfg.validate()?;
    let template = load_seed(&cfg.seed)?;

    if args.dry_run {
        let transcript = gevo_core::llm::Transcript::in_memory();
        let llm = gevo_core::engine::build_llm(&cfg.llm, transcript)?;
        llm.ping()
            .map_err(|e| CliError::Environment(format!("backend unreachable: {e}")))?;
        return Ok(format!(
            "config ok; seed has {} blocks; backend {} reachable",
            template.block_names().len(),
            llm.backend_id()
        ));
    }

    let existing = list_checkpoints(&cfg.run.output_dir.join("checkpoints"))
        .map_err(|e| CliError::io(cfg.run.output_dir.display(), e))?;
    if !existing.is_empty() {
        if !args.force {
            return Err(CliError::Usage(format!(
                "{} already holds a run; use --force to replace it or `gevo resume`",
                cfg.run.output_dir.display()
            )));
        }
        clear_previous_run(&cfg)?;
    }

    let engine = Engine::from_config(cfg)?;
    engine
        .llm()
        .ping()
        .map_err(|e| CliError::Environment(format!("backend unreachable: {e}")))?;
    let state = engine.initialize()?;
    progress(&engine, &state);
    let state = drive(&engine, state)?;
    Ok(summary(&engine, &state))
}

pub fn cmd_resume(args: &ResumeArgs) -> Result<String, CliError> {
    let path = if args.checkpoint.is_dir() {
        latest_checkpoint(&args.checkpoint)?
    } else {
        args.checkpoint.clone()
    };
    let (engine, state) = Engine::from_checkpoint(resume(&path)?)?;
    engine
        .llm()
        .ping()
        .map_err(|e| CliError::Environment(format!("backend unreachable: {e}")))?;
    eprintln!("resuming from {} at generation {}", path.display(), state.generation);
    let state = drive(&engine, state)?;
    Ok(summary(&engine, &state))
}
