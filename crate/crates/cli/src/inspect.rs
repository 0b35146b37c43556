//! `gevo inspect`: rendered source and lineage of one genome.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use gevo_core::engine::{list_checkpoints, resume, Checkpoint};
use gevo_core::genome::Genome;

use crate::error::CliError;

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Full genome id or a unique prefix.
    pub genome_id: String,
    /// Run output directory.
    #[arg(long, default_value = "run")]
    pub run_dir: PathBuf,
}

fn retained(cp: &Checkpoint) -> impl Iterator<Item = &Genome> {
    let s = &cp.state;
    std::iter::once(&s.baseline.genome)
        .chain(s.population.iter().map(|m| &m.genome))
        .chain(s.elites.iter().map(|m| &m.genome))
        .chain(s.hall_of_fame.members().iter().map(|m| &m.genome))
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<String, CliError> {
    let dir = args.run_dir.join("checkpoints");
    let checkpoints = list_checkpoints(&dir).map_err(|e| CliError::io(dir.display(), e))?;
    let Some((_, latest_path)) = checkpoints.last() else {
        return Err(CliError::Usage(format!("no checkpoints in {}", args.run_dir.display())));
    };
    let latest = resume(latest_path)?;

    let mut ids: Vec<String> = latest
        .state
        .history
        .iter()
        .map(|h| h.genome_id.to_string())
        .filter(|id| id.starts_with(&args.genome_id))
        .collect();
    ids.dedup();
    let id = match ids.as_slice() {
        [one] => one.clone(),
        [] => return Err(CliError::Usage(format!("no evaluated genome matches `{}`", args.genome_id))),
        many => {
            return Err(CliError::Usage(format!(
                "`{}` is ambiguous: {} genomes match",
                args.genome_id,
                many.len()
            )))
        }
    };

    // Newest checkpoint first; discarded genomes may survive in older ones.
    let mut genome = retained(&latest).find(|g| g.id().as_str() == id).cloned();
    for (_, path) in checkpoints.iter().rev().skip(1) {
        if genome.is_some() {
            break;
        }
        let cp = resume(path)?;
        genome = retained(&cp).find(|g| g.id().as_str() == id).cloned();
    }

    let mut out = String::new();
    let _ = writeln!(out, "genome {id}");
    if let Some(h) = latest.state.history.iter().find(|h| h.genome_id.as_str() == id) {
        let _ = writeln!(out, "first evaluated: generation {}", h.generation);
        if h.fitness.is_valid() {
            for (k, v) in h.fitness.values() {
                let _ = writeln!(out, "  {k} = {v}");
            }
        } else {
            let _ = writeln!(out, "  invalid fitness");
        }
    }
    match &genome {
        Some(g) => {
            let parents: Vec<&str> = g.parent_ids.iter().map(|p| p.short()).collect();
            let _ = writeln!(out, "parents: {}", if parents.is_empty() { "-".into() } else { parents.join(", ") });
            for b in g.blocks() {
                let _ = writeln!(out, "block {}: {} (generation {})", b.name, b.provenance.label(), b.origin_generation);
            }
            let files = latest.template.render(g).map_err(|e| CliError::Internal(e.to_string()))?;
            for (path, text) in files {
                let _ = writeln!(out, "\n=== {path} ===\n{text}");
            }
        }
        None => {
            let _ = writeln!(out, "source not retained in any checkpoint");
        }
    }
    let _ = writeln!(out, "lineage:");
    for e in latest.state.lineage.iter().filter(|e| e.genome_id.as_str() == id) {
        let _ = writeln!(out, "  {}", serde_json::to_string(e).expect("event serializes"));
    }
    Ok(out)
}
