//! `gevo init`: scaffold a run directory from a seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gevo_core::bundled;
use gevo_core::engine::{BackendKind, PromptsConfig, RunConfig};
use gevo_core::genome::{parse_seed_with_leader, read_source_tree, SeedTemplate, DEFAULT_COMMENT_LEADER};
use gevo_core::moea::{Direction, Objective, ObjectiveSpec};
use gevo_core::operators::PromptLibrary;
use gevo_core::toy_target;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Bundled {
    /// Polynomial toy pipeline, scored by `gevo toy-eval` with the mock backend.
    Toy,
    /// Nine-block convolutional classifier (needs Python and PyTorch to evaluate).
    Mini,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Directory to create or refresh.
    pub out: PathBuf,
    /// Seed file or directory containing gene block markers.
    #[arg(long, conflicts_with = "bundled")]
    pub seed: Option<PathBuf>,
    /// Use a seed shipped with gevo (default: toy).
    #[arg(long, value_enum)]
    pub bundled: Option<Bundled>,
    /// Comment leader that starts marker lines.
    #[arg(long, default_value = DEFAULT_COMMENT_LEADER)]
    pub comment_leader: String,
}

pub fn audit(template: &SeedTemplate) -> String {
    let mut out = String::new();
    let files: Vec<&str> = template.file_paths().collect();
    let _ = writeln!(out, "files: {}", files.join(", "));
    let _ = writeln!(out, "blocks: {}", template.block_names().len());
    for (i, name) in template.block_names().iter().enumerate() {
        let file = template.file_of(name).unwrap_or("?");
        let _ = writeln!(out, "  {:>2}. {name} ({file})", i + 1);
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

fn ml_objectives() -> ObjectiveSpec {
    ObjectiveSpec::new(vec![
        Objective::new("accuracy", Direction::Maximize),
        Objective::new("param_count", Direction::Minimize),
    ])
    .expect("distinct names")
}

fn ml_config(entry: &str) -> RunConfig {
    let mut cfg = toy_target::run_config(
        PathBuf::from("seed"),
        PathBuf::from("run"),
        None,
        vec!["python3".into(), entry.into()],
        false,
    );
    cfg.run = Default::default();
    cfg.objectives = ml_objectives();
    cfg.evaluation.timeout_secs = 3600.0;
    cfg.evaluation.max_concurrent = 1;
    cfg.llm.backend = BackendKind::Http;
    cfg
}

pub fn cmd_init(args: &InitArgs) -> Result<String, CliError> {
    let (tree, mut cfg, corpus) = match (&args.seed, args.bundled.unwrap_or(Bundled::Toy)) {
        (Some(path), _) => {
            let tree = read_source_tree(path).map_err(|e| CliError::Usage(e.to_string()))?;
            let entry = tree.first().map(|(p, _)| p.clone()).unwrap_or_default();
            (tree, ml_config(&entry), None)
        }
        (None, Bundled::Toy) => {
            let exe = std::env::current_exe().map_err(|e| CliError::io("locating gevo", e))?;
            let cfg = toy_target::run_config(
                PathBuf::from("seed"),
                PathBuf::from("run"),
                Some(PathBuf::from("corpus.json")),
                vec![exe.display().to_string(), "toy-eval".into(), "{workdir}".into()],
                true,
            );
            (bundled::toy_tree(), cfg, Some(bundled::TOY_CORPUS))
        }
        (None, Bundled::Mini) => (bundled::mini_tree(), ml_config(bundled::MINI_SEED_FILE), None),
    };
    let template = parse_seed_with_leader(&tree, &args.comment_leader).map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.seed.comment_leader = args.comment_leader.clone();
    cfg.prompts = PromptsConfig {
        dir: Some(PathBuf::from("prompts")),
    };

    let out = &args.out;
    for (rel, text) in &tree {
        write(&out.join("seed").join(rel), text)?;
    }
    PromptLibrary::write_builtin(&out.join("prompts")).map_err(|e| CliError::io("writing prompts", e))?;
    if let Some(corpus) = corpus {
        write(&out.join("corpus.json"), corpus)?;
    }
    write(&out.join("gevo.toml"), &cfg.to_toml())?;
    let report = audit(&template);
    write(&out.join("seed_audit.txt"), &report)?;
    Ok(report)
}
