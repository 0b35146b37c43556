//! LLM-driven genetic operators: fixed-prompt mutation (optionally with a
//! persona), evolution-of-thought mutation, and single-block mating.

mod prompts;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{differing_blocks, CodeBlock, Genome, GenomeError, Provenance};
use crate::llm::{extract_code, sample_params, LlmClient, LlmError, PromptKey, SamplingConfig};
use crate::moea::ScoredGenome;

pub use prompts::{
    Persona, PromptCategory, PromptLibrary, Template, TemplateError, EOT_CATEGORY, MATE_CATEGORY,
    PERSONA_NONE,
};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("exemplar blocks differ in name: elite `{elite}` vs seed `{seed}`")]
    ExemplarMismatch { elite: String, seed: String },
    #[error("block `{0}` is identical in both parents")]
    IneffectualMating(String),
    #[error("mutation failed: {0}")]
    MutationFailed(#[source] LlmError),
    #[error("mating failed: {0}")]
    MatingFailed(#[source] LlmError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    FixedPrompt,
    Eot,
    Mate,
    Clone,
}

impl OperatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::FixedPrompt => "fixed_prompt",
            OperatorKind::Eot => "eot",
            OperatorKind::Mate => "mate",
            OperatorKind::Clone => "clone",
        }
    }
}

/// Shared inputs for one round of operator applications.
#[derive(Clone, Copy)]
pub struct OperatorContext<'a> {
    pub library: &'a PromptLibrary,
    pub llm: &'a LlmClient,
    pub sampling: &'a SamplingConfig,
    pub seed: &'a Genome,
    /// Exemplar pool for evolution-of-thought; empty in generation 0.
    pub elites: &'a [ScoredGenome],
    pub prob_eot: f64,
    pub crp_enabled: bool,
    pub eot_enabled: bool,
    pub generation: u32,
}

#[derive(Debug, Clone)]
pub struct Variation {
    pub genome: Genome,
    pub operator: OperatorKind,
    /// Block that was rewritten; `None` for clones.
    pub block: Option<String>,
    pub prompt_key: Option<PromptKey>,
    /// The rewritten block differs from the input.
    pub changed: bool,
}

fn same_code(a: &str, b: &str) -> bool {
    a.trim_end() == b.trim_end() || extract_code(a).ok().as_deref() == Some(b.trim_end())
}

fn replace_block(
    genome: &Genome,
    name: &str,
    code: &str,
    provenance: Provenance,
    generation: u32,
) -> Result<(Genome, bool), GenomeError> {
    let original = genome
        .block(name)
        .ok_or_else(|| GenomeError::UnknownBlock(name.to_string()))?;
    if same_code(&original.source, code) {
        return Ok((genome.clone(), false));
    }
    let block = CodeBlock::new(name, code, provenance, generation);
    Ok((genome.with_block(block)?, true))
}

/// Rewrites one uniformly chosen block. The result carries `[input id]` as
/// its parent and the context generation as its birth generation.
pub fn mutate<R: Rng + ?Sized>(
    genome: &Genome,
    ctx: &OperatorContext<'_>,
    rng: &mut R,
) -> Result<Variation, OperatorError> {
    let names: Vec<&str> = genome.block_names().collect();
    let target_name = *names
        .choose(rng)
        .ok_or_else(|| GenomeError::IncompleteGenome("<any>".into()))?;
    let target = genome.block(target_name).expect("chosen from genome");

    let try_eot = ctx.eot_enabled && !ctx.elites.is_empty() && rng.gen_bool(ctx.prob_eot.clamp(0.0, 1.0));
    let exemplar = if try_eot {
        let elite = ctx.elites.choose(rng).expect("non-empty elites");
        let candidates = differing_blocks(&elite.genome, ctx.seed)?;
        candidates
            .choose(rng)
            .map(|name| (elite.genome.clone(), name.clone()))
    } else {
        None
    };

    let params = sample_params(rng, ctx.sampling).map_err(OperatorError::MutationFailed)?;
    let (request, provenance, operator) = match exemplar {
        Some((elite, exemplar_name)) => {
            let elite_block = elite.block(&exemplar_name).expect("differing block exists");
            let seed_block = ctx
                .seed
                .block(&exemplar_name)
                .ok_or_else(|| GenomeError::TemplateMismatch(exemplar_name.clone()))?;
            let req = ctx.library.build_eot_prompt(target, elite_block, seed_block, params)?;
            let prov = Provenance::Eot {
                exemplar_block: exemplar_name,
                elite_id: elite.id().to_string(),
            };
            (req, prov, OperatorKind::Eot)
        }
        None => {
            let category = ctx
                .library
                .categories()
                .choose(rng)
                .expect("library has categories");
            let persona = if ctx.crp_enabled {
                ctx.library.personas().choose(rng).cloned().unwrap_or_else(Persona::none)
            } else {
                Persona::none()
            };
            let req = ctx.library.build_fixed_prompt(target, category, &persona, params);
            let prov = Provenance::Mutated {
                category: category.id.clone(),
                persona: persona.id.clone(),
            };
            (req, prov, OperatorKind::FixedPrompt)
        }
    };

    let response = ctx.llm.complete(&request).map_err(OperatorError::MutationFailed)?;
    let code = extract_code(&response.raw_text).map_err(OperatorError::MutationFailed)?;
    let (child, changed) = replace_block(genome, target_name, &code, provenance, ctx.generation)?;
    Ok(Variation {
        genome: child.with_lineage(vec![genome.id().clone()], ctx.generation),
        operator,
        block: Some(target_name.to_string()),
        prompt_key: Some(request.key),
        changed,
    })
}

/// Merges one uniformly chosen differing block of the parents. Identical
/// parents yield a clone of `parent_a` without contacting the LLM.
pub fn mate<R: Rng + ?Sized>(
    parent_a: &Genome,
    parent_b: &Genome,
    ctx: &OperatorContext<'_>,
    rng: &mut R,
) -> Result<Variation, OperatorError> {
    let parents = vec![parent_a.id().clone(), parent_b.id().clone()];
    let differing = differing_blocks(parent_a, parent_b)?;
    let Some(name) = differing.choose(rng) else {
        return Ok(Variation {
            genome: parent_a.with_lineage(parents, ctx.generation),
            operator: OperatorKind::Clone,
            block: None,
            prompt_key: None,
            changed: false,
        });
    };
    let a = parent_a.block(name).expect("differing block exists");
    let b = parent_b.block(name).expect("differing block exists");
    let params = sample_params(rng, ctx.sampling).map_err(OperatorError::MatingFailed)?;
    let request = ctx.library.build_mating_prompt(a, b, params)?;
    let response = ctx.llm.complete(&request).map_err(OperatorError::MatingFailed)?;
    let code = extract_code(&response.raw_text).map_err(OperatorError::MatingFailed)?;
    let provenance = Provenance::Mated {
        parent_ids: parents.iter().map(ToString::to_string).collect(),
    };
    let (child, changed) = replace_block(parent_a, name, &code, provenance, ctx.generation)?;
    Ok(Variation {
        genome: child.with_lineage(parents, ctx.generation),
        operator: OperatorKind::Mate,
        block: Some(name.clone()),
        prompt_key: Some(request.key),
        changed,
    })
}
