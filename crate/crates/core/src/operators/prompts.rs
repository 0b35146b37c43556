//! Prompt templates, categories and personas.
//!
//! On disk a prompt directory looks like:
//!
//! ```text
//! system.txt
//! eot.txt                  {seed_block} {elite_block} {target_block}
//! mate.txt                 {parent_a_block} {parent_b_block}
//! categories/<id>.txt      {block_source}
//! personas/<id>.txt        plain preamble text
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::genome::CodeBlock;
use crate::llm::{ChatRequest, GenerationParams, PromptKey};

pub const PERSONA_NONE: &str = "none";
pub const EOT_CATEGORY: &str = "eot";
pub const MATE_CATEGORY: &str = "mate";

const CATEGORY_ORDER: [&str; 6] = [
    "hyperparam",
    "hyperparam_uncommon",
    "complex",
    "reduce_size",
    "uncommon",
    "significant",
];
const PERSONA_ORDER: [&str; 4] = [PERSONA_NONE, "expert", "dr_magoo", "innovative_scientist"];

const BUILTIN_SYSTEM: &str = include_str!("../../assets/prompts/system.txt");
const BUILTIN_EOT: &str = include_str!("../../assets/prompts/eot.txt");
const BUILTIN_MATE: &str = include_str!("../../assets/prompts/mate.txt");
const BUILTIN_CATEGORIES: [(&str, &str); 6] = [
    ("hyperparam", include_str!("../../assets/prompts/categories/hyperparam.txt")),
    (
        "hyperparam_uncommon",
        include_str!("../../assets/prompts/categories/hyperparam_uncommon.txt"),
    ),
    ("complex", include_str!("../../assets/prompts/categories/complex.txt")),
    ("reduce_size", include_str!("../../assets/prompts/categories/reduce_size.txt")),
    ("uncommon", include_str!("../../assets/prompts/categories/uncommon.txt")),
    ("significant", include_str!("../../assets/prompts/categories/significant.txt")),
];
const BUILTIN_PERSONAS: [(&str, &str); 3] = [
    ("expert", include_str!("../../assets/prompts/personas/expert.txt")),
    ("dr_magoo", include_str!("../../assets/prompts/personas/dr_magoo.txt")),
    (
        "innovative_scientist",
        include_str!("../../assets/prompts/personas/innovative_scientist.txt"),
    ),
];

const CATEGORY_VARS: (&[&str], &[&str]) = (&["block_source"], &["block_source", "block_name"]);
const EOT_VARS: (&[&str], &[&str]) = (
    &["seed_block", "elite_block", "target_block"],
    &[
        "seed_block",
        "elite_block",
        "target_block",
        "exemplar_name",
        "target_name",
        "exemplar_note",
    ],
);
const MATE_VARS: (&[&str], &[&str]) = (
    &["parent_a_block", "parent_b_block"],
    &["parent_a_block", "parent_b_block", "block_name"],
);
const NO_VARS: (&[&str], &[&str]) = (&[], &[]);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: missing required placeholder {{{name}}}")]
    MissingPlaceholder { template: String, name: String },
    #[error("prompt directory: {0}")]
    Io(String),
    #[error("prompt directory has no category templates")]
    NoCategories,
}

/// A text with `{name}` placeholders, checked against an allowed set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    text: String,
}

fn placeholders(text: &str) -> Vec<(usize, usize, &str)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > start && j < bytes.len() && bytes[j] == b'}' {
                out.push((i, j + 1, &text[start..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

impl Template {
    pub fn parse(label: &str, text: &str, vars: (&[&str], &[&str])) -> Result<Self, TemplateError> {
        let (required, allowed) = vars;
        let found: BTreeSet<&str> = placeholders(text).into_iter().map(|(_, _, n)| n).collect();
        if let Some(bad) = found.iter().find(|n| !allowed.contains(n)) {
            return Err(TemplateError::UnknownPlaceholder {
                template: label.to_string(),
                name: bad.to_string(),
            });
        }
        if let Some(missing) = required.iter().find(|n| !found.contains(*n)) {
            return Err(TemplateError::MissingPlaceholder {
                template: label.to_string(),
                name: missing.to_string(),
            });
        }
        Ok(Self {
            text: text.to_string(),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Single-pass substitution; substituted values are never re-scanned.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut last = 0;
        for (start, end, name) in placeholders(&self.text) {
            if let Some((_, v)) = values.iter().find(|(k, _)| *k == name) {
                out.push_str(&self.text[last..start]);
                out.push_str(v);
                last = end;
            }
        }
        out.push_str(&self.text[last..]);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCategory {
    pub id: String,
    pub template: Template,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Persona {
    pub id: String,
    pub preamble: String,
}

impl Persona {
    pub fn none() -> Self {
        Self {
            id: PERSONA_NONE.to_string(),
            preamble: String::new(),
        }
    }

    pub fn is_none(&self) -> bool {
        self.preamble.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    system: String,
    categories: Vec<PromptCategory>,
    personas: Vec<Persona>,
    eot: Template,
    mate: Template,
}

fn canonical_rank(order: &[&str], id: &str) -> (usize, String) {
    (
        order.iter().position(|o| *o == id).unwrap_or(order.len()),
        id.to_string(),
    )
}

impl PromptLibrary {
    /// The templates shipped with the engine.
    pub fn builtin() -> Self {
        let categories = BUILTIN_CATEGORIES
            .iter()
            .map(|(id, text)| PromptCategory {
                id: id.to_string(),
                template: Template::parse(id, text, CATEGORY_VARS).expect("builtin category template"),
            })
            .collect();
        let personas = std::iter::once(Persona::none())
            .chain(BUILTIN_PERSONAS.iter().map(|(id, text)| Persona {
                id: id.to_string(),
                preamble: text.trim_end().to_string(),
            }))
            .collect();
        Self {
            system: BUILTIN_SYSTEM.trim_end().to_string(),
            categories,
            personas,
            eot: Template::parse("eot", BUILTIN_EOT, EOT_VARS).expect("builtin eot template"),
            mate: Template::parse("mate", BUILTIN_MATE, MATE_VARS).expect("builtin mate template"),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, TemplateError> {
        let read = |rel: &str| {
            std::fs::read_to_string(dir.join(rel))
                .map_err(|e| TemplateError::Io(format!("{}: {e}", dir.join(rel).display())))
        };
        let list = |sub: &str| -> Result<Vec<(String, String)>, TemplateError> {
            let path = dir.join(sub);
            let entries = std::fs::read_dir(&path)
                .map_err(|e| TemplateError::Io(format!("{}: {e}", path.display())))?;
            let mut out = Vec::new();
            for entry in entries {
                let entry = entry.map_err(|e| TemplateError::Io(e.to_string()))?;
                let p = entry.path();
                if p.extension().and_then(|e| e.to_str()) != Some("txt") {
                    continue;
                }
                let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| TemplateError::Io(format!("{}: {e}", p.display())))?;
                out.push((id, text));
            }
            Ok(out)
        };

        let system = Template::parse("system.txt", &read("system.txt")?, NO_VARS)?;
        let eot = Template::parse("eot.txt", &read("eot.txt")?, EOT_VARS)?;
        let mate = Template::parse("mate.txt", &read("mate.txt")?, MATE_VARS)?;

        let mut categories = list("categories")?
            .into_iter()
            .map(|(id, text)| {
                let template = Template::parse(&format!("categories/{id}.txt"), &text, CATEGORY_VARS)?;
                Ok(PromptCategory { id, template })
            })
            .collect::<Result<Vec<_>, TemplateError>>()?;
        if categories.is_empty() {
            return Err(TemplateError::NoCategories);
        }
        categories.sort_by_key(|c| canonical_rank(&CATEGORY_ORDER, &c.id));

        let mut personas = vec![Persona::none()];
        for (id, text) in list("personas")? {
            let label = format!("personas/{id}.txt");
            Template::parse(&label, &text, NO_VARS)?;
            if text.trim().is_empty() || id == PERSONA_NONE {
                continue;
            }
            personas.push(Persona {
                id,
                preamble: text.trim_end().to_string(),
            });
        }
        personas.sort_by_key(|p| canonical_rank(&PERSONA_ORDER, &p.id));

        Ok(Self {
            system: system.text().trim_end().to_string(),
            categories,
            personas,
            eot,
            mate,
        })
    }

    /// Writes the builtin templates in the on-disk layout.
    pub fn write_builtin(dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir.join("categories"))?;
        std::fs::create_dir_all(dir.join("personas"))?;
        std::fs::write(dir.join("system.txt"), BUILTIN_SYSTEM)?;
        std::fs::write(dir.join("eot.txt"), BUILTIN_EOT)?;
        std::fs::write(dir.join("mate.txt"), BUILTIN_MATE)?;
        for (id, text) in BUILTIN_CATEGORIES {
            std::fs::write(dir.join("categories").join(format!("{id}.txt")), text)?;
        }
        for (id, text) in BUILTIN_PERSONAS {
            std::fs::write(dir.join("personas").join(format!("{id}.txt")), text)?;
        }
        Ok(())
    }

    pub fn system_text(&self) -> &str {
        &self.system
    }

    pub fn categories(&self) -> &[PromptCategory] {
        &self.categories
    }

    pub fn category(&self, id: &str) -> Option<&PromptCategory> {
        self.categories.iter().find(|c| c.id == id)
    }

    /// All personas, `none` first.
    pub fn personas(&self) -> &[Persona] {
        &self.personas
    }

    pub fn persona(&self, id: &str) -> Option<&Persona> {
        self.personas.iter().find(|p| p.id == id)
    }

    pub fn build_fixed_prompt(
        &self,
        block: &CodeBlock,
        category: &PromptCategory,
        persona: &Persona,
        params: GenerationParams,
    ) -> ChatRequest {
        let body = category
            .template
            .render(&[("block_source", &block.source), ("block_name", &block.name)]);
        let user_text = if persona.is_none() {
            body
        } else {
            format!("{}\n\n{body}", persona.preamble)
        };
        ChatRequest {
            system_text: self.system.clone(),
            user_text,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            key: PromptKey::new(&block.name, &category.id, &persona.id),
            subject_source: block.source.clone(),
        }
    }

    pub fn build_eot_prompt(
        &self,
        target: &CodeBlock,
        elite_block: &CodeBlock,
        seed_block: &CodeBlock,
        params: GenerationParams,
    ) -> Result<ChatRequest, super::OperatorError> {
        if elite_block.name != seed_block.name {
            return Err(super::OperatorError::ExemplarMismatch {
                elite: elite_block.name.clone(),
                seed: seed_block.name.clone(),
            });
        }
        let mut note = String::new();
        if elite_block.source == seed_block.source {
            note.push_str(
                "\nThe two versions are identical (no change was made), so reason about what could still be improved.\n",
            );
        }
        if target.name == elite_block.name {
            note.push_str("\nThe target below is the same gene as the example, so you are refining it further.\n");
        }
        let user_text = self.eot.render(&[
            ("seed_block", &seed_block.source),
            ("elite_block", &elite_block.source),
            ("target_block", &target.source),
            ("exemplar_name", &elite_block.name),
            ("target_name", &target.name),
            ("exemplar_note", &note),
        ]);
        Ok(ChatRequest {
            system_text: self.system.clone(),
            user_text,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            key: PromptKey::new(&target.name, EOT_CATEGORY, PERSONA_NONE),
            subject_source: target.source.clone(),
        })
    }

    pub fn build_mating_prompt(
        &self,
        block_a: &CodeBlock,
        block_b: &CodeBlock,
        params: GenerationParams,
    ) -> Result<ChatRequest, super::OperatorError> {
        if block_a.name != block_b.name {
            return Err(super::OperatorError::ExemplarMismatch {
                elite: block_a.name.clone(),
                seed: block_b.name.clone(),
            });
        }
        if block_a.source == block_b.source {
            return Err(super::OperatorError::IneffectualMating(block_a.name.clone()));
        }
        let user_text = self.mate.render(&[
            ("parent_a_block", &block_a.source),
            ("parent_b_block", &block_b.source),
            ("block_name", &block_a.name),
        ]);
        Ok(ChatRequest {
            system_text: self.system.clone(),
            user_text,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            key: PromptKey::new(&block_a.name, MATE_CATEGORY, PERSONA_NONE),
            subject_source: block_a.source.clone(),
        })
    }
}
