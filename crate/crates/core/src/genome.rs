//! Seed templates, gene blocks and genomes.
//!
//! A seed source tree is split into immutable scaffold text and named gene
//! blocks. Blocks are opened by a line whose trimmed content is
//! `<leader> @GE-BLOCK: <name>` and closed by `<leader> @GE-END`. A genome
//! assigns one source variant to every block; rendering splices those
//! variants back between the (preserved) marker lines.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_COMMENT_LEADER: &str = "#";
const OPEN_TAG: &str = "@GE-BLOCK: ";
const CLOSE_TAG: &str = "@GE-END";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenomeError {
    #[error("{file}:{line}: block `{name}` is defined more than once")]
    DuplicateBlock {
        file: String,
        line: usize,
        name: String,
    },
    #[error("{file}:{line}: {detail}")]
    UnbalancedMarker {
        file: String,
        line: usize,
        detail: String,
    },
    #[error("{file}:{line}: malformed marker line: {text}")]
    MalformedMarker {
        file: String,
        line: usize,
        text: String,
    },
    #[error("{file}:{line}: block `{name}` has an empty body")]
    EmptyBlock {
        file: String,
        line: usize,
        name: String,
    },
    #[error("seed contains no gene blocks")]
    EmptySeed,
    #[error("genome is missing block `{0}`")]
    IncompleteGenome(String),
    #[error("genomes do not share a template (block `{0}`)")]
    TemplateMismatch(String),
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("failed to read seed {path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Where a block variant came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Seed,
    Mutated { category: String, persona: String },
    Eot { exemplar_block: String, elite_id: String },
    Mated { parent_ids: Vec<String> },
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Provenance::Seed => "seed",
            Provenance::Mutated { .. } => "mutated",
            Provenance::Eot { .. } => "eot",
            Provenance::Mated { .. } => "mated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlock {
    pub name: String,
    pub source: String,
    pub provenance: Provenance,
    pub origin_generation: u32,
}

impl CodeBlock {
    /// Builds a block, normalizing the body to end in exactly one newline so
    /// that the closing marker always stays on its own line.
    pub fn new(name: impl Into<String>, source: &str, provenance: Provenance, generation: u32) -> Self {
        let origin_generation = if provenance == Provenance::Seed { 0 } else { generation };
        Self {
            name: name.into(),
            source: normalize_body(source),
            provenance,
            origin_generation,
        }
    }
}

fn normalize_body(source: &str) -> String {
    if source.ends_with('\n') {
        source.to_string()
    } else {
        format!("{source}\n")
    }
}

/// Content hash identifying a genome by its block sources.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenomeId(pub String);

impl GenomeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..self.0.len().min(12)]
    }
}

impl fmt::Display for GenomeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
enum Segment {
    Scaffold(String),
    Block(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TemplateFile {
    path: String,
    segments: Vec<Segment>,
}

/// A parsed seed: scaffold text plus the ordered list of gene block names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTemplate {
    files: Vec<TemplateFile>,
    block_names: Vec<String>,
    seed_sources: BTreeMap<String, String>,
    comment_leader: String,
}

fn valid_block_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

enum MarkerLine<'a> {
    Open(&'a str),
    Close,
}

fn classify_marker<'a>(
    line: &'a str,
    leader: &str,
    file: &str,
    line_no: usize,
) -> Result<Option<MarkerLine<'a>>, GenomeError> {
    let trimmed = line.trim();
    let Some(rest) = trimmed.strip_prefix(leader) else {
        return Ok(None);
    };
    let Some(body) = rest.strip_prefix(' ') else {
        return Ok(None);
    };
    if let Some(name) = body.strip_prefix(OPEN_TAG) {
        if valid_block_name(name) {
            return Ok(Some(MarkerLine::Open(name)));
        }
    } else if body == CLOSE_TAG {
        return Ok(Some(MarkerLine::Close));
    } else if !body.starts_with("@GE-") {
        return Ok(None);
    }
    Err(GenomeError::MalformedMarker {
        file: file.to_string(),
        line: line_no,
        text: trimmed.to_string(),
    })
}

/// Splits a source tree into scaffold and gene blocks using the default `#`
/// comment leader.
pub fn parse_seed(source_tree: &[(String, String)]) -> Result<SeedTemplate, GenomeError> {
    parse_seed_with_leader(source_tree, DEFAULT_COMMENT_LEADER)
}

pub fn parse_seed_with_leader(
    source_tree: &[(String, String)],
    comment_leader: &str,
) -> Result<SeedTemplate, GenomeError> {
    let mut files = Vec::with_capacity(source_tree.len());
    let mut block_names = Vec::new();
    let mut seen = HashSet::new();
    let mut seed_sources = BTreeMap::new();

    for (path, text) in source_tree {
        let mut segments = Vec::new();
        let mut scaffold = String::new();
        // (name, line number of the open marker, accumulated body)
        let mut open: Option<(&str, usize, String)> = None;

        for (idx, line) in text.split_inclusive('\n').enumerate() {
            let line_no = idx + 1;
            let marker = classify_marker(line, comment_leader, path, line_no)?;
            match (marker, open.take()) {
                (Some(MarkerLine::Open(name)), None) => {
                    if !seen.insert(name.to_string()) {
                        return Err(GenomeError::DuplicateBlock {
                            file: path.clone(),
                            line: line_no,
                            name: name.to_string(),
                        });
                    }
                    scaffold.push_str(line);
                    segments.push(Segment::Scaffold(std::mem::take(&mut scaffold)));
                    open = Some((name, line_no, String::new()));
                }
                (Some(MarkerLine::Open(name)), Some((outer, outer_line, _))) => {
                    return Err(GenomeError::UnbalancedMarker {
                        file: path.clone(),
                        line: line_no,
                        detail: format!(
                            "block `{name}` opened before `{outer}` (line {outer_line}) was closed"
                        ),
                    });
                }
                (Some(MarkerLine::Close), Some((name, open_line, body))) => {
                    if body.trim().is_empty() {
                        return Err(GenomeError::EmptyBlock {
                            file: path.clone(),
                            line: open_line,
                            name: name.to_string(),
                        });
                    }
                    segments.push(Segment::Block(name.to_string()));
                    block_names.push(name.to_string());
                    seed_sources.insert(name.to_string(), body);
                    scaffold.push_str(line);
                }
                (Some(MarkerLine::Close), None) => {
                    return Err(GenomeError::UnbalancedMarker {
                        file: path.clone(),
                        line: line_no,
                        detail: "close marker without a matching open marker".to_string(),
                    });
                }
                (None, Some((name, open_line, mut body))) => {
                    body.push_str(line);
                    open = Some((name, open_line, body));
                }
                (None, None) => scaffold.push_str(line),
            }
        }

        if let Some((name, open_line, _)) = open {
            return Err(GenomeError::UnbalancedMarker {
                file: path.clone(),
                line: open_line,
                detail: format!("block `{name}` is never closed"),
            });
        }
        if !scaffold.is_empty() {
            segments.push(Segment::Scaffold(scaffold));
        }
        files.push(TemplateFile {
            path: path.clone(),
            segments,
        });
    }

    if block_names.is_empty() {
        return Err(GenomeError::EmptySeed);
    }
    Ok(SeedTemplate {
        files,
        block_names,
        seed_sources,
        comment_leader: comment_leader.to_string(),
    })
}

/// Reads a seed from disk. A single file becomes a one-entry tree keyed by
/// its file name; a directory is walked recursively in sorted path order.
pub fn read_source_tree(path: &Path) -> Result<Vec<(String, String)>, GenomeError> {
    let io_err = |p: &Path, e: &dyn fmt::Display| GenomeError::Io {
        path: p.to_path_buf(),
        message: e.to_string(),
    };
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, &e))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "seed".to_string());
        return Ok(vec![(name, text)]);
    }
    let mut tree = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| io_err(path, &e))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(path)
            .expect("walkdir yields children of root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let text = std::fs::read_to_string(entry.path()).map_err(|e| io_err(entry.path(), &e))?;
        tree.push((rel, text));
    }
    Ok(tree)
}

impl SeedTemplate {
    pub fn block_names(&self) -> &[String] {
        &self.block_names
    }

    pub fn comment_leader(&self) -> &str {
        &self.comment_leader
    }

    pub fn file_paths(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|f| f.path.as_str())
    }

    /// The file that hosts `block`.
    pub fn file_of(&self, block: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|f| f.segments.iter().any(|s| matches!(s, Segment::Block(n) if n == block)))
            .map(|f| f.path.as_str())
    }

    /// The unmodified seed as a genome.
    pub fn seed_genome(&self) -> Genome {
        let blocks = self
            .block_names
            .iter()
            .map(|name| CodeBlock::new(name.clone(), &self.seed_sources[name], Provenance::Seed, 0))
            .collect();
        Genome::from_blocks(blocks, Vec::new(), 0)
    }

    /// Splices the genome's block sources into the scaffold.
    pub fn render(&self, genome: &Genome) -> Result<Vec<(String, String)>, GenomeError> {
        self.check_covers(genome)?;
        let mut out = Vec::with_capacity(self.files.len());
        for file in &self.files {
            let mut text = String::new();
            for seg in &file.segments {
                match seg {
                    Segment::Scaffold(s) => text.push_str(s),
                    Segment::Block(name) => {
                        let block = genome
                            .block(name)
                            .ok_or_else(|| GenomeError::IncompleteGenome(name.clone()))?;
                        text.push_str(&block.source);
                    }
                }
            }
            out.push((file.path.clone(), text));
        }
        Ok(out)
    }

    /// Writes the rendered tree under `dir`.
    pub fn render_to_dir(&self, genome: &Genome, dir: &Path) -> std::io::Result<()> {
        let files = self
            .render(genome)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
        for (rel, text) in files {
            let target = dir.join(&rel);
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(target, text)?;
        }
        Ok(())
    }

    pub fn check_covers(&self, genome: &Genome) -> Result<(), GenomeError> {
        for name in &self.block_names {
            if genome.block(name).is_none() {
                return Err(GenomeError::IncompleteGenome(name.clone()));
            }
        }
        if let Some(extra) = genome
            .blocks
            .iter()
            .find(|b| !self.block_names.contains(&b.name))
        {
            return Err(GenomeError::UnknownBlock(extra.name.clone()));
        }
        Ok(())
    }
}

/// One assignment of source variants to every gene block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genome {
    genome_id: GenomeId,
    blocks: Vec<CodeBlock>,
    pub parent_ids: Vec<GenomeId>,
    pub born_generation: u32,
}

impl Genome {
    pub fn from_blocks(blocks: Vec<CodeBlock>, parent_ids: Vec<GenomeId>, born_generation: u32) -> Self {
        let genome_id = genome_id(&blocks);
        Self {
            genome_id,
            blocks,
            parent_ids,
            born_generation,
        }
    }

    pub fn id(&self) -> &GenomeId {
        &self.genome_id
    }

    pub fn blocks(&self) -> &[CodeBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&CodeBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn block_names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|b| b.name.as_str())
    }

    /// A copy with `block` substituted for the block of the same name.
    pub fn with_block(&self, block: CodeBlock) -> Result<Genome, GenomeError> {
        let mut blocks = self.blocks.clone();
        let slot = blocks
            .iter_mut()
            .find(|b| b.name == block.name)
            .ok_or_else(|| GenomeError::UnknownBlock(block.name.clone()))?;
        *slot = block;
        Ok(Genome::from_blocks(blocks, self.parent_ids.clone(), self.born_generation))
    }

    /// A copy carrying new lineage metadata; the id is unchanged.
    pub fn with_lineage(&self, parent_ids: Vec<GenomeId>, born_generation: u32) -> Genome {
        Genome {
            genome_id: self.genome_id.clone(),
            blocks: self.blocks.clone(),
            parent_ids,
            born_generation,
        }
    }

    /// Re-hashes the blocks and checks the stored id.
    pub fn verify_id(&self) -> bool {
        genome_id(&self.blocks) == self.genome_id
    }
}

/// SHA-256 over `(name, source)` pairs taken in ascending name order, so the
/// result depends on block contents only.
pub fn genome_id(blocks: &[CodeBlock]) -> GenomeId {
    let mut ordered: Vec<&CodeBlock> = blocks.iter().collect();
    ordered.sort_by(|a, b| a.name.cmp(&b.name));
    let mut hasher = Sha256::new();
    for block in ordered {
        hasher.update((block.name.len() as u64).to_le_bytes());
        hasher.update(block.name.as_bytes());
        hasher.update((block.source.len() as u64).to_le_bytes());
        hasher.update(block.source.as_bytes());
    }
    GenomeId(hex::encode(hasher.finalize()))
}

/// Names of blocks whose source differs, in `a`'s (template) order.
pub fn differing_blocks(a: &Genome, b: &Genome) -> Result<Vec<String>, GenomeError> {
    if a.blocks.len() != b.blocks.len() {
        let name = a
            .block_names()
            .find(|n| b.block(n).is_none())
            .or_else(|| b.block_names().find(|n| a.block(n).is_none()))
            .unwrap_or_default();
        return Err(GenomeError::TemplateMismatch(name.to_string()));
    }
    let mut out = Vec::new();
    for block in &a.blocks {
        let other = b
            .block(&block.name)
            .ok_or_else(|| GenomeError::TemplateMismatch(block.name.clone()))?;
        if other.source != block.source {
            out.push(block.name.clone());
        }
    }
    Ok(out)
}
