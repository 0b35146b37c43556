//! Seed programs shipped with the crate.

pub const TOY_SEED_FILE: &str = "pipeline.toy";
pub const TOY_SEED: &str = include_str!("../assets/toy_seed/pipeline.toy");
pub const TOY_CORPUS: &str = include_str!("../assets/toy_corpus.json");

pub const MINI_SEED_FILE: &str = "model.py";
pub const MINI_SEED: &str = include_str!("../assets/mini_seed/model.py");

/// Block names of the mini classifier seed, in file order.
pub const MINI_BLOCKS: [&str; 9] = [
    "get_optimizer",
    "SE",
    "SE_LN",
    "DFSEBV2",
    "FCT",
    "EVE",
    "ME",
    "DW",
    "ExquisiteNetV2",
];

pub fn toy_tree() -> Vec<(String, String)> {
    vec![(TOY_SEED_FILE.to_string(), TOY_SEED.to_string())]
}

pub fn mini_tree() -> Vec<(String, String)> {
    vec![(MINI_SEED_FILE.to_string(), MINI_SEED.to_string())]
}
