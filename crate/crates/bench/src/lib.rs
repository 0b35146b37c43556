//! Random populations for the selection benchmarks.

use gevo_core::genome::{CodeBlock, Genome, Provenance};
use gevo_core::moea::{Direction, Fitness, Objective, ObjectiveSpec, ScoredGenome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `m` objectives alternating minimize/maximize.
pub fn spec(m: usize) -> ObjectiveSpec {
    ObjectiveSpec::new(
        (0..m)
            .map(|i| {
                let dir = if i % 2 == 0 { Direction::Minimize } else { Direction::Maximize };
                Objective::new(format!("f{i}"), dir)
            })
            .collect(),
    )
    .expect("distinct names")
}

/// `n` members with uniform objective values in [0, 1).
pub fn population(n: usize, spec: &ObjectiveSpec, seed: u64) -> Vec<ScoredGenome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let genome = Genome::from_blocks(
                vec![CodeBlock::new("B", &format!("member = {i}\n"), Provenance::Seed, 0)],
                Vec::new(),
                0,
            );
            let fitness = Fitness::from_pairs(spec.names().map(|name| (name, rng.gen::<f64>()))).expect("finite");
            ScoredGenome::new(genome, fitness)
        })
        .collect()
}

/// A population restricted to its first non-dominated front.
pub fn front(n: usize, spec: &ObjectiveSpec, seed: u64) -> Vec<ScoredGenome> {
    let pop = population(n, spec, seed);
    let fronts = gevo_core::moea::fast_nondominated_sort(&pop, spec).expect("spec matches");
    fronts[0].iter().map(|&i| pop[i].clone()).collect()
}
