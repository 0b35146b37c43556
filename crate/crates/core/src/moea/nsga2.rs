//! Non-dominated sorting, crowding distance and crowded binary tournaments.

use std::cmp::Ordering;

use rand::Rng;

use super::{dominates_points, MoeaError, ObjectiveSpec, ScoredGenome};

/// Deb's fast non-dominated sort. Invalid members end up in the last front.
pub fn fast_nondominated_sort(
    pop: &[ScoredGenome],
    spec: &ObjectiveSpec,
) -> Result<Vec<Vec<usize>>, MoeaError> {
    let points = spec.points(pop)?;
    Ok(sort_points(&points))
}

pub(crate) fn sort_points(points: &[Option<Vec<f64>>]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (pi, pj) = (points[i].as_deref(), points[j].as_deref());
            if dominates_points(pi, pj) {
                dominated_by_me[i].push(j);
                domination_count[j] += 1;
            } else if dominates_points(pj, pi) {
                dominated_by_me[j].push(i);
                domination_count[i] += 1;
            }
        }
    }

    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by_me[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of a front of valid genomes.
pub fn crowding_distance(front: &[ScoredGenome], spec: &ObjectiveSpec) -> Result<Vec<f64>, MoeaError> {
    let points = spec
        .points(front)?
        .into_iter()
        .map(|p| p.ok_or_else(|| MoeaError::InvalidSpec("crowding distance needs valid fitness".into())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(crowding_points(&points))
}

#[allow(clippy::needless_range_loop)]
pub(crate) fn crowding_points(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let dims = points[0].len();
    let mut distance = vec![0.0f64; n];
    let mut order: Vec<usize> = (0..n).collect();
    for m in 0..dims {
        order.sort_by(|&a, &b| points[a][m].total_cmp(&points[b][m]).then(a.cmp(&b)));
        let lo = points[order[0]][m];
        let hi = points[order[n - 1]][m];
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..(n - 1) {
            let idx = order[w];
            if distance[idx].is_finite() {
                distance[idx] += (points[order[w + 1]][m] - points[order[w - 1]][m]) / range;
            }
        }
    }
    distance
}

/// One crowded binary tournament. Indices refer to the population passed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tournament {
    pub first: usize,
    pub second: usize,
    pub winner: usize,
    /// The comparator tied and the rng decided.
    pub coin_flip: bool,
}

/// Rank and crowding distance for every member of `points`.
pub(crate) fn rank_and_crowding(points: &[Option<Vec<f64>>]) -> (Vec<usize>, Vec<f64>) {
    let fronts = sort_points(points);
    let mut rank = vec![0usize; points.len()];
    let mut crowd = vec![0.0f64; points.len()];
    for (r, front) in fronts.iter().enumerate() {
        for &i in front {
            rank[i] = r;
        }
        if front.iter().all(|&i| points[i].is_some()) {
            let front_points: Vec<Vec<f64>> =
                front.iter().map(|&i| points[i].clone().expect("valid")).collect();
            for (&i, d) in front.iter().zip(crowding_points(&front_points)) {
                crowd[i] = d;
            }
        }
    }
    (rank, crowd)
}

/// Runs `n` crowded binary tournaments with replacement over `pop`.
pub fn nsga2_tournaments<R: Rng + ?Sized>(
    pop: &[ScoredGenome],
    n: usize,
    spec: &ObjectiveSpec,
    rng: &mut R,
) -> Result<Vec<Tournament>, MoeaError> {
    if n == 0 || pop.is_empty() {
        return Ok(Vec::new());
    }
    let points = spec.points(pop)?;
    let (rank, crowd) = rank_and_crowding(&points);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let first = rng.gen_range(0..pop.len());
        let second = rng.gen_range(0..pop.len());
        let ordering = if first == second {
            Ordering::Less
        } else {
            rank[first]
                .cmp(&rank[second])
                .then_with(|| crowd[second].total_cmp(&crowd[first]))
        };
        let (winner, coin_flip) = match ordering {
            Ordering::Less => (first, false),
            Ordering::Greater => (second, false),
            Ordering::Equal => (if rng.gen_bool(0.5) { first } else { second }, true),
        };
        out.push(Tournament {
            first,
            second,
            winner,
            coin_flip,
        });
    }
    Ok(out)
}

/// Mating selection: `n` winners of crowded binary tournaments.
pub fn nsga2_select<R: Rng + ?Sized>(
    pop: &[ScoredGenome],
    n: usize,
    spec: &ObjectiveSpec,
    rng: &mut R,
) -> Result<Vec<ScoredGenome>, MoeaError> {
    Ok(nsga2_tournaments(pop, n, spec, rng)?
        .into_iter()
        .map(|t| pop[t.winner].clone())
        .collect())
}
