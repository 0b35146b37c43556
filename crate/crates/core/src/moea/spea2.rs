//! SPEA-2 fitness assignment and environmental selection.
//!
//! Distances are Euclidean in objective space after min-max normalization
//! over the pool; objectives with zero range contribute nothing. The density
//! neighbour index is `k = round(sqrt(N))`, clamped to the available
//! neighbours.

use std::cmp::Ordering;

use super::{dedup_by_id, dominates_points, MoeaError, ObjectiveSpec, ScoredGenome};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spea2Fitness {
    pub strength: usize,
    pub raw: f64,
    pub density: f64,
    pub total: f64,
}

fn normalize(points: &[&[f64]]) -> Vec<Vec<f64>> {
    let Some(first) = points.first() else {
        return Vec::new();
    };
    let dims = first.len();
    let mut lo = vec![f64::INFINITY; dims];
    let mut hi = vec![f64::NEG_INFINITY; dims];
    for p in points {
        for m in 0..dims {
            lo[m] = lo[m].min(p[m]);
            hi[m] = hi[m].max(p[m]);
        }
    }
    points
        .iter()
        .map(|p| {
            (0..dims)
                .map(|m| {
                    let range = hi[m] - lo[m];
                    if range > 0.0 {
                        (p[m] - lo[m]) / range
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn distance_matrix(normalized: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = normalized.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = normalized[i]
                .iter()
                .zip(&normalized[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[i][j] = dist;
            d[j][i] = dist;
        }
    }
    d
}

fn kth_neighbor(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

pub(crate) fn spea2_points(points: &[Option<Vec<f64>>]) -> Vec<Spea2Fitness> {
    let n = points.len();
    let mut strength = vec![0usize; n];
    let mut dominators: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && dominates_points(points[i].as_deref(), points[j].as_deref()) {
                strength[i] += 1;
                dominators[j].push(i);
            }
        }
    }

    let valid: Vec<usize> = (0..n).filter(|&i| points[i].is_some()).collect();
    let valid_points: Vec<&[f64]> = valid
        .iter()
        .map(|&i| points[i].as_deref().expect("filtered"))
        .collect();
    let dist = distance_matrix(&normalize(&valid_points));
    let k = kth_neighbor(valid.len());
    let mut sigma = vec![0.0f64; n];
    for (row, &i) in valid.iter().enumerate() {
        let mut others: Vec<f64> = (0..valid.len())
            .filter(|&c| c != row)
            .map(|c| dist[row][c])
            .collect();
        if others.is_empty() {
            continue;
        }
        others.sort_by(f64::total_cmp);
        sigma[i] = others[k - 1];
    }

    (0..n)
        .map(|i| {
            let raw = dominators[i].iter().map(|&j| strength[j] as f64).sum::<f64>();
            let density = 1.0 / (sigma[i] + 2.0);
            Spea2Fitness {
                strength: strength[i],
                raw,
                density,
                total: raw + density,
            }
        })
        .collect()
}

/// Strength, raw fitness, density and total fitness for every member.
pub fn spea2_fitness(pop: &[ScoredGenome], spec: &ObjectiveSpec) -> Result<Vec<Spea2Fitness>, MoeaError> {
    Ok(spea2_points(&spec.points(pop)?))
}

/// Indices (into `points`, all valid) kept by environmental selection, in
/// ascending total fitness.
pub(crate) fn environmental_indices(points: &[Vec<f64>], archive_size: usize) -> Vec<usize> {
    let wrapped: Vec<Option<Vec<f64>>> = points.iter().cloned().map(Some).collect();
    let fitness = spea2_points(&wrapped);
    let mut by_total: Vec<usize> = (0..points.len()).collect();
    by_total.sort_by(|&a, &b| fitness[a].total.total_cmp(&fitness[b].total).then(a.cmp(&b)));

    let nondominated: Vec<usize> = by_total
        .iter()
        .copied()
        .filter(|&i| fitness[i].raw == 0.0)
        .collect();
    if nondominated.len() <= archive_size {
        by_total.truncate(archive_size);
        return by_total;
    }

    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let dist = distance_matrix(&normalize(&refs));
    let mut kept = nondominated;
    while kept.len() > archive_size {
        let sorted_neighbors = |i: usize| {
            let mut v: Vec<f64> = kept.iter().filter(|&&j| j != i).map(|&j| dist[i][j]).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let mut victim = kept[0];
        let mut victim_dists = sorted_neighbors(victim);
        for &cand in &kept[1..] {
            let d = sorted_neighbors(cand);
            let smaller = d
                .iter()
                .zip(&victim_dists)
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| *o != Ordering::Equal)
                == Some(Ordering::Less);
            if smaller || (d == victim_dists && cand < victim) {
                victim = cand;
                victim_dists = d;
            }
        }
        kept.retain(|&i| i != victim);
    }
    kept
}

/// Elite selection: every non-dominated member if it fits, truncated by
/// nearest-neighbour distance when overfull, topped up with the best
/// dominated members when underfull. Invalid members and duplicate ids are
/// dropped first.
pub fn spea2_environmental_select(
    pop: &[ScoredGenome],
    archive_size: usize,
    spec: &ObjectiveSpec,
) -> Result<Vec<ScoredGenome>, MoeaError> {
    let pool: Vec<ScoredGenome> = dedup_by_id(pop)
        .into_iter()
        .filter(|s| s.fitness.is_valid())
        .collect();
    if pool.is_empty() || archive_size == 0 {
        return Ok(Vec::new());
    }
    let points = spec
        .points(&pool)?
        .into_iter()
        .map(|p| p.expect("pool is valid"))
        .collect::<Vec<_>>();
    Ok(environmental_indices(&points, archive_size)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}
