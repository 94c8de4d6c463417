use std::collections::HashSet;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Correspondence;
use crate::affinity::AffinityMatrix;

/// Weight of the "stop here" option next to the affinities of the remaining
/// pairs at each draw. Keeps every partial matching reachable.
pub const DEFAULT_STOP_WEIGHT: f64 = 0.5;

/// Attempts allowed per requested sample before giving up on finding new
/// distinct matchings.
const ATTEMPTS_PER_SAMPLE: usize = 4;

/// Draws up to `k` distinct one-to-one correspondences from `feasible`.
///
/// Each sample is grown one pair at a time: among feasible pairs whose row and
/// column are still free, a pair is drawn with probability proportional to
/// its affinity, competing against a stop option of weight
/// [`DEFAULT_STOP_WEIGHT`]. A sample ends when the stop option is drawn or no
/// compatible pair remains. Repeated matchings are discarded, so the list
/// is shorter than `k` when the feasible set admits fewer matchings. The
/// empty correspondence is appended unless it was already drawn.
pub fn sample_correspondences(
    feasible: &[(usize, usize)],
    a: &AffinityMatrix,
    k: usize,
    seed: u64,
) -> Vec<Correspondence> {
    sample_correspondences_with(feasible, a, k, seed, DEFAULT_STOP_WEIGHT)
}

pub fn sample_correspondences_with(
    feasible: &[(usize, usize)],
    a: &AffinityMatrix,
    k: usize,
    seed: u64,
    stop_weight: f64,
) -> Vec<Correspondence> {
    let mut out: Vec<Correspondence> = Vec::with_capacity(k + 1);
    if feasible.is_empty() || k == 0 {
        out.push(Correspondence::empty());
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<(usize, usize)>> = HashSet::with_capacity(k + 1);
    let mut row_used = vec![false; a.n()];
    let mut col_used = vec![false; a.m()];
    let mut open: Vec<(usize, usize)> = Vec::with_capacity(feasible.len());
    let mut weights: Vec<f64> = Vec::with_capacity(feasible.len() + 1);
    let max_attempts = k.saturating_mul(ATTEMPTS_PER_SAMPLE);
    let mut attempts = 0;
    while out.len() < k && attempts < max_attempts {
        attempts += 1;
        row_used.iter_mut().for_each(|r| *r = false);
        col_used.iter_mut().for_each(|c| *c = false);
        let mut pairs = Vec::new();
        loop {
            open.clear();
            weights.clear();
            for &(i, j) in feasible {
                if !row_used[i] && !col_used[j] {
                    open.push((i, j));
                    weights.push(a.get(i, j));
                }
            }
            if open.is_empty() {
                break;
            }
            weights.push(stop_weight);
            let Ok(dist) = WeightedIndex::new(&weights) else {
                break;
            };
            let pick = dist.sample(&mut rng);
            if pick == open.len() {
                break;
            }
            let (i, j) = open[pick];
            row_used[i] = true;
            col_used[j] = true;
            pairs.push((i, j));
        }
        pairs.sort_unstable();
        if seen.insert(pairs.clone()) {
            out.push(Correspondence::from_sorted_unchecked(pairs));
        }
    }
    if !seen.contains(&Vec::new()) {
        out.push(Correspondence::empty());
    }
    out
}
