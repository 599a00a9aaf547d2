//! Shared helpers for integration tests: an independent brute-force CRF
//! oracle (exhaustive enumeration over all K^T tag paths) and small
//! fixture builders.

use ndarray::Array2;
use rand::Rng;

/// Path score computed with plain loops, independent of the library's
/// implementation: START->t1, emissions, pairwise transitions, tT->STOP.
pub fn brute_score(emissions: &Array2<f64>, transitions: &Array2<f64>, path: &[usize]) -> f64 {
    let k = emissions.ncols();
    let start = k;
    let stop = k + 1;
    let mut score = transitions[[start, path[0]]];
    for (t, &tag) in path.iter().enumerate() {
        score += emissions[[t, tag]];
        if t + 1 < path.len() {
            score += transitions[[tag, path[t + 1]]];
        }
    }
    score + transitions[[path[path.len() - 1], stop]]
}

/// All K^T tag paths in lexicographic order.
pub fn all_paths(t: usize, k: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![Vec::new()];
    for _ in 0..t {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |tag| {
                    let mut q = p.clone();
                    q.push(tag);
                    q
                })
            })
            .collect();
    }
    paths
}

/// log Σ exp(score) over every path, via the naive sum.
pub fn brute_log_partition(emissions: &Array2<f64>, transitions: &Array2<f64>) -> f64 {
    let t = emissions.nrows();
    let k = emissions.ncols();
    let scores: Vec<f64> = all_paths(t, k)
        .iter()
        .map(|p| brute_score(emissions, transitions, p))
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Exhaustive argmax path; the first (lexicographically smallest) path
/// wins exact ties, matching Viterbi's lowest-index tie break.
pub fn brute_best(emissions: &Array2<f64>, transitions: &Array2<f64>) -> (Vec<usize>, f64) {
    let t = emissions.nrows();
    let k = emissions.ncols();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for path in all_paths(t, k) {
        let score = brute_score(emissions, transitions, &path);
        if best.as_ref().map(|(_, s)| score > *s).unwrap_or(true) {
            best = Some((path, score));
        }
    }
    best.expect("at least one path")
}

/// Random emissions (T x K) and transitions ((K+2) x (K+2), frozen cells
/// kept at -inf) with entries uniform in [-2, 2].
pub fn random_instance<R: Rng>(rng: &mut R, t: usize, k: usize) -> (Array2<f64>, Array2<f64>) {
    let emissions = Array2::from_shape_fn((t, k), |_| rng.gen_range(-2.0..2.0));
    let mut transitions = redactor::tagger::crf::new_transitions(k);
    for i in 0..k + 2 {
        for j in 0..k + 2 {
            if transitions[[i, j]].is_finite() {
                transitions[[i, j]] = rng.gen_range(-2.0..2.0);
            }
        }
    }
    (emissions, transitions)
}
