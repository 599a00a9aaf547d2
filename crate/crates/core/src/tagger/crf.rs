//! Linear-chain CRF: path scoring, the forward algorithm in log space,
//! exact negative log-likelihood with analytic gradients, and Viterbi
//! decoding. All dynamic programming runs in f64.
//!
//! The transition matrix is (K+2)x(K+2); index K is the virtual START
//! state, K+1 the virtual STOP state. Entries into START and out of STOP
//! stay at -inf and are never updated.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::math::logsumexp;

pub fn start_index(num_tags: usize) -> usize {
    num_tags
}

pub fn stop_index(num_tags: usize) -> usize {
    num_tags + 1
}

/// Fresh transition matrix with the frozen -inf entries in place and
/// everything else zero.
pub fn new_transitions(num_tags: usize) -> Array2<f64> {
    let n = num_tags + 2;
    let mut t = Array2::zeros((n, n));
    for i in 0..n {
        t[[i, start_index(num_tags)]] = f64::NEG_INFINITY;
        t[[stop_index(num_tags), i]] = f64::NEG_INFINITY;
    }
    t
}

/// Zeroes gradient entries for the frozen transition cells.
pub fn mask_frozen(d_transitions: &mut Array2<f64>, num_tags: usize) {
    let n = num_tags + 2;
    for i in 0..n {
        d_transitions[[i, start_index(num_tags)]] = 0.0;
        d_transitions[[stop_index(num_tags), i]] = 0.0;
    }
}

fn check_shapes(emissions: &Array2<f64>, transitions: &Array2<f64>) -> Result<usize> {
    let k = emissions.ncols();
    if transitions.dim() != (k + 2, k + 2) {
        return Err(Error::config(
            "transitions",
            format!(
                "expected {}x{} transitions for {k} tags, found {}x{}",
                k + 2,
                k + 2,
                transitions.nrows(),
                transitions.ncols()
            ),
        ));
    }
    Ok(k)
}

/// Score of one tag path: START transition + emissions + pairwise
/// transitions + STOP transition.
pub fn crf_score(emissions: &Array2<f64>, transitions: &Array2<f64>, tags: &[usize]) -> Result<f64> {
    let k = check_shapes(emissions, transitions)?;
    let t_len = emissions.nrows();
    if tags.len() != t_len {
        return Err(Error::data(format!(
            "tag path length {} does not match {} tokens",
            tags.len(),
            t_len
        )));
    }
    if let Some(&bad) = tags.iter().find(|&&t| t >= k) {
        return Err(Error::data(format!("tag index {bad} out of range for {k} tags")));
    }
    let mut score = transitions[[start_index(k), tags[0]]];
    for (i, &tag) in tags.iter().enumerate() {
        score += emissions[[i, tag]];
        if i + 1 < t_len {
            score += transitions[[tag, tags[i + 1]]];
        }
    }
    score += transitions[[tags[t_len - 1], stop_index(k)]];
    Ok(score)
}

/// Forward-recursion alphas: alpha[t][j] = log sum over paths ending in
/// tag j at position t.
fn forward_alphas(emissions: &Array2<f64>, transitions: &Array2<f64>, k: usize) -> Array2<f64> {
    let t_len = emissions.nrows();
    let mut alpha = Array2::zeros((t_len, k));
    for j in 0..k {
        alpha[[0, j]] = transitions[[start_index(k), j]] + emissions[[0, j]];
    }
    let mut scratch = vec![0.0; k];
    for t in 1..t_len {
        for j in 0..k {
            for (i, slot) in scratch.iter_mut().enumerate() {
                *slot = alpha[[t - 1, i]] + transitions[[i, j]];
            }
            alpha[[t, j]] = logsumexp(&scratch) + emissions[[t, j]];
        }
    }
    alpha
}

/// Backward-recursion betas: beta[t][i] = log sum over path suffixes from
/// tag i at position t through STOP.
fn backward_betas(emissions: &Array2<f64>, transitions: &Array2<f64>, k: usize) -> Array2<f64> {
    let t_len = emissions.nrows();
    let mut beta = Array2::zeros((t_len, k));
    for i in 0..k {
        beta[[t_len - 1, i]] = transitions[[i, stop_index(k)]];
    }
    let mut scratch = vec![0.0; k];
    for t in (0..t_len - 1).rev() {
        for i in 0..k {
            for (j, slot) in scratch.iter_mut().enumerate() {
                *slot = transitions[[i, j]] + emissions[[t + 1, j]] + beta[[t + 1, j]];
            }
            beta[[t, i]] = logsumexp(&scratch);
        }
    }
    beta
}

/// log Z: log sum of exp(path score) over all K^T tag paths.
pub fn crf_log_partition(emissions: &Array2<f64>, transitions: &Array2<f64>) -> Result<f64> {
    let k = check_shapes(emissions, transitions)?;
    if emissions.nrows() == 0 {
        return Err(Error::data("empty emission matrix"));
    }
    let alpha = forward_alphas(emissions, transitions, k);
    let t_last = emissions.nrows() - 1;
    let finals: Vec<f64> = (0..k)
        .map(|j| alpha[[t_last, j]] + transitions[[j, stop_index(k)]])
        .collect();
    Ok(logsumexp(&finals))
}

/// Negative log-likelihood of a gold path: log Z minus the path score.
pub fn crf_nll(emissions: &Array2<f64>, transitions: &Array2<f64>, gold: &[usize]) -> Result<f64> {
    Ok(crf_log_partition(emissions, transitions)? - crf_score(emissions, transitions, gold)?)
}

/// NLL plus its exact gradients w.r.t. emissions and transitions
/// (expected feature counts minus gold feature counts). Frozen transition
/// entries come back with zero gradient.
pub fn crf_nll_grad(
    emissions: &Array2<f64>,
    transitions: &Array2<f64>,
    gold: &[usize],
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let k = check_shapes(emissions, transitions)?;
    let t_len = emissions.nrows();
    let score = crf_score(emissions, transitions, gold)?;
    let alpha = forward_alphas(emissions, transitions, k);
    let beta = backward_betas(emissions, transitions, k);
    let finals: Vec<f64> = (0..k)
        .map(|j| alpha[[t_len - 1, j]] + transitions[[j, stop_index(k)]])
        .collect();
    let log_z = logsumexp(&finals);

    let mut d_emissions = Array2::zeros((t_len, k));
    for t in 0..t_len {
        for j in 0..k {
            d_emissions[[t, j]] = (alpha[[t, j]] + beta[[t, j]] - log_z).exp();
        }
        d_emissions[[t, gold[t]]] -= 1.0;
    }

    let mut d_transitions = Array2::zeros((k + 2, k + 2));
    // START -> first tag.
    for j in 0..k {
        d_transitions[[start_index(k), j]] =
            (transitions[[start_index(k), j]] + emissions[[0, j]] + beta[[0, j]] - log_z).exp();
    }
    d_transitions[[start_index(k), gold[0]]] -= 1.0;
    // Pairwise.
    for t in 0..t_len - 1 {
        for i in 0..k {
            for j in 0..k {
                d_transitions[[i, j]] += (alpha[[t, i]]
                    + transitions[[i, j]]
                    + emissions[[t + 1, j]]
                    + beta[[t + 1, j]]
                    - log_z)
                    .exp();
            }
        }
        d_transitions[[gold[t], gold[t + 1]]] -= 1.0;
    }
    // Last tag -> STOP.
    for i in 0..k {
        d_transitions[[i, stop_index(k)]] +=
            (alpha[[t_len - 1, i]] + transitions[[i, stop_index(k)]] - log_z).exp();
    }
    d_transitions[[gold[t_len - 1], stop_index(k)]] -= 1.0;
    mask_frozen(&mut d_transitions, k);

    Ok((log_z - score, d_emissions, d_transitions))
}

/// Argmax tag path and its score. Ties break toward the lowest tag index
/// at every backpointer decision.
pub fn viterbi_decode(
    emissions: &Array2<f64>,
    transitions: &Array2<f64>,
) -> Result<(Vec<usize>, f64)> {
    let k = check_shapes(emissions, transitions)?;
    let t_len = emissions.nrows();
    if t_len == 0 {
        return Err(Error::data("empty emission matrix"));
    }
    let mut score = Array1::zeros(k);
    for j in 0..k {
        score[j] = transitions[[start_index(k), j]] + emissions[[0, j]];
    }
    let mut backpointers: Vec<Vec<usize>> = Vec::with_capacity(t_len.saturating_sub(1));
    for t in 1..t_len {
        let mut next = Array1::zeros(k);
        let mut bp = vec![0usize; k];
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0usize;
            for i in 0..k {
                let cand = score[i] + transitions[[i, j]];
                if cand > best {
                    best = cand;
                    best_i = i;
                }
            }
            next[j] = best + emissions[[t, j]];
            bp[j] = best_i;
        }
        score = next;
        backpointers.push(bp);
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_j = 0usize;
    for j in 0..k {
        let cand = score[j] + transitions[[j, stop_index(k)]];
        if cand > best {
            best = cand;
            best_j = j;
        }
    }
    let mut path = vec![best_j];
    for bp in backpointers.iter().rev() {
        path.push(bp[*path.last().unwrap()]);
    }
    path.reverse();
    Ok((path, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_token_score_formula() {
        let emissions = array![[0.5, -0.3]];
        let mut trans = new_transitions(2);
        trans[[start_index(2), 1]] = 0.7;
        trans[[1, stop_index(2)]] = -0.2;
        let score = crf_score(&emissions, &trans, &[1]).unwrap();
        assert!((score - (0.7 + (-0.3) + (-0.2))).abs() < 1e-12);
    }

    #[test]
    fn zero_scores_give_zero_path_score() {
        let emissions = Array2::zeros((3, 2));
        let trans = new_transitions(2);
        assert_eq!(crf_score(&emissions, &trans, &[0, 1, 0]).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_tag_is_an_error() {
        let emissions = Array2::zeros((2, 3));
        let trans = new_transitions(3);
        assert!(crf_score(&emissions, &trans, &[0, 3]).is_err());
    }

    #[test]
    fn log_partition_all_zero_equals_log_paths() {
        // T=2, K=3: nine equal zero-score paths.
        let emissions = Array2::zeros((2, 3));
        let trans = new_transitions(3);
        let log_z = crf_log_partition(&emissions, &trans).unwrap();
        assert!((log_z - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_token_log_partition_direct() {
        let emissions = array![[0.4, -1.1, 2.0]];
        let mut trans = new_transitions(3);
        trans[[start_index(3), 0]] = 0.3;
        trans[[1, stop_index(3)]] = -0.8;
        let direct: Vec<f64> = (0..3)
            .map(|j| trans[[start_index(3), j]] + emissions[[0, j]] + trans[[j, stop_index(3)]])
            .collect();
        let log_z = crf_log_partition(&emissions, &trans).unwrap();
        assert!((log_z - logsumexp(&direct)).abs() < 1e-12);
    }

    #[test]
    fn nll_is_zero_when_only_one_path_exists() {
        let emissions = array![[1.3], [0.2], [-0.7]];
        let trans = new_transitions(1);
        let nll = crf_nll(&emissions, &trans, &[0, 0, 0]).unwrap();
        assert!(nll.abs() < 1e-12);
    }

    #[test]
    fn nll_nonnegative() {
        let emissions = array![[0.9, -0.4], [0.1, 1.2]];
        let mut trans = new_transitions(2);
        trans[[0, 1]] = 0.5;
        for gold in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            assert!(crf_nll(&emissions, &trans, &gold).unwrap() >= 0.0);
        }
    }

    #[test]
    fn viterbi_single_tag() {
        let emissions = array![[0.3], [0.4]];
        let trans = new_transitions(1);
        let (path, score) = viterbi_decode(&emissions, &trans).unwrap();
        assert_eq!(path, vec![0, 0]);
        let direct = crf_score(&emissions, &trans, &path).unwrap();
        assert!((score - direct).abs() < 1e-12);
    }

    #[test]
    fn viterbi_per_position_argmax_with_zero_transitions() {
        let emissions = array![[5.0, 0.0, 0.0], [0.0, 0.0, 5.0], [0.0, 5.0, 0.0]];
        let trans = new_transitions(3);
        let (path, _) = viterbi_decode(&emissions, &trans).unwrap();
        assert_eq!(path, vec![0, 2, 1]);
    }

    #[test]
    fn viterbi_ties_break_to_lowest_index() {
        let emissions = Array2::zeros((3, 3));
        let trans = new_transitions(3);
        let (path, score) = viterbi_decode(&emissions, &trans).unwrap();
        assert_eq!(path, vec![0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn nll_grad_matches_finite_differences() {
        let emissions = array![[0.3, -0.7, 1.1], [0.9, 0.2, -0.5], [-1.2, 0.4, 0.6]];
        let mut trans = new_transitions(3);
        trans[[0, 1]] = 0.4;
        trans[[2, 0]] = -0.9;
        trans[[start_index(3), 2]] = 0.25;
        let gold = [2usize, 0, 1];
        let (_, d_em, d_tr) = crf_nll_grad(&emissions, &trans, &gold).unwrap();
        let eps = 1e-6;
        for t in 0..3 {
            for j in 0..3 {
                let mut up = emissions.clone();
                up[[t, j]] += eps;
                let mut down = emissions.clone();
                down[[t, j]] -= eps;
                let fd = (crf_nll(&up, &trans, &gold).unwrap()
                    - crf_nll(&down, &trans, &gold).unwrap())
                    / (2.0 * eps);
                assert!((fd - d_em[[t, j]]).abs() < 1e-8, "emission ({t},{j})");
            }
        }
        for i in 0..5 {
            for j in 0..5 {
                if !trans[[i, j]].is_finite() {
                    assert_eq!(d_tr[[i, j]], 0.0);
                    continue;
                }
                let mut up = trans.clone();
                up[[i, j]] += eps;
                let mut down = trans.clone();
                down[[i, j]] -= eps;
                let fd = (crf_nll(&emissions, &up, &gold).unwrap()
                    - crf_nll(&emissions, &down, &gold).unwrap())
                    / (2.0 * eps);
                assert!((fd - d_tr[[i, j]]).abs() < 1e-8, "transition ({i},{j})");
            }
        }
    }
}
