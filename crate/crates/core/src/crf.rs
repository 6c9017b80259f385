//! Linear-chain CRF inference over dense emission and transition scores.
//!
//! A path `y` over `T` positions scores
//! `start->y0 + sum_t emit[t][y_t] + sum_t trans[y_{t-1}][y_t] + y_{T-1}->end`.
//! Transition matrices are `(L+2) x (L+2)`; index `L` is the virtual start
//! state and `L+1` the virtual end state. `-inf` entries forbid a move.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Transitions<T> {
    pub labels: usize,
    pub scores: Vec<Vec<T>>,
}

impl<T: Scalar> Transitions<T> {
    pub fn zeros(labels: usize) -> Self {
        Self {
            labels,
            scores: vec![vec![T::zero(); labels + 2]; labels + 2],
        }
    }

    pub fn start(&self) -> usize {
        self.labels
    }

    pub fn end(&self) -> usize {
        self.labels + 1
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> T {
        self.scores[from][to]
    }

    pub fn forbid(&mut self, from: usize, to: usize) {
        self.scores[from][to] = T::neg_infinity();
    }

    fn check(&self, emissions: &[Vec<T>]) -> Result<()> {
        if self.scores.len() != self.labels + 2 || self.scores.iter().any(|r| r.len() != self.labels + 2) {
            return Err(Error::DimensionMismatch {
                expected: self.labels + 2,
                actual: self.scores.len(),
            });
        }
        if let Some(row) = emissions.iter().find(|r| r.len() != self.labels) {
            return Err(Error::DimensionMismatch {
                expected: self.labels,
                actual: row.len(),
            });
        }
        Ok(())
    }
}

/// Score of one label path.
pub fn path_score<T: Scalar>(emissions: &[Vec<T>], trans: &Transitions<T>, path: &[usize]) -> T {
    let mut prev = trans.start();
    let mut s = T::zero();
    for (t, &y) in path.iter().enumerate() {
        s += trans.get(prev, y) + emissions[t][y];
        prev = y;
    }
    s + trans.get(prev, trans.end())
}

/// Log-space forward messages: `alpha[t][y]` = log-sum of scores of prefixes ending in `y`.
pub fn forward<T: Scalar>(emissions: &[Vec<T>], trans: &Transitions<T>) -> Vec<Vec<T>> {
    let l = trans.labels;
    let mut alpha: Vec<Vec<T>> = Vec::with_capacity(emissions.len());
    for (t, emit) in emissions.iter().enumerate() {
        let row = (0..l)
            .map(|y| {
                let incoming = if t == 0 {
                    trans.get(trans.start(), y)
                } else {
                    log_sum_exp((0..l).map(|p| alpha[t - 1][p] + trans.get(p, y)))
                };
                incoming + emit[y]
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

/// Log-space backward messages: `beta[t][y]` = log-sum of suffix scores after `y` at `t`.
pub fn backward<T: Scalar>(emissions: &[Vec<T>], trans: &Transitions<T>) -> Vec<Vec<T>> {
    let l = trans.labels;
    let n = emissions.len();
    let mut beta = vec![vec![T::zero(); l]; n];
    for t in (0..n).rev() {
        for y in 0..l {
            beta[t][y] = if t + 1 == n {
                trans.get(y, trans.end())
            } else {
                log_sum_exp((0..l).map(|nx| trans.get(y, nx) + emissions[t + 1][nx] + beta[t + 1][nx]))
            };
        }
    }
    beta
}

/// Log of the sum of `exp(path_score)` over all `L^T` paths.
pub fn log_partition<T: Scalar>(emissions: &[Vec<T>], trans: &Transitions<T>) -> T {
    if emissions.is_empty() {
        return trans.get(trans.start(), trans.end());
    }
    let alpha = forward(emissions, trans);
    let last = alpha.last().expect("non-empty");
    log_sum_exp((0..trans.labels).map(|y| last[y] + trans.get(y, trans.end())))
}

/// Negative log-likelihood of `gold`: `log Z - score(gold)`, never negative.
pub fn nll<T: Scalar>(emissions: &[Vec<T>], trans: &Transitions<T>, gold: &[usize]) -> Result<T> {
    trans.check(emissions)?;
    if gold.len() != emissions.len() {
        return Err(Error::InvalidGold(format!(
            "{} labels for {} positions",
            gold.len(),
            emissions.len()
        )));
    }
    if let Some(&bad) = gold.iter().find(|&&y| y >= trans.labels) {
        return Err(Error::InvalidGold(format!("label index {bad} out of range")));
    }
    let score = path_score(emissions, trans, gold);
    if score == T::neg_infinity() {
        return Err(Error::InvalidGold("gold path uses a forbidden transition".into()));
    }
    let loss = log_partition(emissions, trans) - score;
    Ok(if loss < T::zero() { T::zero() } else { loss })
}

/// Posterior marginals of a sequence.
#[derive(Debug, Clone)]
pub struct Marginals<T> {
    pub log_z: T,
    /// `unary[t][y] = P(y_t = y)`.
    pub unary: Vec<Vec<T>>,
    /// `pairwise[t][a][b] = P(y_t = a, y_{t+1} = b)` for `t < T-1`.
    pub pairwise: Vec<Vec<Vec<T>>>,
}

pub fn marginals<T: Scalar>(emissions: &[Vec<T>], trans: &Transitions<T>) -> Marginals<T> {
    let l = trans.labels;
    let alpha = forward(emissions, trans);
    let beta = backward(emissions, trans);
    let log_z = log_partition(emissions, trans);
    let unary = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| (0..l).map(|y| (a[y] + b[y] - log_z).exp()).collect())
        .collect();
    let pairwise = (0..emissions.len().saturating_sub(1))
        .map(|t| {
            (0..l)
                .map(|a| {
                    (0..l)
                        .map(|b| {
                            (alpha[t][a] + trans.get(a, b) + emissions[t + 1][b] + beta[t + 1][b] - log_z).exp()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Marginals { log_z, unary, pairwise }
}

/// Gradient of [`nll`] with respect to the emission scores and transition matrix.
#[derive(Debug, Clone)]
pub struct ScoreGradient<T> {
    pub loss: T,
    /// `T x L`: expected minus observed label indicator.
    pub emissions: Vec<Vec<T>>,
    /// `(L+2) x (L+2)`: expected minus observed transition counts.
    pub transitions: Vec<Vec<T>>,
}

pub fn nll_gradient<T: Scalar>(emissions: &[Vec<T>], trans: &Transitions<T>, gold: &[usize]) -> Result<ScoreGradient<T>> {
    let loss = nll(emissions, trans, gold)?;
    let l = trans.labels;
    let n = emissions.len();
    let mut g_trans = vec![vec![T::zero(); l + 2]; l + 2];
    if n == 0 {
        return Ok(ScoreGradient {
            loss,
            emissions: Vec::new(),
            transitions: g_trans,
        });
    }
    let m = marginals(emissions, trans);
    let mut g_emit = m.unary.clone();
    for (t, &y) in gold.iter().enumerate() {
        g_emit[t][y] -= T::one();
    }
    for y in 0..l {
        g_trans[trans.start()][y] += m.unary[0][y];
        g_trans[y][trans.end()] += m.unary[n - 1][y];
    }
    for pw in &m.pairwise {
        for a in 0..l {
            for b in 0..l {
                g_trans[a][b] += pw[a][b];
            }
        }
    }
    let mut prev = trans.start();
    for &y in gold {
        g_trans[prev][y] -= T::one();
        prev = y;
    }
    g_trans[prev][trans.end()] -= T::one();
    Ok(ScoreGradient {
        loss,
        emissions: g_emit,
        transitions: g_trans,
    })
}

/// Highest-scoring path and its score.
///
/// Ties prefer the lower label index: the final label is the lowest-index
/// maximizer and each back-pointer is the lowest-index best predecessor.
pub fn viterbi<T: Scalar>(emissions: &[Vec<T>], trans: &Transitions<T>) -> (Vec<usize>, T) {
    let l = trans.labels;
    let n = emissions.len();
    if n == 0 {
        return (Vec::new(), trans.get(trans.start(), trans.end()));
    }
    let mut delta: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(n);
    delta.push((0..l).map(|y| trans.get(trans.start(), y) + emissions[0][y]).collect());
    back.push(vec![trans.start(); l]);
    for t in 1..n {
        let mut row = Vec::with_capacity(l);
        let mut ptr = Vec::with_capacity(l);
        for y in 0..l {
            let mut best = 0;
            let mut best_s = delta[t - 1][0] + trans.get(0, y);
            for p in 1..l {
                let s = delta[t - 1][p] + trans.get(p, y);
                if s > best_s {
                    best = p;
                    best_s = s;
                }
            }
            row.push(best_s + emissions[t][y]);
            ptr.push(best);
        }
        delta.push(row);
        back.push(ptr);
    }
    let mut last = 0;
    let mut last_s = delta[n - 1][0] + trans.get(0, trans.end());
    for y in 1..l {
        let s = delta[n - 1][y] + trans.get(y, trans.end());
        if s > last_s {
            last = y;
            last_s = s;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    (path, last_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, t: usize, l: usize) -> (Vec<Vec<f64>>, Transitions<f64>) {
        let e = (0..t).map(|_| (0..l).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let mut tr = Transitions::zeros(l);
        for row in tr.scores.iter_mut() {
            for x in row.iter_mut() {
                *x = rng.gen_range(-2.0..2.0);
            }
        }
        (e, tr)
    }

    fn all_paths(t: usize, l: usize) -> Vec<Vec<usize>> {
        (0..l.pow(t as u32))
            .map(|mut code| {
                let mut p = vec![0; t];
                for slot in p.iter_mut().rev() {
                    *slot = code % l;
                    code /= l;
                }
                p
            })
            .collect()
    }

    #[test]
    fn single_step_is_logsumexp() {
        let e = vec![vec![0.5, -1.0, 2.0]];
        let z = log_partition(&e, &Transitions::zeros(3));
        let expected = (0.5f64.exp() + (-1.0f64).exp() + 2.0f64.exp()).ln();
        assert!((z - expected).abs() < 1e-12);
    }

    #[test]
    fn partition_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 1..=4 {
            let (e, tr) = random_problem(&mut rng, t, 3);
            let brute = log_sum_exp(all_paths(t, 3).iter().map(|p| path_score(&e, &tr, p)));
            assert!((log_partition(&e, &tr) - brute).abs() < 1e-10);
        }
    }

    #[test]
    fn emission_shift_adds_t_times_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (e, tr) = random_problem(&mut rng, 5, 3);
        let shifted: Vec<Vec<f64>> = e.iter().map(|r| r.iter().map(|x| x + 0.7).collect()).collect();
        let diff = log_partition(&shifted, &tr) - log_partition(&e, &tr);
        assert!((diff - 5.0 * 0.7).abs() < 1e-10);
    }

    #[test]
    fn single_label_has_zero_loss() {
        let e: Vec<Vec<f64>> = vec![vec![1.3], vec![-0.2]];
        let mut tr = Transitions::zeros(1);
        tr.scores[0][0] = 0.4;
        assert!(nll(&e, &tr, &[0, 0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (e, tr) = random_problem(&mut rng, 3, 3);
        let total: f64 = all_paths(3, 3).iter().map(|p| (-nll(&e, &tr, p).unwrap()).exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in 1..=5 {
            let (e, tr) = random_problem(&mut rng, t, 3);
            let (path, score) = viterbi(&e, &tr);
            let best = all_paths(t, 3)
                .into_iter()
                .map(|p| path_score(&e, &tr, &p))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((score - best).abs() < 1e-10);
            assert!((path_score(&e, &tr, &path) - best).abs() < 1e-10);
        }
    }

    #[test]
    fn viterbi_ties_prefer_low_labels() {
        let e = vec![vec![1.0, 1.0, 0.0], vec![2.0, 2.0, 2.0]];
        let (path, _) = viterbi(&e, &Transitions::zeros(3));
        assert_eq!(path, vec![0, 0]);
        let (path, _) = viterbi(&[vec![0.0, 5.0, 5.0]], &Transitions::zeros(3));
        assert_eq!(path, vec![1]);
    }

    #[test]
    fn forbidden_moves_are_never_decoded() {
        let mut tr = Transitions::<f64>::zeros(3);
        tr.forbid(2, 1);
        tr.forbid(tr.start(), 1);
        let e = vec![vec![0.0, 9.0, 0.0], vec![0.0, 0.0, 5.0], vec![0.0, 9.0, 0.0]];
        let (path, _) = viterbi(&e, &tr);
        assert_eq!(path[0], 0);
        for w in path.windows(2) {
            assert!(!(w[0] == 2 && w[1] == 1));
        }
        assert!(matches!(nll(&e, &tr, &[1, 1, 1]), Err(Error::InvalidGold(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (e, tr) = random_problem(&mut rng, 4, 3);
        let gold = vec![0, 1, 1, 2];
        let g = nll_gradient(&e, &tr, &gold).unwrap();
        let h = 1e-5;
        for t in 0..4 {
            for y in 0..3 {
                let mut ep = e.clone();
                ep[t][y] += h;
                let mut em = e.clone();
                em[t][y] -= h;
                let fd = (nll(&ep, &tr, &gold).unwrap() - nll(&em, &tr, &gold).unwrap()) / (2.0 * h);
                assert!((fd - g.emissions[t][y]).abs() < 1e-6);
            }
        }
        for a in 0..5 {
            for b in 0..5 {
                let mut tp = tr.clone();
                tp.scores[a][b] += h;
                let mut tm = tr.clone();
                tm.scores[a][b] -= h;
                let fd = (nll(&e, &tp, &gold).unwrap() - nll(&e, &tm, &gold).unwrap()) / (2.0 * h);
                assert!((fd - g.transitions[a][b]).abs() < 1e-6, "{a}->{b}");
            }
        }
    }

    #[test]
    fn works_in_f32() {
        let e: Vec<Vec<f32>> = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (p, _) = viterbi(&e, &Transitions::zeros(2));
        assert_eq!(p, vec![0, 1]);
        assert!(nll(&e, &Transitions::zeros(2), &[0, 1]).unwrap() >= 0.0);
    }
}
