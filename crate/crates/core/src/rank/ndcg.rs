//! NeuralNDCG: NDCG computed through a differentiable sort relaxation.
//!
//! The relaxation is the unimodal row-softmax construction: row `i` of
//! `P̂` is `softmax(((n − 1 − 2i)·s − A_s·1) / τ)` with `A_s[j][k] = |s_j − s_k|`,
//! a soft assignment of sorted position `i` (descending) to items. It is
//! optionally balanced by alternating column/row rescaling (each iteration
//! ends on a row pass, so rows always sum to 1). Gains `2^rel − 1` are
//! soft-sorted by `P̂`, discounted by `1/log₂(i + 2)` and normalized by the
//! ideal DCG.

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_SINKHORN_ITERATIONS: usize = 3;

pub fn gain(rel: u32) -> f64 {
    2f64.powi(rel as i32) - 1.0
}

pub fn discount(position: usize) -> f64 {
    1.0 / ((position + 2) as f64).log2()
}

/// Positions of items when sorted by descending score, ties to lower index.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn dcg(order: &[usize], relevance: &[u32]) -> f64 {
    order
        .iter()
        .enumerate()
        .map(|(pos, &item)| gain(relevance[item]) * discount(pos))
        .sum()
}

pub fn ideal_dcg(relevance: &[u32]) -> f64 {
    let mut rel = relevance.to_vec();
    rel.sort_unstable_by(|a, b| b.cmp(a));
    rel.iter()
        .enumerate()
        .map(|(pos, &r)| gain(r) * discount(pos))
        .sum()
}

/// Exact NDCG of the hard descending sort of `scores`.
pub fn hard_ndcg(scores: &[f64], relevance: &[u32]) -> Result<f64> {
    check_inputs(scores, relevance)?;
    Ok(dcg(&descending_order(scores), relevance) / ideal_dcg(relevance))
}

fn check_inputs(scores: &[f64], relevance: &[u32]) -> Result<()> {
    if scores.len() != relevance.len() {
        return Err(Error::Dimension {
            expected: relevance.len(),
            actual: scores.len(),
            context: "scores vs relevance".into(),
        });
    }
    if relevance.iter().all(|&r| r == 0) {
        return Err(Error::Excluded("relevance has no positive entry".into()));
    }
    Ok(())
}

/// Forward pass of the relaxation, keeping what the backward pass needs.
struct SoftSort {
    n: usize,
    /// Row-softmax output before balancing.
    base: Vec<f64>,
    /// Per balancing pass: the normalized matrix and the sums it was divided by.
    passes: Vec<(Vec<f64>, Vec<f64>, Axis)>,
}

#[derive(Clone, Copy, PartialEq)]
enum Axis {
    Row,
    Col,
}

impl SoftSort {
    fn new(scores: &[f64], tau: f64, iterations: usize) -> Result<Self> {
        let n = scores.len();
        if n == 0 {
            return Err(Error::Empty("score list".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::Argument(format!("temperature must be > 0, got {tau}")));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Argument("non-finite score".into()));
        }
        let abs_row_sums: Vec<f64> = scores
            .iter()
            .map(|sj| scores.iter().map(|sk| (sj - sk).abs()).sum())
            .collect();
        let mut base = vec![0.0; n * n];
        for i in 0..n {
            let c = (n as f64) - 1.0 - 2.0 * i as f64;
            let row = &mut base[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] = (c * scores[j] - abs_row_sums[j]) / tau;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }

        let mut passes = Vec::with_capacity(2 * iterations);
        let mut current = base.clone();
        for _ in 0..iterations {
            for axis in [Axis::Col, Axis::Row] {
                let sums = axis_sums(&current, n, axis);
                let mut next = current.clone();
                for i in 0..n {
                    for j in 0..n {
                        let s = if axis == Axis::Row { sums[i] } else { sums[j] };
                        next[i * n + j] /= s;
                    }
                }
                passes.push((next.clone(), sums, axis));
                current = next;
            }
        }
        Ok(SoftSort { n, base, passes })
    }

    fn output(&self) -> &[f64] {
        self.passes.last().map(|p| p.0.as_slice()).unwrap_or(&self.base)
    }

    /// Pull `dL/dP` (for the final matrix) back to `dL/dlogits` of the
    /// row softmax, then to the scores.
    fn backward(&self, scores: &[f64], tau: f64, mut grad: Vec<f64>) -> Vec<f64> {
        let n = self.n;
        for (out, sums, axis) in self.passes.iter().rev() {
            // out = in / sum along axis ⇒ d in = (d out − Σ_axis d out · out) / sum
            let mut dots = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    let k = if *axis == Axis::Row { i } else { j };
                    dots[k] += grad[i * n + j] * out[i * n + j];
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let k = if *axis == Axis::Row { i } else { j };
                    grad[i * n + j] = (grad[i * n + j] - dots[k]) / sums[k];
                }
            }
        }
        // softmax per row
        let mut dlogit = vec![0.0; n * n];
        for i in 0..n {
            let p = &self.base[i * n..(i + 1) * n];
            let g = &grad[i * n..(i + 1) * n];
            let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            for j in 0..n {
                dlogit[i * n + j] = p[j] * (g[j] - dot) / tau;
            }
        }
        // logit[i][j] = c_i s_j − Σ_k |s_j − s_k|
        let mut col_sum = vec![0.0; n];
        let mut col_weighted = vec![0.0; n];
        for i in 0..n {
            let c = (n as f64) - 1.0 - 2.0 * i as f64;
            for j in 0..n {
                col_sum[j] += dlogit[i * n + j];
                col_weighted[j] += c * dlogit[i * n + j];
            }
        }
        let sign = |x: f64| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        };
        (0..n)
            .map(|m| {
                let mut g = col_weighted[m];
                for k in 0..n {
                    let sg = sign(scores[m] - scores[k]);
                    g -= (col_sum[m] + col_sum[k]) * sg;
                }
                g
            })
            .collect()
    }
}

fn axis_sums(mat: &[f64], n: usize, axis: Axis) -> Vec<f64> {
    let mut sums = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            sums[if axis == Axis::Row { i } else { j }] += mat[i * n + j];
        }
    }
    sums.iter_mut().for_each(|s| *s = s.max(f64::MIN_POSITIVE));
    sums
}

/// Relaxed descending-sort permutation; row `i` is sorted position `i`.
pub fn soft_permutation(scores: &[f64], tau: f64, iterations: usize) -> Result<Vec<Vec<f64>>> {
    let soft = SoftSort::new(scores, tau, iterations)?;
    Ok(soft.output().chunks(soft.n).map(|r| r.to_vec()).collect())
}

/// `−NeuralNDCG(scores, relevance)`.
pub fn neural_ndcg_loss(scores: &[f64], relevance: &[u32], tau: f64, iterations: usize) -> Result<f64> {
    neural_ndcg_loss_and_grad(scores, relevance, tau, iterations).map(|(l, _)| l)
}

/// Loss and its gradient with respect to the scores.
pub fn neural_ndcg_loss_and_grad(
    scores: &[f64],
    relevance: &[u32],
    tau: f64,
    iterations: usize,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(scores, relevance)?;
    let soft = SoftSort::new(scores, tau, iterations)?;
    let n = soft.n;
    let gains: Vec<f64> = relevance.iter().map(|&r| gain(r)).collect();
    let idcg = ideal_dcg(relevance);
    let p = soft.output();
    let mut dcg = 0.0;
    for i in 0..n {
        let sorted_gain: f64 = (0..n).map(|j| p[i * n + j] * gains[j]).sum();
        dcg += sorted_gain * discount(i);
    }
    // Balancing leaves column sums only approximately 1, which can lift the
    // soft DCG marginally above the ideal; the loss is capped at −1 there.
    let raw = -dcg / idcg;
    if raw < -1.0 {
        return Ok((-1.0, vec![0.0; n]));
    }
    let loss = raw;

    let mut dp = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dp[i * n + j] = -discount(i) * gains[j] / idcg;
        }
    }
    let grad = soft.backward(scores, tau, dp);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn single_item() {
        assert_eq!(soft_permutation(&[0.3], 1.0, 3).unwrap(), vec![vec![1.0]]);
        for s in [-4.0, 0.0, 9.0] {
            assert!((neural_ndcg_loss(&[s], &[1], 1.0, 3).unwrap() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sharp_sort_of_descending_pair_is_identity() {
        let p = soft_permutation(&[2.0, 1.0], 0.01, 0).unwrap();
        assert!((p[0][0] - 1.0).abs() < 1e-6 && p[0][1] < 1e-6);
        assert!((p[1][1] - 1.0).abs() < 1e-6 && p[1][0] < 1e-6);
    }

    #[test]
    fn rows_sum_to_one() {
        let mut r = rng::seeded(5, 0);
        for n in 1..9 {
            for iters in [0, 1, 3, 10] {
                let s: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
                for row in soft_permutation(&s, 0.7, iters).unwrap() {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn balancing_reduces_column_error() {
        let s = [0.3, 0.31, -1.0, 2.0, 0.0, 0.05];
        let mut last = f64::INFINITY;
        for iters in 0..8 {
            let p = soft_permutation(&s, 1.0, iters).unwrap();
            let err: f64 = (0..s.len())
                .map(|j| (p.iter().map(|row| row[j]).sum::<f64>() - 1.0).abs())
                .sum();
            assert!(err <= last + 1e-12, "iteration {iters}: {err} > {last}");
            last = err;
        }
        assert!(last < 0.05);
    }

    #[test]
    fn perfect_and_reversed_orders_match_brute_force() {
        let rel = [2u32, 1, 0];
        // brute force over all 6 orderings
        let all: Vec<f64> = permutations(3).iter().map(|o| dcg(o, &rel)).collect();
        let max = all.iter().cloned().fold(f64::MIN, f64::max);
        let min = all.iter().cloned().fold(f64::MAX, f64::min);
        let best = neural_ndcg_loss(&[3.0, 2.0, 1.0], &rel, 0.01, 3).unwrap();
        let worst = neural_ndcg_loss(&[1.0, 2.0, 3.0], &rel, 0.01, 3).unwrap();
        assert!((best + max / ideal_dcg(&rel)).abs() < 1e-6);
        assert!((best + 1.0).abs() < 1e-6);
        assert!((worst + min / ideal_dcg(&rel)).abs() < 1e-6);
    }

    #[test]
    fn all_zero_relevance_is_excluded() {
        assert!(matches!(neural_ndcg_loss(&[1.0, 2.0], &[0, 0], 1.0, 3), Err(Error::Excluded(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng::seeded(8, 0);
        for trial in 0..30 {
            let n = 2 + trial % 6;
            let s: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let mut rel: Vec<u32> = (0..n).map(|_| r.random_range(0..3)).collect();
            rel[0] = 1;
            let tau = [0.5, 1.0, 2.0][trial % 3];
            let iters = trial % 4;
            let (_, g) = neural_ndcg_loss_and_grad(&s, &rel, tau, iters).unwrap();
            let h = 1e-6;
            for m in 0..n {
                let mut up = s.clone();
                up[m] += h;
                let mut dn = s.clone();
                dn[m] -= h;
                let num = (neural_ndcg_loss(&up, &rel, tau, iters).unwrap()
                    - neural_ndcg_loss(&dn, &rel, tau, iters).unwrap())
                    / (2.0 * h);
                assert!(
                    (num - g[m]).abs() <= 1e-5 * (1.0 + num.abs()),
                    "trial {trial} item {m}: numeric {num} analytic {}",
                    g[m]
                );
            }
        }
    }

    #[test]
    fn loss_stays_in_range() {
        let mut r = rng::seeded(12, 0);
        for _ in 0..500 {
            let n = r.random_range(1..10);
            let s: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
            let mut rel: Vec<u32> = (0..n).map(|_| r.random_range(0..4)).collect();
            rel[r.random_range(0..n)] = 1 + r.random_range(0..3);
            let tau = r.random_range(0.05..3.0);
            let l = neural_ndcg_loss(&s, &rel, tau, r.random_range(0..5)).unwrap();
            assert!((-1.0 - 1e-9..0.0).contains(&l), "loss {l}");
        }
    }
}
