//! Measurement: Top-K hit rate, snippet accuracy, the token-confidence
//! baseline, Wasserstein distances between latent distributions and
//! buggy-vs-correct diff maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank::{descending_order, LineLabelSet};
use crate::sae::LatentVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRisk {
    pub index: usize,
    pub text: String,
    pub risk: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub snippet_id: u32,
    pub lines: Vec<LineRisk>,
    pub snippet_risk: Option<f64>,
    pub threshold: Option<f64>,
}

impl RiskReport {
    /// Ranks are positions in descending risk order, ties to the lower index.
    pub fn new(snippet_id: u32, texts: &[String], risks: &[f64]) -> Result<Self> {
        if texts.len() != risks.len() {
            return Err(Error::Dimension {
                expected: texts.len(),
                actual: risks.len(),
                context: format!("risks of snippet {snippet_id}"),
            });
        }
        if let Some(r) = risks.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Argument(format!("risk {r} outside [0, 1]")));
        }
        let mut rank = vec![0; risks.len()];
        for (pos, i) in descending_order(risks).into_iter().enumerate() {
            rank[i] = pos;
        }
        let lines = (0..risks.len())
            .map(|i| LineRisk {
                index: i,
                text: texts[i].clone(),
                risk: risks[i],
                rank: rank[i],
            })
            .collect();
        Ok(RiskReport {
            snippet_id,
            lines,
            snippet_risk: None,
            threshold: None,
        })
    }

    pub fn risks(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.risk).collect()
    }

    pub fn max_risk(&self) -> Option<f64> {
        self.lines.iter().map(|l| l.risk).reduce(f64::max)
    }

    /// Snippet verdict under the stored threshold, if both are known.
    pub fn flagged(&self) -> Option<bool> {
        Some(self.snippet_risk? >= self.threshold?)
    }
}

/// Share of buggy-token mass captured by the K highest-risk lines.
pub fn topk_hit_rate(report: &RiskReport, labels: &LineLabelSet, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Argument("K must be >= 1".into()));
    }
    labels.validate()?;
    if report.lines.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            actual: report.lines.len(),
            context: format!("report lines of snippet {}", labels.snippet_id),
        });
    }
    if labels.error_lines.is_empty() {
        return Err(Error::Excluded(format!(
            "snippet {} has no error lines",
            labels.snippet_id
        )));
    }
    let total: u64 = labels
        .error_lines
        .iter()
        .map(|&e| labels.line_token_counts[e] as u64)
        .sum();
    let hit: u64 = report
        .lines
        .iter()
        .filter(|l| l.rank < k && labels.error_lines.contains(&l.index))
        .map(|l| labels.line_token_counts[l.index] as u64)
        .sum();
    Ok(hit as f64 / total as f64)
}

/// Unweighted mean over snippets that have at least one error line.
pub fn mean_hit_rate(pairs: &[(&RiskReport, &LineLabelSet)], k: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (report, labels) in pairs {
        match topk_hit_rate(report, labels, k) {
            Ok(v) => {
                sum += v;
                count += 1;
            }
            Err(Error::Excluded(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(Error::Excluded("no snippet with error lines".into()));
    }
    Ok(sum / count as f64)
}

fn check_confidences(lines: &[Vec<f64>]) -> Result<()> {
    for (i, line) in lines.iter().enumerate() {
        if line.is_empty() {
            return Err(Error::Empty(format!("token confidences of line {i}")));
        }
        if line.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Argument(format!("confidence outside [0, 1] on line {i}")));
        }
    }
    Ok(())
}

/// `1 − mean(token confidence)` per line.
pub fn uncertainty_line_risk(confidences: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_confidences(confidences)?;
    Ok(confidences
        .iter()
        .map(|c| (1.0 - c.iter().sum::<f64>() / c.len() as f64).clamp(0.0, 1.0))
        .collect())
}

/// `1 − mean` over every token of the snippet.
pub fn uncertainty_snippet_risk(confidences: &[Vec<f64>]) -> Result<f64> {
    check_confidences(confidences)?;
    if confidences.is_empty() {
        return Err(Error::Empty("snippet confidences".into()));
    }
    let n: usize = confidences.iter().map(|c| c.len()).sum();
    let s: f64 = confidences.iter().flatten().sum();
    Ok((1.0 - s / n as f64).clamp(0.0, 1.0))
}

pub fn snippet_accuracy(predictions: &[bool], truths: &[bool]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension {
            expected: truths.len(),
            actual: predictions.len(),
            context: "predictions vs truths".into(),
        });
    }
    if truths.is_empty() {
        return Err(Error::Empty("prediction list".into()));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Order-1 Wasserstein distance between two empirical distributions,
/// ∫ |F_u⁻¹(q) − F_v⁻¹(q)| dq over the merged quantile breakpoints.
pub fn wasserstein_1d(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.is_empty() || v.is_empty() {
        return Err(Error::Empty("Wasserstein sample".into()));
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(Error::Argument("non-finite Wasserstein sample".into()));
    }
    let mut a = u.to_vec();
    let mut b = v.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    // Walk the quantile axis with integer arithmetic: step boundaries at i/n and j/m.
    let (mut i, mut j) = (0usize, 0usize);
    let mut q = 0u128;
    let total = (n as u128) * (m as u128);
    let mut acc = 0.0;
    while q < total {
        let next_a = (i as u128 + 1) * m as u128;
        let next_b = (j as u128 + 1) * n as u128;
        let next = next_a.min(next_b);
        acc += (next - q) as f64 * (a[i] - b[j]).abs();
        q = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok(acc / total as f64)
}

/// Mean activation vector of each instance set, keyed by (language, dataset).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationGroup {
    pub language: String,
    pub dataset: String,
    pub instances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

fn mean_vector(group: &ActivationGroup) -> Result<Vec<f64>> {
    let first = group.instances.first().ok_or_else(|| {
        Error::Empty(format!("group {}/{} has no instances", group.language, group.dataset))
    })?;
    let mut mean = vec![0.0; first.len()];
    for x in &group.instances {
        if x.len() != mean.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                actual: x.len(),
                context: format!("instances of {}/{}", group.language, group.dataset),
            });
        }
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= group.instances.len() as f64);
    Ok(mean)
}

/// Pairwise distances between groups, each group represented by the
/// per-latent entries of its mean activation vector.
///
/// With a single dataset the matrix is over groups and the diagonal is zero.
/// When exactly two datasets are present it is over languages: the lower
/// triangle compares languages within the first dataset, the upper triangle
/// within the second, and the diagonal compares each language across the two.
pub fn cross_distribution_matrix(groups: &[ActivationGroup]) -> Result<DistanceMatrix> {
    if groups.len() < 2 {
        return Err(Error::Argument("need at least two groups".into()));
    }
    let means: Vec<Vec<f64>> = groups.iter().map(mean_vector).collect::<Result<_>>()?;
    let mut datasets: Vec<&str> = groups.iter().map(|g| g.dataset.as_str()).collect();
    datasets.sort();
    datasets.dedup();
    if datasets.len() == 2 {
        let mut languages: Vec<&str> = groups.iter().map(|g| g.language.as_str()).collect();
        languages.sort();
        languages.dedup();
        let find = |lang: &str, ds: &str| {
            groups
                .iter()
                .position(|g| g.language == lang && g.dataset == ds)
        };
        let n = languages.len();
        let mut values = vec![vec![f64::NAN; n]; n];
        for a in 0..n {
            for b in 0..n {
                let pair = if a == b {
                    (find(languages[a], datasets[0]), find(languages[a], datasets[1]))
                } else {
                    let ds = if a > b { datasets[0] } else { datasets[1] };
                    (find(languages[a], ds), find(languages[b], ds))
                };
                if let (Some(x), Some(y)) = pair {
                    values[a][b] = wasserstein_1d(&means[x], &means[y])?;
                }
            }
        }
        return Ok(DistanceMatrix {
            labels: languages.iter().map(|s| s.to_string()).collect(),
            values,
        });
    }
    let n = groups.len();
    let mut values = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..a {
            let d = wasserstein_1d(&means[a], &means[b])?;
            values[a][b] = d;
            values[b][a] = d;
        }
    }
    Ok(DistanceMatrix {
        labels: groups
            .iter()
            .map(|g| format!("{}/{}", g.language, g.dataset))
            .collect(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffMap {
    pub values: Vec<f64>,
    pub buggy_lines: usize,
    pub correct_lines: usize,
}

impl DiffMap {
    /// Latent with the largest |difference|, ties to the lower index.
    pub fn strongest(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, v) in self.values.iter().enumerate() {
            if best.is_none_or(|b| v.abs() > self.values[b].abs()) {
                best = Some(i);
            }
        }
        best
    }
}

/// Mean latent over buggy lines minus mean over correct lines.
pub fn activation_diff_map(snippets: &[(&[LatentVector], &LineLabelSet)]) -> Result<DiffMap> {
    let mut width = None;
    let mut buggy = Vec::new();
    let mut correct = Vec::new();
    let mut nb = 0usize;
    let mut nc = 0usize;
    for (latents, labels) in snippets {
        if latents.len() != labels.len() {
            return Err(Error::Dimension {
                expected: labels.len(),
                actual: latents.len(),
                context: format!("latents of snippet {}", labels.snippet_id),
            });
        }
        for (i, z) in latents.iter().enumerate() {
            let w = *width.get_or_insert(z.dim());
            if z.dim() != w {
                return Err(Error::Dimension {
                    expected: w,
                    actual: z.dim(),
                    context: "diff map latents".into(),
                });
            }
            if buggy.is_empty() {
                buggy = vec![0.0; w];
                correct = vec![0.0; w];
            }
            let (acc, count) = if labels.error_lines.contains(&i) {
                (&mut buggy, &mut nb)
            } else {
                (&mut correct, &mut nc)
            };
            *count += 1;
            for &j in &z.active {
                acc[j] += z.values[j];
            }
        }
    }
    if nb == 0 || nc == 0 {
        return Err(Error::Empty("diff map needs buggy and correct lines".into()));
    }
    let values = buggy
        .iter()
        .zip(&correct)
        .map(|(b, c)| b / nb as f64 - c / nc as f64)
        .collect();
    Ok(DiffMap {
        values,
        buggy_lines: nb,
        correct_lines: nc,
    })
}
