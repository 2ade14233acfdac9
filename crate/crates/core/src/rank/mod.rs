//! Semantic binding: per-line latents to risk scores.

mod mlp;
mod ndcg;
mod train;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use mlp::{sigmoid, squash, Layer, RankerFileHeader, RankerParams, HIDDEN_WIDTH, RANKER_MAGIC};
pub use ndcg::{
    dcg, descending_order, discount, gain, hard_ndcg, ideal_dcg, neural_ndcg_loss,
    neural_ndcg_loss_and_grad, soft_permutation, DEFAULT_SINKHORN_ITERATIONS, DEFAULT_TEMPERATURE,
};
pub use train::{
    probing_baseline_train, train_ranker, train_snippet_classifier, youden_threshold,
    ClassifierFit, RankerEpoch, RankerLog, RankerTrainConfig, RankingSample, YoudenPoint,
};

use crate::error::{Error, Result};
use crate::sae::LatentVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineLabelSet {
    pub snippet_id: u32,
    pub error_lines: BTreeSet<usize>,
    pub line_token_counts: Vec<u32>,
    pub line_lengths: Vec<usize>,
}

impl LineLabelSet {
    pub fn new(
        snippet_id: u32,
        error_lines: impl IntoIterator<Item = usize>,
        line_token_counts: Vec<u32>,
        line_lengths: Vec<usize>,
    ) -> Result<Self> {
        let set = LineLabelSet {
            snippet_id,
            error_lines: error_lines.into_iter().collect(),
            line_token_counts,
            line_lengths,
        };
        set.validate()?;
        Ok(set)
    }

    /// Labels for a snippet given as text lines; token counts fall back to
    /// whitespace-delimited words (at least one per line).
    pub fn from_lines(
        snippet_id: u32,
        lines: &[String],
        error_lines: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        Self::new(
            snippet_id,
            error_lines,
            lines
                .iter()
                .map(|l| l.split_whitespace().count().max(1) as u32)
                .collect(),
            lines.iter().map(|l| l.chars().count()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.line_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.line_lengths.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.line_lengths.len();
        if self.line_token_counts.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: self.line_token_counts.len(),
                context: format!("token counts of snippet {}", self.snippet_id),
            });
        }
        if self.line_token_counts.contains(&0) {
            return Err(Error::Argument(format!(
                "snippet {}: line token counts must be positive",
                self.snippet_id
            )));
        }
        if let Some(&e) = self.error_lines.iter().find(|&&e| e >= n) {
            return Err(Error::Argument(format!(
                "snippet {}: error line {e} out of range for {n} lines",
                self.snippet_id
            )));
        }
        Ok(())
    }
}

pub type RelevanceVector = Vec<u32>;

/// 0 for correct lines; buggy lines graded 1..=B by ascending length, equal
/// lengths giving the higher grade to the lower line index.
pub fn build_relevance(labels: &LineLabelSet) -> Result<RelevanceVector> {
    labels.validate()?;
    let mut buggy: Vec<usize> = labels.error_lines.iter().copied().collect();
    buggy.sort_by(|&a, &b| {
        labels.line_lengths[a]
            .cmp(&labels.line_lengths[b])
            .then(b.cmp(&a))
    });
    let mut rel = vec![0; labels.len()];
    for (grade, &line) in buggy.iter().enumerate() {
        rel[line] = grade as u32 + 1;
    }
    Ok(rel)
}

/// Risk score per line, each strictly inside (0, 1).
pub fn score_lines(params: &RankerParams, latents: &[LatentVector]) -> Result<Vec<f64>> {
    latents.iter().map(|z| params.score(&z.values)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(lengths: Vec<usize>, errors: &[usize]) -> LineLabelSet {
        let n = lengths.len();
        LineLabelSet::new(0, errors.iter().copied(), vec![1; n], lengths).unwrap()
    }

    #[test]
    fn relevance_examples() {
        assert_eq!(build_relevance(&labels(vec![10, 5, 8], &[0, 2])).unwrap(), vec![2, 0, 1]);
        assert_eq!(build_relevance(&labels(vec![3, 4], &[])).unwrap(), vec![0, 0]);
        assert_eq!(build_relevance(&labels(vec![7, 7, 7], &[0, 1, 2])).unwrap(), vec![3, 2, 1]);
    }

    #[test]
    fn out_of_range_error_line() {
        assert!(LineLabelSet::new(1, [3], vec![1; 3], vec![1; 3]).is_err());
    }

    // Stable sort by (length, −index), graded from 1.
    fn relevance_oracle(lengths: &[usize], errors: &[usize]) -> Vec<u32> {
        let mut keyed: Vec<(usize, i64, usize)> =
            errors.iter().map(|&e| (lengths[e], -(e as i64), e)).collect();
        keyed.sort();
        let mut rel = vec![0; lengths.len()];
        for (g, (_, _, e)) in keyed.into_iter().enumerate() {
            rel[e] = g as u32 + 1;
        }
        rel
    }

    fn latent(values: Vec<f64>) -> LatentVector {
        let active = (0..values.len()).filter(|&i| values[i] != 0.0).collect();
        LatentVector { values, active }
    }

    proptest! {
        #[test]
        fn relevance_matches_oracle(
            lengths in prop::collection::vec(0usize..6, 1..12),
            mask in prop::collection::vec(any::<bool>(), 12),
        ) {
            let errors: Vec<usize> = (0..lengths.len()).filter(|&i| mask[i]).collect();
            let rel = build_relevance(&labels(lengths.clone(), &errors)).unwrap();
            prop_assert_eq!(&rel, &relevance_oracle(&lengths, &errors));
            let mut positives: Vec<u32> = rel.iter().copied().filter(|&r| r > 0).collect();
            positives.sort();
            prop_assert_eq!(positives, (1..=errors.len() as u32).collect::<Vec<_>>());
        }

        #[test]
        fn relevance_ignores_correct_line_lengths(
            lengths in prop::collection::vec(0usize..20, 2..10),
            other in prop::collection::vec(0usize..20, 10),
        ) {
            let errors = [0usize];
            let a = build_relevance(&labels(lengths.clone(), &errors)).unwrap();
            let mut changed = lengths.clone();
            for i in 1..changed.len() {
                changed[i] = other[i];
            }
            prop_assert_eq!(a, build_relevance(&labels(changed, &errors)).unwrap());
        }

        #[test]
        fn scores_are_equivariant_and_inside_unit_interval(
            seed in 0u64..1000,
            rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 6), 1..8),
            rot in 0usize..8,
        ) {
            let params = RankerParams::init(6, seed).unwrap();
            let lat: Vec<LatentVector> = rows.iter().cloned().map(latent).collect();
            let scores = score_lines(&params, &lat).unwrap();
            for s in &scores {
                prop_assert!(*s > 0.0 && *s < 1.0);
            }
            let mut rotated = lat.clone();
            rotated.rotate_left(rot % lat.len());
            let mut expect = scores.clone();
            expect.rotate_left(rot % lat.len());
            prop_assert_eq!(score_lines(&params, &rotated).unwrap(), expect);
        }
    }
}
