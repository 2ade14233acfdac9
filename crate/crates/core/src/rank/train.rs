use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::RankerParams;
use super::ndcg::{hard_ndcg, neural_ndcg_loss_and_grad};
use super::{build_relevance, squash, LineLabelSet, RelevanceVector};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankerTrainConfig {
    pub temperature: f64,
    pub sinkhorn_iterations: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for RankerTrainConfig {
    fn default() -> Self {
        RankerTrainConfig {
            temperature: super::DEFAULT_TEMPERATURE,
            sinkhorn_iterations: super::DEFAULT_SINKHORN_ITERATIONS,
            learning_rate: 1e-3,
            epochs: 40,
            batch: 8,
            seed: 0,
        }
    }
}

impl RankerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("ranker: temperature must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch == 0 {
            return Err(Error::Config(
                "ranker: learning_rate must be > 0 and batch >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One snippet's per-line feature vectors with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingSample {
    pub features: Vec<Vec<f64>>,
    pub labels: LineLabelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerLog {
    pub epochs: Vec<RankerEpoch>,
    pub used_snippets: usize,
    pub excluded_snippets: usize,
}

struct Prepared<'a> {
    features: &'a [Vec<f64>],
    relevance: RelevanceVector,
}

fn mean_hard_ndcg(params: &RankerParams, data: &[Prepared]) -> f64 {
    let total: f64 = data
        .iter()
        .map(|p| {
            let logits: Vec<f64> = p.features.iter().map(|x| params.trace(x).logit).collect();
            hard_ndcg(&logits, &p.relevance).unwrap_or(0.0)
        })
        .sum();
    total / data.len() as f64
}

fn optimizer_for(params: &RankerParams, lr: f64) -> Optimizer {
    let sizes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    Optimizer::new(OptimizerKind::Adam, lr, &sizes)
}

fn apply(opt: &mut Optimizer, params: &mut RankerParams, grads: &RankerParams) {
    opt.step(params.blocks_mut().into_iter().zip(grads.blocks()));
}

/// Listwise training of the ranker by mean NeuralNDCG loss. The loss sees
/// the network's logits; the squashing is monotone so the ranking is the same.
pub fn train_ranker(
    dataset: &[RankingSample],
    cfg: &RankerTrainConfig,
) -> Result<(RankerParams, RankerLog)> {
    cfg.validate()?;
    let mut data = Vec::new();
    let mut width = None;
    for sample in dataset {
        if sample.features.len() != sample.labels.len() {
            return Err(Error::Dimension {
                expected: sample.labels.len(),
                actual: sample.features.len(),
                context: format!("line features of snippet {}", sample.labels.snippet_id),
            });
        }
        for x in &sample.features {
            let w = *width.get_or_insert(x.len());
            if x.len() != w {
                return Err(Error::Dimension {
                    expected: w,
                    actual: x.len(),
                    context: format!("line features of snippet {}", sample.labels.snippet_id),
                });
            }
        }
        if sample.labels.error_lines.is_empty() {
            continue;
        }
        data.push(Prepared {
            features: &sample.features,
            relevance: build_relevance(&sample.labels)?,
        });
    }
    if data.is_empty() {
        return Err(Error::Excluded(
            "no snippet with labelled error lines to rank".into(),
        ));
    }
    let width = width.unwrap_or(0);
    let mut params = RankerParams::init(width, cfg.seed)?;
    let mut opt = optimizer_for(&params, cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng::seeded(cfg.seed, 0x52414e4b);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut grads = RankerParams::zeros(width);
            for &i in batch {
                let p = &data[i];
                let traces: Vec<_> = p.features.iter().map(|x| params.trace(x)).collect();
                let logits: Vec<f64> = traces.iter().map(|t| t.logit).collect();
                let (loss, dlogits) = neural_ndcg_loss_and_grad(
                    &logits,
                    &p.relevance,
                    cfg.temperature,
                    cfg.sinkhorn_iterations,
                )?;
                loss_sum += loss;
                for (t, g) in traces.iter().zip(dlogits) {
                    params.backward(t, g, &mut grads);
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            apply(&mut opt, &mut params, &grads);
        }
        epochs.push(RankerEpoch {
            epoch,
            loss: loss_sum / data.len() as f64,
            ndcg: mean_hard_ndcg(&params, &data),
        });
    }
    let log = RankerLog {
        epochs,
        used_snippets: data.len(),
        excluded_snippets: dataset.len() - data.len(),
    };
    Ok((params, log))
}

/// Same network and loss over raw states; the input layer takes their width.
pub fn probing_baseline_train(
    raw_states: &[(Vec<Vec<f32>>, LineLabelSet)],
    cfg: &RankerTrainConfig,
) -> Result<(RankerParams, RankerLog)> {
    let dataset: Vec<RankingSample> = raw_states
        .iter()
        .map(|(states, labels)| RankingSample {
            features: states
                .iter()
                .map(|s| s.iter().map(|&v| v as f64).collect())
                .collect(),
            labels: labels.clone(),
        })
        .collect();
    train_ranker(&dataset, cfg)
}

/// A point on the ROC curve chosen by maximal J = sensitivity + specificity − 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoudenPoint {
    /// Scores `>= threshold` are predicted positive.
    pub threshold: f64,
    pub j: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Searches `−∞`, every midpoint between adjacent distinct scores, and `+∞`;
/// the first (lowest) cutoff wins ties in J. The sentinels are reported as
/// one unit beyond the score range so the result stays finite.
pub fn youden_threshold(scores: &[f64], positive: &[bool]) -> Result<YoudenPoint> {
    if scores.len() != positive.len() {
        return Err(Error::Dimension {
            expected: positive.len(),
            actual: scores.len(),
            context: "scores vs labels".into(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Argument("non-finite score".into()));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument("threshold search needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let lo = scores[idx[0]] - 1.0;
    let hi = scores[idx[idx.len() - 1]] + 1.0;

    // Sweep upward: everything at or above the cutoff is positive.
    let (mut tp, mut tn) = (pos, 0usize);
    let point = |threshold: f64, tp: usize, tn: usize| {
        let sensitivity = tp as f64 / pos as f64;
        let specificity = tn as f64 / neg as f64;
        YoudenPoint {
            threshold,
            j: sensitivity + specificity - 1.0,
            sensitivity,
            specificity,
        }
    };
    let mut best = point(lo, tp, tn);
    let mut i = 0;
    while i < idx.len() {
        let v = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == v {
            if positive[idx[i]] {
                tp -= 1;
            } else {
                tn += 1;
            }
            i += 1;
        }
        let threshold = if i < idx.len() {
            0.5 * (v + scores[idx[i]])
        } else {
            hi
        };
        let cand = point(threshold, tp, tn);
        if cand.j > best.j {
            best = cand;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierFit {
    pub params: RankerParams,
    pub youden: YoudenPoint,
    pub training_scores: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Binary cross-entropy training of the ranker network as an error
/// probability scorer, then a Youden cutoff on its training scores.
pub fn train_snippet_classifier(
    features: &[Vec<f64>],
    incorrect: &[bool],
    cfg: &RankerTrainConfig,
) -> Result<ClassifierFit> {
    cfg.validate()?;
    if features.len() != incorrect.len() {
        return Err(Error::Dimension {
            expected: incorrect.len(),
            actual: features.len(),
            context: "classifier features vs labels".into(),
        });
    }
    if !incorrect.iter().any(|&b| b) || incorrect.iter().all(|&b| b) {
        return Err(Error::Argument("snippet classifier needs both classes".into()));
    }
    let width = features[0].len();
    if let Some(x) = features.iter().find(|x| x.len() != width) {
        return Err(Error::Dimension {
            expected: width,
            actual: x.len(),
            context: "classifier features".into(),
        });
    }
    let mut params = RankerParams::init(width, cfg.seed)?;
    let mut opt = optimizer_for(&params, cfg.learning_rate);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut shuffle = rng::seeded(cfg.seed, 0x42434c53);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut grads = RankerParams::zeros(width);
            for &i in batch {
                let t = params.trace(&features[i]);
                let y = if incorrect[i] { 1.0 } else { 0.0 };
                // softplus form of −[y log σ + (1−y) log(1−σ)]
                let l = t.logit;
                loss_sum += l.max(0.0) - l * y + (-l.abs()).exp().ln_1p();
                params.backward(&t, super::sigmoid(l) - y, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            apply(&mut opt, &mut params, &grads);
        }
        epoch_losses.push(loss_sum / features.len() as f64);
    }
    let training_scores: Vec<f64> = features
        .iter()
        .map(|x| squash(params.trace(x).logit))
        .collect();
    let youden = youden_threshold(&training_scores, incorrect)?;
    Ok(ClassifierFit {
        params,
        youden,
        training_scores,
        epoch_losses,
    })
}
