use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{euclidean, topk_indices, SaeModel};
use crate::error::{Error, Result};
use crate::mutate::ContrastivePair;
use crate::optim::Optimizer;
pub use crate::optim::OptimizerKind;
use crate::rng;
use crate::store::LoadedStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaeTrainConfig {
    pub latent_dim: usize,
    pub k: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub margin: f64,
    pub contrastive_weight: f64,
    pub optimizer: OptimizerKind,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        SaeTrainConfig {
            latent_dim: super::DEFAULT_LATENT_DIM,
            k: super::DEFAULT_K,
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 10,
            seed: 0,
            margin: crate::mutate::DEFAULT_MARGIN,
            contrastive_weight: 1.0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl SaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config(
                "sae: learning_rate must be > 0 and batch_size >= 1".into(),
            ));
        }
        if self.k == 0 || self.k > self.latent_dim {
            return Err(Error::Config(format!(
                "sae: k = {} must lie in 1..=latent_dim ({})",
                self.k, self.latent_dim
            )));
        }
        if !(self.margin > 0.0) || self.contrastive_weight < 0.0 {
            return Err(Error::Config("sae: margin must be > 0, weight >= 0".into()));
        }
        Ok(())
    }
}

/// A contrastive pair as indices into the flat training state list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePair {
    pub correct: usize,
    pub incorrect: usize,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// Mean reconstruction loss over the state batch.
    pub plain: f64,
    /// Mean contrastive loss over the pair batch (0 without pairs).
    pub contrastive: f64,
}

/// Gradient with the same layout as [`SaeModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_enc: Vec<f64>,
    pub b_pre: Vec<f64>,
    pub b_enc: Vec<f64>,
    pub w_dec_t: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &SaeModel) -> Self {
        Gradients {
            w_enc: vec![0.0; model.w_enc.len()],
            b_pre: vec![0.0; model.d],
            b_enc: vec![0.0; model.m],
            w_dec_t: vec![0.0; model.w_dec_t.len()],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.w_enc
            .iter()
            .chain(&self.b_pre)
            .chain(&self.b_enc)
            .chain(&self.w_dec_t)
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

struct Forward {
    centered: Vec<f64>,
    active: Vec<usize>,
    /// Latent values at `active`, same order.
    z: Vec<f64>,
}

fn forward(model: &SaeModel, s: &[f32]) -> Forward {
    let centered: Vec<f64> = s
        .iter()
        .zip(&model.b_pre)
        .map(|(&x, b)| x as f64 - b)
        .collect();
    let pre = model.pre_from_centered(&centered);
    let active = topk_indices(&pre, model.k);
    let z = active.iter().map(|&j| pre[j]).collect();
    Forward {
        centered,
        active,
        z,
    }
}

/// Backpropagate `dL/dz` (on the active set) into the encoder. The TopK
/// mask is held fixed.
fn backprop_encoder(model: &SaeModel, fwd: &Forward, dz: &[f64], g: &mut Gradients) {
    let d = model.d;
    for (&j, &dzj) in fwd.active.iter().zip(dz) {
        if dzj == 0.0 {
            continue;
        }
        g.b_enc[j] += dzj;
        let row = &mut g.w_enc[j * d..(j + 1) * d];
        for (gw, x) in row.iter_mut().zip(&fwd.centered) {
            *gw += dzj * x;
        }
        for (gb, w) in g.b_pre.iter_mut().zip(model.enc_row(j)) {
            *gb -= dzj * w;
        }
    }
}

fn plain_term(model: &SaeModel, s: &[f32], scale: f64, g: &mut Gradients) -> f64 {
    let fwd = forward(model, s);
    let d = model.d;
    let mut resid: Vec<f64> = model.b_pre.clone();
    for (&j, &zj) in fwd.active.iter().zip(&fwd.z) {
        for (r, w) in resid.iter_mut().zip(model.atom(j)) {
            *r += zj * w;
        }
    }
    for (r, &x) in resid.iter_mut().zip(s) {
        *r -= x as f64;
    }
    let loss: f64 = resid.iter().map(|r| r * r).sum();

    // dL/dŝ = 2(ŝ - s)
    let gs: Vec<f64> = resid.iter().map(|r| 2.0 * r * scale).collect();
    for (gb, v) in g.b_pre.iter_mut().zip(&gs) {
        *gb += v;
    }
    let mut dz = Vec::with_capacity(fwd.active.len());
    for (&j, &zj) in fwd.active.iter().zip(&fwd.z) {
        let atom = model.atom(j);
        let grow = &mut g.w_dec_t[j * d..(j + 1) * d];
        let mut dot = 0.0;
        for ((gw, v), w) in grow.iter_mut().zip(&gs).zip(atom) {
            *gw += zj * v;
            dot += w * v;
        }
        dz.push(dot);
    }
    backprop_encoder(model, &fwd, &dz, g);
    loss
}

fn sparse_dense(fwd: &Forward, m: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    for (&j, &z) in fwd.active.iter().zip(&fwd.z) {
        v[j] = z;
    }
    v
}

fn contrastive_term(
    model: &SaeModel,
    a: &[f32],
    b: &[f32],
    margin: f64,
    scale: f64,
    g: &mut Gradients,
) -> f64 {
    let fa = forward(model, a);
    let fb = forward(model, b);
    let za = sparse_dense(&fa, model.m);
    let zb = sparse_dense(&fb, model.m);
    let dist = euclidean(&za, &zb);
    if dist >= margin {
        return 0.0;
    }
    let loss = (margin - dist).powi(2);
    if dist > 0.0 {
        // d/dz_a (ε − ‖z_a − z_b‖)² = −2(ε − D)(z_a − z_b)/D
        let coef = -2.0 * (margin - dist) / dist * scale;
        let dza: Vec<f64> = fa.active.iter().map(|&j| coef * (za[j] - zb[j])).collect();
        let dzb: Vec<f64> = fb.active.iter().map(|&j| -coef * (za[j] - zb[j])).collect();
        backprop_encoder(model, &fa, &dza, g);
        backprop_encoder(model, &fb, &dzb, g);
    }
    loss
}

/// Loss and exact gradient of
/// `mean(L_plain over states) + weight · mean(L_cont over pairs)`.
pub fn batch_loss_and_grad(
    model: &SaeModel,
    states: &[&[f32]],
    pairs: &[(&[f32], &[f32], f64)],
    contrastive_weight: f64,
) -> (LossParts, Gradients) {
    let mut g = Gradients::zeros(model);
    let mut parts = LossParts::default();
    if !states.is_empty() {
        let scale = 1.0 / states.len() as f64;
        let total: f64 = states
            .iter()
            .map(|s| plain_term(model, s, scale, &mut g))
            .sum();
        parts.plain = total * scale;
    }
    if !pairs.is_empty() {
        let scale = contrastive_weight / pairs.len() as f64;
        let total: f64 = pairs
            .iter()
            .map(|(a, b, margin)| contrastive_term(model, a, b, *margin, scale, &mut g))
            .sum();
        parts.contrastive = total / pairs.len() as f64;
    }
    (parts, g)
}

fn batch_loss(
    model: &SaeModel,
    states: &[&[f32]],
    pairs: &[(&[f32], &[f32], f64)],
    weight: f64,
) -> f64 {
    let (parts, _) = batch_loss_and_grad(model, states, pairs, weight);
    parts.plain + weight * parts.contrastive
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub plain: f64,
    pub contrastive: f64,
    pub total: f64,
    /// Latents never selected during the epoch.
    pub dead_latents: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean reconstruction loss of the initialized model over all states.
    pub initial_plain: f64,
    /// Mean reconstruction loss of the trained model over all states.
    pub final_plain: f64,
    pub epochs: Vec<EpochLog>,
    pub skipped_pairs: usize,
    pub states: usize,
    pub pairs: usize,
}

fn mean_plain(model: &SaeModel, states: &[&[f32]]) -> f64 {
    let total: f64 = states
        .iter()
        .map(|s| {
            let s_hat = model.reconstruct(s).expect("dimension checked");
            s.iter()
                .zip(&s_hat)
                .map(|(&a, b)| (a as f64 - b).powi(2))
                .sum::<f64>()
        })
        .sum();
    total / states.len().max(1) as f64
}

/// Train on every record of `stores`; pairs reference records by store
/// position in the slice. Pairs pointing outside the stores are skipped
/// and counted.
pub fn train_sae(
    stores: &[&LoadedStore],
    pairs: &[ContrastivePair],
    cfg: &SaeTrainConfig,
) -> Result<(SaeModel, TrainLog)> {
    cfg.validate()?;
    let d = stores
        .first()
        .map(|s| s.dim())
        .ok_or_else(|| Error::Empty("no activation stores".into()))?;
    let mut offsets = Vec::with_capacity(stores.len());
    let mut states: Vec<&[f32]> = Vec::new();
    for s in stores {
        if s.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: s.dim(),
                context: "stores must share one dimension".into(),
            });
        }
        offsets.push(states.len());
        states.extend(s.records.iter().map(|r| r.vector.as_slice()));
    }
    if states.is_empty() {
        return Err(Error::Empty("activation stores hold no records".into()));
    }
    let resolve = |r: crate::mutate::RecordRef| {
        let s = r.store as usize;
        (s < stores.len() && r.index < stores[s].records.len()).then(|| offsets[s] + r.index)
    };
    let mut state_pairs = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for p in pairs {
        match (resolve(p.correct), resolve(p.incorrect)) {
            (Some(a), Some(b)) => state_pairs.push(StatePair {
                correct: a,
                incorrect: b,
                margin: p.margin,
            }),
            _ => skipped += 1,
        }
    }
    let (model, mut log) = fit(&states, &state_pairs, cfg)?;
    log.skipped_pairs = skipped;
    Ok((model, log))
}

/// Mini-batch training over flat state slices.
pub(crate) fn fit(
    states: &[&[f32]],
    pairs: &[StatePair],
    cfg: &SaeTrainConfig,
) -> Result<(SaeModel, TrainLog)> {
    cfg.validate()?;
    let d = states
        .first()
        .map(|s| s.len())
        .ok_or_else(|| Error::Empty("no states to train on".into()))?;
    if let Some(bad) = states.iter().find(|s| s.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            actual: bad.len(),
            context: "training states".into(),
        });
    }
    let mut model = SaeModel::init(d, cfg.latent_dim, cfg.k, cfg.seed)?;
    let mut opt = Optimizer::new(
        cfg.optimizer,
        cfg.learning_rate,
        &[model.w_enc.len(), model.d, model.m, model.w_dec_t.len()],
    );
    let mut order: Vec<usize> = (0..states.len()).collect();
    let mut pair_order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle_rng = rng::seeded(cfg.seed, 0x7EA1);

    let mut log = TrainLog {
        initial_plain: mean_plain(&model, states),
        final_plain: 0.0,
        epochs: Vec::with_capacity(cfg.epochs),
        skipped_pairs: 0,
        states: states.len(),
        pairs: pairs.len(),
    };

    let mut pair_cursor = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut fired = vec![false; model.m];
        let (mut plain_sum, mut cont_sum, mut steps) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f32]> = chunk.iter().map(|&i| states[i]).collect();
            let mut pair_batch = Vec::new();
            if !pairs.is_empty() {
                for _ in 0..cfg.batch_size.min(pairs.len()) {
                    if pair_cursor == 0 {
                        pair_order.shuffle(&mut shuffle_rng);
                    }
                    let p = pairs[pair_order[pair_cursor]];
                    pair_batch.push((states[p.correct], states[p.incorrect], p.margin));
                    pair_cursor = (pair_cursor + 1) % pairs.len();
                }
            }
            for s in &batch {
                for j in topk_indices(&model.pre_activation(s)?, model.k) {
                    fired[j] = true;
                }
            }
            let (parts, grads) =
                batch_loss_and_grad(&model, &batch, &pair_batch, cfg.contrastive_weight);
            plain_sum += parts.plain;
            cont_sum += parts.contrastive;
            steps += 1;
            opt.step([
                (model.w_enc.as_mut_slice(), grads.w_enc.as_slice()),
                (model.b_pre.as_mut_slice(), grads.b_pre.as_slice()),
                (model.b_enc.as_mut_slice(), grads.b_enc.as_slice()),
                (model.w_dec_t.as_mut_slice(), grads.w_dec_t.as_slice()),
            ]);
            model.normalize_decoder();
        }
        let plain = plain_sum / steps as f64;
        let contrastive = cont_sum / steps as f64;
        log.epochs.push(EpochLog {
            epoch,
            plain,
            contrastive,
            total: plain + cfg.contrastive_weight * contrastive,
            dead_latents: fired.iter().filter(|f| !**f).count(),
            steps,
        });
    }
    log.final_plain = mean_plain(&model, states);
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Max relative error per block: W_enc, W_dec, b_pre, b_enc.
    pub max_rel_error: [f64; 4],
    pub checked: [usize; 4],
    /// Coordinates skipped for sitting near a TopK tie or hinge kink.
    pub skipped: [usize; 4],
}

impl GradCheckReport {
    pub const BLOCKS: [&'static str; 4] = ["W_enc", "W_dec", "b_pre", "b_enc"];

    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().cloned().fold(0.0, f64::max)
    }
}

fn param_mut(model: &mut SaeModel, block: usize, idx: usize) -> &mut f64 {
    match block {
        0 => &mut model.w_enc[idx],
        1 => &mut model.w_dec_t[idx],
        2 => &mut model.b_pre[idx],
        _ => &mut model.b_enc[idx],
    }
}

fn grad_at(g: &Gradients, block: usize, idx: usize) -> f64 {
    match block {
        0 => g.w_enc[idx],
        1 => g.w_dec_t[idx],
        2 => g.b_pre[idx],
        _ => g.b_enc[idx],
    }
}

/// Everything that decides which branch of the piecewise loss is live.
fn branch_signature(
    model: &SaeModel,
    states: &[&[f32]],
    pairs: &[(&[f32], &[f32], f64)],
) -> (Vec<Vec<usize>>, Vec<bool>) {
    let masks = states
        .iter()
        .chain(pairs.iter().flat_map(|(a, b, _)| [a, b]))
        .map(|s| forward(model, s).active)
        .collect();
    let hinge = pairs
        .iter()
        .map(|(a, b, margin)| {
            let za = sparse_dense(&forward(model, a), model.m);
            let zb = sparse_dense(&forward(model, b), model.m);
            euclidean(&za, &zb) < *margin
        })
        .collect();
    (masks, hinge)
}

/// Compare the analytic gradient against central differences with step `h`
/// on up to `max_coords` sampled coordinates per block. A coordinate is
/// skipped when moving it by ±10·h changes any TopK active set or hinge
/// state, since the loss is not differentiable there.
pub fn gradient_check(
    model: &SaeModel,
    states: &[Vec<f32>],
    pairs: &[StatePair],
    contrastive_weight: f64,
    h: f64,
    max_coords: usize,
    seed: u64,
) -> GradCheckReport {
    let states_ref: Vec<&[f32]> = states.iter().map(|s| s.as_slice()).collect();
    let pair_ref: Vec<(&[f32], &[f32], f64)> = pairs
        .iter()
        .map(|p| (states_ref[p.correct], states_ref[p.incorrect], p.margin))
        .collect();
    let (_, analytic) = batch_loss_and_grad(model, &states_ref, &pair_ref, contrastive_weight);
    let base_sig = branch_signature(model, &states_ref, &pair_ref);

    let sizes = [model.w_enc.len(), model.w_dec_t.len(), model.d, model.m];
    let mut r = rng::seeded(seed, 0x6C);
    let mut report = GradCheckReport {
        max_rel_error: [0.0; 4],
        checked: [0; 4],
        skipped: [0; 4],
    };
    let mut probe = model.clone();
    for block in 0..4 {
        let mut coords: Vec<usize> = (0..sizes[block]).collect();
        if coords.len() > max_coords {
            coords.shuffle(&mut r);
            coords.truncate(max_coords);
            coords.sort_unstable();
        }
        for idx in coords {
            let orig = *param_mut(&mut probe, block, idx);
            let near_kink = [10.0 * h, -10.0 * h].iter().any(|delta| {
                *param_mut(&mut probe, block, idx) = orig + delta;
                let sig = branch_signature(&probe, &states_ref, &pair_ref);
                sig != base_sig
            });
            if near_kink {
                *param_mut(&mut probe, block, idx) = orig;
                report.skipped[block] += 1;
                continue;
            }
            *param_mut(&mut probe, block, idx) = orig + h;
            let up = batch_loss(&probe, &states_ref, &pair_ref, contrastive_weight);
            *param_mut(&mut probe, block, idx) = orig - h;
            let down = batch_loss(&probe, &states_ref, &pair_ref, contrastive_weight);
            *param_mut(&mut probe, block, idx) = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = grad_at(&analytic, block, idx);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.max_rel_error[block] = report.max_rel_error[block].max(rel);
            report.checked[block] += 1;
        }
    }
    report
}

/// Random perturbation helper for tests and benches.
pub fn jitter(model: &mut SaeModel, scale: f64, seed: u64) {
    let mut r = rng::seeded(seed, 0x717);
    for v in model
        .w_enc
        .iter_mut()
        .chain(model.b_pre.iter_mut())
        .chain(model.b_enc.iter_mut())
        .chain(model.w_dec_t.iter_mut())
    {
        *v += scale * r.random_range(-1.0..1.0);
    }
}
