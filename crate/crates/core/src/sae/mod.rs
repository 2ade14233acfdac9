//! TopK sparse autoencoder over per-line states.
//!
//! ```text
//! z = TopK(W_enc (s - b_pre) + b_enc)      W_enc: m × d
//! ŝ = W_dec z + b_pre                      W_dec: d × m, unit-norm columns
//! ```
//!
//! The decoder is kept internally as its transpose (one row per latent) so
//! that decoding and its gradient only touch the `k` active atoms.

mod train;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binfile;
use crate::error::{Error, Result};
use crate::rng;

pub use train::{
    batch_loss_and_grad, gradient_check, train_sae, EpochLog, GradCheckReport, Gradients,
    jitter, LossParts, OptimizerKind, SaeTrainConfig, StatePair, TrainLog,
};

pub const MODEL_MAGIC: &[u8; 4] = b"PTSM";
pub const DEFAULT_LATENT_DIM: usize = 1024;
pub const DEFAULT_K: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    pub d: usize,
    pub m: usize,
    pub k: usize,
    /// m × d, row-major.
    pub w_enc: Vec<f64>,
    pub b_pre: Vec<f64>,
    pub b_enc: Vec<f64>,
    /// Transposed decoder: row `j` is column `j` of W_dec (m × d).
    pub w_dec_t: Vec<f64>,
}

/// Sparse latent code: dense values plus the active index set (ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    pub values: Vec<f64>,
    pub active: Vec<usize>,
}

impl LatentVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, a: f64) -> LatentVector {
        LatentVector {
            values: self.values.iter().map(|v| v * a).collect(),
            active: self.active.clone(),
        }
    }
}

/// Indices of the `k` largest entries by signed value, ties toward the
/// lower index, returned in ascending index order.
pub fn topk_indices(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    if k < v.len() {
        let cmp = |a: &usize, b: &usize| v[*b].total_cmp(&v[*a]).then(a.cmp(b));
        if k > 0 {
            idx.select_nth_unstable_by(k - 1, cmp);
        }
        idx.truncate(k);
        idx.sort_unstable();
    }
    idx
}

/// Keep the `k` largest entries verbatim and zero the rest.
pub fn topk_activation(v: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > v.len() {
        return Err(Error::Argument(format!(
            "k = {k} must lie in 1..={}",
            v.len()
        )));
    }
    let mut out = vec![0.0; v.len()];
    for i in topk_indices(v, k) {
        out[i] = v[i];
    }
    Ok(out)
}

pub fn loss_plain(s: &[f64], s_hat: &[f64]) -> Result<f64> {
    check_len(s.len(), s_hat.len(), "reconstruction")?;
    Ok(s.iter().zip(s_hat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Squared hinge on the latent distance: `max(0, ε − ‖z_i − z_j‖)²`.
pub fn loss_contrastive(z_i: &[f64], z_j: &[f64], margin: f64) -> Result<f64> {
    check_len(z_i.len(), z_j.len(), "contrastive pair")?;
    let dist = euclidean(z_i, z_j);
    Ok((margin - dist).max(0.0).powi(2))
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_len(expected: usize, actual: usize, context: &str) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            expected,
            actual,
            context: context.into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SaeFileHeader {
    pub d: usize,
    pub m: usize,
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl SaeModel {
    /// Seeded init: W_enc ~ U(±1/√d), decoder atoms = normalized encoder
    /// rows, zero biases.
    pub fn init(d: usize, m: usize, k: usize, seed: u64) -> Result<Self> {
        if d == 0 || m == 0 || k == 0 || k > m {
            return Err(Error::Argument(format!(
                "invalid SAE shape d={d} m={m} k={k}"
            )));
        }
        let mut r = rng::seeded(seed, 0x5AE);
        let bound = 1.0 / (d as f64).sqrt();
        let w_enc: Vec<f64> = (0..m * d).map(|_| r.random_range(-bound..bound)).collect();
        let mut model = SaeModel {
            d,
            m,
            k,
            w_dec_t: w_enc.clone(),
            w_enc,
            b_pre: vec![0.0; d],
            b_enc: vec![0.0; m],
        };
        model.normalize_decoder();
        Ok(model)
    }

    pub fn normalize_decoder(&mut self) {
        for atom in self.w_dec_t.chunks_exact_mut(self.d) {
            let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                atom.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    pub fn enc_row(&self, j: usize) -> &[f64] {
        &self.w_enc[j * self.d..(j + 1) * self.d]
    }

    /// Column `j` of W_dec.
    pub fn atom(&self, j: usize) -> &[f64] {
        &self.w_dec_t[j * self.d..(j + 1) * self.d]
    }

    pub fn pre_activation(&self, s: &[f32]) -> Result<Vec<f64>> {
        check_len(self.d, s.len(), "state")?;
        let centered: Vec<f64> = s
            .iter()
            .zip(&self.b_pre)
            .map(|(&x, b)| x as f64 - b)
            .collect();
        Ok(self.pre_from_centered(&centered))
    }

    pub(crate) fn pre_from_centered(&self, centered: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|j| {
                self.enc_row(j)
                    .iter()
                    .zip(centered)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + self.b_enc[j]
            })
            .collect()
    }

    pub fn encode(&self, s: &[f32]) -> Result<LatentVector> {
        let pre = self.pre_activation(s)?;
        let active = topk_indices(&pre, self.k);
        let mut values = vec![0.0; self.m];
        for &i in &active {
            values[i] = pre[i];
        }
        Ok(LatentVector { values, active })
    }

    /// `W_dec z + b_pre`, touching only the active atoms.
    pub fn decode(&self, z: &LatentVector) -> Result<Vec<f64>> {
        check_len(self.m, z.values.len(), "latent")?;
        let mut out = self.b_pre.clone();
        for &j in &z.active {
            let a = z.values[j];
            if a != 0.0 {
                for (o, w) in out.iter_mut().zip(self.atom(j)) {
                    *o += a * w;
                }
            }
        }
        Ok(out)
    }

    pub fn reconstruct(&self, s: &[f32]) -> Result<Vec<f64>> {
        self.decode(&self.encode(s)?)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.k >= 1
            && self.k <= self.m
            && self.w_enc.len() == self.m * self.d
            && self.w_dec_t.len() == self.m * self.d
            && self.b_pre.len() == self.d
            && self.b_enc.len() == self.m
            && self
                .w_enc
                .iter()
                .chain(&self.w_dec_t)
                .chain(&self.b_pre)
                .chain(&self.b_enc)
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Argument("inconsistent or non-finite SAE parameters".into()))
        }
    }

    pub fn save(&self, path: &Path, seed: u64, config: serde_json::Value) -> Result<()> {
        let header = SaeFileHeader {
            d: self.d,
            m: self.m,
            k: self.k,
            seed,
            config,
        };
        let mut payload = Vec::with_capacity(self.d + self.m + 2 * self.m * self.d);
        payload.extend_from_slice(&self.b_pre);
        payload.extend_from_slice(&self.b_enc);
        payload.extend_from_slice(&self.w_enc);
        // W_dec row-major (d × m)
        for i in 0..self.d {
            for j in 0..self.m {
                payload.push(self.w_dec_t[j * self.d + i]);
            }
        }
        binfile::write_framed(path, MODEL_MAGIC, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<(Self, SaeFileHeader)> {
        let (header, payload): (SaeFileHeader, Vec<f64>) =
            binfile::read_framed(path, MODEL_MAGIC)?;
        let (d, m) = (header.d, header.m);
        let bad = |reason: String| Error::ModelFile {
            path: path.to_path_buf(),
            reason,
        };
        if d == 0 || m == 0 || header.k == 0 || header.k > m {
            return Err(bad(format!("bad shape d={d} m={m} k={}", header.k)));
        }
        if payload.len() != d + m + 2 * m * d {
            return Err(bad(format!(
                "payload has {} values, expected {}",
                payload.len(),
                d + m + 2 * m * d
            )));
        }
        let (b_pre, rest) = payload.split_at(d);
        let (b_enc, rest) = rest.split_at(m);
        let (w_enc, w_dec) = rest.split_at(m * d);
        let mut w_dec_t = vec![0.0; m * d];
        for i in 0..d {
            for j in 0..m {
                w_dec_t[j * d + i] = w_dec[i * m + j];
            }
        }
        let model = SaeModel {
            d,
            m,
            k: header.k,
            w_enc: w_enc.to_vec(),
            b_pre: b_pre.to_vec(),
            b_enc: b_enc.to_vec(),
            w_dec_t,
        };
        model.validate().map_err(|e| bad(e.to_string()))?;
        Ok((model, header))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Stable-sort oracle for TopK selection.
    fn topk_oracle(v: &[f64], k: usize) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|a, b| v[*b].partial_cmp(&v[*a]).unwrap());
        let mut out = vec![0.0; v.len()];
        for &i in &order[..k] {
            out[i] = v[i];
        }
        out
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_activation(&[3.0, -1.0, 2.0, 5.0], 2).unwrap(), vec![3.0, 0.0, 0.0, 5.0]);
        let v = [0.5, -2.0, 7.0];
        assert_eq!(topk_activation(&v, 3).unwrap(), v.to_vec());
        assert_eq!(topk_activation(&[1.0, 1.0, 1.0], 2).unwrap(), vec![1.0, 1.0, 0.0]);
        assert_eq!(topk_activation(&[1.0, 1.0, 1.0], 2).unwrap(), topk_oracle(&[1.0, 1.0, 1.0], 2));
        assert!(topk_activation(&[1.0], 2).is_err());
        assert!(topk_activation(&[1.0], 0).is_err());
    }

    fn random_model(d: usize, m: usize, k: usize, seed: u64) -> SaeModel {
        let mut model = SaeModel::init(d, m, k, seed).unwrap();
        let mut r = rng::seeded(seed, 99);
        for b in model.b_pre.iter_mut().chain(model.b_enc.iter_mut()) {
            *b = StandardNormal.sample(&mut r);
        }
        model
    }

    #[test]
    fn identity_encoder_passes_state_through() {
        let d = 5;
        let mut model = SaeModel::init(d, d, d, 1).unwrap();
        model.w_enc = (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let s = [0.5f32, -1.0, 2.0, 0.0, 3.5];
        let z = model.encode(&s).unwrap();
        assert_eq!(z.values, s.iter().map(|&v| v as f64).collect::<Vec<_>>());
    }

    #[test]
    fn state_at_b_pre_gives_zero_code() {
        let mut model = random_model(6, 8, 3, 4);
        model.b_enc = vec![0.0; 8];
        let s: Vec<f32> = model.b_pre.iter().map(|&v| v as f32).collect();
        model.b_pre = s.iter().map(|&v| v as f64).collect();
        let z = model.encode(&s).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
        assert_eq!(z.active, vec![0, 1, 2]);
    }

    #[test]
    fn encode_decode_match_dense_oracle() {
        let (d, m, k) = (8, 12, 4);
        let model = random_model(d, m, k, 7);
        let mut r = rng::seeded(3, 0);
        let s: Vec<f32> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        // straight-line re-computation
        let mut pre = vec![0.0; m];
        for j in 0..m {
            for i in 0..d {
                pre[j] += model.w_enc[j * d + i] * (s[i] as f64 - model.b_pre[i]);
            }
            pre[j] += model.b_enc[j];
        }
        let z_oracle = topk_oracle(&pre, k);
        let z = model.encode(&s).unwrap();
        for (a, b) in z.values.iter().zip(&z_oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(z.active.len(), k);

        let mut dense = model.b_pre.clone();
        for (i, out) in dense.iter_mut().enumerate() {
            for j in 0..m {
                *out += model.w_dec_t[j * d + i] * z_oracle[j];
            }
        }
        let s_hat = model.decode(&z).unwrap();
        for (a, b) in s_hat.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_basis_and_zero() {
        let model = random_model(4, 6, 2, 11);
        let zero = LatentVector { values: vec![0.0; 6], active: vec![] };
        assert_eq!(model.decode(&zero).unwrap(), model.b_pre);
        let mut values = vec![0.0; 6];
        values[3] = 1.0;
        let s_hat = model.decode(&LatentVector { values, active: vec![3] }).unwrap();
        for i in 0..4 {
            assert!((s_hat[i] - (model.atom(3)[i] + model.b_pre[i])).abs() < 1e-15);
        }
        assert!(model.decode(&LatentVector { values: vec![0.0; 5], active: vec![] }).is_err());
    }

    #[test]
    fn decoder_columns_unit_norm_after_init() {
        let model = SaeModel::init(16, 32, 4, 0).unwrap();
        for j in 0..32 {
            let n: f64 = model.atom(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_plain(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_plain(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        let a: [f64; 3] = [0.3, -1.2, 4.0];
        let b = [1.0, 0.5, -2.0];
        let oracle: f64 = (0..3).map(|i| (a[i] - b[i]).powi(2)).sum();
        assert!((loss_plain(&a, &b).unwrap() - oracle).abs() < 1e-12);
        assert!(loss_plain(&a, &b[..2]).is_err());

        assert_eq!(loss_contrastive(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(), 1.0);
        assert_eq!(loss_contrastive(&[0.0, 0.0], &[2.0, 0.0], 1.0).unwrap(), 0.0);
        assert!((loss_contrastive(&[0.0], &[0.5], 1.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn model_file_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let model = random_model(5, 7, 3, 21);
        let p1 = dir.path().join("a.ptsm");
        let p2 = dir.path().join("b.ptsm");
        model.save(&p1, 21, serde_json::json!({"lr": 0.001})).unwrap();
        let (back, header) = SaeModel::load(&p1).unwrap();
        assert_eq!((header.d, header.m, header.k), (5, 7, 3));
        back.save(&p2, header.seed, header.config).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        for (a, b) in model.w_dec_t.iter().zip(&back.w_dec_t) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn bad_model_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ptsm");
        std::fs::write(&p, b"PTRK\x01\x00\x00\x00\x02\x00\x00\x00{}").unwrap();
        assert!(matches!(SaeModel::load(&p), Err(Error::BadMagic { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sparsity_and_kept_entries(v in prop::collection::vec(-5i32..5, 1..40), kfrac in 0.0f64..1.0) {
                let v: Vec<f64> = v.into_iter().map(|x| x as f64 * 0.5).collect();
                let k = 1 + ((v.len() - 1) as f64 * kfrac) as usize;
                let out = topk_activation(&v, k).unwrap();
                let kept = topk_indices(&v, k);
                prop_assert_eq!(kept.len(), k);
                for (i, o) in out.iter().enumerate() {
                    if kept.contains(&i) { prop_assert_eq!(*o, v[i]); } else { prop_assert_eq!(*o, 0.0); }
                }
                prop_assert_eq!(out, topk_oracle(&v, k));
            }

            #[test]
            fn decode_homogeneous(a in -3.0f64..3.0, seed in 0u64..50) {
                let model = random_model(6, 9, 3, seed);
                let mut r = rng::seeded(seed, 5);
                let s: Vec<f32> = (0..6).map(|_| StandardNormal.sample(&mut r)).collect();
                let z = model.encode(&s).unwrap();
                let lhs = model.decode(&z.scaled(a)).unwrap();
                let rhs = model.decode(&z).unwrap();
                for i in 0..6 {
                    let l = lhs[i] - model.b_pre[i];
                    let r = a * (rhs[i] - model.b_pre[i]);
                    prop_assert!((l - r).abs() < 1e-9 * (1.0 + r.abs()));
                }
            }
        }
    }
}
