use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binfile;
use crate::error::{Error, Result};
use crate::rng;

pub const RANKER_MAGIC: &[u8; 4] = b"PTRK";
pub const HIDDEN_WIDTH: usize = 32;
pub const LAYER_COUNT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// rows × cols, row-major
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Four affine layers, ReLU between them, logistic output.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankerFileHeader {
    /// `[rows, cols]` of each layer, in order.
    pub layer_shapes: Vec<[usize; 2]>,
    pub input_width: usize,
    pub seed: u64,
    #[serde(default)]
    pub config: serde_json::Value,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic squashing kept strictly inside (0, 1) even for saturated logits.
pub fn squash(x: f64) -> f64 {
    sigmoid(x).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

pub(crate) struct Trace {
    /// Input plus the post-ReLU output of every hidden layer.
    acts: Vec<Vec<f64>>,
    pub logit: f64,
}

impl RankerParams {
    pub fn shapes(input_width: usize) -> Vec<[usize; 2]> {
        vec![
            [HIDDEN_WIDTH, input_width],
            [HIDDEN_WIDTH, HIDDEN_WIDTH],
            [HIDDEN_WIDTH, HIDDEN_WIDTH],
            [1, HIDDEN_WIDTH],
        ]
    }

    pub fn zeros(input_width: usize) -> Self {
        RankerParams {
            layers: Self::shapes(input_width)
                .into_iter()
                .map(|[rows, cols]| Layer {
                    rows,
                    cols,
                    weights: vec![0.0; rows * cols],
                    bias: vec![0.0; rows],
                })
                .collect(),
        }
    }

    /// Weights ~ U(±1/√fan_in), biases zero.
    pub fn init(input_width: usize, seed: u64) -> Result<Self> {
        if input_width == 0 {
            return Err(Error::Argument("ranker input width must be >= 1".into()));
        }
        let mut r = rng::seeded(seed, 0x4d4c50);
        let mut params = Self::zeros(input_width);
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.cols as f64).sqrt();
            for w in &mut layer.weights {
                *w = r.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].cols
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != LAYER_COUNT {
            return Err(Error::Argument(format!(
                "ranker needs {LAYER_COUNT} layers, has {}",
                self.layers.len()
            )));
        }
        let mut width = self.layers[0].cols;
        for (i, l) in self.layers.iter().enumerate() {
            if l.cols != width || l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Argument(format!("ranker layer {i} has inconsistent shape")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("ranker layer {i} has non-finite entries")));
            }
            width = l.rows;
        }
        if width != 1 {
            return Err(Error::Argument("ranker output width must be 1".into()));
        }
        Ok(())
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(Error::Dimension {
                expected: self.input_width(),
                actual: x.len(),
                context: "ranker input".into(),
            });
        }
        Ok(())
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = vec![x.to_vec()];
        let mut logit = 0.0;
        for (li, l) in self.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let out: Vec<f64> = (0..l.rows)
                .map(|r| {
                    let row = &l.weights[r * l.cols..(r + 1) * l.cols];
                    l.bias[r] + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            if li + 1 == self.layers.len() {
                logit = out[0];
            } else {
                acts.push(out.into_iter().map(|v| v.max(0.0)).collect());
            }
        }
        Trace { acts, logit }
    }

    /// Pre-squash output.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_width(x)?;
        Ok(self.trace(x).logit)
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.logit(x).map(squash)
    }

    /// Accumulate `dlogit · ∂logit/∂θ` into `grads` (same layout as `self`).
    pub(crate) fn backward(&self, trace: &Trace, dlogit: f64, grads: &mut RankerParams) {
        let mut delta = vec![dlogit];
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let g = &mut grads.layers[li];
            let input = &trace.acts[li];
            for r in 0..l.rows {
                g.bias[r] += delta[r];
                let row = &mut g.weights[r * l.cols..(r + 1) * l.cols];
                for (gw, v) in row.iter_mut().zip(input) {
                    *gw += delta[r] * v;
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; l.cols];
            for r in 0..l.rows {
                let row = &l.weights[r * l.cols..(r + 1) * l.cols];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += delta[r] * w;
                }
            }
            // ReLU mask of the layer that produced `input`
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub(crate) fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub(crate) fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub(crate) fn scale(&mut self, a: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= a);
        }
    }

    pub fn save(&self, path: &Path, seed: u64, config: serde_json::Value) -> Result<()> {
        self.validate()?;
        let header = RankerFileHeader {
            layer_shapes: self.layers.iter().map(|l| [l.rows, l.cols]).collect(),
            input_width: self.input_width(),
            seed,
            config,
        };
        let payload: Vec<f64> = self.blocks().concat();
        binfile::write_framed(path, RANKER_MAGIC, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<(Self, RankerFileHeader)> {
        let (header, payload): (RankerFileHeader, Vec<f64>) =
            binfile::read_framed(path, RANKER_MAGIC)?;
        let bad = |reason: String| Error::ModelFile {
            path: path.to_path_buf(),
            reason,
        };
        if header.layer_shapes != Self::shapes(header.input_width) {
            return Err(bad(format!("unexpected layer shapes {:?}", header.layer_shapes)));
        }
        let mut params = Self::zeros(header.input_width);
        if payload.len() != params.param_count() {
            return Err(bad(format!(
                "payload has {} values, expected {}",
                payload.len(),
                params.param_count()
            )));
        }
        let mut offset = 0;
        for block in params.blocks_mut() {
            block.copy_from_slice(&payload[offset..offset + block.len()]);
            offset += block.len();
        }
        params.validate().map_err(|e| bad(e.to_string()))?;
        Ok((params, header))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu(v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            0.0
        }
    }

    // Straightforward matrix-vector re-computation.
    fn oracle(p: &RankerParams, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        for (i, l) in p.layers.iter().enumerate() {
            let mut out = l.bias.clone();
            for r in 0..l.rows {
                for c in 0..l.cols {
                    out[r] += l.weights[r * l.cols + c] * h[c];
                }
            }
            h = if i < 3 { out.into_iter().map(relu).collect() } else { out };
        }
        1.0 / (1.0 + (-h[0]).exp())
    }

    #[test]
    fn zero_params_score_half() {
        let p = RankerParams::zeros(5);
        assert_eq!(p.score(&[1.0, -2.0, 3.0, 0.0, 9.0]).unwrap(), 0.5);
    }

    #[test]
    fn forward_matches_oracle() {
        let p = RankerParams::init(12, 3).unwrap();
        let mut r = rng::seeded(4, 0);
        for _ in 0..8 {
            let x: Vec<f64> = (0..12).map(|_| r.random_range(-2.0..2.0)).collect();
            assert!((p.score(&x).unwrap() - oracle(&p, &x)).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch() {
        let p = RankerParams::init(4, 0).unwrap();
        assert!(matches!(p.score(&[1.0; 5]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn saturated_scores_stay_inside_unit_interval() {
        assert!(squash(1e4) < 1.0);
        assert!(squash(-1e4) > 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut p = RankerParams::init(6, 9).unwrap();
        for l in &mut p.layers {
            l.bias.iter_mut().enumerate().for_each(|(i, b)| *b = 0.05 * i as f64);
        }
        let x = [0.4, -1.2, 0.8, 2.0, -0.3, 0.1];
        let mut g = RankerParams::zeros(6);
        p.backward(&p.trace(&x), 1.0, &mut g);
        let h = 1e-6;
        for li in 0..p.layers.len() {
            for wi in (0..p.layers[li].weights.len()).step_by(7) {
                let mut up = p.clone();
                up.layers[li].weights[wi] += h;
                let mut dn = p.clone();
                dn.layers[li].weights[wi] -= h;
                let num = (up.logit(&x).unwrap() - dn.logit(&x).unwrap()) / (2.0 * h);
                assert!((num - g.layers[li].weights[wi]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn file_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ptrk");
        let b = dir.path().join("b.ptrk");
        let p = RankerParams::init(10, 1).unwrap();
        p.save(&a, 1, serde_json::json!({"tau": 1.0})).unwrap();
        let (q, header) = RankerParams::load(&a).unwrap();
        assert_eq!(header.input_width, 10);
        assert_eq!(header.layer_shapes.len(), 4);
        q.save(&b, header.seed, header.config).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ptrk");
        std::fs::write(&a, b"PTSM\x01\0\0\0\x02\0\0\0{}").unwrap();
        assert!(matches!(RankerParams::load(&a), Err(Error::BadMagic { .. })));
    }
}
