//! Shared fixtures for the criterion benches.

use pttrust_core::rng;
use pttrust_core::store::{ActivationRecord, LabelFlag};
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_f64(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed, 0xBE);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

pub fn gaussian_f32(n: usize, seed: u64) -> Vec<f32> {
    gaussian_f64(n, seed).into_iter().map(|x| x as f32).collect()
}

/// `snippets` snippets of `lines` records each.
pub fn records(snippets: u32, lines: u32, dim: usize) -> Vec<ActivationRecord> {
    (0..snippets * lines)
        .map(|i| ActivationRecord {
            snippet_id: i / lines,
            line_index: i % lines,
            token_index: i,
            line_token_count: 4,
            label_flag: LabelFlag::Unknown,
            vector: gaussian_f32(dim, i as u64),
        })
        .collect()
}
