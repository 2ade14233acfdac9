//! Planted-signal data: a stand-in for model probing where correct lines are
//! isotropic noise and buggy lines add a fixed direction. Used by tests, the
//! acceptance suite and benchmarks.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::binfile::atomic_write;
use crate::error::{Error, Result};
use crate::eval::DiffMap;
use crate::pipeline::{self, MetricsReport, PipelineConfig};
use crate::rng;
use crate::sae::SaeModel;
use crate::snippets::{read_snippet_file, write_snippet_file, EntryLabels, SnippetFileEntry};
use crate::store::{ActivationRecord, LabelFlag, StoreHeader, StoreWriter, WriteSummary, FINAL_TOKEN_LINE};

pub const PLANTED_MODEL_ID: &str = "planted";

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSignal {
    pub dim: usize,
    pub strength: f64,
    /// Per-coordinate noise standard deviation.
    pub noise_scale: f64,
    pub seed: u64,
    direction: Vec<f64>,
}

impl PlantedSignal {
    /// Noise N(0, I/d), so a correct state has unit expected squared norm.
    pub fn new(dim: usize, strength: f64, seed: u64) -> Self {
        let mut r = rng::seeded(seed, 0x444952);
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        PlantedSignal {
            dim,
            strength,
            noise_scale: 1.0 / (dim as f64).sqrt(),
            seed,
            direction: v.into_iter().map(|x| x / norm).collect(),
        }
    }

    /// The planted unit direction.
    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn state(&self, snippet_id: u32, line_index: u32, buggy: bool) -> Vec<f32> {
        let key = ((snippet_id as u64) << 32) | line_index as u64;
        let mut r = rng::seeded(self.seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15), 1);
        let u = &self.direction;
        (0..self.dim)
            .map(|i| {
                let noise: f64 = StandardNormal.sample(&mut r);
                let signal = if buggy { self.strength * u[i] } else { 0.0 };
                (self.noise_scale * noise + signal) as f32
            })
            .collect()
    }

    /// Probe every line of every entry (plus a final-token record when asked).
    /// Lines listed in the entry's labels carry the signal; unlabelled
    /// entries are written with unknown flags and no signal.
    pub fn write_store(
        &self,
        entries: &[SnippetFileEntry],
        path: &Path,
        final_token: bool,
    ) -> Result<WriteSummary> {
        let header = StoreHeader::new(PLANTED_MODEL_ID, 0, self.dim as u32);
        let mut w = StoreWriter::create(path, &header)?;
        for e in entries {
            let errors: &[usize] = e.labels.as_ref().map_or(&[], |l| &l.error_lines);
            let mut token = 0u32;
            for (i, text) in e.lines.iter().enumerate() {
                let buggy = errors.contains(&i);
                let count = text.split_whitespace().count().max(1) as u32;
                token += count;
                w.push(&ActivationRecord {
                    snippet_id: e.snippet_id,
                    line_index: i as u32,
                    token_index: token - 1,
                    line_token_count: count,
                    label_flag: flag(e.labels.is_some(), buggy),
                    vector: self.state(e.snippet_id, i as u32, buggy),
                })?;
            }
            if final_token {
                let buggy = !errors.is_empty();
                w.push(&ActivationRecord {
                    snippet_id: e.snippet_id,
                    line_index: FINAL_TOKEN_LINE,
                    token_index: token,
                    line_token_count: 1,
                    label_flag: flag(e.labels.is_some(), buggy),
                    vector: self.state(e.snippet_id, FINAL_TOKEN_LINE, buggy),
                })?;
            }
        }
        w.finish()
    }
}

fn flag(labelled: bool, buggy: bool) -> LabelFlag {
    match (labelled, buggy) {
        (false, _) => LabelFlag::Unknown,
        (true, true) => LabelFlag::Buggy,
        (true, false) => LabelFlag::Correct,
    }
}

const NAMES: [&str; 8] = ["total", "count", "items", "value", "result", "index", "buffer", "limit"];
const CALLS: [&str; 6] = ["compute", "len", "sorted", "parse", "update", "max"];

fn code_line(r: &mut impl Rng, snippet: u32, line: usize) -> String {
    let indent = "    ".repeat(r.random_range(0..3));
    let name = NAMES[r.random_range(0..NAMES.len())];
    let call = CALLS[r.random_range(0..CALLS.len())];
    let args = (0..r.random_range(1..4))
        .map(|_| r.random_range(0..100).to_string())
        .collect::<Vec<_>>()
        .join(", ");
    format!("{indent}{name}_{snippet}_{line} = {call}({args})")
}

/// Correct code snippets with 3 to 8 distinct lines each, all labelled clean.
pub fn corpus(n: usize, first_id: u32, language: &str, seed: u64) -> Vec<SnippetFileEntry> {
    let mut r = rng::seeded(seed, 0x434f52);
    (0..n as u32)
        .map(|i| {
            let id = first_id + i;
            let lines = (0..r.random_range(3..9)).map(|j| code_line(&mut r, id, j)).collect();
            SnippetFileEntry {
                snippet_id: id,
                language: language.to_string(),
                task: "synthetic".into(),
                lines,
                confidences: None,
                labels: Some(EntryLabels::default()),
            }
        })
        .collect()
}

/// Generated-answer stand-ins: each snippet is buggy with probability
/// `buggy_fraction`, in which case exactly one line is wrong. Token
/// confidences are drawn lower on the buggy line.
pub fn generation_set(
    n: usize,
    first_id: u32,
    buggy_fraction: f64,
    seed: u64,
) -> Vec<SnippetFileEntry> {
    let mut r = rng::seeded(seed, 0x47454e);
    let mut out = corpus(n, first_id, "python", seed ^ 0x5eed);
    for e in &mut out {
        let errors = if r.random_bool(buggy_fraction) {
            vec![r.random_range(0..e.lines.len())]
        } else {
            vec![]
        };
        e.task = "generated".into();
        e.confidences = Some(
            e.lines
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let lo = if errors.contains(&i) { 0.3 } else { 0.5 };
                    (0..l.split_whitespace().count().max(1))
                        .map(|_| r.random_range(lo..1.0))
                        .collect()
                })
                .collect(),
        );
        e.labels = Some(EntryLabels { error_lines: errors });
    }
    out
}

/// Knobs of the end-to-end planted run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSettings {
    pub dim: usize,
    pub strength: f64,
    pub corpus_snippets: usize,
    pub train_snippets: usize,
    pub heldout_snippets: usize,
    pub latent_dim: usize,
    pub k: usize,
    pub sae_epochs: usize,
    pub ranker_epochs: usize,
    pub seed: u64,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        ScenarioSettings {
            dim: 64,
            strength: 2.0,
            corpus_snippets: 200,
            train_snippets: 100,
            heldout_snippets: 200,
            latent_dim: 128,
            k: 8,
            sae_epochs: 5,
            ranker_epochs: 40,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub config_path: PathBuf,
    pub metrics: MetricsReport,
    /// Cosine between the planted direction and the decoder column of the
    /// strongest diff-map latent, signed by that latent's difference.
    pub diff_map_cosine: Option<f64>,
}

/// Write the config and planted inputs under `dir` without running anything.
pub fn prepare_scenario(dir: &Path, s: &ScenarioSettings) -> Result<PipelineConfig> {
    let text = format!(
        r#"[paths]
corpus = "corpus.jsonl"
train_snippets = "train.jsonl"
eval_snippets = "heldout.jsonl"

[sae]
latent_dim = {m}
k = {k}
epochs = {se}
batch_size = 64
learning_rate = 0.003
seed = {seed}

[ranker]
epochs = {re}
learning_rate = 0.003
seed = {seed}

[mutator]
master_seed = {seed}
"#,
        m = s.latent_dim,
        k = s.k,
        se = s.sae_epochs,
        re = s.ranker_epochs,
        seed = s.seed,
    );
    let config_path = dir.join("pttrust.toml");
    atomic_write(&config_path, text.as_bytes())?;
    let cfg = PipelineConfig::load(&config_path)?;
    let planted = PlantedSignal::new(s.dim, s.strength, s.seed);
    fs::create_dir_all(&cfg.paths.stores).map_err(|e| Error::io(&cfg.paths.stores, e))?;
    let corpus = corpus(s.corpus_snippets, 0, "python", s.seed);
    write_snippet_file(&cfg.paths.corpus, &corpus)?;
    planted.write_store(&corpus, &pipeline::store_for(&cfg, &cfg.paths.corpus), false)?;
    for (path, n, first, seed) in [
        (cfg.paths.train_snippets.clone(), s.train_snippets, 100_000, s.seed + 1),
        (cfg.paths.eval_snippets.clone(), s.heldout_snippets, 200_000, s.seed + 2),
    ] {
        let path = path.expect("set above");
        let set = generation_set(n, first, 0.5, seed);
        write_snippet_file(&path, &set)?;
        planted.write_store(&set, &pipeline::store_for(&cfg, &path), true)?;
    }
    Ok(cfg)
}

/// Probe the mutated corpora of every pass with the planted signal.
pub fn probe_mutations(cfg: &PipelineConfig, s: &ScenarioSettings) -> Result<()> {
    let planted = PlantedSignal::new(s.dim, s.strength, s.seed);
    for pass in 0..cfg.mutator.passes {
        let path = pipeline::mutated_corpus_path(cfg, pass);
        let entries = read_snippet_file(&path)?;
        planted.write_store(&entries, &pipeline::store_for(cfg, &path), false)?;
    }
    Ok(())
}

/// mutate → probe → pretrain → bind → assess → eval on planted data.
pub fn run_scenario(dir: &Path, s: &ScenarioSettings) -> Result<ScenarioOutcome> {
    let cfg = prepare_scenario(dir, s)?;
    pipeline::cmd_mutate(&cfg)?;
    probe_mutations(&cfg, s)?;
    pipeline::cmd_pretrain(&cfg)?;
    pipeline::cmd_bind(&cfg)?;
    pipeline::cmd_assess(&cfg)?;
    let metrics = pipeline::cmd_eval(&cfg)?;
    let diff_map_cosine = match &metrics.diff_map_path {
        Some(p) => {
            let values: Vec<f64> = serde_json::from_slice(
                &fs::read(p).map_err(|e| Error::io(p, e))?,
            )
            .map_err(|e| Error::Argument(e.to_string()))?;
            let (sae, _) = SaeModel::load(&pipeline::sae_path(&cfg))?;
            let dm = DiffMap {
                values,
                buggy_lines: 0,
                correct_lines: 0,
            };
            dm.strongest().map(|j| {
                let u = PlantedSignal::new(s.dim, s.strength, s.seed).direction;
                let atom = sae.atom(j);
                let dot: f64 = atom.iter().zip(&u).map(|(a, b)| a * b).sum();
                let norm = atom.iter().map(|a| a * a).sum::<f64>().sqrt();
                dm.values[j].signum() * dot / norm
            })
        }
        None => None,
    };
    Ok(ScenarioOutcome {
        config_path: dir.join("pttrust.toml"),
        metrics,
        diff_map_cosine,
    })
}
