//! Config-driven commands: mutate → pretrain → bind → assess → eval.
//!
//! Every command is a pure function of its config and input files, and
//! every artifact it writes is deterministic; JSON artifacts carry the
//! config that produced them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::binfile::{atomic_write, file_id};
use crate::error::{Error, Result};
use crate::eval::{self, ActivationGroup, LineRisk, RiskReport};
use crate::mutate::{self, build_contrastive_pairs, PairSpec, PassSettings};
use crate::rank::{
    self, LineLabelSet, RankerParams, RankerTrainConfig, RankingSample, YoudenPoint,
};
use crate::sae::{train_sae, LatentVector, SaeModel, SaeTrainConfig};
use crate::snippets::{
    effective_labels, read_jsonl_file, read_labels, read_snippet_file, write_jsonl_file,
    write_snippet_file, EntryLabels, SnippetFileEntry,
};
use crate::store::{ActivationRecord, LoadedStore, FINAL_TOKEN_LINE};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Correct-code corpus fed to the mutators.
    pub corpus: PathBuf,
    /// Activation stores, mutated corpora and pair specs.
    pub stores: PathBuf,
    pub models: PathBuf,
    /// Append-only label log shared with the review service.
    pub labels: PathBuf,
    pub reports: PathBuf,
    /// Labelled generated snippets used to bind the ranker.
    pub train_snippets: Option<PathBuf>,
    /// Snippets to assess and evaluate.
    pub eval_snippets: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus: "corpus.jsonl".into(),
            stores: "stores".into(),
            models: "models".into(),
            labels: "labels.jsonl".into(),
            reports: "reports".into(),
            train_snippets: None,
            eval_snippets: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutatorConfig {
    pub master_seed: u64,
    pub passes: u32,
    pub margin: f64,
    pub same_language: bool,
}

impl Default for MutatorConfig {
    fn default() -> Self {
        MutatorConfig {
            master_seed: 0,
            passes: 1,
            margin: mutate::DEFAULT_MARGIN,
            same_language: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub snippets: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub k_values: Vec<usize>,
    /// Extra snippet sets for the cross-distribution matrix; when empty the
    /// evaluation set alone is grouped by language.
    pub datasets: Vec<DatasetSpec>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            k_values: vec![1, 3, 5],
            datasets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub bind: String,
    pub port: u16,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub sae: SaeTrainConfig,
    pub ranker: RankerTrainConfig,
    pub mutator: MutatorConfig,
    pub metrics: MetricsConfig,
    pub serve: ServeConfig,
}

impl PipelineConfig {
    /// Parse TOML; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [
            &mut paths.corpus,
            &mut paths.stores,
            &mut paths.models,
            &mut paths.labels,
            &mut paths.reports,
        ] {
            fix(p);
        }
        for p in [&mut paths.train_snippets, &mut paths.eval_snippets]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for d in &mut self.metrics.datasets {
            fix(&mut d.snippets);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sae.validate()?;
        self.ranker.validate()?;
        if self.metrics.k_values.is_empty() || self.metrics.k_values.contains(&0) {
            return Err(Error::Config("metrics.k_values must be nonempty and positive".into()));
        }
        if self.mutator.passes == 0 || !(self.mutator.margin > 0.0) {
            return Err(Error::Config("mutator: passes >= 1 and margin > 0 required".into()));
        }
        for dir in [&self.paths.stores, &self.paths.models, &self.paths.reports] {
            let parent = dir.parent().unwrap_or(Path::new("."));
            if !parent.as_os_str().is_empty() && !parent.is_dir() {
                return Err(Error::Config(format!(
                    "{} is not inside an existing directory",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides, command: Command) {
        if let Some(seed) = o.seed {
            self.mutator.master_seed = seed;
            self.sae.seed = seed;
            self.ranker.seed = seed;
        }
        if let Some(k) = o.k {
            self.sae.k = k;
        }
        if let Some(m) = o.latent_dim {
            self.sae.latent_dim = m;
        }
        if let Some(e) = o.epochs {
            match command {
                Command::Bind => self.ranker.epochs = e,
                _ => self.sae.epochs = e,
            }
        }
        if let Some(out) = &o.out {
            match command {
                Command::Mutate => self.paths.stores = out.clone(),
                Command::Pretrain | Command::Bind => self.paths.models = out.clone(),
                Command::Assess | Command::Eval => self.paths.reports = out.clone(),
                Command::Serve => {}
            }
        }
        if let Some(s) = &o.snippets {
            match command {
                Command::Bind => self.paths.train_snippets = Some(s.clone()),
                _ => self.paths.eval_snippets = Some(s.clone()),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Mutate,
    Pretrain,
    Bind,
    Assess,
    Eval,
    Serve,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub latent_dim: Option<usize>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
    pub snippets: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Artifact layout
// ---------------------------------------------------------------------------

/// Store holding the states of a snippet file: `<stores>/<file stem>.ptas`.
pub fn store_for(cfg: &PipelineConfig, snippets: &Path) -> PathBuf {
    let stem = snippets.file_stem().unwrap_or_default().to_string_lossy();
    cfg.paths.stores.join(format!("{stem}.ptas"))
}

pub fn mutated_corpus_path(cfg: &PipelineConfig, pass: u32) -> PathBuf {
    cfg.paths.stores.join(format!("mutated_pass{pass}.jsonl"))
}

pub fn pair_spec_path(cfg: &PipelineConfig, pass: u32) -> PathBuf {
    cfg.paths.stores.join(format!("pairs_pass{pass}.jsonl"))
}

pub fn sae_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.models.join("sae.ptsm")
}

pub fn ranker_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.models.join("ranker.ptrk")
}

pub fn classifier_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.models.join("classifier.ptrk")
}

pub fn thresholds_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.models.join("thresholds.json")
}

pub fn report_path(cfg: &PipelineConfig, snippet_id: u32) -> PathBuf {
    cfg.paths.reports.join(format!("snippet_{snippet_id}.json"))
}

pub fn metrics_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.reports.join("metrics.json")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("in-memory serialization");
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        reason: e.to_string(),
    })
}

fn required(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| Error::Config(format!("paths.{what} is not set")))
}

// ---------------------------------------------------------------------------
// mutate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutateSummary {
    pub passes: Vec<PassSummary>,
    pub config: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassSummary {
    pub pass: u32,
    pub mutated_snippets: usize,
    pub pair_specs: usize,
    pub corpus: PathBuf,
    pub pairs: PathBuf,
}

pub fn cmd_mutate(cfg: &PipelineConfig) -> Result<MutateSummary> {
    let entries = read_snippet_file(&cfg.paths.corpus)?;
    if entries.is_empty() {
        return Err(Error::Empty(format!("corpus {}", cfg.paths.corpus.display())));
    }
    let corpus = entries
        .iter()
        .map(|e| e.to_snippet())
        .collect::<Result<Vec<_>>>()?;
    let tasks: BTreeMap<u32, &str> = entries.iter().map(|e| (e.snippet_id, e.task.as_str())).collect();
    ensure_dir(&cfg.paths.stores)?;
    let mut passes = Vec::new();
    for pass in 0..cfg.mutator.passes {
        let out = mutate::mutate_corpus(
            &corpus,
            &PassSettings {
                master_seed: cfg.mutator.master_seed,
                pass,
                same_language: cfg.mutator.same_language,
            },
        );
        let mutated: Vec<SnippetFileEntry> = out
            .mutated
            .iter()
            .map(|m| SnippetFileEntry {
                snippet_id: m.snippet.snippet_id,
                language: m.snippet.language.clone(),
                task: tasks.get(&m.source_ids[0]).copied().unwrap_or_default().to_string(),
                lines: m.snippet.lines.clone(),
                confidences: None,
                labels: Some(EntryLabels {
                    error_lines: m.error_lines.iter().map(|&l| l as usize).collect(),
                }),
            })
            .collect();
        let corpus_path = mutated_corpus_path(cfg, pass);
        let pairs_path = pair_spec_path(cfg, pass);
        write_snippet_file(&corpus_path, &mutated)?;
        write_jsonl_file(&pairs_path, &out.specs)?;
        passes.push(PassSummary {
            pass,
            mutated_snippets: mutated.len(),
            pair_specs: out.specs.len(),
            corpus: corpus_path,
            pairs: pairs_path,
        });
    }
    let summary = MutateSummary {
        passes,
        config: cfg.echo(),
    };
    write_json(&cfg.paths.stores.join("mutate_summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub states: usize,
    pub pairs: usize,
    pub skipped_specs: usize,
    pub initial_plain: f64,
    pub final_plain: f64,
    pub model: PathBuf,
    pub config: Value,
}

pub fn cmd_pretrain(cfg: &PipelineConfig) -> Result<PretrainSummary> {
    let original = LoadedStore::load(store_for(cfg, &cfg.paths.corpus))?;
    let mut mutated = Vec::new();
    let mut specs = Vec::new();
    for pass in 0..cfg.mutator.passes {
        let store = LoadedStore::load(store_for(cfg, &mutated_corpus_path(cfg, pass)))?;
        if store.dim() != original.dim() {
            return Err(Error::Dimension {
                expected: original.dim(),
                actual: store.dim(),
                context: format!("mutated store of pass {pass} vs original store"),
            });
        }
        mutated.push(store);
        specs.push(read_jsonl_file::<PairSpec>(&pair_spec_path(cfg, pass))?);
    }
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (i, (store, specs)) in mutated.iter().zip(&specs).enumerate() {
        let build = build_contrastive_pairs(specs, (0, &original), (i as u32 + 1, store), cfg.mutator.margin)?;
        skipped += build.skipped.len();
        pairs.extend(build.pairs);
    }
    let mut stores = vec![&original];
    stores.extend(mutated.iter());
    let mut sae_cfg = cfg.sae.clone();
    sae_cfg.margin = cfg.mutator.margin;
    let (model, log) = train_sae(&stores, &pairs, &sae_cfg)?;

    ensure_dir(&cfg.paths.models)?;
    let path = sae_path(cfg);
    model.save(&path, sae_cfg.seed, cfg.echo())?;
    write_jsonl_file(&cfg.paths.models.join("sae_log.jsonl"), &log.epochs)?;
    let summary = PretrainSummary {
        states: log.states,
        pairs: log.pairs,
        skipped_specs: skipped,
        initial_plain: log.initial_plain,
        final_plain: log.final_plain,
        model: path,
        config: cfg.echo(),
    };
    write_json(&cfg.paths.models.join("pretrain_summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// shared feature extraction
// ---------------------------------------------------------------------------

struct SnippetFeatures {
    latents: Vec<LatentVector>,
    token_counts: Vec<u32>,
    /// Latent of the final-token state, or of the last line when absent.
    final_latent: LatentVector,
}

fn snippet_features(
    sae: &SaeModel,
    store: &LoadedStore,
    entry: &SnippetFileEntry,
) -> Result<SnippetFeatures> {
    let record = |line: u32| -> Option<&ActivationRecord> {
        store.get(entry.snippet_id, line).map(|i| &store.records[i])
    };
    let mut latents = Vec::with_capacity(entry.lines.len());
    let mut token_counts = Vec::with_capacity(entry.lines.len());
    for i in 0..entry.lines.len() {
        let r = record(i as u32).ok_or_else(|| {
            Error::Empty(format!("no state for snippet {} line {i}", entry.snippet_id))
        })?;
        latents.push(sae.encode(&r.vector)?);
        token_counts.push(r.line_token_count);
    }
    let final_latent = match record(FINAL_TOKEN_LINE) {
        Some(r) => sae.encode(&r.vector)?,
        None => latents
            .last()
            .cloned()
            .ok_or_else(|| Error::Empty(format!("snippet {} has no lines", entry.snippet_id)))?,
    };
    Ok(SnippetFeatures {
        latents,
        token_counts,
        final_latent,
    })
}

fn line_labels(entry: &SnippetFileEntry, errors: &[usize], token_counts: Vec<u32>) -> Result<LineLabelSet> {
    LineLabelSet::new(
        entry.snippet_id,
        errors.iter().copied(),
        token_counts,
        entry.lines.iter().map(|l| l.chars().count()).collect(),
    )
}

fn load_sae(cfg: &PipelineConfig) -> Result<(SaeModel, String)> {
    let path = sae_path(cfg);
    let (model, _) = SaeModel::load(&path)?;
    Ok((model, file_id(&path)?))
}

fn check_store_dim(sae: &SaeModel, store: &LoadedStore) -> Result<()> {
    if store.dim() != sae.d {
        return Err(Error::Dimension {
            expected: sae.d,
            actual: store.dim(),
            context: "store dimension vs SAE input width".into(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bind
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingScore {
    pub snippet_id: u32,
    pub score: f64,
    pub incorrect: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub youden_threshold: f64,
    pub j: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub training_scores: Vec<TrainingScore>,
    /// Cutoff for the token-confidence baseline, when confidences exist.
    #[serde(default)]
    pub uncertainty_threshold: Option<YoudenPoint>,
    pub config: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindSummary {
    pub labelled_snippets: usize,
    pub skipped_snippets: Vec<u32>,
    pub ranker: rank::RankerLog,
    pub classifier_epoch_losses: Vec<f64>,
    pub config: Value,
}

pub fn cmd_bind(cfg: &PipelineConfig) -> Result<BindSummary> {
    let train_path = required(&cfg.paths.train_snippets, "train_snippets")?;
    let entries = read_snippet_file(&train_path)?;
    let labels = effective_labels(&entries, &read_labels(&cfg.paths.labels)?);
    let (sae, _) = load_sae(cfg)?;
    let store = LoadedStore::load(store_for(cfg, &train_path))?;
    check_store_dim(&sae, &store)?;

    let mut samples = Vec::new();
    let mut finals = Vec::new();
    let mut incorrect = Vec::new();
    let mut ids = Vec::new();
    let mut confidences = Vec::new();
    let mut skipped = Vec::new();
    for e in &entries {
        let Some(errors) = labels.get(&e.snippet_id) else {
            continue;
        };
        let feats = match snippet_features(&sae, &store, e) {
            Ok(f) => f,
            Err(Error::Empty(_)) => {
                skipped.push(e.snippet_id);
                continue;
            }
            Err(err) => return Err(err),
        };
        let set = line_labels(e, errors, feats.token_counts)?;
        samples.push(RankingSample {
            features: feats.latents.into_iter().map(|z| z.values).collect(),
            labels: set,
        });
        finals.push(feats.final_latent.values);
        incorrect.push(!errors.is_empty());
        ids.push(e.snippet_id);
        confidences.push(e.confidences.clone());
    }
    let (ranker, ranker_log) = rank::train_ranker(&samples, &cfg.ranker)?;
    let fit = rank::train_snippet_classifier(&finals, &incorrect, &cfg.ranker)?;

    let uncertainty_threshold = if confidences.iter().all(|c| c.is_some()) {
        let risks = confidences
            .iter()
            .map(|c| eval::uncertainty_snippet_risk(c.as_ref().expect("checked")))
            .collect::<Result<Vec<_>>>()?;
        Some(rank::youden_threshold(&risks, &incorrect)?)
    } else {
        None
    };

    ensure_dir(&cfg.paths.models)?;
    ranker.save(&ranker_path(cfg), cfg.ranker.seed, cfg.echo())?;
    fit.params.save(&classifier_path(cfg), cfg.ranker.seed, cfg.echo())?;
    let thresholds = Thresholds {
        youden_threshold: fit.youden.threshold,
        j: fit.youden.j,
        sensitivity: fit.youden.sensitivity,
        specificity: fit.youden.specificity,
        training_scores: ids
            .iter()
            .zip(&fit.training_scores)
            .zip(&incorrect)
            .map(|((&snippet_id, &score), &incorrect)| TrainingScore {
                snippet_id,
                score,
                incorrect,
            })
            .collect(),
        uncertainty_threshold,
        config: cfg.echo(),
    };
    write_json(&thresholds_path(cfg), &thresholds)?;
    let summary = BindSummary {
        labelled_snippets: ids.len(),
        skipped_snippets: skipped,
        ranker: ranker_log,
        classifier_epoch_losses: fit.epoch_losses,
        config: cfg.echo(),
    };
    write_json(&cfg.paths.models.join("bind_log.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// assess
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelIds {
    pub sae: String,
    pub ranker: String,
}

/// Per-snippet report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetReport {
    pub snippet_id: u32,
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub task: String,
    pub lines: Vec<LineRisk>,
    pub snippet_risk: Option<f64>,
    pub threshold: Option<f64>,
    pub model_ids: ModelIds,
}

impl SnippetReport {
    pub fn risk_report(&self) -> RiskReport {
        RiskReport {
            snippet_id: self.snippet_id,
            lines: self.lines.clone(),
            snippet_risk: self.snippet_risk,
            threshold: self.threshold,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetError {
    pub snippet_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessSummary {
    pub reports: Vec<u32>,
    pub errors: Vec<SnippetError>,
    pub config: Value,
}

pub fn cmd_assess(cfg: &PipelineConfig) -> Result<AssessSummary> {
    let path = required(&cfg.paths.eval_snippets, "eval_snippets")?;
    let entries = read_snippet_file(&path)?;
    let (sae, sae_id) = load_sae(cfg)?;
    let (ranker, _) = RankerParams::load(&ranker_path(cfg))?;
    let ranker_id = file_id(&ranker_path(cfg))?;
    if ranker.input_width() != sae.m {
        return Err(Error::ModelFile {
            path: ranker_path(cfg),
            reason: format!("input width {} does not match SAE latent width {}", ranker.input_width(), sae.m),
        });
    }
    let (classifier, _) = RankerParams::load(&classifier_path(cfg))?;
    let thresholds: Thresholds = read_json(&thresholds_path(cfg))?;
    let store = LoadedStore::load(store_for(cfg, &path))?;
    check_store_dim(&sae, &store)?;
    ensure_dir(&cfg.paths.reports)?;

    let mut summary = AssessSummary {
        reports: Vec::new(),
        errors: Vec::new(),
        config: cfg.echo(),
    };
    for e in &entries {
        let feats = match snippet_features(&sae, &store, e) {
            Ok(f) => f,
            Err(err) => {
                summary.errors.push(SnippetError {
                    snippet_id: e.snippet_id,
                    reason: err.to_string(),
                });
                continue;
            }
        };
        let risks = rank::score_lines(&ranker, &feats.latents)?;
        let base = RiskReport::new(e.snippet_id, &e.lines, &risks)?;
        let report = SnippetReport {
            snippet_id: e.snippet_id,
            language: e.language.clone(),
            task: e.task.clone(),
            lines: base.lines,
            snippet_risk: Some(classifier.score(&feats.final_latent.values)?),
            threshold: Some(thresholds.youden_threshold),
            model_ids: ModelIds {
                sae: sae_id.clone(),
                ranker: ranker_id.clone(),
            },
        };
        write_json(&report_path(cfg, e.snippet_id), &report)?;
        summary.reports.push(e.snippet_id);
    }
    write_json(&cfg.paths.reports.join("assess_summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub topk_hit_rate: BTreeMap<String, Option<f64>>,
    pub snippet_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct MetricsReport {
    pub dataset: String,
    pub model: String,
    pub K_values: Vec<usize>,
    pub topk_hit_rate: BTreeMap<String, Option<f64>>,
    pub snippet_accuracy: Option<f64>,
    pub wasserstein_matrix: Option<eval::DistanceMatrix>,
    pub diff_map_path: Option<PathBuf>,
    pub evaluated_snippets: usize,
    pub uncertainty: Option<BaselineMetrics>,
    pub config: Value,
}

fn hit_rates(pairs: &[(&RiskReport, &LineLabelSet)], ks: &[usize]) -> Result<BTreeMap<String, Option<f64>>> {
    let mut out = BTreeMap::new();
    for &k in ks {
        let v = match eval::mean_hit_rate(pairs, k) {
            Ok(v) => Some(v),
            Err(Error::Excluded(_)) => None,
            Err(e) => return Err(e),
        };
        out.insert(k.to_string(), v);
    }
    Ok(out)
}

fn mean_latent(latents: &[LatentVector], width: usize) -> Vec<f64> {
    let mut mean = vec![0.0; width];
    for z in latents {
        for &j in &z.active {
            mean[j] += z.values[j];
        }
    }
    mean.iter_mut().for_each(|v| *v /= latents.len().max(1) as f64);
    mean
}

fn language_groups(
    cfg: &PipelineConfig,
    sae: &SaeModel,
    name: &str,
    path: &Path,
) -> Result<Vec<ActivationGroup>> {
    let entries = read_snippet_file(path)?;
    let store = LoadedStore::load(store_for(cfg, path))?;
    check_store_dim(sae, &store)?;
    let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for e in &entries {
        if let Ok(f) = snippet_features(sae, &store, e) {
            groups
                .entry(e.language.clone())
                .or_default()
                .push(mean_latent(&f.latents, sae.m));
        }
    }
    Ok(groups
        .into_iter()
        .map(|(language, instances)| ActivationGroup {
            language,
            dataset: name.to_string(),
            instances,
        })
        .collect())
}

pub fn cmd_eval(cfg: &PipelineConfig) -> Result<MetricsReport> {
    let path = required(&cfg.paths.eval_snippets, "eval_snippets")?;
    let entries = read_snippet_file(&path)?;
    let labels = effective_labels(&entries, &read_labels(&cfg.paths.labels)?);
    let (sae, sae_id) = load_sae(cfg)?;
    let store = LoadedStore::load(store_for(cfg, &path))?;
    check_store_dim(&sae, &store)?;

    let mut reports = Vec::new();
    let mut sets = Vec::new();
    let mut latents = Vec::new();
    let mut conf = Vec::new();
    for e in &entries {
        let Some(errors) = labels.get(&e.snippet_id) else {
            continue;
        };
        let rpath = report_path(cfg, e.snippet_id);
        if !rpath.exists() {
            continue;
        }
        let report = SnippetReport::load(&rpath)?.risk_report();
        let feats = snippet_features(&sae, &store, e)?;
        sets.push(line_labels(e, errors, feats.token_counts)?);
        latents.push(feats.latents);
        reports.push(report);
        conf.push(e.confidences.clone());
    }
    if reports.is_empty() {
        return Err(Error::Empty("no labelled snippet has a report".into()));
    }
    let pairs: Vec<(&RiskReport, &LineLabelSet)> = reports.iter().zip(&sets).collect();
    let truths: Vec<bool> = sets.iter().map(|s| !s.error_lines.is_empty()).collect();
    let ks = &cfg.metrics.k_values;

    let verdicts: Option<Vec<bool>> = reports.iter().map(|r| r.flagged()).collect();
    let snippet_accuracy = verdicts
        .map(|p| eval::snippet_accuracy(&p, &truths))
        .transpose()?;

    let uncertainty = if conf.iter().all(|c| c.is_some()) {
        let mut base_reports = Vec::new();
        let mut snippet_risks = Vec::new();
        for (c, r) in conf.iter().zip(&reports) {
            let c = c.as_ref().expect("checked");
            let texts: Vec<String> = r.lines.iter().map(|l| l.text.clone()).collect();
            base_reports.push(RiskReport::new(r.snippet_id, &texts, &eval::uncertainty_line_risk(c)?)?);
            snippet_risks.push(eval::uncertainty_snippet_risk(c)?);
        }
        let base_pairs: Vec<(&RiskReport, &LineLabelSet)> = base_reports.iter().zip(&sets).collect();
        let thresholds: Option<Thresholds> = read_json(&thresholds_path(cfg)).ok();
        let accuracy = match thresholds.and_then(|t| t.uncertainty_threshold) {
            Some(t) => {
                let p: Vec<bool> = snippet_risks.iter().map(|&s| s >= t.threshold).collect();
                Some(eval::snippet_accuracy(&p, &truths)?)
            }
            None => None,
        };
        Some(BaselineMetrics {
            topk_hit_rate: hit_rates(&base_pairs, ks)?,
            snippet_accuracy: accuracy,
        })
    } else {
        None
    };

    ensure_dir(&cfg.paths.reports)?;
    let diff_pairs: Vec<(&[LatentVector], &LineLabelSet)> =
        latents.iter().map(|l| l.as_slice()).zip(&sets).collect();
    let diff_map_path = match eval::activation_diff_map(&diff_pairs) {
        Ok(dm) => {
            let p = cfg.paths.reports.join("diff_map.json");
            write_json(&p, &dm.values)?;
            Some(p)
        }
        Err(Error::Empty(_)) => None,
        Err(e) => return Err(e),
    };

    let dataset = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
    let mut groups = Vec::new();
    if cfg.metrics.datasets.is_empty() {
        groups.extend(language_groups(cfg, &sae, &dataset, &path)?);
    } else {
        for d in &cfg.metrics.datasets {
            groups.extend(language_groups(cfg, &sae, &d.name, &d.snippets)?);
        }
    }
    let wasserstein_matrix = if groups.len() >= 2 {
        Some(eval::cross_distribution_matrix(&groups)?)
    } else {
        None
    };

    let report = MetricsReport {
        dataset,
        model: sae_id,
        K_values: ks.clone(),
        topk_hit_rate: hit_rates(&pairs, ks)?,
        snippet_accuracy,
        wasserstein_matrix,
        diff_map_path,
        evaluated_snippets: reports.len(),
        uncertainty,
        config: cfg.echo(),
    };
    write_json(&metrics_path(cfg), &report)?;
    Ok(report)
}
