//! Command dispatch and the review service for `pttrust`.

pub mod serve;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use pttrust_core::pipeline::{self, Command, Overrides, PipelineConfig};
use pttrust_core::{Error, ErrorKind, Result};

#[derive(Debug, Parser)]
#[command(name = "pttrust", version, about = "Line-level risk assessment pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Produce mutated corpora and pair specs from the correct-code corpus.
    Mutate(CommonArgs),
    /// Train the sparse autoencoder on original and mutated stores.
    Pretrain(CommonArgs),
    /// Train the line ranker, snippet classifier and decision threshold.
    Bind(CommonArgs),
    /// Write a risk report per snippet.
    Assess(CommonArgs),
    /// Compute metrics over reports and labels.
    Eval(CommonArgs),
    /// Serve reports and accept labels over HTTP.
    Serve(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, env = "PTTRUST_CONFIG")]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Active latents per code.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory of the command.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Snippet file to bind on or to assess and evaluate.
    #[arg(long)]
    pub snippets: Option<PathBuf>,
    /// Listening port for `serve` (0 picks a free one).
    #[arg(long)]
    pub port: Option<u16>,
}

impl Cmd {
    pub fn parts(&self) -> (Command, &CommonArgs) {
        match self {
            Cmd::Mutate(a) => (Command::Mutate, a),
            Cmd::Pretrain(a) => (Command::Pretrain, a),
            Cmd::Bind(a) => (Command::Bind, a),
            Cmd::Assess(a) => (Command::Assess, a),
            Cmd::Eval(a) => (Command::Eval, a),
            Cmd::Serve(a) => (Command::Serve, a),
        }
    }
}

pub fn load_config(command: Command, args: &CommonArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    cfg.apply(
        &Overrides {
            seed: args.seed,
            k: args.k,
            latent_dim: args.latent_dim,
            epochs: args.epochs,
            out: args.out.clone(),
            snippets: args.snippets.clone(),
        },
        command,
    );
    if let Some(port) = args.port {
        cfg.serve.port = port;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn to_value(v: impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("summary serializes")
}

/// Run one batch command and return its summary.
pub fn run_batch(command: Command, cfg: &PipelineConfig) -> Result<Value> {
    Ok(match command {
        Command::Mutate => to_value(pipeline::cmd_mutate(cfg)?),
        Command::Pretrain => to_value(pipeline::cmd_pretrain(cfg)?),
        Command::Bind => to_value(pipeline::cmd_bind(cfg)?),
        Command::Assess => to_value(pipeline::cmd_assess(cfg)?),
        Command::Eval => to_value(pipeline::cmd_eval(cfg)?),
        Command::Serve => return Err(Error::Argument("serve is not a batch command".into())),
    })
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Model => 4,
    }
}
