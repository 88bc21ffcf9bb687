//! Command-line front end: config files, run directories, reports.
//!
//! Configs are flat `key = value` files with dotted keys. Parsing is strict:
//! unknown keys and duplicates are errors, so a typo cannot silently fall
//! back to a default. Every run directory stores a fully resolved snapshot
//! that reproduces the run byte for byte.

pub mod run;
pub mod svg;

use std::fmt;
use std::path::{Path, PathBuf};

use crate::corpus::{CorpusError, CorpusSpec};
use crate::metrics::MetricsError;
use crate::model::{ModelConfig, ModelError};
use crate::sequence::SequenceError;
use crate::trainer::{Method, OptimizerKind, TrainConfig, TrainerError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("run dir {0}: {1}")]
    RunDir(PathBuf, String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Fully resolved experiment configuration, one field per config key.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub num_langs: usize,
    pub num_categories: usize,
    pub pool_size: usize,
    pub label_noise: f64,
    /// Corpus generation seed, independent of the run seed so several runs
    /// can share one corpus. Defaults to `seed` when not set.
    pub corpus_seed: Option<u64>,
    pub train_size: usize,
    pub test_size: usize,
    pub hops: usize,
    pub sequence_file: Option<String>,
    pub method: Method,
    pub epochs: usize,
    pub base_lr: f64,
    pub zeta: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub optimizer: OptimizerKind,
    pub augment_fraction: f64,
    pub strict_ol_od: bool,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            num_langs: 6,
            num_categories: 10,
            pool_size: 300,
            label_noise: 0.0,
            corpus_seed: None,
            train_size: 100,
            test_size: 100,
            hops: 50,
            sequence_file: None,
            method: Method::SeqFt,
            epochs: 5,
            base_lr: 2e-5,
            zeta: 1.0,
            batch_size: 16,
            validation_fraction: 0.2,
            optimizer: OptimizerKind::AdamW,
            augment_fraction: 0.1,
            strict_ol_od: false,
            embed_dim: 32,
            num_blocks: 2,
            num_heads: 2,
            ffn_dim: 64,
            max_seq_len: 32,
            seed: 0,
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("key '{key}': invalid {kind} '{value}'")))
}

fn parse_float(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse_as(key, value, "number")?;
    if !v.is_finite() {
        return Err(CliError::Config(format!("key '{key}': {value} is not finite")));
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config(format!(
            "key '{key}': expected true or false, got '{value}'"
        ))),
    }
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "corpus.num_langs" => self.num_langs = parse_as(key, value, "integer")?,
            "corpus.num_categories" => self.num_categories = parse_as(key, value, "integer")?,
            "corpus.pool_size" => self.pool_size = parse_as(key, value, "integer")?,
            "corpus.label_noise" => self.label_noise = parse_float(key, value)?,
            "corpus.seed" => self.corpus_seed = Some(parse_as(key, value, "integer")?),
            "data.train_size" => self.train_size = parse_as(key, value, "integer")?,
            "data.test_size" => self.test_size = parse_as(key, value, "integer")?,
            "sequence.hops" => self.hops = parse_as(key, value, "integer")?,
            "sequence.file" => self.sequence_file = Some(value.to_string()),
            "method" => {
                self.method = value
                    .parse()
                    .map_err(|e: TrainerError| CliError::Config(e.to_string()))?
            }
            "train.epochs" => self.epochs = parse_as(key, value, "integer")?,
            "train.base_lr" => self.base_lr = parse_float(key, value)?,
            "train.zeta" => self.zeta = parse_float(key, value)?,
            "train.batch_size" => self.batch_size = parse_as(key, value, "integer")?,
            "train.validation_fraction" => {
                self.validation_fraction = parse_float(key, value)?
            }
            "train.optimizer" => {
                self.optimizer = value
                    .parse()
                    .map_err(|e: TrainerError| CliError::Config(e.to_string()))?
            }
            "augment.fraction" => self.augment_fraction = parse_float(key, value)?,
            "metrics.strict_ol_od" => self.strict_ol_od = parse_bool(key, value)?,
            "model.embed_dim" => self.embed_dim = parse_as(key, value, "integer")?,
            "model.num_blocks" => self.num_blocks = parse_as(key, value, "integer")?,
            "model.num_heads" => self.num_heads = parse_as(key, value, "integer")?,
            "model.ffn_dim" => self.ffn_dim = parse_as(key, value, "integer")?,
            "model.max_seq_len" => self.max_seq_len = parse_as(key, value, "integer")?,
            "seed" => self.seed = parse_as(key, value, "integer")?,
            _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(CliError::Config(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
            cfg.set(key, value)
                .map_err(|e| CliError::Config(format!("line {}: {e}", lineno + 1)))?;
            seen.push(key.to_string());
        }
        Ok(cfg)
    }

    /// Load from a file; a relative `sequence.file` is taken relative to the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(seq) = &cfg.sequence_file {
            let p = Path::new(seq);
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.sequence_file = Some(dir.join(p).to_string_lossy().into_owned());
                }
            }
        }
        Ok(cfg)
    }

    pub fn corpus_seed(&self) -> u64 {
        self.corpus_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.num_langs == 0 || self.num_categories == 0 {
            return bad("corpus needs at least one language and one category".into());
        }
        if self.train_size == 0 || !self.train_size.is_multiple_of(2) {
            return bad(format!(
                "data.train_size must be positive and even, got {}",
                self.train_size
            ));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return bad(format!("train.zeta {} outside (0, 1]", self.zeta));
        }
        if !(0.0..=1.0).contains(&self.augment_fraction) {
            return bad(format!(
                "augment.fraction {} outside [0, 1]",
                self.augment_fraction
            ));
        }
        self.train_config().validate().map_err(CliError::Trainer)?;
        self.corpus_spec().validate().map_err(CliError::Corpus)?;
        // vocab size is unknown before corpus generation; 2 validates the rest
        self.model_config(2).validate().map_err(CliError::Model)?;
        Ok(())
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            num_langs: self.num_langs,
            num_categories: self.num_categories,
            pool_size: self.pool_size,
            test_size: self.test_size,
            label_noise: self.label_noise,
            seed: self.corpus_seed(),
            ..CorpusSpec::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            base_lr: self.base_lr,
            zeta: self.zeta,
            batch_size: self.batch_size,
            validation_fraction: self.validation_fraction,
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            num_blocks: self.num_blocks,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
        }
    }

    /// All keys with their resolved values, sorted, one per line. Reparsing
    /// the snapshot reproduces this config exactly.
    pub fn snapshot(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("augment.fraction", self.augment_fraction.to_string()),
            ("corpus.label_noise", self.label_noise.to_string()),
            ("corpus.num_categories", self.num_categories.to_string()),
            ("corpus.num_langs", self.num_langs.to_string()),
            ("corpus.pool_size", self.pool_size.to_string()),
            ("corpus.seed", self.corpus_seed().to_string()),
            ("data.test_size", self.test_size.to_string()),
            ("data.train_size", self.train_size.to_string()),
            ("method", self.method.to_string()),
            ("metrics.strict_ol_od", self.strict_ol_od.to_string()),
            ("model.embed_dim", self.embed_dim.to_string()),
            ("model.ffn_dim", self.ffn_dim.to_string()),
            ("model.max_seq_len", self.max_seq_len.to_string()),
            ("model.num_blocks", self.num_blocks.to_string()),
            ("model.num_heads", self.num_heads.to_string()),
            ("seed", self.seed.to_string()),
            ("sequence.hops", self.hops.to_string()),
            ("train.base_lr", self.base_lr.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.optimizer", self.optimizer.to_string()),
            ("train.validation_fraction", self.validation_fraction.to_string()),
            ("train.zeta", self.zeta.to_string()),
        ];
        if let Some(seq) = &self.sequence_file {
            pairs.push(("sequence.file", seq.clone()));
        }
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

/// A parsed command invocation, independent of the argument parser.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub enum Command {
    GenCorpus,
    BuildSequence,
    Run,
    Report(Vec<PathBuf>),
    Suite(Option<PathBuf>),
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::GenCorpus => "gen-corpus",
            Command::BuildSequence => "build-sequence",
            Command::Run => "run",
            Command::Report(_) => "report",
            Command::Suite(_) => "suite",
        };
        f.write_str(s)
    }
}

fn load_invocation_config(inv: &Invocation) -> Result<RunConfig> {
    let mut cfg = match &inv.config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = inv.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run one invocation to completion and return what should be printed.
pub fn execute(inv: &Invocation) -> Result<String> {
    let out = |default: &str| -> PathBuf {
        inv.out.clone().unwrap_or_else(|| PathBuf::from(default))
    };
    match &inv.command {
        Command::GenCorpus => {
            let cfg = load_invocation_config(inv)?;
            run::cmd_gen_corpus(&cfg, &out("corpus"), inv.force)
        }
        Command::BuildSequence => {
            let cfg = load_invocation_config(inv)?;
            run::cmd_build_sequence(&cfg, &out("."))
        }
        Command::Run => {
            // with --resume and no explicit config, the run dir's stored
            // snapshot is authoritative
            let explicit = inv.config_path.is_some() || inv.seed.is_some();
            let cfg = if explicit {
                Some(load_invocation_config(inv)?)
            } else {
                None
            };
            run::cmd_run(cfg.as_ref(), &out("run"), inv.resume, inv.force)
                .map(|doc| doc.rendered)
        }
        Command::Report(dirs) => {
            if dirs.is_empty() {
                return Err(CliError::Usage("report needs at least one run dir".into()));
            }
            run::cmd_report(dirs, &out("."))
        }
        Command::Suite(file) => {
            let text = match file {
                Some(p) => std::fs::read_to_string(p)?,
                None => crate::bench::default_suite_text().to_string(),
            };
            crate::bench::run_suite(&text, &out("suite"), inv.resume, inv.force)
        }
    }
}
