//! Prepackaged experiment suites: a set of runs sharing one corpus and a few
//! pinned sequences, differing only in method and zeta, plus a zeta sweep of
//! single-hop fine-tunes. Small enough to finish in minutes on one core.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cli::run::{cmd_run, summary_table, SummaryDoc};
use crate::cli::{CliError, Result, RunConfig};
use crate::corpus::Corpus;
use crate::metrics::{hopwise_avg, percent};
use crate::model::Model;
use crate::rng::derive_seed;
use crate::trainer::{evaluate_all, run_hop, TrainConfig};
use crate::sequence::Combo;

/// Zeta values covered by the sweep table.
pub const SWEEP_ZETAS: [f64; 6] = [0.38, 0.5, 0.75, 0.85, 0.95, 1.0];

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub name: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub name: String,
    pub base: RunConfig,
    pub runs: Vec<SuiteRun>,
}

/// Parse a suite file: plain config keys form the shared base, and
/// `run.<name>.<key> = value` lines override it per run. Run order follows
/// first mention.
pub fn parse_suite(text: &str) -> Result<Suite> {
    let mut suite_name = "suite".to_string();
    let mut base_pairs: Vec<(String, String)> = Vec::new();
    let mut runs: Vec<(String, Vec<(String, String)>)> = Vec::new();
    let mut seen: Vec<String> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| CliError::Config(format!("suite line {}: {msg}", lineno + 1));
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err("expected 'key = value'".to_string()))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if seen.contains(&key) {
            return Err(err(format!("duplicate key '{key}'")));
        }
        seen.push(key.clone());

        if key == "name" {
            suite_name = value;
        } else if let Some(rest) = key.strip_prefix("run.") {
            let (run_name, cfg_key) = rest
                .split_once('.')
                .ok_or_else(|| err(format!("expected run.<name>.<key>, got '{key}'")))?;
            if run_name.is_empty() {
                return Err(err("empty run name".to_string()));
            }
            match runs.iter_mut().find(|(n, _)| n == run_name) {
                Some((_, overrides)) => overrides.push((cfg_key.to_string(), value)),
                None => runs.push((run_name.to_string(), vec![(cfg_key.to_string(), value)])),
            }
        } else {
            base_pairs.push((key, value));
        }
    }

    let mut base = RunConfig::default();
    for (k, v) in &base_pairs {
        base.set(k, v)?;
    }
    if runs.is_empty() {
        return Err(CliError::Config("suite defines no runs".to_string()));
    }
    let runs = runs
        .into_iter()
        .map(|(name, overrides)| {
            let mut config = base.clone();
            for (k, v) in &overrides {
                config
                    .set(k, v)
                    .map_err(|e| CliError::Config(format!("run '{name}': {e}")))?;
            }
            config.validate()?;
            Ok(SuiteRun { name, config })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Suite {
        name: suite_name,
        base,
        runs,
    })
}

/// The built-in desk-scale suite: 3 sequence seeds x 4 methods on a shared
/// 4-language, 3-category corpus. Knob values were fixed once during
/// development so the collapse and ordering behavior they produce stays put.
pub fn default_suite_text() -> &'static str {
    DEFAULT_SUITE
}

const DEFAULT_SUITE: &str = include_str!("default_suite.txt");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Failure {
    pub run: String,
    pub error: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub rows: Vec<SummaryDoc>,
    pub failures: Vec<Failure>,
}

/// Read back the comparison a finished suite wrote into `out_dir`.
pub fn read_report(out_dir: &Path) -> Result<SuiteReport> {
    let text = fs::read_to_string(out_dir.join("comparison.json"))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("comparison.json: {e}")))
}

/// Execute every run of a suite into `out_dir/<run-name>`, then write the
/// comparison table and the zeta sweep. Individual run failures are recorded
/// and the rest of the suite still executes.
pub fn run_suite(text: &str, out_dir: &Path, resume: bool, force: bool) -> Result<String> {
    let suite = parse_suite(text)?;
    if out_dir.exists() && out_dir.read_dir()?.next().is_some() {
        let stored = out_dir.join("suite.txt");
        let same = stored.exists() && fs::read_to_string(&stored)? == text;
        if !(same && (resume || force)) && !force {
            return Err(CliError::RunDir(
                out_dir.to_path_buf(),
                "not empty; pass --resume to continue this suite or --force to start over".into(),
            ));
        }
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("suite.txt"), text)?;

    let mut rows: Vec<SummaryDoc> = Vec::new();
    let mut failures: Vec<Failure> = Vec::new();
    for run in &suite.runs {
        let dir = out_dir.join(&run.name);
        match cmd_run(Some(&run.config), &dir, true, force) {
            Ok(doc) => rows.push(doc.summary),
            Err(e) => failures.push(Failure {
                run: run.name.clone(),
                error: e.to_string(),
            }),
        }
    }

    let sweep = zeta_sweep(&suite.base)?;
    let sweep_table = sweep.render();
    fs::write(out_dir.join("zeta_sweep.txt"), &sweep_table)?;
    let sweep_json = serde_json::to_string_pretty(&sweep).expect("sweep serializes");
    fs::write(out_dir.join("zeta_sweep.json"), sweep_json + "\n")?;

    let mut table = summary_table(&rows);
    for f in &failures {
        table.push_str(&format!("FAILED {}: {}\n", f.run, f.error));
    }
    fs::write(out_dir.join("comparison.txt"), &table)?;
    let report = SuiteReport {
        suite: suite.name.clone(),
        rows,
        failures,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(out_dir.join("comparison.json"), json + "\n")?;

    Ok(format!("{table}\n{sweep_table}"))
}

/// One row per language: average F1 over every test set after a single hop
/// of fine-tuning on that language, at each zeta. The same training sample
/// and seeds are reused across zetas so the schedule is the only difference.
#[derive(Debug, Clone, Serialize)]
pub struct ZetaSweep {
    pub zetas: Vec<f64>,
    pub langs: Vec<String>,
    /// scores[lang][zeta]
    pub scores: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

pub fn zeta_sweep(base: &RunConfig) -> Result<ZetaSweep> {
    base.validate()?;
    let corpus = Corpus::generate(base.corpus_spec())?;
    let registry = &corpus.registry;
    let cat = registry.category_ids()[0];
    let langs = registry.lang_ids();

    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(langs.len());
    for (li, &lang) in langs.iter().enumerate() {
        let sample_seed = derive_seed(base.seed, "zeta-sample", li as u64);
        let hop_seed = derive_seed(base.seed, "zeta-hop", li as u64);
        let mut row = Vec::with_capacity(SWEEP_ZETAS.len());
        for &zeta in &SWEEP_ZETAS {
            let train_set =
                corpus.make_training_set(lang, cat, base.train_size, sample_seed)?;
            let model = Model::init(base.model_config(corpus.vocab.size()), base.seed)?;
            let cfg = TrainConfig {
                zeta,
                ..base.train_config()
            };
            let (tuned, _, _) = run_hop(model, train_set, &cfg, hop_seed)?;
            let (matrix, _) = evaluate_all(&tuned, &corpus, 0, Combo { lang, category: cat })?;
            row.push(hopwise_avg(&matrix));
        }
        scores.push(row);
    }

    let mut mean = vec![0.0; SWEEP_ZETAS.len()];
    for row in &scores {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= scores.len() as f64;
    }
    Ok(ZetaSweep {
        zetas: SWEEP_ZETAS.to_vec(),
        langs: langs
            .iter()
            .map(|&l| registry.lang_name(l).to_string())
            .collect(),
        scores,
        mean,
    })
}

impl ZetaSweep {
    pub fn render(&self) -> String {
        let mut out = String::from("zeta  ");
        for z in &self.zetas {
            out.push_str(&format!("  {:>6.2}", z));
        }
        out.push('\n');
        for (lang, row) in self.langs.iter().zip(&self.scores) {
            out.push_str(&format!("{lang:<6}"));
            for v in row {
                out.push_str(&format!("  {:>6}", percent(*v)));
            }
            out.push('\n');
        }
        out.push_str("mean  ");
        for v in &self.mean {
            out.push_str(&format!("  {:>6}", percent(*v)));
        }
        out.push('\n');
        out
    }
}
