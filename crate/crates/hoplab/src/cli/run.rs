//! Run directories: executing experiments, resuming them, and reporting.
//!
//! Layout of a run dir:
//!   config.snapshot   resolved config, reparses to the exact same run
//!   sequence.txt      the hop sequence actually used
//!   hop_<i>/checkpoint  chosen model after hop i
//!   hop_<i>/results     per-test-set F1 plus the hop record
//!   metrics.csv       long-format scores, K*C rows per completed hop
//!   summary.json, summary.txt   written once the final hop finishes
//!
//! A hop counts as completed once its results file is fully written; resume
//! rescans the directory, rebuilds metrics.csv from the completed hops, and
//! continues from the first missing one. Training data never touches disk.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::corpus::translate::OracleTranslator;
use crate::corpus::{Corpus, Registry};
use crate::metrics::{percent, percent_opt, summarize, F1Matrix, RunSummary};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta, Model};
use crate::rng::derive_seed;
use crate::sequence::{build_sequence, Combo, HopSequence};
use crate::trainer::{
    run_sequence, HopOutcome, HopRecord, HopSink, Method, RunSpec, TrainerError,
};

use super::{svg, CliError, Result, RunConfig};

/// One run's summary as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub name: String,
    pub method: String,
    pub hops_done: usize,
    pub hops_total: usize,
    pub collapsed_hops: Vec<usize>,
    pub summary: RunSummary,
}

pub struct RunDoc {
    pub summary: SummaryDoc,
    pub rendered: String,
}

fn hop_dir(run_dir: &Path, i: usize) -> PathBuf {
    run_dir.join(format!("hop_{i:03}"))
}

fn dir_error(dir: &Path, msg: impl Into<String>) -> CliError {
    CliError::RunDir(dir.to_path_buf(), msg.into())
}

const CSV_HEADER: &str = "hop,train_lang,train_category,test_lang,test_category,f1\n";

fn csv_rows(registry: &Registry, record: &HopRecord, matrix: &F1Matrix) -> String {
    let train_lang = registry.lang_name(record.combo.lang);
    let train_cat = registry.category_name(record.combo.category);
    let mut out = String::new();
    for (li, lang) in registry.lang_ids().into_iter().enumerate() {
        for (ci, cat) in registry.category_ids().into_iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                record.hop_index,
                train_lang,
                train_cat,
                registry.lang_name(lang),
                registry.category_name(cat),
                matrix.at(li, ci)
            ));
        }
    }
    out
}

fn write_results<W: Write>(
    w: &mut W,
    registry: &Registry,
    record: &HopRecord,
    matrix: &F1Matrix,
) -> std::io::Result<()> {
    writeln!(w, "hop {}", record.hop_index)?;
    writeln!(
        w,
        "train {} {}",
        registry.lang_name(record.combo.lang),
        registry.category_name(record.combo.category)
    )?;
    writeln!(w, "method {}", record.method)?;
    writeln!(w, "chosen_epoch {}", record.chosen_epoch)?;
    writeln!(w, "val_f1 {}", record.val_f1)?;
    writeln!(w, "data_digest {:016x}", record.data_digest)?;
    writeln!(w, "collapsed {}", record.collapsed)?;
    for (li, lang) in registry.lang_ids().into_iter().enumerate() {
        for (ci, cat) in registry.category_ids().into_iter().enumerate() {
            writeln!(
                w,
                "f1 {} {} {}",
                registry.lang_name(lang),
                registry.category_name(cat),
                matrix.at(li, ci)
            )?;
        }
    }
    writeln!(w, "end")
}

fn parse_results<R: BufRead>(r: R, registry: &Registry) -> Result<(HopRecord, F1Matrix)> {
    let bad = |msg: &str| CliError::RunDir(PathBuf::new(), format!("results file: {msg}"));
    let mut lines = Vec::new();
    for line in r.lines() {
        lines.push(line?);
    }
    if lines.last().map(String::as_str) != Some("end") {
        return Err(bad("missing end marker"));
    }
    let field = |i: usize, name: &str| -> Result<String> {
        let line = lines.get(i).ok_or_else(|| bad("truncated"))?;
        line.strip_prefix(name)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected '{name}' on line {}", i + 1)))
    };
    let hop_index: usize = field(0, "hop")?.parse().map_err(|_| bad("bad hop index"))?;
    let combo_line = field(1, "train")?;
    let (lang_name, cat_name) = combo_line
        .split_once(' ')
        .ok_or_else(|| bad("bad train line"))?;
    let combo = Combo {
        lang: registry.lang_id(lang_name)?,
        category: registry.category_id(cat_name)?,
    };
    let method: Method = field(2, "method")?.parse().map_err(CliError::Trainer)?;
    let chosen_epoch: usize = field(3, "chosen_epoch")?
        .parse()
        .map_err(|_| bad("bad chosen_epoch"))?;
    let val_f1: f64 = field(4, "val_f1")?.parse().map_err(|_| bad("bad val_f1"))?;
    let data_digest = u64::from_str_radix(&field(5, "data_digest")?, 16)
        .map_err(|_| bad("bad data_digest"))?;
    let collapsed = match field(6, "collapsed")?.as_str() {
        "true" => true,
        "false" => false,
        _ => return Err(bad("bad collapsed flag")),
    };

    let k = registry.num_langs();
    let c = registry.num_categories();
    let mut values = Vec::with_capacity(k * c);
    let mut i = 7;
    for lang in registry.lang_ids() {
        for cat in registry.category_ids() {
            let row = field(i, "f1")?;
            let mut parts = row.split(' ');
            let (l, ct, v) = (parts.next(), parts.next(), parts.next());
            if l != Some(registry.lang_name(lang)) || ct != Some(registry.category_name(cat)) {
                return Err(bad("f1 rows out of order"));
            }
            let v: f64 = v
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad f1 value"))?;
            values.push(v);
            i += 1;
        }
    }
    let matrix = F1Matrix::new(hop_index, combo, k, c, values)?;
    let record = HopRecord {
        hop_index,
        combo,
        method,
        chosen_epoch,
        val_f1,
        data_digest,
        collapsed,
        checkpoint: format!("hop_{hop_index:03}/checkpoint"),
    };
    Ok((record, matrix))
}

struct FileSink<'a> {
    run_dir: PathBuf,
    registry: &'a Registry,
    run_seed: u64,
}

impl FileSink<'_> {
    fn write_hop(&self, record: &mut HopRecord, model: &Model, matrix: &F1Matrix) -> Result<()> {
        let dir = hop_dir(&self.run_dir, record.hop_index);
        fs::create_dir_all(&dir)?;

        let mut w = BufWriter::new(File::create(dir.join("checkpoint"))?);
        save_checkpoint(
            &mut w,
            model,
            &CheckpointMeta {
                hop: record.hop_index as u64,
                epoch: record.chosen_epoch as u64,
                val_f1: record.val_f1,
                seed: self.run_seed,
            },
        )?;
        w.flush()?;
        record.checkpoint = format!("hop_{:03}/checkpoint", record.hop_index);

        // the results file is the hop's completion marker, so it goes last
        let mut w = BufWriter::new(File::create(dir.join("results"))?);
        write_results(&mut w, self.registry, record, matrix)?;
        w.flush()?;

        let mut csv = OpenOptions::new()
            .append(true)
            .open(self.run_dir.join("metrics.csv"))?;
        csv.write_all(csv_rows(self.registry, record, matrix).as_bytes())?;
        csv.flush()?;
        Ok(())
    }
}

impl HopSink for FileSink<'_> {
    fn persist(
        &mut self,
        record: &mut HopRecord,
        model: &Model,
        matrix: &F1Matrix,
    ) -> std::result::Result<(), TrainerError> {
        self.write_hop(record, model, matrix)
            .map_err(|e| TrainerError::Persist {
                hop: record.hop_index,
                msg: e.to_string(),
            })
    }
}

/// Completed hops from an existing run dir: every hop from 0 with a parseable
/// results file matching the sequence. Stops at the first gap.
fn scan_completed_hops(
    run_dir: &Path,
    registry: &Registry,
    sequence: &HopSequence,
) -> Result<Vec<HopOutcome>> {
    let mut out = Vec::new();
    for (i, &combo) in sequence.combos().iter().enumerate() {
        let dir = hop_dir(run_dir, i);
        let results = dir.join("results");
        if !results.exists() || !dir.join("checkpoint").exists() {
            break;
        }
        let parsed = File::open(&results)
            .map_err(CliError::Io)
            .and_then(|f| parse_results(BufReader::new(f), registry));
        match parsed {
            Ok((record, matrix)) if record.hop_index == i && record.combo == combo => {
                out.push(HopOutcome { record, matrix });
            }
            _ => break,
        }
    }
    Ok(out)
}

fn rewrite_csv(run_dir: &Path, registry: &Registry, outcomes: &[HopOutcome]) -> Result<()> {
    let mut text = String::from(CSV_HEADER);
    for o in outcomes {
        text.push_str(&csv_rows(registry, &o.record, &o.matrix));
    }
    fs::write(run_dir.join("metrics.csv"), text)?;
    Ok(())
}

fn build_summary_doc(
    name: String,
    method: Method,
    strict_ol_od: bool,
    sequence: &HopSequence,
    outcomes: &[HopOutcome],
) -> Result<SummaryDoc> {
    let matrices: Vec<F1Matrix> = outcomes.iter().map(|o| o.matrix.clone()).collect();
    let summary = summarize(&matrices, &sequence.prefix(outcomes.len()), strict_ol_od)?;
    Ok(SummaryDoc {
        name,
        method: method.to_string(),
        hops_done: outcomes.len(),
        hops_total: sequence.len(),
        collapsed_hops: outcomes
            .iter()
            .filter(|o| o.record.collapsed)
            .map(|o| o.record.hop_index)
            .collect(),
        summary,
    })
}

/// Fixed-width comparison table, one row per run, scores as percentages.
pub fn summary_table(docs: &[SummaryDoc]) -> String {
    let name_w = docs.iter().map(|d| d.name.len()).max().unwrap_or(3).max(3);
    let mut out = format!(
        "{:<name_w$}  {:<16}  {:>7}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>9}\n",
        "run",
        "method",
        "hops",
        "overall",
        "IL/ID",
        "OL/ID",
        "IL/OD",
        "OL/OD",
        "F-lang",
        "F-categ",
        "collapsed",
    );
    for d in docs {
        let s = &d.summary;
        out.push_str(&format!(
            "{:<name_w$}  {:<16}  {:>7}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>9}\n",
            d.name,
            d.method,
            format!("{}/{}", d.hops_done, d.hops_total),
            percent(s.overall_f1),
            percent(s.il_id),
            percent_opt(s.ol_id),
            percent_opt(s.il_od),
            percent_opt(s.ol_od),
            percent(s.f_lang),
            percent(s.f_categ),
            d.collapsed_hops.len(),
        ));
    }
    out
}

fn run_name(run_dir: &Path) -> String {
    run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| run_dir.display().to_string())
}

/// Resolve the sequence a config asks for: a pinned file if given, otherwise
/// built from the seed.
fn resolve_sequence(cfg: &RunConfig, registry: &Registry) -> Result<HopSequence> {
    match &cfg.sequence_file {
        Some(path) => {
            let f = File::open(path)
                .map_err(|e| CliError::Config(format!("sequence.file {path}: {e}")))?;
            let seq = HopSequence::read_from(BufReader::new(f), registry)?;
            if seq.len() != cfg.hops {
                return Err(CliError::Config(format!(
                    "sequence.file has {} hops but sequence.hops = {}",
                    seq.len(),
                    cfg.hops
                )));
            }
            Ok(seq)
        }
        None => Ok(build_sequence(
            &registry.lang_ids(),
            &registry.category_ids(),
            cfg.hops,
            derive_seed(cfg.seed, "sequence", 0),
        )?),
    }
}

/// Deterministic synthetic corpus dump for inspection.
pub fn cmd_gen_corpus(cfg: &RunConfig, out_dir: &Path, force: bool) -> Result<String> {
    if out_dir.exists() {
        if out_dir.read_dir()?.next().is_some() && !force {
            return Err(dir_error(
                out_dir,
                "not empty; pass --force to overwrite".to_string(),
            ));
        }
    } else {
        // parent must exist; only the final component is created
        fs::create_dir(out_dir).map_err(|e| dir_error(out_dir, e.to_string()))?;
    }
    let corpus = Corpus::generate(cfg.corpus_spec())?;
    let path = out_dir.join("corpus.txt");
    let mut w = BufWriter::new(File::create(&path)?);
    corpus.write_dump(&mut w)?;
    w.flush()?;
    Ok(format!(
        "wrote {} ({} languages x {} categories, pool {} + test {} each)",
        path.display(),
        cfg.num_langs,
        cfg.num_categories,
        cfg.pool_size,
        cfg.test_size
    ))
}

pub fn cmd_build_sequence(cfg: &RunConfig, out_dir: &Path) -> Result<String> {
    let registry = Registry::synthetic(cfg.num_langs, cfg.num_categories);
    let sequence = resolve_sequence(cfg, &registry)?;
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("sequence.txt");
    let mut w = BufWriter::new(File::create(&path)?);
    sequence.write_to(&mut w, &registry)?;
    w.flush()?;
    Ok(format!("wrote {} ({} hops)", path.display(), sequence.len()))
}

/// Execute (or continue) a run in `run_dir`.
///
/// `explicit` carries a config the caller passed; with `resume` and no
/// explicit config, the run dir's snapshot is used. An explicit config on
/// resume must match the snapshot, so a run can never silently continue
/// under different settings.
pub fn cmd_run(
    explicit: Option<&RunConfig>,
    run_dir: &Path,
    resume: bool,
    force: bool,
) -> Result<RunDoc> {
    let snapshot_path = run_dir.join("config.snapshot");
    let resuming = resume && !force && snapshot_path.exists();
    let cfg: RunConfig = match (explicit, resuming) {
        (Some(c), _) => c.clone(),
        (None, true) => RunConfig::load(&snapshot_path)?,
        (None, false) => RunConfig::default(),
    };
    cfg.validate()?;

    let corpus = Corpus::generate(cfg.corpus_spec())?;
    let registry = &corpus.registry;
    let sequence = resolve_sequence(&cfg, registry)?;

    // the stored snapshot always points at the materialized sequence copy
    let mut snap_cfg = cfg.clone();
    snap_cfg.corpus_seed = Some(cfg.corpus_seed());
    snap_cfg.sequence_file = Some("sequence.txt".to_string());
    let snapshot = snap_cfg.snapshot();

    let occupied = run_dir.exists() && run_dir.read_dir()?.next().is_some();
    let fresh = if occupied {
        if force {
            fs::remove_dir_all(run_dir)?;
            fs::create_dir_all(run_dir)?;
            true
        } else if resume {
            false
        } else {
            return Err(dir_error(
                run_dir,
                "not empty; pass --resume to continue it or --force to start over",
            ));
        }
    } else {
        fs::create_dir_all(run_dir)?;
        true
    };

    let (start_hop, mut outcomes, model) = if fresh {
        fs::write(&snapshot_path, &snapshot)?;
        let mut w = BufWriter::new(File::create(run_dir.join("sequence.txt"))?);
        sequence.write_to(&mut w, registry)?;
        w.flush()?;
        fs::write(run_dir.join("metrics.csv"), CSV_HEADER)?;
        let model = Model::init(cfg.model_config(corpus.vocab.size()), cfg.seed)?;
        (0, Vec::new(), model)
    } else {
        let stored = fs::read_to_string(&snapshot_path)
            .map_err(|_| dir_error(run_dir, "missing config.snapshot; not a run dir"))?;
        if stored != snapshot {
            return Err(dir_error(
                run_dir,
                "config does not match the run's snapshot; refusing to resume",
            ));
        }
        let f = File::open(run_dir.join("sequence.txt"))
            .map_err(|_| dir_error(run_dir, "missing sequence.txt"))?;
        let stored_seq = HopSequence::read_from(BufReader::new(f), registry)?;
        if stored_seq.combos() != sequence.combos() {
            return Err(dir_error(
                run_dir,
                "sequence does not match the run's stored sequence",
            ));
        }
        let prior = scan_completed_hops(run_dir, registry, &sequence)?;
        rewrite_csv(run_dir, registry, &prior)?;
        let model = match prior.last() {
            Some(last) => {
                let path = run_dir.join(&last.record.checkpoint);
                let f = File::open(&path)
                    .map_err(|e| dir_error(run_dir, format!("checkpoint {}: {e}", path.display())))?;
                let (model, _) = load_checkpoint(BufReader::new(f))?;
                if *model.config() != cfg.model_config(corpus.vocab.size()) {
                    return Err(dir_error(run_dir, "checkpoint was trained with a different model shape"));
                }
                model
            }
            None => Model::init(cfg.model_config(corpus.vocab.size()), cfg.seed)?,
        };
        (prior.len(), prior, model)
    };

    let translator = OracleTranslator::new(&corpus.vocab);
    let spec = RunSpec {
        corpus: &corpus,
        translator: &translator,
        sequence: &sequence,
        method: cfg.method,
        train: cfg.train_config(),
        augment: AugmentConfig {
            fraction: cfg.augment_fraction,
            stratified: false,
            seed: 0,
        },
        train_size: cfg.train_size,
    };
    let mut sink = FileSink {
        run_dir: run_dir.to_path_buf(),
        registry,
        run_seed: cfg.seed,
    };
    let (_, fresh_outcomes) = run_sequence(&spec, model, start_hop, &mut sink)?;
    outcomes.extend(fresh_outcomes);

    let doc = build_summary_doc(
        run_name(run_dir),
        cfg.method,
        cfg.strict_ol_od,
        &sequence,
        &outcomes,
    )?;
    let json = serde_json::to_string_pretty(&doc).expect("summary serializes");
    fs::write(run_dir.join("summary.json"), json + "\n")?;
    let rendered = summary_table(std::slice::from_ref(&doc));
    fs::write(run_dir.join("summary.txt"), &rendered)?;
    Ok(RunDoc {
        summary: doc,
        rendered,
    })
}

pub struct LoadedRun {
    pub config: RunConfig,
    pub registry: Registry,
    pub sequence: HopSequence,
    pub outcomes: Vec<HopOutcome>,
}

/// Read a run dir without touching it: snapshot, sequence, completed hops.
pub fn load_run(run_dir: &Path) -> Result<LoadedRun> {
    let config = RunConfig::load(&run_dir.join("config.snapshot"))
        .map_err(|_| dir_error(run_dir, "missing or invalid config.snapshot"))?;
    let registry = Registry::synthetic(config.num_langs, config.num_categories);
    let f = File::open(run_dir.join("sequence.txt"))
        .map_err(|_| dir_error(run_dir, "missing sequence.txt"))?;
    let sequence = HopSequence::read_from(BufReader::new(f), &registry)?;
    let outcomes = scan_completed_hops(run_dir, &registry, &sequence)?;
    if outcomes.is_empty() {
        return Err(dir_error(run_dir, "no completed hops"));
    }
    Ok(LoadedRun {
        config,
        registry,
        sequence,
        outcomes,
    })
}

fn plot_for(loaded: &LoadedRun, name: &str) -> String {
    let registry = &loaded.registry;
    let n = loaded.outcomes.len();
    let hop_labels: Vec<String> = loaded.sequence.combos()[..n]
        .iter()
        .map(|c| {
            format!(
                "{}-{}",
                registry.lang_name(c.lang),
                registry.category_name(c.category)
            )
        })
        .collect();
    let series: Vec<(String, Vec<f64>)> = registry
        .lang_ids()
        .into_iter()
        .enumerate()
        .map(|(li, lang)| {
            let values = loaded
                .outcomes
                .iter()
                .map(|o| {
                    let m = &o.matrix;
                    let mut sum = 0.0;
                    for ci in 0..m.c_cats() {
                        sum += m.at(li, ci);
                    }
                    sum / m.c_cats() as f64
                })
                .collect();
            (registry.lang_name(lang).to_string(), values)
        })
        .collect();
    let collapsed: Vec<bool> = loaded.outcomes.iter().map(|o| o.record.collapsed).collect();
    svg::render_plot(name, &hop_labels, &series, &collapsed)
}

/// Summaries plus per-run hop-wise plots for any number of run dirs.
pub fn cmd_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<String> {
    fs::create_dir_all(out_dir)?;
    let mut docs = Vec::new();
    let mut used_names: Vec<String> = Vec::new();
    for dir in run_dirs {
        let loaded = load_run(dir)?;
        let mut name = run_name(dir);
        if used_names.contains(&name) {
            name = format!("{}-{}", used_names.len(), name);
        }
        used_names.push(name.clone());
        let doc = build_summary_doc(
            name.clone(),
            loaded.config.method,
            loaded.config.strict_ol_od,
            &loaded.sequence,
            &loaded.outcomes,
        )?;
        let plot = plot_for(&loaded, &name);
        fs::write(out_dir.join(format!("{name}.svg")), plot)?;
        docs.push(doc);
    }
    let table = summary_table(&docs);
    fs::write(out_dir.join("report.txt"), &table)?;
    let json = serde_json::to_string_pretty(&docs).expect("docs serialize");
    fs::write(out_dir.join("report.json"), json + "\n")?;
    Ok(table)
}

/// Read a run's summary.json if the run has finished.
pub fn load_summary(run_dir: &Path) -> Result<Option<SummaryDoc>> {
    let path = run_dir.join("summary.json");
    if !path.exists() {
        return Ok(None);
    }
    let mut text = String::new();
    File::open(&path)?.read_to_string(&mut text)?;
    let doc = serde_json::from_str(&text)
        .map_err(|e| dir_error(run_dir, format!("summary.json: {e}")))?;
    Ok(Some(doc))
}
