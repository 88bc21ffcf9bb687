//! Sequential fine-tuning across hops. Each hop samples a fresh training set
//! for its (language, category) combo, optionally mixes in translations,
//! trains for a few epochs with per-epoch validation, keeps the best epoch's
//! parameters, and carries them into the next hop.
//!
//! Training data is built, consumed, and dropped inside the hop that uses it;
//! only checkpoints and scores survive. Everything is seeded so a rerun, or a
//! resume from the last finished hop, reproduces results bit for bit.

use std::fmt;
use std::str::FromStr;

use crate::augment::{augment, AugmentConfig, AugmentError};
use crate::corpus::translate::Translator;
use crate::corpus::{Corpus, CorpusError, Example};
use crate::metrics::{f1_binary_macro, F1Matrix, MetricsError};
use crate::model::{Model, ModelError};
use crate::optim::{LlrdSchedule, OptimError, Optimizer};
use crate::rng::{derive_seed, digest_ids, rng_from};
use crate::sequence::{Combo, HopSequence};
use rand::seq::SliceRandom;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("validation fraction {0} outside (0, 1)")]
    BadValidationFraction(f64),
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("base learning rate {0} must be finite and non-negative")]
    BadBaseLr(f64),
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error("unknown optimizer '{0}'")]
    UnknownOptimizer(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("training set has label {0} only; validation needs both")]
    SingleLabelTrainSet(u8),
    #[error("label {label} has {have} examples, need at least 2 to split")]
    TooFewOfLabel { label: u8, have: usize },
    #[error("persisting hop {hop}: {msg}")]
    Persist { hop: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, TrainerError>;

/// The four sequential fine-tuning variants: with or without translation
/// augmentation, with or without layer-wise learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SeqFt,
    SeqFtLlrd,
    SeqFtTrans,
    SeqFtTransLlrd,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::SeqFt,
        Method::SeqFtLlrd,
        Method::SeqFtTrans,
        Method::SeqFtTransLlrd,
    ];

    pub fn uses_translation(self) -> bool {
        matches!(self, Method::SeqFtTrans | Method::SeqFtTransLlrd)
    }

    pub fn uses_llrd(self) -> bool {
        matches!(self, Method::SeqFtLlrd | Method::SeqFtTransLlrd)
    }

    /// Non-LLRD variants always train with a flat schedule, whatever the
    /// configured zeta says.
    pub fn effective_zeta(self, configured: f64) -> f64 {
        if self.uses_llrd() {
            configured
        } else {
            1.0
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::SeqFt => "seqft",
            Method::SeqFtLlrd => "seqft-llrd",
            Method::SeqFtTrans => "seqft-trans",
            Method::SeqFtTransLlrd => "seqft-trans-llrd",
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = TrainerError;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "seqft" => Ok(Method::SeqFt),
            "seqft-llrd" => Ok(Method::SeqFtLlrd),
            "seqft-trans" => Ok(Method::SeqFtTrans),
            "seqft-trans-llrd" => Ok(Method::SeqFtTransLlrd),
            other => Err(TrainerError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    AdamW,
    PlainSgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::PlainSgd => "plain-sgd",
        };
        f.write_str(s)
    }
}

impl FromStr for OptimizerKind {
    type Err = TrainerError;

    fn from_str(s: &str) -> Result<OptimizerKind> {
        match s {
            "adamw" => Ok(OptimizerKind::AdamW),
            "plain-sgd" => Ok(OptimizerKind::PlainSgd),
            other => Err(TrainerError::UnknownOptimizer(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub zeta: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            base_lr: 2e-5,
            zeta: 1.0,
            batch_size: 16,
            validation_fraction: 0.2,
            optimizer: OptimizerKind::AdamW,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TrainerError::ZeroEpochs);
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(TrainerError::BadValidationFraction(self.validation_fraction));
        }
        if self.batch_size == 0 {
            return Err(TrainerError::ZeroBatch);
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(TrainerError::BadBaseLr(self.base_lr));
        }
        Ok(())
    }
}

/// What happened during one hop, minus the raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct HopRecord {
    pub hop_index: usize,
    pub combo: Combo,
    pub method: Method,
    /// 1-based epoch whose snapshot was kept.
    pub chosen_epoch: usize,
    pub val_f1: f64,
    /// Digest of the sampled training example ids before augmentation, for
    /// checking that methods saw the same data.
    pub data_digest: u64,
    /// Set when at least 95% of all test predictions share one label.
    pub collapsed: bool,
    /// Where the sink stored the hop's checkpoint, if anywhere.
    pub checkpoint: String,
}

#[derive(Debug, Clone)]
pub struct HopOutcome {
    pub record: HopRecord,
    pub matrix: F1Matrix,
}

/// Receives each hop's record, chosen model, and F1 matrix as soon as the hop
/// finishes, before the next one starts. May write `record.checkpoint`.
pub trait HopSink {
    fn persist(&mut self, record: &mut HopRecord, model: &Model, matrix: &F1Matrix) -> Result<()>;
}

/// Sink for callers that only want the returned outcomes.
pub struct NullSink;

impl HopSink for NullSink {
    fn persist(&mut self, _: &mut HopRecord, _: &Model, _: &F1Matrix) -> Result<()> {
        Ok(())
    }
}

fn stratified_split(
    mut set: Vec<Example>,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if set.is_empty() {
        return Err(TrainerError::EmptyTrainSet);
    }
    let mut by_label: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, ex) in set.iter().enumerate() {
        by_label[ex.label as usize].push(i);
    }
    if by_label[0].is_empty() {
        return Err(TrainerError::SingleLabelTrainSet(1));
    }
    if by_label[1].is_empty() {
        return Err(TrainerError::SingleLabelTrainSet(0));
    }

    let mut rng = rng_from(derive_seed(seed, "split", 0));
    let mut val_marks = vec![false; set.len()];
    for (label, indices) in by_label.iter_mut().enumerate() {
        let n = indices.len();
        if n < 2 {
            return Err(TrainerError::TooFewOfLabel {
                label: label as u8,
                have: n,
            });
        }
        let want = (validation_fraction * n as f64).round() as usize;
        let take = want.clamp(1, n - 1);
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(take) {
            val_marks[i] = true;
        }
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, ex) in set.drain(..).enumerate() {
        if val_marks[i] {
            val.push(ex);
        } else {
            train.push(ex);
        }
    }
    Ok((train, val))
}

fn validation_f1(model: &Model, val: &[Example]) -> Result<f64> {
    let refs: Vec<&Example> = val.iter().collect();
    let preds = model.predict_batch(&refs)?;
    let pred_labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
    let golds: Vec<u8> = val.iter().map(|ex| ex.label).collect();
    Ok(f1_binary_macro(&pred_labels, &golds)?)
}

/// Fine-tune over one hop's training set and return the parameters from the
/// best validation epoch along with the bookkeeping for the hop record.
///
/// The set is consumed here; nothing of it survives the call.
pub fn run_hop(
    model: Model,
    train_set: Vec<Example>,
    config: &TrainConfig,
    hop_seed: u64,
) -> Result<(Model, usize, f64)> {
    config.validate()?;
    let (train, val) = stratified_split(train_set, config.validation_fraction, hop_seed)?;

    let specs = model.param_specs();
    let mut optimizer = match config.optimizer {
        OptimizerKind::AdamW => Optimizer::adamw(specs),
        OptimizerKind::PlainSgd => Optimizer::plain_sgd(specs),
    };
    let rates: Vec<f64> = if config.base_lr > 0.0 {
        LlrdSchedule::new(config.base_lr, config.zeta, model.num_groups())?
            .rates()
            .to_vec()
    } else {
        vec![0.0; model.num_groups()]
    };

    let mut model = model;
    let mut best: Option<(Model, usize, f64)> = None;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = rng_from(derive_seed(hop_seed, "epoch", epoch as u64));
        order.shuffle(&mut rng);
        for batch_indices in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = batch_indices.iter().map(|&i| &train[i]).collect();
            let pass = model.forward_loss(&batch)?;
            let grads = pass.grads()?;
            optimizer.step_with_rates(model.params_mut(), &grads, &rates)?;
        }
        let f1 = validation_f1(&model, &val)?;
        let improves = match &best {
            None => true,
            Some((_, _, best_f1)) => f1 > *best_f1,
        };
        if improves {
            best = Some((model.clone(), epoch, f1));
        }
    }
    let (chosen_model, chosen_epoch, val_f1) = best.expect("epochs >= 1");
    Ok((chosen_model, chosen_epoch, val_f1))
}

/// Evaluate a model on every (language, category) test set of the corpus.
pub fn evaluate_all(
    model: &Model,
    corpus: &Corpus,
    hop_index: usize,
    combo: Combo,
) -> Result<(F1Matrix, bool)> {
    let k = corpus.registry.num_langs();
    let c = corpus.registry.num_categories();
    let mut values = Vec::with_capacity(k * c);
    let mut label_counts = [0usize; 2];
    let mut total = 0usize;
    for lang in corpus.registry.lang_ids() {
        for cat in corpus.registry.category_ids() {
            let set = corpus.test_set(lang, cat);
            let refs: Vec<&Example> = set.iter().collect();
            let preds = model.predict_batch(&refs)?;
            let pred_labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
            for &l in &pred_labels {
                label_counts[l as usize] += 1;
            }
            total += pred_labels.len();
            let golds: Vec<u8> = set.iter().map(|ex| ex.label).collect();
            values.push(f1_binary_macro(&pred_labels, &golds)?);
        }
    }
    let matrix = F1Matrix::new(hop_index, combo, k, c, values)?;
    let collapsed = is_collapsed(label_counts, total);
    Ok((matrix, collapsed))
}

fn is_collapsed(label_counts: [usize; 2], total: usize) -> bool {
    let dominant = label_counts[0].max(label_counts[1]);
    // integer form of dominant/total >= 0.95
    total > 0 && dominant * 20 >= total * 19
}

pub struct RunSpec<'a> {
    pub corpus: &'a Corpus,
    pub translator: &'a dyn Translator,
    pub sequence: &'a HopSequence,
    pub method: Method,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub train_size: usize,
}

/// Run hops `start_hop..sequence.len()`, threading the model through and
/// handing every finished hop to the sink before the next one starts.
/// Outcomes cover only the hops executed here; on resume the caller supplies
/// the last finished hop's checkpoint as `model`.
pub fn run_sequence(
    spec: &RunSpec,
    model: Model,
    start_hop: usize,
    sink: &mut dyn HopSink,
) -> Result<(Model, Vec<HopOutcome>)> {
    spec.train.validate()?;
    let run_seed = spec.train.seed;
    let langs = spec.corpus.registry.lang_ids();
    let mut model = model;
    let mut outcomes = Vec::new();
    for (i, &combo) in spec.sequence.combos().iter().enumerate().skip(start_hop) {
        let hop = i as u64;
        let sampled = spec.corpus.make_training_set(
            combo.lang,
            combo.category,
            spec.train_size,
            derive_seed(run_seed, "sample", hop),
        )?;
        let mut ids: Vec<u64> = sampled.iter().map(|ex| ex.id).collect();
        ids.sort_unstable();
        let data_digest = digest_ids(&ids);

        let train_set = if spec.method.uses_translation() {
            let cfg = AugmentConfig {
                seed: derive_seed(run_seed, "augment", hop),
                ..spec.augment
            };
            augment(sampled, &langs, combo.lang, &cfg, spec.translator)?
        } else {
            sampled
        };

        let hop_cfg = TrainConfig {
            zeta: spec.method.effective_zeta(spec.train.zeta),
            ..spec.train
        };
        let (next_model, chosen_epoch, val_f1) =
            run_hop(model, train_set, &hop_cfg, derive_seed(run_seed, "hop", hop))?;
        model = next_model;

        let (matrix, collapsed) = evaluate_all(&model, spec.corpus, i, combo)?;
        let mut record = HopRecord {
            hop_index: i,
            combo,
            method: spec.method,
            chosen_epoch,
            val_f1,
            data_digest,
            collapsed,
            checkpoint: String::new(),
        };
        sink.persist(&mut record, &model, &matrix)?;
        outcomes.push(HopOutcome { record, matrix });
    }
    Ok((model, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::translate::OracleTranslator;
    use crate::corpus::{CategoryId, CorpusSpec, LangId};
    use crate::model::ModelConfig;
    use crate::sequence::build_sequence;

    fn tiny_corpus() -> Corpus {
        Corpus::generate(CorpusSpec {
            num_langs: 2,
            num_categories: 2,
            sentiment_tokens: 2,
            topic_tokens: 2,
            filler_tokens: 4,
            min_len: 4,
            max_len: 6,
            pool_size: 60,
            test_size: 20,
            label_noise: 0.0,
            seed: 7,
        })
        .unwrap()
    }

    fn tiny_model(corpus: &Corpus, seed: u64) -> Model {
        Model::init(
            ModelConfig {
                vocab_size: corpus.vocab.size(),
                embed_dim: 8,
                num_blocks: 1,
                num_heads: 2,
                ffn_dim: 16,
                max_seq_len: 8,
            },
            seed,
        )
        .unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            base_lr: 0.01,
            zeta: 1.0,
            batch_size: 8,
            validation_fraction: 0.2,
            optimizer: OptimizerKind::AdamW,
            seed: 11,
        }
    }

    fn params_bits(model: &Model) -> Vec<Vec<u64>> {
        model
            .params()
            .iter()
            .map(|t| t.data().iter().map(|v| v.to_bits()).collect())
            .collect()
    }

    fn spec_for<'a>(
        corpus: &'a Corpus,
        translator: &'a OracleTranslator<'a>,
        sequence: &'a HopSequence,
        method: Method,
        train: TrainConfig,
    ) -> RunSpec<'a> {
        RunSpec {
            corpus,
            translator,
            sequence,
            method,
            train,
            augment: AugmentConfig {
                fraction: 0.2,
                stratified: false,
                seed: 0,
            },
            train_size: 20,
        }
    }

    #[test]
    fn method_and_optimizer_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("seqft-LLRD".parse::<Method>().is_err());
        for o in [OptimizerKind::AdamW, OptimizerKind::PlainSgd] {
            assert_eq!(o.to_string().parse::<OptimizerKind>().unwrap(), o);
        }
        assert_eq!(Method::SeqFt.effective_zeta(0.75), 1.0);
        assert_eq!(Method::SeqFtTransLlrd.effective_zeta(0.75), 0.75);
        assert!(!Method::SeqFtLlrd.uses_translation());
        assert!(Method::SeqFtTrans.uses_translation());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let corpus = tiny_corpus();
        let model = tiny_model(&corpus, 1);
        let before = params_bits(&model);
        let train = corpus
            .make_training_set(LangId(0), CategoryId(0), 20, 3)
            .unwrap();
        let cfg = TrainConfig {
            base_lr: 0.0,
            optimizer: OptimizerKind::PlainSgd,
            ..quick_config()
        };
        let (out, chosen, _) = run_hop(model, train, &cfg, 5).unwrap();
        assert_eq!(params_bits(&out), before);
        assert_eq!(chosen, 1, "equal scores tie toward the earliest epoch");
    }

    #[test]
    fn single_epoch_is_always_chosen() {
        let corpus = tiny_corpus();
        let model = tiny_model(&corpus, 1);
        let train = corpus
            .make_training_set(LangId(0), CategoryId(0), 20, 3)
            .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..quick_config()
        };
        let (_, chosen, val_f1) = run_hop(model, train, &cfg, 5).unwrap();
        assert_eq!(chosen, 1);
        assert!((0.0..=1.0).contains(&val_f1));
    }

    #[test]
    fn run_hop_is_deterministic() {
        let corpus = tiny_corpus();
        let cfg = quick_config();
        let train = corpus
            .make_training_set(LangId(1), CategoryId(0), 20, 9)
            .unwrap();
        let (m1, e1, f1) = run_hop(tiny_model(&corpus, 2), train.clone(), &cfg, 13).unwrap();
        let (m2, e2, f2) = run_hop(tiny_model(&corpus, 2), train, &cfg, 13).unwrap();
        assert_eq!(params_bits(&m1), params_bits(&m2));
        assert_eq!(e1, e2);
        assert_eq!(f1.to_bits(), f2.to_bits());
    }

    #[test]
    fn stratified_split_counts_follow_the_fraction() {
        let corpus = tiny_corpus();
        let train = corpus
            .make_training_set(LangId(0), CategoryId(1), 20, 3)
            .unwrap();
        let (tr, va) = stratified_split(train, 0.2, 99).unwrap();
        assert_eq!(va.len(), 4);
        assert_eq!(tr.len(), 16);
        for split in [&tr, &va] {
            let pos = split.iter().filter(|e| e.label == 1).count();
            assert_eq!(pos * 2, split.len(), "both splits stay balanced");
        }
    }

    #[test]
    fn single_label_training_set_is_rejected() {
        let corpus = tiny_corpus();
        let mut train = corpus
            .make_training_set(LangId(0), CategoryId(0), 20, 3)
            .unwrap();
        train.retain(|e| e.label == 1);
        let err = run_hop(tiny_model(&corpus, 1), train, &quick_config(), 5).unwrap_err();
        assert!(matches!(err, TrainerError::SingleLabelTrainSet(1)));

        let err = stratified_split(Vec::new(), 0.2, 0).unwrap_err();
        assert!(matches!(err, TrainerError::EmptyTrainSet));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let bad = [
            TrainConfig {
                epochs: 0,
                ..quick_config()
            },
            TrainConfig {
                validation_fraction: 0.0,
                ..quick_config()
            },
            TrainConfig {
                validation_fraction: 1.0,
                ..quick_config()
            },
            TrainConfig {
                batch_size: 0,
                ..quick_config()
            },
            TrainConfig {
                base_lr: -1.0,
                ..quick_config()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        assert!(quick_config().validate().is_ok());
    }

    #[test]
    fn empty_sequence_changes_nothing() {
        let corpus = tiny_corpus();
        let translator = OracleTranslator::new(&corpus.vocab);
        let sequence =
            build_sequence(&corpus.registry.lang_ids(), &corpus.registry.category_ids(), 0, 1)
                .unwrap();
        let spec = spec_for(&corpus, &translator, &sequence, Method::SeqFt, quick_config());
        let model = tiny_model(&corpus, 3);
        let before = params_bits(&model);
        let (out, outcomes) = run_sequence(&spec, model, 0, &mut NullSink).unwrap();
        assert!(outcomes.is_empty());
        assert_eq!(params_bits(&out), before);
    }

    #[test]
    fn run_sequence_is_deterministic() {
        let corpus = tiny_corpus();
        let translator = OracleTranslator::new(&corpus.vocab);
        let sequence =
            build_sequence(&corpus.registry.lang_ids(), &corpus.registry.category_ids(), 3, 21)
                .unwrap();
        let spec = spec_for(
            &corpus,
            &translator,
            &sequence,
            Method::SeqFtTransLlrd,
            TrainConfig {
                zeta: 0.75,
                ..quick_config()
            },
        );
        let (m1, o1) = run_sequence(&spec, tiny_model(&corpus, 4), 0, &mut NullSink).unwrap();
        let (m2, o2) = run_sequence(&spec, tiny_model(&corpus, 4), 0, &mut NullSink).unwrap();
        assert_eq!(params_bits(&m1), params_bits(&m2));
        assert_eq!(o1.len(), 3);
        for (a, b) in o1.iter().zip(&o2) {
            assert_eq!(a.record, b.record);
            assert_eq!(a.matrix, b.matrix);
        }
    }

    #[test]
    fn zeta_one_makes_llrd_variants_identical_to_plain_ones() {
        let corpus = tiny_corpus();
        let translator = OracleTranslator::new(&corpus.vocab);
        let sequence =
            build_sequence(&corpus.registry.lang_ids(), &corpus.registry.category_ids(), 2, 5)
                .unwrap();
        let cfg = TrainConfig {
            zeta: 1.0,
            ..quick_config()
        };
        let plain = spec_for(&corpus, &translator, &sequence, Method::SeqFt, cfg);
        let llrd = spec_for(&corpus, &translator, &sequence, Method::SeqFtLlrd, cfg);
        let (m1, o1) = run_sequence(&plain, tiny_model(&corpus, 6), 0, &mut NullSink).unwrap();
        let (m2, o2) = run_sequence(&llrd, tiny_model(&corpus, 6), 0, &mut NullSink).unwrap();
        assert_eq!(params_bits(&m1), params_bits(&m2));
        for (a, b) in o1.iter().zip(&o2) {
            assert_eq!(a.matrix, b.matrix);
            assert_eq!(a.record.chosen_epoch, b.record.chosen_epoch);
            assert_eq!(a.record.val_f1.to_bits(), b.record.val_f1.to_bits());
        }
    }

    #[test]
    fn methods_draw_identical_training_samples() {
        let corpus = tiny_corpus();
        let translator = OracleTranslator::new(&corpus.vocab);
        let sequence =
            build_sequence(&corpus.registry.lang_ids(), &corpus.registry.category_ids(), 3, 31)
                .unwrap();
        let mut digests: Vec<Vec<u64>> = Vec::new();
        for method in Method::ALL {
            let spec = spec_for(&corpus, &translator, &sequence, method, quick_config());
            let (_, outcomes) = run_sequence(&spec, tiny_model(&corpus, 8), 0, &mut NullSink)
                .unwrap();
            digests.push(outcomes.iter().map(|o| o.record.data_digest).collect());
        }
        for later in &digests[1..] {
            assert_eq!(later, &digests[0]);
        }
    }

    #[test]
    fn resumed_run_reproduces_the_remaining_hops() {
        let corpus = tiny_corpus();
        let translator = OracleTranslator::new(&corpus.vocab);
        let sequence =
            build_sequence(&corpus.registry.lang_ids(), &corpus.registry.category_ids(), 3, 17)
                .unwrap();
        let spec = spec_for(&corpus, &translator, &sequence, Method::SeqFtTrans, quick_config());

        struct Keep {
            models: Vec<Model>,
        }
        impl HopSink for Keep {
            fn persist(&mut self, record: &mut HopRecord, model: &Model, _: &F1Matrix) -> Result<()> {
                record.checkpoint = format!("kept:{}", record.hop_index);
                self.models.push(model.clone());
                Ok(())
            }
        }

        let mut keep = Keep { models: Vec::new() };
        let (final_model, full) = run_sequence(&spec, tiny_model(&corpus, 9), 0, &mut keep).unwrap();
        assert_eq!(full[0].record.checkpoint, "kept:0");

        // hop 1's input is hop 0's chosen snapshot, carried over bit-exactly,
        // so resuming from it must reproduce hops 1 and 2 exactly
        let resumed_start = keep.models[0].clone();
        let (resumed_model, tail) = run_sequence(&spec, resumed_start, 1, &mut NullSink).unwrap();
        assert_eq!(tail.len(), 2);
        assert_eq!(params_bits(&resumed_model), params_bits(&final_model));
        for (a, b) in tail.iter().zip(&full[1..]) {
            assert_eq!(a.matrix, b.matrix);
            assert_eq!(a.record.chosen_epoch, b.record.chosen_epoch);
            assert_eq!(a.record.data_digest, b.record.data_digest);
        }
    }

    #[test]
    fn collapse_threshold_sits_at_95_percent() {
        assert!(is_collapsed([95, 5], 100));
        assert!(!is_collapsed([94, 6], 100));
        assert!(is_collapsed([0, 100], 100));
        assert!(is_collapsed([19, 1], 20));
        assert!(!is_collapsed([18, 2], 20));
        assert!(!is_collapsed([0, 0], 0));
        assert!(!is_collapsed([10, 10], 20));
    }

    #[test]
    fn translation_variants_train_on_augmented_sets() {
        // with fraction 0.5 on a 2-language grid, 10 of 20 examples gain one
        // translation each; records and matrices must still line up
        let corpus = tiny_corpus();
        let translator = OracleTranslator::new(&corpus.vocab);
        let sequence =
            build_sequence(&corpus.registry.lang_ids(), &corpus.registry.category_ids(), 1, 41)
                .unwrap();
        let mut spec = spec_for(&corpus, &translator, &sequence, Method::SeqFtTrans, quick_config());
        spec.augment.fraction = 0.5;
        let (_, outcomes) = run_sequence(&spec, tiny_model(&corpus, 10), 0, &mut NullSink).unwrap();
        assert_eq!(outcomes.len(), 1);
        let rec = &outcomes[0].record;
        assert_eq!(rec.hop_index, 0);
        assert_eq!(rec.combo, sequence.combos()[0]);
        assert_eq!(rec.method, Method::SeqFtTrans);
        assert!((1..=2).contains(&rec.chosen_epoch));
    }
}
