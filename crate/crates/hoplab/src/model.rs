//! Attention-based text classifier with an explicit bottom-to-top group
//! stack (embedding, blocks, head) so per-depth learning rates can address
//! layers directly.
//!
//! Parameters live in one flat vector; `param_infos` carries each tensor's
//! group and weight-decay flag in the same order, which is also the leaf
//! order used on the tape, so gradients line up with optimizer state without
//! any name lookups.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::corpus::Example;
use crate::numerics::{NumericsError, Tape, Tensor, ValueId};
use crate::optim::ParamSpec;
use crate::rng::{derive_seed, rng_from};
use thiserror::Error;

pub const NUM_CLASSES: usize = 2;
pub const PAD_ID: u32 = 0;

const ATTENTION_MASK: f64 = -1e30;
const BLOCK_PARAMS: usize = 16;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config invalid: {0}")]
    BadConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("example has no non-padding tokens")]
    NoRealTokens,
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: 32,
            num_blocks: 2,
            num_heads: 2,
            ffn_dim: 64,
            max_seq_len: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(ModelError::BadConfig(format!(
                "vocab_size {} too small",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.num_blocks == 0 || self.ffn_dim == 0 || self.max_seq_len == 0
        {
            return Err(ModelError::BadConfig(
                "dimensions must be positive".to_string(),
            ));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(ModelError::BadConfig(format!(
                "num_heads {} must divide embed_dim {}",
                self.num_heads, self.embed_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ParamInfo {
    pub name: String,
    pub group: usize,
    pub decay: bool,
}

/// View of one depth group: its name, position in the stack, and the indices
/// of its parameters in `Model::params`.
#[derive(Debug)]
pub struct GroupView<'a> {
    pub name: &'a str,
    pub depth_index: usize,
    pub param_indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    group_names: Vec<String>,
    infos: Vec<ParamInfo>,
    tensors: Vec<Tensor>,
}

/// Predicted label with its class probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub probs: [f64; 2],
}

impl Model {
    /// Fresh model with weights uniform in ±1/sqrt(fan_in), gains 1, biases 0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        let mut model = Model::zeroed(config)?;
        let mut rng = rng_from(derive_seed(seed, "model-init", 0));
        for (info, tensor) in model.infos.iter().zip(model.tensors.iter_mut()) {
            if info.name.ends_with("_g") {
                tensor.data_mut().fill(1.0);
            } else if tensor.shape().len() == 2 {
                let bound = 1.0 / libm::sqrt(tensor.shape()[0] as f64);
                for v in tensor.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            // 1-D biases stay zero
        }
        Ok(model)
    }

    /// Structure with all-zero tensors; used by init and checkpoint loading.
    fn zeroed(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let d = config.embed_dim;
        let mut group_names = vec!["embedding".to_string()];
        let mut infos = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, group: usize, decay: bool, shape: Vec<usize>| {
            infos.push(ParamInfo { name, group, decay });
            tensors.push(Tensor::zeros(shape));
        };

        push("embedding.token_table".into(), 0, true, vec![config.vocab_size, d]);
        push("embedding.pos_table".into(), 0, true, vec![config.max_seq_len, d]);

        for b in 1..=config.num_blocks {
            group_names.push(format!("block{b}"));
            let g = b;
            push(format!("block{b}.wq"), g, true, vec![d, d]);
            push(format!("block{b}.bq"), g, false, vec![d]);
            push(format!("block{b}.wk"), g, true, vec![d, d]);
            push(format!("block{b}.bk"), g, false, vec![d]);
            push(format!("block{b}.wv"), g, true, vec![d, d]);
            push(format!("block{b}.bv"), g, false, vec![d]);
            push(format!("block{b}.wo"), g, true, vec![d, d]);
            push(format!("block{b}.bo"), g, false, vec![d]);
            push(format!("block{b}.ln1_g"), g, false, vec![d]);
            push(format!("block{b}.ln1_b"), g, false, vec![d]);
            push(format!("block{b}.w1"), g, true, vec![d, config.ffn_dim]);
            push(format!("block{b}.b1"), g, false, vec![config.ffn_dim]);
            push(format!("block{b}.w2"), g, true, vec![config.ffn_dim, d]);
            push(format!("block{b}.b2"), g, false, vec![d]);
            push(format!("block{b}.ln2_g"), g, false, vec![d]);
            push(format!("block{b}.ln2_b"), g, false, vec![d]);
        }

        group_names.push("head".to_string());
        let head = config.num_blocks + 1;
        push("head.w".into(), head, true, vec![d, NUM_CLASSES]);
        push("head.b".into(), head, false, vec![NUM_CLASSES]);

        Ok(Model {
            config,
            group_names,
            infos,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn param_infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn num_groups(&self) -> usize {
        self.group_names.len()
    }

    /// Per-parameter group assignment and decay flags for the optimizer, in
    /// the same order as `params`.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.infos
            .iter()
            .map(|i| ParamSpec {
                group: i.group,
                decay: i.decay,
            })
            .collect()
    }

    /// The bottom-to-top partition of parameters into depth groups.
    pub fn layer_groups(&self) -> Vec<GroupView<'_>> {
        self.group_names
            .iter()
            .enumerate()
            .map(|(g, name)| GroupView {
                name,
                depth_index: g,
                param_indices: self
                    .infos
                    .iter()
                    .enumerate()
                    .filter(|(_, i)| i.group == g)
                    .map(|(i, _)| i)
                    .collect(),
            })
            .collect()
    }

    // flat-layout index helpers
    fn idx_block(&self, block: usize, j: usize) -> usize {
        2 + block * BLOCK_PARAMS + j
    }

    fn idx_head_w(&self) -> usize {
        2 + self.config.num_blocks * BLOCK_PARAMS
    }

    /// Record the whole forward computation for a batch on a fresh tape and
    /// return (tape, logits id, parameter leaf ids in flat order).
    fn forward_logits(&self, seqs: &[&[u32]]) -> Result<(Tape, ValueId, Vec<ValueId>)> {
        if seqs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let cfg = &self.config;
        let d = cfg.embed_dim;
        let dh = d / cfg.num_heads;

        let mut tape = Tape::new();
        let param_ids: Vec<ValueId> = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<crate::numerics::Result<_>>()?;

        // constant per-head column selectors S_h [d, dh] and their transposes
        let mut sel = Vec::with_capacity(cfg.num_heads);
        let mut sel_t = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let mut s = Tensor::zeros(vec![d, dh]);
            for j in 0..dh {
                s.data_mut()[(h * dh + j) * dh + j] = 1.0;
            }
            let mut st = Tensor::zeros(vec![dh, d]);
            for j in 0..dh {
                st.data_mut()[j * d + h * dh + j] = 1.0;
            }
            sel.push(tape.leaf(s)?);
            sel_t.push(tape.leaf(st)?);
        }

        let mut pooled_rows = Vec::with_capacity(seqs.len());
        for seq in seqs {
            let row = self.encode(&mut tape, &param_ids, &sel, &sel_t, seq)?;
            pooled_rows.push(row);
        }
        let pooled = tape.concat_rows(&pooled_rows)?;
        let logits_raw = tape.matmul(pooled, param_ids[self.idx_head_w()])?;
        let logits = tape.add_bias_row(logits_raw, param_ids[self.idx_head_w() + 1])?;
        Ok((tape, logits, param_ids))
    }

    /// One example through the stack: embeddings, blocks, mean pooling over
    /// non-pad positions. Returns a [1, embed_dim] row.
    fn encode(
        &self,
        tape: &mut Tape,
        params: &[ValueId],
        sel: &[ValueId],
        sel_t: &[ValueId],
        seq: &[u32],
    ) -> Result<ValueId> {
        let cfg = &self.config;
        let seq = &seq[..seq.len().min(cfg.max_seq_len)];
        if seq.is_empty() {
            return Err(ModelError::NoRealTokens);
        }
        for &t in seq {
            if t as usize >= cfg.vocab_size {
                return Err(ModelError::TokenOutOfRange {
                    id: t,
                    vocab: cfg.vocab_size,
                });
            }
        }
        let real: Vec<bool> = seq.iter().map(|&t| t != PAD_ID).collect();
        let real_count = real.iter().filter(|&&r| r).count();
        if real_count == 0 {
            return Err(ModelError::NoRealTokens);
        }
        let n = seq.len();

        let ids: Vec<usize> = seq.iter().map(|&t| t as usize).collect();
        let tok = tape.embedding_gather(params[0], &ids)?;
        let pos_ids: Vec<usize> = (0..n).collect();
        let pos = tape.embedding_gather(params[1], &pos_ids)?;
        let mut x = tape.add(tok, pos)?;

        // additive mask: pad keys get a huge negative score so their
        // softmax weight underflows to exactly zero
        let mask = if real_count < n {
            let mut m = Tensor::zeros(vec![n, n]);
            for i in 0..n {
                for (j, &is_real) in real.iter().enumerate() {
                    if !is_real {
                        m.data_mut()[i * n + j] = ATTENTION_MASK;
                    }
                }
            }
            Some(tape.leaf(m)?)
        } else {
            None
        };

        let dh = cfg.embed_dim / cfg.num_heads;
        let inv_sqrt_dh = 1.0 / libm::sqrt(dh as f64);
        for b in 0..cfg.num_blocks {
            let p = |j: usize| params[self.idx_block(b, j)];
            let q = tape.matmul(x, p(0))?;
            let q = tape.add_bias_row(q, p(1))?;
            let k = tape.matmul(x, p(2))?;
            let k = tape.add_bias_row(k, p(3))?;
            let v = tape.matmul(x, p(4))?;
            let v = tape.add_bias_row(v, p(5))?;

            let mut merged: Option<ValueId> = None;
            for h in 0..cfg.num_heads {
                let qh = tape.matmul(q, sel[h])?;
                let kh = tape.matmul(k, sel[h])?;
                let vh = tape.matmul(v, sel[h])?;
                let kht = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kht)?;
                let mut scores = tape.scale(scores, inv_sqrt_dh)?;
                if let Some(m) = mask {
                    scores = tape.add(scores, m)?;
                }
                let attn = tape.row_softmax(scores)?;
                let oh = tape.matmul(attn, vh)?;
                let placed = tape.matmul(oh, sel_t[h])?;
                merged = Some(match merged {
                    None => placed,
                    Some(acc) => tape.add(acc, placed)?,
                });
            }
            let merged = merged.expect("at least one head");
            let proj = tape.matmul(merged, p(6))?;
            let proj = tape.add_bias_row(proj, p(7))?;
            let res = tape.add(x, proj)?;
            x = tape.layer_norm(res, p(8), p(9))?;

            let h1 = tape.matmul(x, p(10))?;
            let h1 = tape.add_bias_row(h1, p(11))?;
            let h1 = tape.gelu(h1)?;
            let h2 = tape.matmul(h1, p(12))?;
            let h2 = tape.add_bias_row(h2, p(13))?;
            let res = tape.add(x, h2)?;
            x = tape.layer_norm(res, p(14), p(15))?;
        }

        // mean over real positions as a constant-row matmul
        let mut pool = Tensor::zeros(vec![1, n]);
        for (j, &r) in real.iter().enumerate() {
            if r {
                pool.data_mut()[j] = 1.0 / real_count as f64;
            }
        }
        let pool = tape.leaf(pool)?;
        Ok(tape.matmul(pool, x)?)
    }

    /// Mean cross-entropy over a labeled batch, with the recorded tape for
    /// gradient extraction.
    pub fn forward_loss(&self, batch: &[&Example]) -> Result<ForwardPass> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let seqs: Vec<&[u32]> = batch.iter().map(|e| e.tokens.as_slice()).collect();
        let labels: Vec<u8> = batch.iter().map(|e| e.label).collect();
        let (mut tape, logits, param_ids) = self.forward_logits(&seqs)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        Ok(ForwardPass {
            tape,
            loss,
            logits,
            param_ids,
        })
    }

    pub fn predict_batch(&self, batch: &[&Example]) -> Result<Vec<Prediction>> {
        let seqs: Vec<&[u32]> = batch.iter().map(|e| e.tokens.as_slice()).collect();
        let (tape, logits, _) = self.forward_logits(&seqs)?;
        let t = tape.value(logits);
        let mut out = Vec::with_capacity(batch.len());
        for r in 0..t.rows() {
            let z0 = t.at(r, 0);
            let z1 = t.at(r, 1);
            let m = z0.max(z1);
            let e0 = libm::exp(z0 - m);
            let e1 = libm::exp(z1 - m);
            let sum = e0 + e1;
            let probs = [e0 / sum, e1 / sum];
            out.push(Prediction {
                label: u8::from(probs[1] > probs[0]),
                probs,
            });
        }
        Ok(out)
    }

    pub fn predict(&self, example: &Example) -> Result<Prediction> {
        Ok(self.predict_batch(&[example])?[0])
    }
}

/// A recorded batch forward: loss, logits, and the parameter leaves needed
/// to pull gradients off the tape.
pub struct ForwardPass {
    tape: Tape,
    loss: ValueId,
    logits: ValueId,
    param_ids: Vec<ValueId>,
}

impl ForwardPass {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).item()
    }

    pub fn logits_value(&self) -> &Tensor {
        self.tape.value(self.logits)
    }

    /// Gradients in flat parameter order.
    pub fn grads(&self) -> Result<Vec<Tensor>> {
        Ok(self.tape.grad(self.loss, &self.param_ids)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub hop: u64,
    pub epoch: u64,
    pub val_f1: f64,
    pub seed: u64,
}

/// Text checkpoint: config and metadata as JSON lines, tensors as hex-encoded
/// f64 bit patterns so a load reproduces every parameter bit-exactly.
pub fn save_checkpoint<W: Write>(w: &mut W, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    writeln!(w, "hoplab-checkpoint v1")?;
    let cfg = serde_json::to_string(&model.config).expect("config serializes");
    writeln!(w, "config {cfg}")?;
    let meta = serde_json::to_string(meta).expect("meta serializes");
    writeln!(w, "meta {meta}")?;
    for (info, tensor) in model.infos.iter().zip(&model.tensors) {
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        write!(w, "tensor {} {}", info.name, dims.join(","))?;
        for v in tensor.data() {
            write!(w, " {:016x}", v.to_bits())?;
        }
        writeln!(w)?;
    }
    writeln!(w, "end")?;
    Ok(())
}

pub fn load_checkpoint<R: BufRead>(r: R) -> Result<(Model, CheckpointMeta)> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| ModelError::BadCheckpoint("unexpected end of file".to_string()))?
            .map_err(ModelError::Io)
    };
    let header = next()?;
    if header != "hoplab-checkpoint v1" {
        return Err(ModelError::BadCheckpoint(format!(
            "bad header {header:?}"
        )));
    }
    let config_line = next()?;
    let config: ModelConfig = config_line
        .strip_prefix("config ")
        .ok_or_else(|| ModelError::BadCheckpoint("missing config line".to_string()))
        .and_then(|s| {
            serde_json::from_str(s).map_err(|e| ModelError::BadCheckpoint(e.to_string()))
        })?;
    let meta_line = next()?;
    let meta: CheckpointMeta = meta_line
        .strip_prefix("meta ")
        .ok_or_else(|| ModelError::BadCheckpoint("missing meta line".to_string()))
        .and_then(|s| {
            serde_json::from_str(s).map_err(|e| ModelError::BadCheckpoint(e.to_string()))
        })?;

    let mut model = Model::zeroed(config)?;
    let mut filled = vec![false; model.tensors.len()];
    loop {
        let line = next()?;
        if line == "end" {
            break;
        }
        let rest = line
            .strip_prefix("tensor ")
            .ok_or_else(|| ModelError::BadCheckpoint(format!("unexpected line {line:?}")))?;
        let mut fields = rest.split(' ');
        let name = fields
            .next()
            .ok_or_else(|| ModelError::BadCheckpoint("tensor line missing name".to_string()))?;
        let dims_field = fields
            .next()
            .ok_or_else(|| ModelError::BadCheckpoint(format!("tensor {name} missing shape")))?;
        let shape: Vec<usize> = dims_field
            .split(',')
            .map(|d| {
                d.parse()
                    .map_err(|_| ModelError::BadCheckpoint(format!("bad dim {d:?} in {name}")))
            })
            .collect::<Result<_>>()?;
        let idx = model
            .infos
            .iter()
            .position(|i| i.name == name)
            .ok_or_else(|| ModelError::BadCheckpoint(format!("unknown tensor {name:?}")))?;
        if filled[idx] {
            return Err(ModelError::BadCheckpoint(format!("duplicate tensor {name:?}")));
        }
        if model.tensors[idx].shape() != shape.as_slice() {
            return Err(ModelError::BadCheckpoint(format!(
                "tensor {name:?} has shape {shape:?}, expected {:?}",
                model.tensors[idx].shape()
            )));
        }
        let data: Vec<f64> = fields
            .map(|h| {
                u64::from_str_radix(h, 16)
                    .map(f64::from_bits)
                    .map_err(|_| ModelError::BadCheckpoint(format!("bad value {h:?} in {name}")))
            })
            .collect::<Result<_>>()?;
        if data.len() != model.tensors[idx].numel() {
            return Err(ModelError::BadCheckpoint(format!(
                "tensor {name:?} has {} values, expected {}",
                data.len(),
                model.tensors[idx].numel()
            )));
        }
        model.tensors[idx] = Tensor::new(shape, data)
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        filled[idx] = true;
    }
    if let Some(i) = filled.iter().position(|&f| !f) {
        return Err(ModelError::BadCheckpoint(format!(
            "missing tensor {:?}",
            model.infos[i].name
        )));
    }
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, CorpusSpec, CategoryId, LangId};
    use crate::numerics::finite_diff_grad;

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
            seed: 17,
            ..CorpusSpec::default()
        })
        .unwrap()
    }

    fn tiny_config(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            embed_dim: 8,
            num_blocks: 1,
            num_heads: 2,
            ffn_dim: 16,
            max_seq_len: 8,
        }
    }

    fn balanced_batch(c: &Corpus, n: usize) -> Vec<&Example> {
        c.pool(LangId(0), CategoryId(0)).iter().take(n).collect()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_unit_gains() {
        let c = tiny_corpus();
        let cfg = tiny_config(c.vocab.size());
        let a = Model::init(cfg.clone(), 5).unwrap();
        let b = Model::init(cfg, 5).unwrap();
        assert_eq!(a.params(), b.params());
        for (info, t) in a.param_infos().iter().zip(a.params()) {
            if info.name.ends_with("_g") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{}", info.name);
            } else if t.shape().len() == 1 {
                assert!(t.data().iter().all(|&v| v == 0.0), "{}", info.name);
            } else {
                assert!(t.data().iter().any(|&v| v != 0.0), "{}", info.name);
                let bound = 1.0 / libm::sqrt(t.shape()[0] as f64);
                assert!(t.data().iter().all(|&v| v.abs() < bound));
            }
        }
    }

    #[test]
    fn stack_has_contiguous_depths_and_partitions_all_params() {
        let c = tiny_corpus();
        let m = Model::init(
            ModelConfig {
                num_blocks: 2,
                ..tiny_config(c.vocab.size())
            },
            1,
        )
        .unwrap();
        let groups = m.layer_groups();
        assert_eq!(groups.len(), 4);
        let depths: Vec<usize> = groups.iter().map(|g| g.depth_index).collect();
        assert_eq!(depths, vec![0, 1, 2, 3]);
        let names: Vec<&str> = groups.iter().map(|g| g.name).collect();
        assert_eq!(names, vec!["embedding", "block1", "block2", "head"]);

        let mut seen = std::collections::BTreeSet::new();
        for g in &groups {
            for &i in &g.param_indices {
                assert!(seen.insert(i), "param {i} in two groups");
            }
        }
        assert_eq!(seen.len(), m.params().len());
    }

    #[test]
    fn untrained_loss_is_near_ln2_on_a_balanced_batch() {
        let c = tiny_corpus();
        let m = Model::init(tiny_config(c.vocab.size()), 3).unwrap();
        let batch = balanced_batch(&c, 16);
        let pass = m.forward_loss(&batch).unwrap();
        let loss = pass.loss_value();
        assert!(
            (loss - std::f64::consts::LN_2).abs() < 0.1,
            "untrained loss {loss}"
        );
    }

    #[test]
    fn duplicating_a_batch_keeps_the_mean_loss() {
        let c = tiny_corpus();
        let m = Model::init(tiny_config(c.vocab.size()), 3).unwrap();
        let batch = balanced_batch(&c, 4);
        let once = m.forward_loss(&batch).unwrap().loss_value();
        let doubled: Vec<&Example> = batch.iter().chain(batch.iter()).copied().collect();
        let twice = m.forward_loss(&doubled).unwrap().loss_value();
        assert!((once - twice).abs() < 1e-12);
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        let c = tiny_corpus();
        let m = Model::init(tiny_config(c.vocab.size()), 7).unwrap();
        let batch = balanced_batch(&c, 4);
        let analytic = m.forward_loss(&batch).unwrap().grads().unwrap();

        let params: Vec<Tensor> = m.params().to_vec();
        let fd = finite_diff_grad::<ModelError>(
            |ps| {
                let mut probe = m.clone();
                for (t, p) in probe.params_mut().iter_mut().zip(ps) {
                    *t = p.clone();
                }
                Ok(probe.forward_loss(&batch)?.loss_value())
            },
            &params,
            1e-5,
        )
        .unwrap();

        let mut checked = 0usize;
        for (a, f) in analytic.iter().zip(&fd) {
            for (x, y) in a.data().iter().zip(f.data()) {
                let denom = y.abs().max(1.0);
                assert!(
                    (x - y).abs() / denom < 1e-4,
                    "gradient mismatch: analytic {x} vs fd {y}"
                );
                checked += 1;
            }
        }
        assert!(checked > 500, "only {checked} parameters checked");
    }

    #[test]
    fn predictions_are_normalized_and_consistent() {
        let c = tiny_corpus();
        let m = Model::init(tiny_config(c.vocab.size()), 9).unwrap();
        let batch = balanced_batch(&c, 10);
        let preds = m.predict_batch(&batch).unwrap();
        assert_eq!(preds.len(), 10);
        for p in &preds {
            assert!((p.probs[0] + p.probs[1] - 1.0).abs() < 1e-9);
            assert_eq!(p.label, u8::from(p.probs[1] > p.probs[0]));
        }
        // batch and single-example paths agree
        let single = m.predict(batch[3]).unwrap();
        assert_eq!(single, preds[3]);
    }

    #[test]
    fn appending_padding_never_changes_logits() {
        let c = tiny_corpus();
        let m = Model::init(tiny_config(c.vocab.size()), 11).unwrap();
        let ex = c.pool(LangId(1), CategoryId(0))[2].clone();
        let base = m.predict(&ex).unwrap();
        for extra in 1..=3 {
            let mut padded = ex.clone();
            padded.tokens.extend(std::iter::repeat_n(PAD_ID, extra));
            let p = m.predict(&padded).unwrap();
            assert!(
                (p.probs[0] - base.probs[0]).abs() < 1e-9
                    && (p.probs[1] - base.probs[1]).abs() < 1e-9,
                "padding changed probabilities: {base:?} vs {p:?}"
            );
        }
    }

    #[test]
    fn sequences_are_truncated_to_max_len() {
        let c = tiny_corpus();
        let m = Model::init(tiny_config(c.vocab.size()), 11).unwrap();
        let mut ex = c.pool(LangId(0), CategoryId(1))[0].clone();
        let short = m.predict(&ex).unwrap();
        // tokens beyond max_seq_len are ignored entirely
        let tail = ex.tokens[0];
        ex.tokens.resize(8, tail);
        let at_limit = m.predict(&ex).unwrap();
        ex.tokens.push(tail);
        let over = m.predict(&ex).unwrap();
        assert_eq!(at_limit, over);
        // sanity: truncation point actually matters against the short version
        let _ = short;
    }

    #[test]
    fn out_of_vocabulary_token_is_rejected() {
        let c = tiny_corpus();
        let m = Model::init(tiny_config(c.vocab.size()), 1).unwrap();
        let mut ex = c.pool(LangId(0), CategoryId(0))[0].clone();
        ex.tokens[0] = c.vocab.size() as u32;
        assert!(matches!(
            m.predict(&ex),
            Err(ModelError::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        assert!(matches!(
            Model::init(
                ModelConfig {
                    vocab_size: 10,
                    embed_dim: 9,
                    num_heads: 2,
                    ..ModelConfig::default()
                },
                0
            ),
            Err(ModelError::BadConfig(_))
        ));
        assert!(Model::init(ModelConfig::default(), 0).is_err()); // vocab 0
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let c = tiny_corpus();
        let m = Model::init(tiny_config(c.vocab.size()), 23).unwrap();
        let meta = CheckpointMeta {
            hop: 4,
            epoch: 2,
            val_f1: 0.8125,
            seed: 23,
        };
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &m, &meta).unwrap();
        let (loaded, meta2) = load_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(meta2, meta);
        for (a, b) in m.params().iter().zip(loaded.params()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let batch = balanced_batch(&c, 6);
        let l1 = m.forward_loss(&batch).unwrap();
        let l2 = loaded.forward_loss(&batch).unwrap();
        assert_eq!(l1.loss_value().to_bits(), l2.loss_value().to_bits());
        assert_eq!(l1.logits_value(), l2.logits_value());
    }

    #[test]
    fn checkpoint_loader_rejects_damaged_files() {
        let c = tiny_corpus();
        let m = Model::init(tiny_config(c.vocab.size()), 2).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &m, &CheckpointMeta::default()).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let truncated: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(load_checkpoint(truncated.as_bytes()).is_err());

        let wrong_header = text.replacen("v1", "v9", 1);
        assert!(load_checkpoint(wrong_header.as_bytes()).is_err());

        let missing = text.replacen("tensor head.w", "tensor head.x", 1);
        assert!(load_checkpoint(missing.as_bytes()).is_err());
    }
}
