//! Synthetic multilingual sentiment corpus plus real-data ingestion.
//!
//! Each synthetic language gets its own disjoint token block with identical
//! internal structure: positive sentiment tokens, negative sentiment tokens,
//! per-category topic tokens, then filler. The shared structure gives a
//! position-wise bijection between any two languages, which is what makes the
//! translation oracle exact and label-preserving.

pub mod marc;
pub mod translate;

use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use thiserror::Error;

use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus spec invalid: {0}")]
    BadSpec(String),
    #[error("training set size must be positive and even, got {0}")]
    BadTrainingSize(usize),
    #[error("pool for lang {lang} category {category} has {have} examples of label {label}, need {need}")]
    PoolExhausted {
        lang: String,
        category: String,
        label: u8,
        need: usize,
        have: usize,
    },
    #[error("unknown language {0:?}")]
    UnknownLanguage(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("no translation for {text:?} from {from} to {to}")]
    MissingTranslation {
        from: String,
        to: String,
        text: String,
    },
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LangId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CategoryId(pub u16);

impl fmt::Display for LangId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Natural,
    Translated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: u64,
    pub tokens: Vec<u32>,
    pub raw_text: String,
    pub label: u8,
    pub lang: LangId,
    pub category: CategoryId,
    pub origin: Origin,
}

/// Display names for languages and categories, fixed for a run.
#[derive(Debug, Clone)]
pub struct Registry {
    langs: Vec<String>,
    categories: Vec<String>,
}

impl Registry {
    pub fn new(langs: Vec<String>, categories: Vec<String>) -> Result<Self> {
        for (i, name) in langs.iter().enumerate() {
            if langs[..i].contains(name) {
                return Err(CorpusError::DuplicateName(name.clone()));
            }
        }
        for (i, name) in categories.iter().enumerate() {
            if categories[..i].contains(name) {
                return Err(CorpusError::DuplicateName(name.clone()));
            }
        }
        Ok(Registry { langs, categories })
    }

    /// Names `l0..l{K-1}` and `c0..c{C-1}`.
    pub fn synthetic(num_langs: usize, num_categories: usize) -> Self {
        Registry {
            langs: (0..num_langs).map(|i| format!("l{i}")).collect(),
            categories: (0..num_categories).map(|i| format!("c{i}")).collect(),
        }
    }

    pub fn num_langs(&self) -> usize {
        self.langs.len()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn lang_name(&self, id: LangId) -> &str {
        &self.langs[id.0 as usize]
    }

    pub fn category_name(&self, id: CategoryId) -> &str {
        &self.categories[id.0 as usize]
    }

    pub fn lang_id(&self, name: &str) -> Result<LangId> {
        self.langs
            .iter()
            .position(|l| l == name)
            .map(|i| LangId(i as u16))
            .ok_or_else(|| CorpusError::UnknownLanguage(name.to_string()))
    }

    pub fn category_id(&self, name: &str) -> Result<CategoryId> {
        self.categories
            .iter()
            .position(|c| c == name)
            .map(|i| CategoryId(i as u16))
            .ok_or_else(|| CorpusError::UnknownCategory(name.to_string()))
    }

    pub fn lang_ids(&self) -> Vec<LangId> {
        (0..self.langs.len()).map(|i| LangId(i as u16)).collect()
    }

    pub fn category_ids(&self) -> Vec<CategoryId> {
        (0..self.categories.len())
            .map(|i| CategoryId(i as u16))
            .collect()
    }
}

/// Closed vocabulary over the synthetic languages. Token id 0 is padding;
/// language `l` owns the contiguous block starting at `1 + l * per_lang`.
#[derive(Debug, Clone)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
    per_lang: usize,
    n_sent: usize,
    n_topic: usize,
    num_categories: usize,
    num_langs: usize,
}

impl Vocab {
    fn build(
        lang_names: &[String],
        num_categories: usize,
        n_sent: usize,
        n_topic: usize,
        n_fill: usize,
    ) -> Self {
        let per_lang = 2 * n_sent + n_topic * num_categories + n_fill;
        let mut names = Vec::with_capacity(1 + lang_names.len() * per_lang);
        names.push("<pad>".to_string());
        for lang in lang_names {
            for i in 0..n_sent {
                names.push(format!("{lang}_p{i}"));
            }
            for i in 0..n_sent {
                names.push(format!("{lang}_n{i}"));
            }
            for cat in 0..num_categories {
                for i in 0..n_topic {
                    names.push(format!("{lang}_t{cat}_{i}"));
                }
            }
            for i in 0..n_fill {
                names.push(format!("{lang}_f{i}"));
            }
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Vocab {
            names,
            index,
            per_lang,
            n_sent,
            n_topic,
            num_categories,
            num_langs: lang_names.len(),
        }
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn pad(&self) -> u32 {
        0
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    /// Whitespace tokenizer over the closed vocabulary.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| {
                self.id_of(w)
                    .ok_or_else(|| CorpusError::UnknownToken(w.to_string()))
            })
            .collect()
    }

    fn block_start(&self, lang: LangId) -> u32 {
        1 + (lang.0 as usize * self.per_lang) as u32
    }

    pub fn pos_token(&self, lang: LangId, i: usize) -> u32 {
        debug_assert!(i < self.n_sent);
        self.block_start(lang) + i as u32
    }

    pub fn neg_token(&self, lang: LangId, i: usize) -> u32 {
        debug_assert!(i < self.n_sent);
        self.block_start(lang) + (self.n_sent + i) as u32
    }

    pub fn topic_token(&self, lang: LangId, cat: CategoryId, i: usize) -> u32 {
        debug_assert!(i < self.n_topic);
        self.block_start(lang) + (2 * self.n_sent + cat.0 as usize * self.n_topic + i) as u32
    }

    pub fn filler_token(&self, lang: LangId, i: usize) -> u32 {
        self.block_start(lang) + (2 * self.n_sent + self.num_categories * self.n_topic + i) as u32
    }

    /// Which language owns a token; None for padding.
    pub fn lang_of(&self, id: u32) -> Option<LangId> {
        if id == 0 || id as usize >= self.size() {
            return None;
        }
        Some(LangId(((id as usize - 1) / self.per_lang) as u16))
    }

    /// 1 for positive sentiment, 0 for negative, None for non-sentiment.
    pub fn polarity(&self, id: u32) -> Option<u8> {
        self.lang_of(id)?;
        let within = (id as usize - 1) % self.per_lang;
        if within < self.n_sent {
            Some(1)
        } else if within < 2 * self.n_sent {
            Some(0)
        } else {
            None
        }
    }

    /// Majority sentiment polarity of a token list; None on tie or when no
    /// sentiment token is present.
    pub fn majority_label(&self, tokens: &[u32]) -> Option<u8> {
        let mut pos = 0usize;
        let mut neg = 0usize;
        for &t in tokens {
            match self.polarity(t) {
                Some(1) => pos += 1,
                Some(0) => neg += 1,
                _ => {}
            }
        }
        match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => Some(1),
            std::cmp::Ordering::Less => Some(0),
            std::cmp::Ordering::Equal => None,
        }
    }

    /// The position-wise bijection: same within-block offset, other block.
    pub fn map_to_lang(&self, id: u32, target: LangId) -> Result<u32> {
        if self.lang_of(id).is_none() || (target.0 as usize) >= self.num_langs {
            return Err(CorpusError::UnknownToken(format!("id {id}")));
        }
        let within = (id as usize - 1) % self.per_lang;
        Ok(self.block_start(target) + within as u32)
    }
}

/// Knobs for synthetic generation. `label_noise` flips the stored label of a
/// training-pool example with the given probability; test sets are never
/// noised, so measured F1 reflects transfer, not memorized noise.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub num_langs: usize,
    pub num_categories: usize,
    pub sentiment_tokens: usize,
    pub topic_tokens: usize,
    pub filler_tokens: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub pool_size: usize,
    pub test_size: usize,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_langs: 6,
            num_categories: 10,
            sentiment_tokens: 8,
            topic_tokens: 4,
            filler_tokens: 16,
            min_len: 6,
            max_len: 12,
            pool_size: 300,
            test_size: 100,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_langs == 0 || self.num_categories == 0 {
            return Err(CorpusError::BadSpec(
                "need at least one language and one category".to_string(),
            ));
        }
        if self.num_langs > u16::MAX as usize || self.num_categories > u16::MAX as usize {
            return Err(CorpusError::BadSpec("language/category count too large".to_string()));
        }
        if self.sentiment_tokens == 0 || self.topic_tokens == 0 {
            return Err(CorpusError::BadSpec(
                "need sentiment and topic tokens".to_string(),
            ));
        }
        if self.min_len < 3 || self.max_len < self.min_len {
            return Err(CorpusError::BadSpec(format!(
                "length range [{}, {}] invalid (min 3)",
                self.min_len, self.max_len
            )));
        }
        if self.pool_size == 0 || !self.pool_size.is_multiple_of(2) {
            return Err(CorpusError::BadSpec(format!(
                "pool_size {} must be positive and even",
                self.pool_size
            )));
        }
        if self.test_size == 0 || !self.test_size.is_multiple_of(2) {
            return Err(CorpusError::BadSpec(format!(
                "test_size {} must be positive and even",
                self.test_size
            )));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(CorpusError::BadSpec(format!(
                "label_noise {} must be in [0, 1)",
                self.label_noise
            )));
        }
        Ok(())
    }
}

/// Generated corpus: per-combo training pools plus held-out test sets for
/// every language-category combination. Immutable once built.
pub struct Corpus {
    pub spec: CorpusSpec,
    pub registry: Registry,
    pub vocab: Vocab,
    pools: Vec<Vec<Example>>,
    tests: Vec<Vec<Example>>,
}

impl Corpus {
    pub fn generate(spec: CorpusSpec) -> Result<Corpus> {
        spec.validate()?;
        let registry = Registry::synthetic(spec.num_langs, spec.num_categories);
        let vocab = Vocab::build(
            &registry.langs,
            spec.num_categories,
            spec.sentiment_tokens,
            spec.topic_tokens,
            spec.filler_tokens,
        );
        let combos = spec.num_langs * spec.num_categories;
        let mut pools = Vec::with_capacity(combos);
        let mut tests = Vec::with_capacity(combos);
        let mut next_id: u64 = 0;
        for lang in 0..spec.num_langs {
            for cat in 0..spec.num_categories {
                let combo = (lang * spec.num_categories + cat) as u64;
                let lang = LangId(lang as u16);
                let cat = CategoryId(cat as u16);

                let mut rng = rng_from(derive_seed(spec.seed, "pool", combo));
                let mut pool = Vec::with_capacity(spec.pool_size);
                for j in 0..spec.pool_size {
                    let mut ex =
                        gen_example(&mut rng, &vocab, lang, cat, (j % 2) as u8, &spec, next_id);
                    next_id += 1;
                    if spec.label_noise > 0.0 && rng.gen_bool(spec.label_noise) {
                        ex.label = 1 - ex.label;
                    }
                    pool.push(ex);
                }
                pools.push(pool);

                let mut rng = rng_from(derive_seed(spec.seed, "test", combo));
                let mut test = Vec::with_capacity(spec.test_size);
                for j in 0..spec.test_size {
                    let ex =
                        gen_example(&mut rng, &vocab, lang, cat, (j % 2) as u8, &spec, next_id);
                    next_id += 1;
                    test.push(ex);
                }
                tests.push(test);
            }
        }
        Ok(Corpus {
            spec,
            registry,
            vocab,
            pools,
            tests,
        })
    }

    fn combo_index(&self, lang: LangId, cat: CategoryId) -> usize {
        lang.0 as usize * self.spec.num_categories + cat.0 as usize
    }

    pub fn pool(&self, lang: LangId, cat: CategoryId) -> &[Example] {
        &self.pools[self.combo_index(lang, cat)]
    }

    pub fn test_set(&self, lang: LangId, cat: CategoryId) -> &[Example] {
        &self.tests[self.combo_index(lang, cat)]
    }

    /// Balanced sample without replacement from one combo's pool.
    pub fn make_training_set(
        &self,
        lang: LangId,
        cat: CategoryId,
        size: usize,
        seed: u64,
    ) -> Result<Vec<Example>> {
        if size == 0 || !size.is_multiple_of(2) {
            return Err(CorpusError::BadTrainingSize(size));
        }
        let pool = self.pool(lang, cat);
        let mut pos: Vec<usize> = Vec::new();
        let mut neg: Vec<usize> = Vec::new();
        for (i, ex) in pool.iter().enumerate() {
            if ex.label == 1 {
                pos.push(i);
            } else {
                neg.push(i);
            }
        }
        let need = size / 2;
        for (label, have) in [(1u8, pos.len()), (0u8, neg.len())] {
            if have < need {
                return Err(CorpusError::PoolExhausted {
                    lang: self.registry.lang_name(lang).to_string(),
                    category: self.registry.category_name(cat).to_string(),
                    label,
                    need,
                    have,
                });
            }
        }
        let mut rng = rng_from(seed);
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let mut picked: Vec<Example> = pos[..need]
            .iter()
            .chain(&neg[..need])
            .map(|&i| pool[i].clone())
            .collect();
        picked.shuffle(&mut rng);
        Ok(picked)
    }

    /// Human-inspectable dump, one example per line, deterministic order.
    pub fn write_dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "# synthetic corpus: langs={} categories={} pool={} test={} noise={} seed={}",
            self.spec.num_langs,
            self.spec.num_categories,
            self.spec.pool_size,
            self.spec.test_size,
            self.spec.label_noise,
            self.spec.seed
        )?;
        for lang in self.registry.lang_ids() {
            for cat in self.registry.category_ids() {
                for (split, set) in [("pool", self.pool(lang, cat)), ("test", self.test_set(lang, cat))] {
                    for ex in set {
                        writeln!(
                            w,
                            "{split}\t{}\t{}\t{}\t{}\t{}",
                            self.registry.lang_name(lang),
                            self.registry.category_name(cat),
                            ex.id,
                            ex.label,
                            ex.raw_text
                        )?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn gen_example(
    rng: &mut rand_chacha::ChaCha8Rng,
    vocab: &Vocab,
    lang: LangId,
    cat: CategoryId,
    label: u8,
    spec: &CorpusSpec,
    id: u64,
) -> Example {
    let n = rng.gen_range(spec.min_len..=spec.max_len);
    // at least one topic token, at least one sentiment token, majority of
    // sentiment tokens carries the label
    let topic_count = rng.gen_range(1..=2.min(n - 2));
    let rest = n - topic_count;
    let sent_total = rng.gen_range(1..=rest);
    let sent_major = rng.gen_range(sent_total / 2 + 1..=sent_total);
    let sent_minor = sent_total - sent_major;
    let filler_count = rest - sent_total;

    let mut tokens = Vec::with_capacity(n);
    for _ in 0..sent_major {
        let i = rng.gen_range(0..spec.sentiment_tokens);
        tokens.push(if label == 1 {
            vocab.pos_token(lang, i)
        } else {
            vocab.neg_token(lang, i)
        });
    }
    for _ in 0..sent_minor {
        let i = rng.gen_range(0..spec.sentiment_tokens);
        tokens.push(if label == 1 {
            vocab.neg_token(lang, i)
        } else {
            vocab.pos_token(lang, i)
        });
    }
    for _ in 0..topic_count {
        let i = rng.gen_range(0..spec.topic_tokens);
        tokens.push(vocab.topic_token(lang, cat, i));
    }
    for _ in 0..filler_count {
        let i = rng.gen_range(0..spec.filler_tokens);
        tokens.push(vocab.filler_token(lang, i));
    }
    tokens.shuffle(rng);
    let raw_text = tokens
        .iter()
        .map(|&t| vocab.name(t))
        .collect::<Vec<_>>()
        .join(" ");
    Example {
        id,
        tokens,
        raw_text,
        label,
        lang,
        category: cat,
        origin: Origin::Natural,
    }
}
