//! Pluggable translation: a perfect oracle over the synthetic vocabulary and
//! a translation-memory file for precomputed real translations.

use std::collections::HashMap;
use std::path::Path;

use super::marc::hash_tokenize;
use super::{CorpusError, Example, LangId, Origin, Registry, Result, Vocab};

pub trait Translator {
    fn translate(&self, example: &Example, target: LangId) -> Result<Example>;
}

/// Maps every token through the position-wise vocabulary bijection. Exact,
/// label-preserving, and an identity for self-translation.
pub struct OracleTranslator<'a> {
    vocab: &'a Vocab,
}

impl<'a> OracleTranslator<'a> {
    pub fn new(vocab: &'a Vocab) -> Self {
        OracleTranslator { vocab }
    }
}

impl Translator for OracleTranslator<'_> {
    fn translate(&self, example: &Example, target: LangId) -> Result<Example> {
        let tokens = example
            .tokens
            .iter()
            .map(|&t| self.vocab.map_to_lang(t, target))
            .collect::<Result<Vec<u32>>>()?;
        let raw_text = tokens
            .iter()
            .map(|&t| self.vocab.name(t))
            .collect::<Vec<_>>()
            .join(" ");
        Ok(Example {
            id: example.id,
            tokens,
            raw_text,
            label: example.label,
            lang: target,
            category: example.category,
            origin: Origin::Translated,
        })
    }
}

/// Translation memory loaded from a tab-separated file with records
/// `lang_from <TAB> lang_to <TAB> source_text <TAB> target_text`.
/// Target texts are tokenized with the same hash buckets as real-data
/// ingestion, so memory-backed translations compose with MARC input.
#[derive(Debug)]
pub struct FileTranslator {
    map: HashMap<(LangId, LangId, String), String>,
    registry: Registry,
    hash_buckets: usize,
}

impl FileTranslator {
    pub fn load(path: &Path, registry: Registry, hash_buckets: usize) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let mut map = HashMap::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.splitn(4, '\t').collect();
            if parts.len() != 4 {
                return Err(CorpusError::MalformedRecord {
                    line: i + 1,
                    msg: format!("expected 4 tab-separated fields, got {}", parts.len()),
                });
            }
            let from = registry.lang_id(parts[0])?;
            let to = registry.lang_id(parts[1])?;
            map.insert((from, to, parts[2].to_string()), parts[3].to_string());
        }
        Ok(FileTranslator {
            map,
            registry,
            hash_buckets,
        })
    }
}

impl Translator for FileTranslator {
    fn translate(&self, example: &Example, target: LangId) -> Result<Example> {
        if target == example.lang {
            return Ok(example.clone());
        }
        let key = (example.lang, target, example.raw_text.clone());
        let text = self
            .map
            .get(&key)
            .ok_or_else(|| CorpusError::MissingTranslation {
                from: self.registry.lang_name(example.lang).to_string(),
                to: self.registry.lang_name(target).to_string(),
                text: example.raw_text.clone(),
            })?;
        let tokens = hash_tokenize(text, self.hash_buckets);
        if tokens.is_empty() {
            return Err(CorpusError::MissingTranslation {
                from: self.registry.lang_name(example.lang).to_string(),
                to: self.registry.lang_name(target).to_string(),
                text: example.raw_text.clone(),
            });
        }
        Ok(Example {
            id: example.id,
            tokens,
            raw_text: text.clone(),
            label: example.label,
            lang: target,
            category: example.category,
            origin: Origin::Translated,
        })
    }
}
