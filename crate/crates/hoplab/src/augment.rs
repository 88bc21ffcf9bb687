//! Translation augmentation: extends a hop's training set with translations
//! of a sampled subset into every other language.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::corpus::translate::Translator;
use crate::corpus::{CorpusError, Example, LangId};
use crate::rng::rng_from;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("fraction must be in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("hop language {hop} not in the language set")]
    HopLangMissing { hop: LangId },
    #[error("example {id} has language {found}, expected hop language {expected}")]
    ForeignExample {
        id: u64,
        found: LangId,
        expected: LangId,
    },
    #[error(transparent)]
    Translation(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, AugmentError>;

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Fraction of the training set to sample for translation.
    pub fraction: f64,
    /// Sample per label instead of over the whole set.
    pub stratified: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            fraction: 0.1,
            stratified: false,
            seed: 0,
        }
    }
}

/// Append translations of `round(fraction * |d|)` sampled examples into every
/// language of `langs` other than `hop_lang`. The input set stays intact as a
/// prefix; translations follow ordered by sample position in `d`, then by
/// target language id.
pub fn augment(
    mut d: Vec<Example>,
    langs: &[LangId],
    hop_lang: LangId,
    config: &AugmentConfig,
    translator: &dyn Translator,
) -> Result<Vec<Example>> {
    if !(0.0..=1.0).contains(&config.fraction) {
        return Err(AugmentError::BadFraction(config.fraction));
    }
    if !langs.contains(&hop_lang) {
        return Err(AugmentError::HopLangMissing { hop: hop_lang });
    }
    for ex in &d {
        if ex.lang != hop_lang {
            return Err(AugmentError::ForeignExample {
                id: ex.id,
                found: ex.lang,
                expected: hop_lang,
            });
        }
    }

    let mut picked = sample_indices(&d, config);
    picked.sort_unstable();

    let mut targets: Vec<LangId> = langs.iter().copied().filter(|&l| l != hop_lang).collect();
    targets.sort_unstable();

    let mut translated = Vec::with_capacity(picked.len() * targets.len());
    for &i in &picked {
        for &target in &targets {
            translated.push(translator.translate(&d[i], target)?);
        }
    }
    d.extend(translated);
    Ok(d)
}

fn sample_indices(d: &[Example], config: &AugmentConfig) -> Vec<usize> {
    let mut rng = rng_from(config.seed);
    let round_count = |n: usize| -> usize {
        let m = (config.fraction * n as f64).round() as usize;
        m.min(n)
    };
    if config.stratified {
        let mut out = Vec::new();
        for label in [0u8, 1u8] {
            let mut idx: Vec<usize> = d
                .iter()
                .enumerate()
                .filter(|(_, e)| e.label == label)
                .map(|(i, _)| i)
                .collect();
            let m = round_count(idx.len());
            idx.shuffle(&mut rng);
            out.extend_from_slice(&idx[..m]);
        }
        out
    } else {
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.shuffle(&mut rng);
        let m = round_count(d.len());
        idx.truncate(m);
        idx
    }
}
