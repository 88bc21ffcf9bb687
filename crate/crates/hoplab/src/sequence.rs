//! No-repeat hop sequences: the order of language-category combinations a
//! run trains on.

use rand::seq::SliceRandom;
use std::io::{BufRead, Write};
use thiserror::Error;

use crate::corpus::{CategoryId, CorpusError, LangId, Registry};
use crate::rng::rng_from;

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("requested {requested} hops but only {available} distinct combos exist")]
    TooManyHops { requested: usize, available: usize },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: combo repeats an earlier hop")]
    RepeatedCombo { line: usize },
    #[error("line {line}: hop index {got}, expected {expected}")]
    BadIndex {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Name(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SequenceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Combo {
    pub lang: LangId,
    pub category: CategoryId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopSequence {
    combos: Vec<Combo>,
    /// Seed the sequence was built from; None when loaded from a file.
    pub seed: Option<u64>,
}

impl HopSequence {
    pub fn from_combos(combos: Vec<Combo>) -> HopSequence {
        HopSequence { combos, seed: None }
    }

    pub fn combos(&self) -> &[Combo] {
        &self.combos
    }

    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    /// The first `n` hops as their own sequence, for partially completed runs.
    pub fn prefix(&self, n: usize) -> HopSequence {
        HopSequence {
            combos: self.combos[..n.min(self.combos.len())].to_vec(),
            seed: self.seed,
        }
    }

    /// One line per hop: `index,lang_name,category_name`.
    pub fn write_to<W: Write>(&self, w: &mut W, registry: &Registry) -> Result<()> {
        for (i, combo) in self.combos.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{}",
                registry.lang_name(combo.lang),
                registry.category_name(combo.category)
            )?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R, registry: &Registry) -> Result<HopSequence> {
        let mut combos = Vec::new();
        let mut expected = 0usize;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(SequenceError::Malformed {
                    line: line_no,
                    msg: format!("expected `index,lang,category`, got {line:?}"),
                });
            }
            let got: usize = parts[0].parse().map_err(|_| SequenceError::Malformed {
                line: line_no,
                msg: format!("bad hop index {:?}", parts[0]),
            })?;
            if got != expected {
                return Err(SequenceError::BadIndex {
                    line: line_no,
                    expected,
                    got,
                });
            }
            let combo = Combo {
                lang: registry.lang_id(parts[1])?,
                category: registry.category_id(parts[2])?,
            };
            if combos.contains(&combo) {
                return Err(SequenceError::RepeatedCombo { line: line_no });
            }
            combos.push(combo);
            expected += 1;
        }
        Ok(HopSequence {
            combos,
            seed: None,
        })
    }
}

/// Uniform no-repeat sequence: shuffle the full combo grid, keep a prefix.
pub fn build_sequence(
    langs: &[LangId],
    categories: &[CategoryId],
    n_hops: usize,
    seed: u64,
) -> Result<HopSequence> {
    let available = langs.len() * categories.len();
    if n_hops > available {
        return Err(SequenceError::TooManyHops {
            requested: n_hops,
            available,
        });
    }
    let mut combos: Vec<Combo> = Vec::with_capacity(available);
    for &lang in langs {
        for &category in categories {
            combos.push(Combo { lang, category });
        }
    }
    let mut rng = rng_from(seed);
    combos.shuffle(&mut rng);
    combos.truncate(n_hops);
    Ok(HopSequence {
        combos,
        seed: Some(seed),
    })
}
