//! Evaluation metrics over per-hop F1 matrices: overall score, forgetting by
//! language and by category, and the four in/out-of-language-and-domain
//! quadrant averages.
//!
//! Aggregation arithmetic is pinned down deliberately: sum in index order,
//! divide once. Tests recompute everything through an independent brute-force
//! path and demand exact equality, which only works if both sides use the
//! same summation order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sequence::{Combo, HopSequence};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("predictions and golds differ in length: {preds} vs {golds}")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("label {0} is not binary")]
    BadLabel(u8),
    #[error("matrix needs {expected} cells, got {got}")]
    WrongCellCount { expected: usize, got: usize },
    #[error("cell value {0} outside [0, 1]")]
    BadValue(f64),
    #[error("hop {hop}: {msg}")]
    Misaligned { hop: usize, msg: String },
    #[error("matrices disagree on grid size: {0}x{1} vs {2}x{3}")]
    GridMismatch(usize, usize, usize, usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Macro-averaged binary F1: mean of the per-class F1 scores, where a class
/// with no true positives and no predictions scores 0.
pub fn f1_binary_macro(preds: &[u8], golds: &[u8]) -> Result<f64> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    for &l in preds.iter().chain(golds) {
        if l > 1 {
            return Err(MetricsError::BadLabel(l));
        }
    }
    let class_f1 = |cls: u8| -> f64 {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fal_n = 0usize;
        for (&p, &g) in preds.iter().zip(golds) {
            if p == cls && g == cls {
                tp += 1;
            } else if p == cls {
                fp += 1;
            } else if g == cls {
                fal_n += 1;
            }
        }
        let denom = 2 * tp + fp + fal_n;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    Ok((class_f1(0) + class_f1(1)) / 2.0)
}

/// F1 scores of one hop's model over every (language, category) test set,
/// row-major with languages as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Matrix {
    pub hop_index: usize,
    pub train_combo: Combo,
    k_langs: usize,
    c_cats: usize,
    values: Vec<f64>,
}

impl F1Matrix {
    pub fn new(
        hop_index: usize,
        train_combo: Combo,
        k_langs: usize,
        c_cats: usize,
        values: Vec<f64>,
    ) -> Result<F1Matrix> {
        if k_langs == 0 || c_cats == 0 {
            return Err(MetricsError::EmptyInput);
        }
        if values.len() != k_langs * c_cats {
            return Err(MetricsError::WrongCellCount {
                expected: k_langs * c_cats,
                got: values.len(),
            });
        }
        for &v in &values {
            if !(0.0..=1.0).contains(&v) {
                return Err(MetricsError::BadValue(v));
            }
        }
        Ok(F1Matrix {
            hop_index,
            train_combo,
            k_langs,
            c_cats,
            values,
        })
    }

    pub fn k_langs(&self) -> usize {
        self.k_langs
    }

    pub fn c_cats(&self) -> usize {
        self.c_cats
    }

    pub fn at(&self, lang: usize, cat: usize) -> f64 {
        self.values[lang * self.c_cats + cat]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_grid(results: &[F1Matrix]) -> Result<(usize, usize)> {
    let first = results.first().ok_or(MetricsError::EmptyInput)?;
    for m in results {
        if m.k_langs != first.k_langs || m.c_cats != first.c_cats {
            return Err(MetricsError::GridMismatch(
                first.k_langs,
                first.c_cats,
                m.k_langs,
                m.c_cats,
            ));
        }
    }
    Ok((first.k_langs, first.c_cats))
}

/// Mean over all cells of one hop's matrix.
pub fn hopwise_avg(m: &F1Matrix) -> f64 {
    let mut sum = 0.0;
    for &v in &m.values {
        sum += v;
    }
    sum / m.values.len() as f64
}

/// Mean over hops of the hop-wise means.
pub fn overall_f1(results: &[F1Matrix]) -> Result<f64> {
    check_grid(results)?;
    let mut sum = 0.0;
    for m in results {
        sum += hopwise_avg(m);
    }
    Ok(sum / results.len() as f64)
}

/// Peak minus final F1 of each language's trajectory (its mean over
/// categories per hop), then the mean across languages.
pub fn forgetting_by_language(results: &[F1Matrix]) -> Result<(f64, Vec<f64>)> {
    let (k, c) = check_grid(results)?;
    let mut per_lang = Vec::with_capacity(k);
    for lang in 0..k {
        let traj: Vec<f64> = results
            .iter()
            .map(|m| {
                let mut sum = 0.0;
                for cat in 0..c {
                    sum += m.at(lang, cat);
                }
                sum / c as f64
            })
            .collect();
        let peak = traj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        per_lang.push(peak - traj[traj.len() - 1]);
    }
    let mut sum = 0.0;
    for &f in &per_lang {
        sum += f;
    }
    Ok((sum / k as f64, per_lang))
}

/// Same construction with categories and languages swapped.
pub fn forgetting_by_category(results: &[F1Matrix]) -> Result<(f64, Vec<f64>)> {
    let (k, c) = check_grid(results)?;
    let mut per_cat = Vec::with_capacity(c);
    for cat in 0..c {
        let traj: Vec<f64> = results
            .iter()
            .map(|m| {
                let mut sum = 0.0;
                for lang in 0..k {
                    sum += m.at(lang, cat);
                }
                sum / k as f64
            })
            .collect();
        let peak = traj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        per_cat.push(peak - traj[traj.len() - 1]);
    }
    let mut sum = 0.0;
    for &f in &per_cat {
        sum += f;
    }
    Ok((sum / c as f64, per_cat))
}

/// The four quadrant scores relative to each hop's training combo, averaged
/// over hops. A quadrant whose cell set is empty (single language or single
/// category grids) is absent rather than zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quadrants {
    pub il_id: f64,
    pub ol_id: Option<f64>,
    pub il_od: Option<f64>,
    pub ol_od: Option<f64>,
}

pub fn quadrant_scores(
    results: &[F1Matrix],
    sequence: &HopSequence,
    strict_ol_od: bool,
) -> Result<Quadrants> {
    let (k, c) = check_grid(results)?;
    check_alignment(results, sequence)?;

    let mut il_id_sum = 0.0;
    let mut ol_id_sum = 0.0;
    let mut il_od_sum = 0.0;
    let mut ol_od_sum = 0.0;
    for m in results {
        let lj = m.train_combo.lang.0 as usize;
        let ck = m.train_combo.category.0 as usize;
        il_id_sum += m.at(lj, ck);
        if k > 1 {
            let mut sum = 0.0;
            for lang in 0..k {
                if lang != lj {
                    sum += m.at(lang, ck);
                }
            }
            ol_id_sum += sum / (k - 1) as f64;
        }
        if c > 1 {
            let mut sum = 0.0;
            for cat in 0..c {
                if cat != ck {
                    sum += m.at(lj, cat);
                }
            }
            il_od_sum += sum / (c - 1) as f64;
        }
        if strict_ol_od {
            if k > 1 && c > 1 {
                let mut sum = 0.0;
                for lang in 0..k {
                    for cat in 0..c {
                        if lang != lj && cat != ck {
                            sum += m.at(lang, cat);
                        }
                    }
                }
                ol_od_sum += sum / ((k - 1) * (c - 1)) as f64;
            }
        } else if k * c > 1 {
            let mut sum = 0.0;
            for lang in 0..k {
                for cat in 0..c {
                    if !(lang == lj && cat == ck) {
                        sum += m.at(lang, cat);
                    }
                }
            }
            ol_od_sum += sum / (k * c - 1) as f64;
        }
    }
    let n = results.len() as f64;
    let ol_od_defined = if strict_ol_od {
        k > 1 && c > 1
    } else {
        k * c > 1
    };
    Ok(Quadrants {
        il_id: il_id_sum / n,
        ol_id: (k > 1).then(|| ol_id_sum / n),
        il_od: (c > 1).then(|| il_od_sum / n),
        ol_od: ol_od_defined.then(|| ol_od_sum / n),
    })
}

fn check_alignment(results: &[F1Matrix], sequence: &HopSequence) -> Result<()> {
    if results.len() != sequence.len() {
        return Err(MetricsError::Misaligned {
            hop: results.len().min(sequence.len()),
            msg: format!(
                "{} result matrices vs {} sequence hops",
                results.len(),
                sequence.len()
            ),
        });
    }
    for (i, (m, combo)) in results.iter().zip(sequence.combos()).enumerate() {
        if m.hop_index != i {
            return Err(MetricsError::Misaligned {
                hop: i,
                msg: format!("matrix carries hop index {}", m.hop_index),
            });
        }
        if m.train_combo != *combo {
            return Err(MetricsError::Misaligned {
                hop: i,
                msg: "training combo differs from sequence".to_string(),
            });
        }
    }
    Ok(())
}

/// Everything a comparison table needs for one run, in raw [0,1] units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub overall_f1: f64,
    pub il_id: f64,
    pub ol_id: Option<f64>,
    pub il_od: Option<f64>,
    pub ol_od: Option<f64>,
    pub f_lang: f64,
    pub f_categ: f64,
}

pub fn summarize(
    results: &[F1Matrix],
    sequence: &HopSequence,
    strict_ol_od: bool,
) -> Result<RunSummary> {
    let overall = overall_f1(results)?;
    let q = quadrant_scores(results, sequence, strict_ol_od)?;
    let (f_lang, _) = forgetting_by_language(results)?;
    let (f_categ, _) = forgetting_by_category(results)?;
    Ok(RunSummary {
        overall_f1: overall,
        il_id: q.il_id,
        ol_id: q.ol_id,
        il_od: q.il_od,
        ol_od: q.ol_od,
        f_lang,
        f_categ,
    })
}

/// Presentation scaling: raw [0,1] value as a two-decimal percentage.
pub fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

pub fn percent_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => percent(v),
        None => "-".to_string(),
    }
}
