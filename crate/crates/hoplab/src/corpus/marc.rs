//! Ingestion of review data in the one-JSON-record-per-line format with
//! fields review_body, stars, language, product_category.

use serde::Deserialize;
use std::path::Path;

use super::{CorpusError, Example, Origin, Registry, Result};
use crate::rng::fnv1a;

#[derive(Deserialize)]
struct RawRecord {
    review_body: String,
    stars: i64,
    language: String,
    product_category: String,
}

/// Open-vocabulary tokenizer for real text: each whitespace word hashes into
/// one of `buckets` ids (pad id 0 is never produced).
pub fn hash_tokenize(text: &str, buckets: usize) -> Vec<u32> {
    assert!(buckets > 0);
    text.split_whitespace()
        .map(|w| 1 + (fnv1a(w.as_bytes()) % buckets as u64) as u32)
        .collect()
}

/// Load a review file: 3-star records are dropped, stars {1,2} map to label
/// 0 and {4,5} to label 1, and within each label the surviving records are
/// balanced across their constituent star ratings (stable input order, each
/// star group truncated to the smaller count).
pub fn load_marc_jsonl(path: &Path, registry: &Registry, hash_buckets: usize) -> Result<Vec<Example>> {
    let content = std::fs::read_to_string(path)?;
    // (example, stars) for all candidates, input order
    let mut candidates: Vec<(Example, i64)> = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                msg: e.to_string(),
            })?;
        if !(1..=5).contains(&rec.stars) {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                msg: format!("stars must be 1-5, got {}", rec.stars),
            });
        }
        let lang = registry.lang_id(&rec.language)?;
        let category = registry.category_id(&rec.product_category)?;
        if rec.stars == 3 {
            continue;
        }
        let tokens = hash_tokenize(&rec.review_body, hash_buckets);
        if tokens.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                msg: "empty review_body".to_string(),
            });
        }
        let label = u8::from(rec.stars >= 4);
        candidates.push((
            Example {
                id: line_no as u64,
                tokens,
                raw_text: rec.review_body,
                label,
                lang,
                category,
                origin: Origin::Natural,
            },
            rec.stars,
        ));
    }

    // per-label star balancing: counts indexed by star value
    let mut counts = [0usize; 6];
    for (_, stars) in &candidates {
        counts[*stars as usize] += 1;
    }
    let neg_keep = counts[1].min(counts[2]);
    let pos_keep = counts[4].min(counts[5]);
    let mut kept = [0usize; 6];
    let mut out = Vec::new();
    for (ex, stars) in candidates {
        let quota = if stars <= 2 { neg_keep } else { pos_keep };
        if kept[stars as usize] < quota {
            kept[stars as usize] += 1;
            out.push(ex);
        }
    }
    Ok(out)
}
