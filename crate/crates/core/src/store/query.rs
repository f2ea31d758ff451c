use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::corpus::{CorpusIndex, PageId};
use super::embedding::{load_embeddings, load_pooled, EmbeddingMatrix, PooledVector};
use crate::error::{Error, Result};
use crate::keytoken;

/// Where a query's key-token mask came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaggerSource {
    /// `key_mask` given verbatim in the query file.
    Mask,
    /// `pos_tags` given in the query file.
    Precomputed,
    /// Bundled rule-based tagger.
    Heuristic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub token_embeddings: EmbeddingMatrix,
    pub pooled: PooledVector,
    pub key_mask: Vec<bool>,
    /// Rows that are query augmentation tokens; `None` means unspecified.
    pub aug_mask: Option<Vec<bool>>,
    /// Sorted, duplicate-free ground-truth pages.
    pub ground_truth: Vec<PageId>,
    pub tagger: TaggerSource,
}

impl QueryRecord {
    pub fn key_token_count(&self) -> usize {
        self.key_mask.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtEntry {
    pub doc_id: String,
    pub page_index: usize,
}

/// One line of the query file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryFileRecord {
    pub query_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub pooled_path: String,
    pub multi_path: String,
    #[serde(default)]
    pub gt: Vec<GtEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aug_mask: Option<Vec<bool>>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Parses and resolves one query line. Embedding paths are relative to `base`.
pub fn parse_query_line(
    line: &str,
    base: &Path,
    index: &CorpusIndex,
) -> std::result::Result<QueryRecord, String> {
    let rec: QueryFileRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    resolve_query(rec, base, index).map_err(|e| e.to_string())
}

fn resolve_query(rec: QueryFileRecord, base: &Path, index: &CorpusIndex) -> Result<QueryRecord> {
    let n = rec.tokens.len();
    if n == 0 {
        return Err(Error::Empty("query has no tokens"));
    }
    let token_embeddings = load_embeddings(resolve(base, &rec.multi_path))?;
    let pooled = load_pooled(resolve(base, &rec.pooled_path))?;
    if token_embeddings.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: token_embeddings.rows(),
        });
    }
    if token_embeddings.dim() != index.dim_multi() {
        return Err(Error::DimensionMismatch {
            expected: index.dim_multi(),
            found: token_embeddings.dim(),
        });
    }
    if pooled.dim() != index.dim_single() {
        return Err(Error::DimensionMismatch {
            expected: index.dim_single(),
            found: pooled.dim(),
        });
    }

    let (key_mask, tagger) = match (rec.key_mask, rec.pos_tags) {
        (Some(mask), _) => (mask, TaggerSource::Mask),
        (None, Some(tags)) => (keytoken::key_mask_from_tags(&tags), TaggerSource::Precomputed),
        (None, None) => (
            keytoken::key_mask_from_tags(&keytoken::heuristic_tag(&rec.tokens)),
            TaggerSource::Heuristic,
        ),
    };
    if key_mask.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: key_mask.len(),
        });
    }
    if let Some(aug) = &rec.aug_mask {
        if aug.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: aug.len(),
            });
        }
    }

    let mut ground_truth = Vec::with_capacity(rec.gt.len());
    for g in rec.gt {
        let page = index
            .doc_index(&g.doc_id)
            .map(|k| PageId::new(k, g.page_index))
            .filter(|p| index.contains(*p))
            .ok_or(Error::UnknownPage {
                doc_id: g.doc_id,
                page_index: g.page_index,
            })?;
        ground_truth.push(page);
    }
    ground_truth.sort_unstable();
    ground_truth.dedup();

    Ok(QueryRecord {
        query_id: rec.query_id,
        text: rec.text,
        tokens: rec.tokens,
        token_embeddings,
        pooled,
        key_mask,
        aug_mask: rec.aug_mask,
        ground_truth,
        tagger,
    })
}

/// Loads a query file; relative embedding paths resolve against its directory.
pub fn load_queries(path: impl AsRef<Path>, index: &CorpusIndex) -> Result<Vec<QueryRecord>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_query_line(l, base, index).map_err(|message| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            })
        })
        .collect()
}
