//! Pooling and pruning baselines for multi-vector retrieval.
//!
//! Document-side transforms rewrite every page's patch matrix; query-side
//! transforms touch only the query augmentation-token rows and pass content
//! tokens through unchanged.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::FlopsLedger;
use crate::store::{CorpusIndex, EmbeddingMatrix, PageId, QueryRecord};

/// Identifier of the generator behind pruning. Changing the algorithm or the
/// seed derivation must change this string.
pub const PRUNE_RNG: &str = "chacha8-splitmix-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    DocPool,
    DocPrune,
    QueryPool,
    QueryPrune,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::DocPool,
        VariantKind::DocPrune,
        VariantKind::QueryPool,
        VariantKind::QueryPrune,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantKind::DocPool => "doc_pool",
            VariantKind::DocPrune => "doc_prune",
            VariantKind::QueryPool => "query_pool",
            VariantKind::QueryPrune => "query_prune",
        }
    }

    pub fn is_pooling(&self) -> bool {
        matches!(self, VariantKind::DocPool | VariantKind::QueryPool)
    }

    pub fn is_document_side(&self) -> bool {
        matches!(self, VariantKind::DocPool | VariantKind::DocPrune)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub kind: VariantKind,
    /// Rows merged per pooled row; a perfect square when a patch grid is used.
    pub pool_factor: usize,
    pub prune_ratio: f64,
    pub seed: u64,
}

impl VariantConfig {
    pub fn pooling(kind: VariantKind, pool_factor: usize) -> Self {
        Self {
            kind,
            pool_factor,
            prune_ratio: 0.0,
            seed: 0,
        }
    }

    pub fn pruning(kind: VariantKind, prune_ratio: f64, seed: u64) -> Self {
        Self {
            kind,
            pool_factor: 1,
            prune_ratio,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_factor < 1 {
            return Err(Error::InvalidParameter("pool factor must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.prune_ratio) {
            return Err(Error::InvalidParameter(format!(
                "prune ratio {} outside [0,1)",
                self.prune_ratio
            )));
        }
        Ok(())
    }
}

fn mean_rows(m: &EmbeddingMatrix, rows: impl Iterator<Item = usize>, out: &mut Vec<f32>) {
    let d = m.dim();
    let mut acc = vec![0f64; d];
    let mut n = 0usize;
    for r in rows {
        for (a, v) in acc.iter_mut().zip(m.row(r)) {
            *a += f64::from(*v);
        }
        n += 1;
    }
    out.extend(acc.into_iter().map(|a| (a / n as f64) as f32));
}

/// Mean-pools non-overlapping blocks of rows.
///
/// Without a grid, consecutive runs of `factor` rows are merged (the last run
/// may be shorter). With a `(rows, cols)` patch grid, `factor` must be `f*f`
/// and `f x f` spatial blocks are merged, row-major, edge blocks clipped.
pub fn pool_matrix(
    m: &EmbeddingMatrix,
    factor: usize,
    grid: Option<(usize, usize)>,
) -> Result<EmbeddingMatrix> {
    if factor < 1 {
        return Err(Error::InvalidParameter("pool factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(m.clone());
    }
    let mut data = Vec::new();
    let out_rows = match grid {
        None => {
            let n = m.rows();
            for start in (0..n).step_by(factor) {
                mean_rows(m, start..(start + factor).min(n), &mut data);
            }
            n.div_ceil(factor)
        }
        Some((gr, gc)) => {
            if gr * gc != m.rows() {
                return Err(Error::InvalidParameter(format!(
                    "grid {gr}x{gc} does not match {} rows",
                    m.rows()
                )));
            }
            let f = (factor as f64).sqrt().round() as usize;
            if f * f != factor {
                return Err(Error::InvalidParameter(format!(
                    "grid pooling needs a square factor, got {factor}"
                )));
            }
            for br in (0..gr).step_by(f) {
                for bc in (0..gc).step_by(f) {
                    let cells = (br..(br + f).min(gr))
                        .flat_map(|r| (bc..(bc + f).min(gc)).map(move |c| r * gc + c));
                    mean_rows(m, cells, &mut data);
                }
            }
            gr.div_ceil(f) * gc.div_ceil(f)
        }
    };
    EmbeddingMatrix::new(out_rows, m.dim(), data)
}

/// Rows kept when pruning `n` rows at `ratio`: `ceil((1 - ratio) * n)`.
pub fn kept_count(n: usize, ratio: f64) -> usize {
    n - ((ratio * n as f64) + 1e-9).floor().min(n as f64) as usize
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Per-item pruning seed derived from the global seed and a stable key.
pub fn derive_seed(global: u64, key: u64) -> u64 {
    splitmix64(global ^ splitmix64(key))
}

pub fn page_seed(global: u64, page: PageId) -> u64 {
    derive_seed(global, (u64::from(page.doc_index) << 32) | u64::from(page.page_index))
}

pub fn query_seed(global: u64, query_id: &str) -> u64 {
    derive_seed(global, fnv1a(query_id))
}

fn pruned_indices(n: usize, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidParameter(format!("prune ratio {ratio} outside [0,1)")));
    }
    let keep = kept_count(n, ratio);
    if keep == 0 {
        return Err(Error::InvalidParameter(format!(
            "prune ratio {ratio} leaves no rows out of {n}"
        )));
    }
    if keep == n {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, keep).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Keeps a seeded uniform-random subset of `ceil((1 - ratio) * n)` rows in
/// their original order.
pub fn prune_matrix(m: &EmbeddingMatrix, ratio: f64, seed: u64) -> Result<EmbeddingMatrix> {
    let idx = pruned_indices(m.rows(), ratio, seed)?;
    if idx.len() == m.rows() {
        return Ok(m.clone());
    }
    m.select_rows(&idx)
}

/// Applies a document-side variant to one page.
pub fn transform_page(index: &CorpusIndex, page: PageId, cfg: &VariantConfig) -> Result<EmbeddingMatrix> {
    let m = index.multi(page);
    match cfg.kind {
        VariantKind::DocPool => pool_matrix(m, cfg.pool_factor, index.info(page).grid),
        VariantKind::DocPrune => prune_matrix(m, cfg.prune_ratio, page_seed(cfg.seed, page)),
        _ => Ok(m.clone()),
    }
}

/// Applies a query-side variant to the augmentation-token rows. Content rows
/// come first in original order, followed by the transformed augmentation
/// rows. A query without `aug_mask` treats every row as augmentation.
pub fn transform_query(query: &QueryRecord, cfg: &VariantConfig) -> Result<EmbeddingMatrix> {
    let m = &query.token_embeddings;
    if cfg.kind.is_document_side() {
        return Ok(m.clone());
    }
    let (content, aug): (Vec<usize>, Vec<usize>) = match &query.aug_mask {
        Some(mask) => (0..m.rows()).partition(|&i| !mask[i]),
        None => (Vec::new(), (0..m.rows()).collect()),
    };
    if aug.is_empty() {
        return Ok(m.clone());
    }
    let aug_m = m.select_rows(&aug)?;
    let aug_t = match cfg.kind {
        VariantKind::QueryPool => pool_matrix(&aug_m, cfg.pool_factor, None)?,
        _ => prune_matrix(&aug_m, cfg.prune_ratio, query_seed(cfg.seed, &query.query_id))?,
    };
    if content.is_empty() {
        return Ok(aug_t);
    }
    let mut data = m.select_rows(&content)?.data().to_vec();
    data.extend_from_slice(aug_t.data());
    EmbeddingMatrix::new(content.len() + aug_t.rows(), m.dim(), data)
}

/// Exhaustive multi-vector retrieval under a variant. Transform costs are not
/// counted; scoring FLOPs land in the `variant` phase.
pub fn variant_retrieval(
    query: &QueryRecord,
    index: &CorpusIndex,
    cfg: &VariantConfig,
) -> Result<(Vec<PageId>, FlopsLedger)> {
    cfg.validate()?;
    let q = transform_query(query, cfg)?;
    let pages: Vec<PageId> = index.page_ids().collect();
    let scored = crate::retriever::exhaustive_maxsim(&q, &pages, |p| {
        if cfg.kind.is_document_side() {
            transform_page(index, p, cfg).map(std::borrow::Cow::Owned)
        } else {
            Ok(std::borrow::Cow::Borrowed(index.multi(p)))
        }
    })?;
    let ledger = FlopsLedger {
        variant: scored.1,
        ..FlopsLedger::default()
    };
    Ok((scored.0.into_iter().map(|s| s.item).collect(), ledger))
}
