//! Retrieval methods behind a common trait, looked up by name.
//!
//! Built-in methods:
//!
//! | name            | scoring                                            |
//! |-----------------|----------------------------------------------------|
//! | `heaven`        | two-stage hybrid pipeline                          |
//! | `single_vector` | exhaustive pooled dot product                      |
//! | `multi_vector`  | exhaustive MaxSim                                  |
//! | `doc_pool`      | exhaustive MaxSim over mean-pooled page patches    |
//! | `doc_prune`     | exhaustive MaxSim over randomly pruned page patches|
//! | `query_pool`    | exhaustive MaxSim, pooled augmentation tokens      |
//! | `query_prune`   | exhaustive MaxSim, pruned augmentation tokens      |

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{run_query, PipelineConfig, StageTrace};
use crate::scoring::{dot, dot_flops, maxsim_score, rank_all, FlopsLedger, Scored};
use crate::store::{CorpusIndex, EmbeddingMatrix, PageId, QueryRecord};
use crate::variants::{transform_page, transform_query, VariantConfig, VariantKind};

/// Output of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    /// Every corpus page, best first.
    pub ranking: Vec<PageId>,
    /// Pages carrying a final, mutually comparable score.
    pub scored: Vec<Scored<PageId>>,
    pub ledger: FlopsLedger,
    pub trace: Option<StageTrace>,
}

pub trait Retriever: Send + Sync {
    fn name(&self) -> &str;

    fn retrieve(&self, query: &QueryRecord) -> Result<Retrieval>;
}

/// Parameters shared by all factories; each method reads the ones it needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub pipeline: PipelineConfig,
    pub pool_factor: usize,
    pub prune_ratio: f64,
    pub seed: u64,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            pool_factor: 1,
            prune_ratio: 0.0,
            seed: 0,
        }
    }
}

pub type Factory = fn(&MethodParams, Arc<CorpusIndex>) -> Result<Box<dyn Retriever>>;

pub struct Registry {
    factories: BTreeMap<String, Factory>,
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("heaven", |p, idx| Ok(Box::new(Heaven::new(p.pipeline, idx)?)));
        r.register("single_vector", |_, idx| Ok(Box::new(SingleVector { index: idx })));
        r.register("multi_vector", |_, idx| Ok(Box::new(MultiVector { index: idx })));
        r.register("doc_pool", |p, idx| variant(VariantKind::DocPool, p, idx));
        r.register("doc_prune", |p, idx| variant(VariantKind::DocPrune, p, idx));
        r.register("query_pool", |p, idx| variant(VariantKind::QueryPool, p, idx));
        r.register("query_prune", |p, idx| variant(VariantKind::QueryPrune, p, idx));
        r
    }

    /// Adds or replaces a method.
    pub fn register(&mut self, name: &str, factory: Factory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(
        &self,
        name: &str,
        params: &MethodParams,
        index: Arc<CorpusIndex>,
    ) -> Result<Box<dyn Retriever>> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownMethod(name.to_string()))?;
        f(params, index)
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Scores every listed page by MaxSim against `q`, returning the full
/// ranking and the FLOPs spent.
pub(crate) fn exhaustive_maxsim<'a, F>(
    q: &EmbeddingMatrix,
    pages: &[PageId],
    page_matrix: F,
) -> Result<(Vec<Scored<PageId>>, u64)>
where
    F: Fn(PageId) -> Result<Cow<'a, EmbeddingMatrix>> + Sync,
{
    let scored = pages
        .par_iter()
        .map(|&p| {
            let m = page_matrix(p)?;
            let mut flops = 0;
            let s = maxsim_score(q, &m, &mut flops)?;
            Ok((Scored::new(p, s), flops))
        })
        .collect::<Result<Vec<_>>>()?;
    let flops = scored.iter().map(|(_, f)| f).sum();
    let items: Vec<_> = scored.into_iter().map(|(s, _)| s).collect();
    Ok((rank_all(&items), flops))
}

fn ranked_retrieval(ranked: Vec<Scored<PageId>>, flops: u64) -> Retrieval {
    Retrieval {
        ranking: ranked.iter().map(|s| s.item).collect(),
        scored: ranked,
        ledger: FlopsLedger {
            variant: flops,
            ..FlopsLedger::default()
        },
        trace: None,
    }
}

pub struct Heaven {
    cfg: PipelineConfig,
    index: Arc<CorpusIndex>,
}

impl Heaven {
    pub fn new(cfg: PipelineConfig, index: Arc<CorpusIndex>) -> Result<Self> {
        cfg.validate()?;
        if index.vs_pooled().is_none() {
            return Err(Error::MissingVsEmbeddings);
        }
        Ok(Self { cfg, index })
    }
}

impl Retriever for Heaven {
    fn name(&self) -> &str {
        "heaven"
    }

    fn retrieve(&self, query: &QueryRecord) -> Result<Retrieval> {
        let trace = run_query(query, &self.index, &self.cfg)?;
        Ok(Retrieval {
            ranking: trace.ranking.clone(),
            scored: trace.final_cstar.clone(),
            ledger: trace.ledger,
            trace: Some(trace),
        })
    }
}

pub struct SingleVector {
    index: Arc<CorpusIndex>,
}

impl Retriever for SingleVector {
    fn name(&self) -> &str {
        "single_vector"
    }

    fn retrieve(&self, query: &QueryRecord) -> Result<Retrieval> {
        let d = self.index.dim_single();
        if query.pooled.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: query.pooled.dim(),
            });
        }
        let items: Vec<_> = self
            .index
            .page_ids()
            .map(|p| Scored::new(p, dot(query.pooled.data(), self.index.pooled(p).data())))
            .collect();
        let flops = items.len() as u64 * dot_flops(d);
        Ok(ranked_retrieval(rank_all(&items), flops))
    }
}

pub struct MultiVector {
    index: Arc<CorpusIndex>,
}

impl Retriever for MultiVector {
    fn name(&self) -> &str {
        "multi_vector"
    }

    fn retrieve(&self, query: &QueryRecord) -> Result<Retrieval> {
        let pages: Vec<PageId> = self.index.page_ids().collect();
        let (ranked, flops) = exhaustive_maxsim(&query.token_embeddings, &pages, |p| {
            Ok(Cow::Borrowed(self.index.multi(p)))
        })?;
        Ok(ranked_retrieval(ranked, flops))
    }
}

/// Exhaustive MaxSim under a pooling or pruning variant. Document-side
/// transforms are applied once, when the retriever is built.
pub struct Variant {
    cfg: VariantConfig,
    index: Arc<CorpusIndex>,
    pages: Option<Vec<EmbeddingMatrix>>,
}

impl Variant {
    pub fn new(cfg: VariantConfig, index: Arc<CorpusIndex>) -> Result<Self> {
        cfg.validate()?;
        let pages = if cfg.kind.is_document_side() {
            Some(
                index
                    .page_ids()
                    .collect::<Vec<_>>()
                    .par_iter()
                    .map(|&p| transform_page(&index, p, &cfg))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self { cfg, index, pages })
    }
}

impl Retriever for Variant {
    fn name(&self) -> &str {
        self.cfg.kind.as_str()
    }

    fn retrieve(&self, query: &QueryRecord) -> Result<Retrieval> {
        let q = transform_query(query, &self.cfg)?;
        let pages: Vec<PageId> = self.index.page_ids().collect();
        let (ranked, flops) = exhaustive_maxsim(&q, &pages, |p| {
            Ok(match &self.pages {
                Some(t) => Cow::Borrowed(&t[self.index.flat(p)]),
                None => Cow::Borrowed(self.index.multi(p)),
            })
        })?;
        Ok(ranked_retrieval(ranked, flops))
    }
}

fn variant(kind: VariantKind, p: &MethodParams, index: Arc<CorpusIndex>) -> Result<Box<dyn Retriever>> {
    let cfg = VariantConfig {
        kind,
        pool_factor: if kind.is_pooling() { p.pool_factor } else { 1 },
        prune_ratio: if kind.is_pooling() { 0.0 } else { p.prune_ratio },
        seed: p.seed,
    };
    Ok(Box::new(Variant::new(cfg, index)?))
}
