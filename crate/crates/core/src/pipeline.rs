//! Two-stage hybrid retrieval.
//!
//! Stage 1 scores every VS-page with the single-vector model, keeps the top
//! `p1` fraction, expands them to their member pages and ranks those pages
//! by `alpha * vs_score + (1 - alpha) * page_score`, keeping the top `K`.
//!
//! Stage 2 reranks the `K` pages with MaxSim over the query's key tokens,
//! keeps the top `p2` fraction, and orders the survivors by
//! `beta * stage1_score + (1 - beta) * full_maxsim`.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{
    check_fraction, check_weight, ceil_fraction, dot_flops, fuse_unchecked, masked_maxsim_score,
    maxsim_score, rank_all, top_fraction, FlopsLedger, Scored, FUSE_FLOPS,
};
use crate::store::{CorpusIndex, PageId, QueryRecord};
use crate::vspage::{VsPageId, DEFAULT_REDUCTION_FACTOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Cap on VS-page window length; applied when VS-pages are built.
    pub r: usize,
    pub p1: f64,
    pub p2: f64,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            r: DEFAULT_REDUCTION_FACTOR,
            p1: 0.5,
            p2: 0.25,
            k: 200,
            alpha: 0.1,
            beta: 0.3,
        }
    }
}

impl PipelineConfig {
    /// Fusion weights used for document-level evaluation.
    pub fn document_level() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 1 {
            return Err(Error::InvalidParameter("reduction factor must be >= 1".into()));
        }
        if self.k < 1 {
            return Err(Error::InvalidParameter("K must be >= 1".into()));
        }
        check_fraction(self.p1)?;
        check_fraction(self.p2)?;
        check_weight(self.alpha)?;
        check_weight(self.beta)
    }
}

/// Everything computed for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub query_id: String,
    /// All VS-pages, best first.
    pub vs_ranking: Vec<Scored<VsPageId>>,
    /// Length of the retained VS-page prefix.
    pub vs_kept: usize,
    /// Expanded candidate pages ranked by the fused stage-1 score.
    pub candidates: Vec<Scored<PageId>>,
    /// Length of the top-K prefix of `candidates`.
    pub refined_len: usize,
    /// Top-K pages ranked by key-token MaxSim.
    pub filtered: Vec<Scored<PageId>>,
    /// Final candidates ranked by the fused stage-2 score.
    pub final_cstar: Vec<Scored<PageId>>,
    /// Full-query MaxSim of each final candidate, same order as `final_cstar`.
    pub multi: Vec<Scored<PageId>>,
    /// Every corpus page, see [`full_ranking`].
    pub ranking: Vec<PageId>,
    pub ledger: FlopsLedger,
    /// Set when the key mask was empty and all tokens were used instead.
    pub mask_fallback: bool,
}

impl StageTrace {
    pub fn refined(&self) -> &[Scored<PageId>] {
        &self.candidates[..self.refined_len]
    }

    pub fn retained_vs(&self) -> &[Scored<VsPageId>] {
        &self.vs_ranking[..self.vs_kept]
    }
}

pub fn stage1(query: &QueryRecord, index: &CorpusIndex, cfg: &PipelineConfig) -> Result<StageTrace> {
    cfg.validate()?;
    let vs_vectors = index.vs_pooled().ok_or(Error::MissingVsEmbeddings)?;
    let d = index.dim_single();
    if query.pooled.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: query.pooled.dim(),
        });
    }
    if vs_vectors.is_empty() {
        return Err(Error::Empty("corpus has no VS-pages"));
    }
    let gamma = index.gamma();
    let q = query.pooled.data();
    let mut ledger = FlopsLedger::default();

    let vs_scores: Vec<f64> = vs_vectors
        .iter()
        .map(|v| crate::scoring::dot(q, v.data()))
        .collect();
    ledger.stage1_vs += vs_scores.len() as u64 * dot_flops(d);
    let vs_items: Vec<Scored<VsPageId>> = vs_scores
        .iter()
        .enumerate()
        .map(|(v, &s)| Scored::new(gamma.id(v), s))
        .collect();
    let vs_ranking = rank_all(&vs_items);
    let vs_kept = ceil_fraction(cfg.p1, vs_ranking.len());

    // VsPageId -> dense position is monotone, so binary search on ids works.
    let ids = gamma.ids();
    let mut in_c = vec![false; index.page_count()];
    let mut members = Vec::new();
    for s in &vs_ranking[..vs_kept] {
        let v = ids.binary_search(&s.item).expect("VS id from this index");
        for &p in gamma.members(v) {
            let flat = index.flat(p);
            if !in_c[flat] {
                in_c[flat] = true;
                members.push(p);
            }
        }
    }

    let scored: Vec<Scored<PageId>> = members
        .iter()
        .map(|&p| {
            let flat = index.flat(p);
            let page_score = crate::scoring::dot(q, index.pooled(p).data());
            let vs_score = vs_scores[gamma.vs_of(flat)];
            Scored::new(p, fuse_unchecked(vs_score, page_score, cfg.alpha))
        })
        .collect();
    ledger.stage1_refine += scored.len() as u64 * (dot_flops(d) + FUSE_FLOPS);
    let candidates = rank_all(&scored);
    let refined_len = cfg.k.min(candidates.len());

    Ok(StageTrace {
        query_id: query.query_id.clone(),
        vs_ranking,
        vs_kept,
        candidates,
        refined_len,
        filtered: Vec::new(),
        final_cstar: Vec::new(),
        multi: Vec::new(),
        ranking: Vec::new(),
        ledger,
        mask_fallback: false,
    })
}

pub fn stage2(
    query: &QueryRecord,
    mut trace: StageTrace,
    index: &CorpusIndex,
    cfg: &PipelineConfig,
) -> Result<StageTrace> {
    cfg.validate()?;
    if trace.refined_len == 0 {
        return Err(Error::Empty("stage-1 produced no candidates"));
    }
    let qm = &query.token_embeddings;
    if qm.dim() != index.dim_multi() {
        return Err(Error::DimensionMismatch {
            expected: index.dim_multi(),
            found: qm.dim(),
        });
    }
    let all_true;
    let mask: &[bool] = if query.key_mask.iter().any(|&b| b) {
        &query.key_mask
    } else {
        log::warn!(
            "query {}: no key tokens, reranking with all {} tokens",
            query.query_id,
            qm.rows()
        );
        trace.mask_fallback = true;
        all_true = vec![true; qm.rows()];
        &all_true
    };

    let mut flops = 0;
    let filtered_items = trace
        .refined()
        .iter()
        .map(|c| Ok(Scored::new(c.item, masked_maxsim_score(qm, mask, index.multi(c.item), &mut flops)?)))
        .collect::<Result<Vec<_>>>()?;
    trace.ledger.stage2_filtered += flops;
    trace.filtered = rank_all(&filtered_items);
    let cstar = top_fraction(&trace.filtered, cfg.p2)?;

    let stage1: HashMap<PageId, f64> = trace.refined().iter().map(|s| (s.item, s.score)).collect();
    let mut flops = 0;
    let mut multi = Vec::with_capacity(cstar.len());
    let mut fused = Vec::with_capacity(cstar.len());
    for c in &cstar {
        let mv = maxsim_score(qm, index.multi(c.item), &mut flops)?;
        multi.push(Scored::new(c.item, mv));
        fused.push(Scored::new(c.item, fuse_unchecked(stage1[&c.item], mv, cfg.beta)));
    }
    trace.ledger.stage2_refine += flops + cstar.len() as u64 * FUSE_FLOPS;
    trace.final_cstar = rank_all(&fused);
    let multi: HashMap<PageId, f64> = multi.into_iter().map(|m| (m.item, m.score)).collect();
    trace.multi = trace
        .final_cstar
        .iter()
        .map(|f| Scored::new(f.item, multi[&f.item]))
        .collect();
    Ok(trace)
}

/// Orders every corpus page: final candidates by fused stage-2 score, then
/// the rest of the top-K by key-token score, then the rest of the expanded
/// candidates by fused stage-1 score, then all remaining pages following
/// their VS-page's rank and page order. Pages outside the candidate set are
/// never scored.
pub fn full_ranking(trace: &StageTrace, index: &CorpusIndex) -> Vec<PageId> {
    let mut seen = vec![false; index.page_count()];
    let mut out = Vec::with_capacity(index.page_count());
    let mut push = |p: PageId, out: &mut Vec<PageId>| {
        let f = index.flat(p);
        if !seen[f] {
            seen[f] = true;
            out.push(p);
        }
    };
    for s in trace
        .final_cstar
        .iter()
        .chain(&trace.filtered)
        .chain(&trace.candidates)
    {
        push(s.item, &mut out);
    }
    let gamma = index.gamma();
    let ids = gamma.ids();
    for s in &trace.vs_ranking {
        let v = ids.binary_search(&s.item).expect("VS id from this index");
        for &p in gamma.members(v) {
            push(p, &mut out);
        }
    }
    out
}

pub fn run_query(query: &QueryRecord, index: &CorpusIndex, cfg: &PipelineConfig) -> Result<StageTrace> {
    let trace = stage1(query, index, cfg)?;
    let mut trace = stage2(query, trace, index, cfg)?;
    trace.ranking = full_ranking(&trace, index);
    Ok(trace)
}

/// Writes traces as one JSON object per line.
pub fn write_traces<W: Write>(mut w: W, traces: &[StageTrace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}

pub fn read_traces(text: &str) -> Result<Vec<StageTrace>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
