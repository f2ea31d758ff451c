//! Recall@K, document-level ranking, query filtering and CSV reports.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retriever::{MethodParams, Retrieval, Retriever};
use crate::scoring::{FlopsLedger, Scored};
use crate::store::{CorpusIndex, PageId, QueryRecord};

/// Cutoffs written to every report row.
pub const REPORT_KS: [usize; 4] = [1, 3, 100, 200];

/// Fraction of ground-truth items found in the first `k` ranked items.
pub fn recall_at_k<T: Eq + std::hash::Hash>(ranking: &[T], gt: &HashSet<T>, k: usize) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Empty("recall with no ground truth"));
    }
    let hits = ranking.iter().take(k).filter(|p| gt.contains(p)).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Best page score per document; documents without a scored page get -inf.
pub fn doc_level_scores(scored: &[Scored<PageId>], doc_count: usize) -> Vec<f64> {
    let mut best = vec![f64::NEG_INFINITY; doc_count];
    for s in scored {
        let b = &mut best[s.item.doc_index as usize];
        if s.score > *b {
            *b = s.score;
        }
    }
    best
}

/// Orders documents by best scored page, then by the position of their
/// first page in `ranking`, then by index.
pub fn doc_ranking(ranking: &[PageId], scored: &[Scored<PageId>], doc_count: usize) -> Vec<usize> {
    let best = doc_level_scores(scored, doc_count);
    let mut first = vec![usize::MAX; doc_count];
    for (pos, p) in ranking.iter().enumerate() {
        let f = &mut first[p.doc_index as usize];
        if *f == usize::MAX {
            *f = pos;
        }
    }
    let mut docs: Vec<usize> = (0..doc_count).collect();
    docs.sort_by(|&a, &b| {
        best[b]
            .total_cmp(&best[a])
            .then(first[a].cmp(&first[b]))
            .then(a.cmp(&b))
    });
    docs
}

fn roman_value(s: &str) -> Option<u32> {
    let digit = |c: char| match c {
        'i' => Some(1),
        'v' => Some(5),
        'x' => Some(10),
        'l' => Some(50),
        'c' => Some(100),
        'd' => Some(500),
        'm' => Some(1000),
        _ => None,
    };
    let vals: Vec<u32> = s.chars().map(digit).collect::<Option<_>>()?;
    let mut total = 0;
    for (i, &v) in vals.iter().enumerate() {
        if vals.get(i + 1).is_some_and(|&n| n > v) {
            total -= v as i64;
        } else {
            total += v as i64;
        }
    }
    let total = u32::try_from(total).ok().filter(|&t| t > 0)?;
    (to_roman(total) == s).then_some(total)
}

fn to_roman(mut n: u32) -> String {
    const TABLE: [(u32, &str); 13] = [
        (1000, "m"),
        (900, "cm"),
        (500, "d"),
        (400, "cd"),
        (100, "c"),
        (90, "xc"),
        (50, "l"),
        (40, "xl"),
        (10, "x"),
        (9, "ix"),
        (5, "v"),
        (4, "iv"),
        (1, "i"),
    ];
    let mut out = String::new();
    for (v, s) in TABLE {
        while n >= v {
            out.push_str(s);
            n -= v;
        }
    }
    out
}

/// True when the text names a specific table or figure, e.g. "Figure 3" or
/// "table IV".
pub fn mentions_table_or_figure(text: &str) -> bool {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    words.windows(2).any(|w| {
        (w[0] == "table" || w[0] == "figure")
            && (w[1].chars().all(|c| c.is_ascii_digit()) || roman_value(w[1]).is_some())
    })
}

/// Splits queries into (kept, removed). Removed: queries that name a
/// specific table or figure, and queries without ground-truth pages.
pub fn heuristic_query_filter(queries: Vec<QueryRecord>) -> (Vec<QueryRecord>, Vec<QueryRecord>) {
    queries
        .into_iter()
        .partition(|q| !q.ground_truth.is_empty() && !mentions_table_or_figure(&q.text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalLevel {
    Page,
    Document,
}

impl EvalLevel {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalLevel::Page => "page",
            EvalLevel::Document => "document",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEval {
    pub query_id: String,
    /// Recall at each requested cutoff, same order as the cutoffs.
    pub recalls: Vec<f64>,
    pub ledger: FlopsLedger,
    pub wall_s: f64,
    pub mask_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub ks: Vec<usize>,
    pub per_query: Vec<QueryEval>,
    pub mean_recall: Vec<f64>,
    pub mean_flops: f64,
    pub mean_wall_s: f64,
    pub query_count: usize,
    pub filtered_count: usize,
}

pub fn evaluate_retrieval(
    retrieval: &Retrieval,
    query: &QueryRecord,
    index: &CorpusIndex,
    ks: &[usize],
    level: EvalLevel,
) -> Result<Vec<f64>> {
    match level {
        EvalLevel::Page => {
            let gt: HashSet<PageId> = query.ground_truth.iter().copied().collect();
            ks.iter().map(|&k| recall_at_k(&retrieval.ranking, &gt, k)).collect()
        }
        EvalLevel::Document => {
            let gt: HashSet<usize> = query.ground_truth.iter().map(|p| p.doc_index as usize).collect();
            let docs = doc_ranking(&retrieval.ranking, &retrieval.scored, index.doc_count());
            ks.iter().map(|&k| recall_at_k(&docs, &gt, k)).collect()
        }
    }
}

/// Runs the retriever over every query (in parallel on the current rayon
/// pool) and aggregates in query order. Queries without ground truth are
/// skipped and counted as filtered.
pub fn run_evaluation(
    retriever: &dyn Retriever,
    queries: &[QueryRecord],
    index: &CorpusIndex,
    ks: &[usize],
    level: EvalLevel,
) -> Result<(EvalResult, Vec<Retrieval>)> {
    let usable: Vec<&QueryRecord> = queries.iter().filter(|q| !q.ground_truth.is_empty()).collect();
    let outcomes = usable
        .par_iter()
        .map(|q| {
            let start = Instant::now();
            let r = retriever.retrieve(q)?;
            let wall_s = start.elapsed().as_secs_f64();
            let recalls = evaluate_retrieval(&r, q, index, ks, level)?;
            Ok((
                QueryEval {
                    query_id: q.query_id.clone(),
                    recalls,
                    ledger: r.ledger,
                    wall_s,
                    mask_fallback: r.trace.as_ref().is_some_and(|t| t.mask_fallback),
                },
                r,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (per_query, retrievals): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();

    let n = per_query.len();
    let mean = |f: &dyn Fn(&QueryEval) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_query.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let mean_recall = (0..ks.len()).map(|i| mean(&|q| q.recalls[i])).collect();
    let total_flops: u128 = per_query.iter().map(|q| u128::from(q.ledger.total())).sum();
    Ok((
        EvalResult {
            ks: ks.to_vec(),
            mean_recall,
            mean_flops: if n == 0 { 0.0 } else { total_flops as f64 / n as f64 },
            mean_wall_s: mean(&|q| q.wall_s),
            query_count: n,
            filtered_count: queries.len() - n,
            per_query,
        },
        retrievals,
    ))
}

/// One CSV line: a configuration and its aggregate metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run_id: String,
    pub method: String,
    pub level: EvalLevel,
    pub params: MethodParams,
    pub query_count: usize,
    /// Recall at [`REPORT_KS`].
    pub recall: [f64; 4],
    pub flops_total_b: f64,
    /// Omitted unless timing was requested, so reports stay reproducible.
    pub latency_s: Option<f64>,
}

pub const REPORT_HEADER: [&str; 19] = [
    "run_id",
    "method",
    "level",
    "reduction_factor",
    "p1",
    "p2",
    "topk",
    "alpha",
    "beta",
    "pool_factor",
    "prune_ratio",
    "seed",
    "query_count",
    "recall@1",
    "recall@3",
    "recall@100",
    "recall@200",
    "flops_total_B",
    "latency_s",
];

fn header() -> &'static [&'static str] {
    &REPORT_HEADER
}

impl ReportRow {
    /// Builds a row from an evaluation run with cutoffs [`REPORT_KS`].
    pub fn from_result(
        run_id: &str,
        method: &str,
        level: EvalLevel,
        params: MethodParams,
        result: &EvalResult,
        with_latency: bool,
    ) -> Result<Self> {
        if result.ks != REPORT_KS {
            return Err(Error::InvalidParameter(format!(
                "report rows need cutoffs {REPORT_KS:?}, got {:?}",
                result.ks
            )));
        }
        Ok(Self {
            run_id: run_id.to_string(),
            method: method.to_string(),
            level,
            params,
            query_count: result.query_count,
            recall: [
                result.mean_recall[0],
                result.mean_recall[1],
                result.mean_recall[2],
                result.mean_recall[3],
            ],
            flops_total_b: result.mean_flops / 1e9,
            latency_s: with_latency.then_some(result.mean_wall_s),
        })
    }

    fn fields(&self) -> Vec<String> {
        let f6 = |v: f64| format!("{v:.6}");
        let p = &self.params;
        let mut v = vec![
            self.run_id.clone(),
            self.method.clone(),
            self.level.as_str().to_string(),
            p.pipeline.r.to_string(),
            f6(p.pipeline.p1),
            f6(p.pipeline.p2),
            p.pipeline.k.to_string(),
            f6(p.pipeline.alpha),
            f6(p.pipeline.beta),
            p.pool_factor.to_string(),
            f6(p.prune_ratio),
            p.seed.to_string(),
            self.query_count.to_string(),
        ];
        v.extend(self.recall.iter().map(|&r| f6(r)));
        v.push(f6(self.flops_total_b));
        v.push(self.latency_s.map_or_else(|| "NA".to_string(), f6));
        v
    }
}

/// Deterministic CSV text for a set of rows (header only when empty).
pub fn render_report(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header())?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_report(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render_report(rows)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Parses report text back into rows.
pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != header() {
        return Err(Error::InvalidParameter(format!("unexpected report header {got:?}")));
    }
    let bad = |what: &str| Error::InvalidParameter(format!("bad report field {what}"));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(header()[i]));
        let int = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(header()[i]));
        let level = match &rec[2] {
            "page" => EvalLevel::Page,
            "document" => EvalLevel::Document,
            _ => return Err(bad("level")),
        };
        rows.push(ReportRow {
            run_id: rec[0].to_string(),
            method: rec[1].to_string(),
            level,
            params: MethodParams {
                pipeline: crate::pipeline::PipelineConfig {
                    r: int(3)? as usize,
                    p1: num(4)?,
                    p2: num(5)?,
                    k: int(6)? as usize,
                    alpha: num(7)?,
                    beta: num(8)?,
                },
                pool_factor: int(9)? as usize,
                prune_ratio: num(10)?,
                seed: int(11)?,
            },
            query_count: int(12)? as usize,
            recall: [num(13)?, num(14)?, num(15)?, num(16)?],
            flops_total_b: num(17)?,
            latency_s: if &rec[18] == "NA" { None } else { Some(num(18)?) },
        });
    }
    Ok(rows)
}
