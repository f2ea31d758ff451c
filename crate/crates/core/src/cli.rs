//! Command-line front end. `run` parses arguments, executes one subcommand
//! and returns the process exit code.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{
    emit_report, heuristic_query_filter, run_evaluation, EvalLevel, ReportRow, REPORT_KS,
};
use crate::pipeline::{read_traces, run_query, write_traces, PipelineConfig, StageTrace};
use crate::retriever::{MethodParams, Registry};
use crate::store::{build_index, load_layouts, load_queries, CorpusIndex, PageId, QueryRecord};
use crate::synth::{generate, SynthConfig};
use crate::variants::VariantKind;
use crate::vspage::{
    assemble_manifest, build_vs_pages, effective_reduction_factor, render_vs_page,
    write_vs_manifest, VsPageFileRecord, DEFAULT_REDUCTION_FACTOR,
};

/// Exit code for any input or validation failure.
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "heaven", version, about = "Hybrid-vector visual document retrieval")]
pub struct Cli {
    /// Seed for every random choice (pruning, synthetic corpora).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; affects wall time only.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus manifest and print a summary.
    Index {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the summary as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Group title layouts into VS-pages and write their manifest.
    BuildVspages {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        layouts: PathBuf,
        #[arg(long, default_value_t = DEFAULT_REDUCTION_FACTOR)]
        reduction_factor: usize,
        #[arg(long)]
        out: PathBuf,
        /// Write one composite PNG per VS-page here.
        #[arg(long)]
        render_dir: Option<PathBuf>,
    },
    /// Run the hybrid pipeline per query and print the top pages.
    Search {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// One JSON object per query instead of text.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Evaluate one method over a query set and write a CSV report.
    Evaluate {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value = "heaven")]
        method: String,
        #[arg(long, value_enum, default_value_t = Level::Page)]
        level: Level,
        #[arg(long, default_value_t = 1)]
        pool_factor: usize,
        #[arg(long, default_value_t = 0.0)]
        prune_ratio: f64,
        /// Drop queries naming a specific table or figure.
        #[arg(long)]
        heuristic_filter: bool,
        /// Record mean wall-clock latency (makes the report non-reproducible).
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a grid of variant settings, one CSV row each.
    Sweep {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// `heaven` or a variant name (doc_pool, doc_prune, query_pool, query_prune).
        #[arg(long)]
        variant: String,
        #[arg(long, value_delimiter = ',')]
        factors: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        topks: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Level::Page)]
        level: Level,
        #[arg(long)]
        heuristic_filter: bool,
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a trace dump.
    Trace {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        query: Option<String>,
    },
    /// Write a seeded synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        docs: usize,
        #[arg(long, default_value_t = 5)]
        pages_min: usize,
        #[arg(long, default_value_t = 20)]
        pages_max: usize,
        #[arg(long, default_value_t = 32)]
        d_single: usize,
        #[arg(long, default_value_t = 16)]
        d_multi: usize,
        #[arg(long, default_value_t = 16)]
        patches: usize,
        #[arg(long, default_value_t = 10)]
        queries: usize,
        #[arg(long, default_value_t = 10)]
        query_tokens: usize,
        #[arg(long, default_value_t = 0.3)]
        key_share: f64,
        #[arg(long, default_value_t = DEFAULT_REDUCTION_FACTOR)]
        reduction_factor: usize,
        /// Give every query a unique best page.
        #[arg(long)]
        planted: bool,
        /// Also write page PNGs.
        #[arg(long)]
        images: bool,
    },
}

#[derive(Debug, Args)]
pub struct Inputs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
}

/// Pipeline flags. `alpha` and `beta` default by evaluation level.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Recorded in reports; the VS-page grouping itself comes from the manifest.
    #[arg(long, default_value_t = DEFAULT_REDUCTION_FACTOR)]
    pub reduction_factor: usize,
    #[arg(long, default_value_t = 0.5)]
    pub p1: f64,
    #[arg(long, default_value_t = 0.25)]
    pub p2: f64,
    #[arg(long, default_value_t = 200)]
    pub topk: usize,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
}

impl PipelineArgs {
    pub fn resolve(&self, level: EvalLevel) -> Result<PipelineConfig> {
        let base = match level {
            EvalLevel::Page => PipelineConfig::default(),
            EvalLevel::Document => PipelineConfig::document_level(),
        };
        let cfg = PipelineConfig {
            r: self.reduction_factor,
            p1: self.p1,
            p2: self.p2,
            k: self.topk,
            alpha: self.alpha.unwrap_or(base.alpha),
            beta: self.beta.unwrap_or(base.beta),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Page,
    Document,
}

impl From<Level> for EvalLevel {
    fn from(l: Level) -> Self {
        match l {
            Level::Page => EvalLevel::Page,
            Level::Document => EvalLevel::Document,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command, seed))
        }
        None => dispatch(cli.command, seed),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_inputs(inputs: &Inputs) -> Result<(Arc<CorpusIndex>, Vec<QueryRecord>)> {
    require_file(&inputs.manifest)?;
    require_file(&inputs.queries)?;
    let index = build_index(&inputs.manifest)?;
    let queries = load_queries(&inputs.queries, &index)?;
    Ok((Arc::new(index), queries))
}

fn dispatch(command: Command, seed: u64) -> Result<()> {
    match command {
        Command::Index { manifest, out } => cmd_index(&manifest, out.as_deref()),
        Command::BuildVspages {
            manifest,
            layouts,
            reduction_factor,
            out,
            render_dir,
        } => cmd_build_vspages(&manifest, &layouts, reduction_factor, &out, render_dir.as_deref()),
        Command::Search {
            inputs,
            pipeline,
            top,
            json,
            trace_out,
        } => {
            let cfg = pipeline.resolve(EvalLevel::Page)?;
            if let Some(t) = &trace_out {
                check_output(t)?;
            }
            cmd_search(&inputs, &cfg, top, json, trace_out.as_deref())
        }
        Command::Evaluate {
            inputs,
            pipeline,
            method,
            level,
            pool_factor,
            prune_ratio,
            heuristic_filter,
            timing,
            run_id,
            trace_out,
            out,
        } => {
            let level = EvalLevel::from(level);
            let params = MethodParams {
                pipeline: pipeline.resolve(level)?,
                pool_factor,
                prune_ratio,
                seed,
            };
            check_output(&out)?;
            let (index, queries) = load_inputs(&inputs)?;
            let queries = filter_queries(queries, heuristic_filter);
            let run_id = run_id.unwrap_or_else(|| format!("{method}-{}", level.as_str()));
            let (row, traces) =
                evaluate_one(&run_id, &method, level, params, index, &queries, timing)?;
            emit_report(&[row], &out)?;
            if let Some(t) = trace_out {
                let mut buf = Vec::new();
                write_traces(&mut buf, &traces)?;
                write_file(&t, &buf)?;
            }
            Ok(())
        }
        Command::Sweep {
            inputs,
            pipeline,
            variant,
            factors,
            ratios,
            topks,
            level,
            heuristic_filter,
            timing,
            out,
        } => {
            let level = EvalLevel::from(level);
            let base = MethodParams {
                pipeline: pipeline.resolve(level)?,
                seed,
                ..MethodParams::default()
            };
            let grid = sweep_grid(&variant, base, &factors, &ratios, &topks)?;
            check_output(&out)?;
            let (index, queries) = load_inputs(&inputs)?;
            let queries = filter_queries(queries, heuristic_filter);
            let mut rows = Vec::with_capacity(grid.len());
            for (i, params) in grid.into_iter().enumerate() {
                let run_id = format!("{variant}-{i:03}");
                let (row, _) =
                    evaluate_one(&run_id, &variant, level, params, index.clone(), &queries, timing)?;
                log::info!("{run_id}: recall@1 {:.4}", row.recall[0]);
                rows.push(row);
            }
            emit_report(&rows, &out)
        }
        Command::Trace { file, query } => cmd_trace(&file, query.as_deref()),
        Command::Synth {
            out,
            docs,
            pages_min,
            pages_max,
            d_single,
            d_multi,
            patches,
            queries,
            query_tokens,
            key_share,
            reduction_factor,
            planted,
            images,
        } => {
            let cfg = SynthConfig {
                docs,
                pages: (pages_min, pages_max),
                d_single,
                d_multi,
                patches: (patches, patches),
                queries,
                query_tokens,
                key_share,
                r: reduction_factor,
                planted,
                seed,
                ..SynthConfig::default()
            };
            let corpus = generate(&cfg)?;
            let written = corpus.write_to_dir(&out, images)?;
            println!("manifest {}", written.manifest.display());
            println!("queries {}", written.queries.display());
            println!("layouts {}", written.layouts.display());
            Ok(())
        }
    }
}

/// Fails early when the output location cannot be created.
fn check_output(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn filter_queries(queries: Vec<QueryRecord>, heuristic: bool) -> Vec<QueryRecord> {
    if !heuristic {
        return queries;
    }
    let total = queries.len();
    let (kept, removed) = heuristic_query_filter(queries);
    log::info!(
        "heuristic filter removed {} of {} queries ({:.1}%)",
        removed.len(),
        total,
        100.0 * removed.len() as f64 / total.max(1) as f64
    );
    kept
}

fn evaluate_one(
    run_id: &str,
    method: &str,
    level: EvalLevel,
    params: MethodParams,
    index: Arc<CorpusIndex>,
    queries: &[QueryRecord],
    timing: bool,
) -> Result<(ReportRow, Vec<StageTrace>)> {
    let retriever = Registry::builtin().build(method, &params, index.clone())?;
    let (result, retrievals) = run_evaluation(retriever.as_ref(), queries, &index, &REPORT_KS, level)?;
    if result.query_count == 0 {
        log::warn!("{run_id}: no query has ground truth");
    }
    let row = ReportRow::from_result(run_id, method, level, params, &result, timing)?;
    let traces = retrievals.into_iter().filter_map(|r| r.trace).collect();
    Ok((row, traces))
}

fn sweep_grid(
    variant: &str,
    base: MethodParams,
    factors: &[usize],
    ratios: &[f64],
    topks: &[usize],
) -> Result<Vec<MethodParams>> {
    let missing = |flag: &str| Error::InvalidParameter(format!("sweep over {variant} needs {flag}"));
    if variant == "heaven" {
        if topks.is_empty() {
            return Err(missing("--topks"));
        }
        return Ok(topks
            .iter()
            .map(|&k| MethodParams {
                pipeline: PipelineConfig { k, ..base.pipeline },
                ..base
            })
            .collect());
    }
    let kind: VariantKind = variant.parse()?;
    if kind.is_pooling() {
        if factors.is_empty() {
            return Err(missing("--factors"));
        }
        Ok(factors
            .iter()
            .map(|&f| MethodParams {
                pool_factor: f,
                ..base
            })
            .collect())
    } else {
        if ratios.is_empty() {
            return Err(missing("--ratios"));
        }
        Ok(ratios
            .iter()
            .map(|&r| MethodParams {
                prune_ratio: r,
                ..base
            })
            .collect())
    }
}

#[derive(Serialize)]
struct IndexSummary {
    documents: usize,
    pages: usize,
    vs_pages: usize,
    vs_embeddings: bool,
    dim_single: usize,
    dim_multi: usize,
    total_patches: usize,
}

fn cmd_index(manifest: &Path, out: Option<&Path>) -> Result<()> {
    require_file(manifest)?;
    let index = build_index(manifest)?;
    let summary = IndexSummary {
        documents: index.doc_count(),
        pages: index.page_count(),
        vs_pages: index.gamma().len(),
        vs_embeddings: index.vs_pooled().is_some(),
        dim_single: index.dim_single(),
        dim_multi: index.dim_multi(),
        total_patches: index.total_patches(),
    };
    println!("documents {}", summary.documents);
    println!("pages {}", summary.pages);
    println!("vs_pages {}", summary.vs_pages);
    println!("dim_single {}", summary.dim_single);
    println!("dim_multi {}", summary.dim_multi);
    println!("total_patches {}", summary.total_patches);
    if let Some(out) = out {
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        write_file(out, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_build_vspages(
    manifest: &Path,
    layouts: &Path,
    r: usize,
    out: &Path,
    render_dir: Option<&Path>,
) -> Result<()> {
    require_file(manifest)?;
    require_file(layouts)?;
    if r < 1 {
        return Err(Error::InvalidParameter(format!("reduction factor must be >= 1, got {r}")));
    }
    check_output(out)?;
    let index = build_index(manifest)?;
    let boxes = load_layouts(layouts, &index)?;

    let mut images: HashMap<PageId, image::RgbImage> = HashMap::new();
    if render_dir.is_some() {
        for p in index.page_ids() {
            let info = index.info(p);
            let path = info.image_path.as_ref().ok_or_else(|| {
                Error::Render(format!("page {p} has no image_path in the manifest"))
            })?;
            let img = image::open(path)
                .map_err(|e| Error::Render(format!("{}: {e}", path.display())))?
                .to_rgb8();
            images.insert(p, img);
        }
    }
    let dims: HashMap<PageId, (u32, u32)> = index
        .page_ids()
        .filter_map(|p| {
            index
                .info(p)
                .dims
                .or_else(|| images.get(&p).map(|i| i.dimensions()))
                .map(|d| (p, d))
        })
        .collect();

    let mut records = Vec::new();
    for (k, doc) in index.documents().iter().enumerate() {
        let eff = effective_reduction_factor(r, doc.page_count);
        for rec in build_vs_pages(k, doc, &boxes[k], eff)? {
            let m = assemble_manifest(&rec, &dims)?;
            if let Some(dir) = render_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let png = dir.join(format!("{}_{:04}.png", doc.doc_id, rec.id.group_index));
                render_vs_page(&m, &images)?
                    .save(&png)
                    .map_err(|e| Error::Render(format!("{}: {e}", png.display())))?;
            }
            records.push(VsPageFileRecord::from_manifest(&doc.doc_id, &rec, &m));
        }
    }
    write_file(out, write_vs_manifest(&records)?.as_bytes())?;
    println!("vs_pages {}", records.len());
    Ok(())
}

#[derive(Serialize)]
struct SearchHit {
    rank: usize,
    doc_id: String,
    page_index: u32,
    /// Final fused score; absent for pages outside the final candidates.
    score: Option<f64>,
    stage1: Option<f64>,
    maxsim: Option<f64>,
}

#[derive(Serialize)]
struct SearchResult<'a> {
    query_id: &'a str,
    hits: Vec<SearchHit>,
}

fn cmd_search(
    inputs: &Inputs,
    cfg: &PipelineConfig,
    top: usize,
    json: bool,
    trace_out: Option<&Path>,
) -> Result<()> {
    let (index, queries) = load_inputs(inputs)?;
    use rayon::prelude::*;
    let traces = queries
        .par_iter()
        .map(|q| run_query(q, &index, cfg))
        .collect::<Result<Vec<_>>>()?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let w = |e| Error::io("<stdout>", e);
    for (q, t) in queries.iter().zip(&traces) {
        let fused: HashMap<PageId, f64> = t.final_cstar.iter().map(|s| (s.item, s.score)).collect();
        let stage1: HashMap<PageId, f64> = t.candidates.iter().map(|s| (s.item, s.score)).collect();
        let multi: HashMap<PageId, f64> = t.multi.iter().map(|s| (s.item, s.score)).collect();
        let hits: Vec<SearchHit> = t
            .ranking
            .iter()
            .take(top)
            .enumerate()
            .map(|(i, p)| SearchHit {
                rank: i + 1,
                doc_id: index.documents()[p.doc_index as usize].doc_id.clone(),
                page_index: p.page_index,
                score: fused.get(p).copied(),
                stage1: stage1.get(p).copied(),
                maxsim: multi.get(p).copied(),
            })
            .collect();
        if json {
            let line = serde_json::to_string(&SearchResult {
                query_id: &q.query_id,
                hits,
            })?;
            writeln!(out, "{line}").map_err(w)?;
        } else {
            writeln!(out, "query {}: {}", q.query_id, q.text).map_err(w)?;
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
            for h in hits {
                writeln!(
                    out,
                    "{:>4}  {}:{}  score={}  stage1={}  maxsim={}",
                    h.rank,
                    h.doc_id,
                    h.page_index,
                    fmt(h.score),
                    fmt(h.stage1),
                    fmt(h.maxsim)
                )
                .map_err(w)?;
            }
        }
    }
    if let Some(path) = trace_out {
        let mut buf = Vec::new();
        write_traces(&mut buf, &traces)?;
        write_file(path, &buf)?;
    }
    Ok(())
}

fn cmd_trace(file: &Path, query: Option<&str>) -> Result<()> {
    let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    let traces = read_traces(&text)?;
    let mut shown = 0;
    for t in traces.iter().filter(|t| query.is_none_or(|q| q == t.query_id)) {
        shown += 1;
        println!("query {}", t.query_id);
        println!(
            "  vs_pages {} kept {}  candidates {} refined {}  final {}{}",
            t.vs_ranking.len(),
            t.vs_kept,
            t.candidates.len(),
            t.refined_len,
            t.final_cstar.len(),
            if t.mask_fallback { "  (mask fallback)" } else { "" }
        );
        let l = &t.ledger;
        println!(
            "  flops stage1_vs {} stage1_refine {} stage2_filtered {} stage2_refine {} total {}",
            l.stage1_vs,
            l.stage1_refine,
            l.stage2_filtered,
            l.stage2_refine,
            l.total()
        );
        for (i, s) in t.final_cstar.iter().take(5).enumerate() {
            println!("  {:>2}. {} {:.6}", i + 1, s.item, s.score);
        }
    }
    if let Some(q) = query {
        if shown == 0 {
            return Err(Error::InvalidParameter(format!("no trace for query {q}")));
        }
    }
    Ok(())
}
