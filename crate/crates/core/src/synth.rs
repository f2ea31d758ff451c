//! Seeded synthetic corpora for tests, benchmarks and demos.
//!
//! Two flavours:
//!
//! * random: embeddings uniform in `[-1, 1]`, each VS-page embedding is the
//!   mean of its member pages, ground truth is a random page;
//! * planted: every query gets a dedicated target page that is the unique
//!   maximizer of the pooled score, of (key-token) MaxSim and, through its
//!   VS-page, of the VS score. Needs `d_single >= query_count`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::store::{
    write_embeddings, write_pooled, CorpusIndex, DocEntry, DocumentMeta, EmbeddingMatrix, GtEntry,
    IndexParts, LayoutBox, LayoutClass, LayoutRecord, Manifest, PageEntry, PageId, PageInfo,
    PooledVector, QueryFileRecord, QueryRecord, TaggerSource,
};
use crate::vspage::{
    assemble_manifest, build_vs_pages, effective_reduction_factor, GammaMap, VsPageFileRecord,
};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub docs: usize,
    pub pages: (usize, usize),
    pub d_single: usize,
    pub d_multi: usize,
    pub patches: (usize, usize),
    pub queries: usize,
    pub query_tokens: usize,
    /// Fraction of query tokens marked as key tokens (at least one).
    pub key_share: f64,
    /// Trailing query rows flagged as augmentation tokens; 0 leaves
    /// `aug_mask` unset.
    pub aug_tokens: usize,
    /// VS-page window cap.
    pub r: usize,
    pub planted: bool,
    /// Reuse this many distinct patch matrices across pages (memory saver
    /// for cost experiments); `None` gives every page its own.
    pub shared_patch_pool: Option<usize>,
    pub page_px: (u32, u32),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 10,
            pages: (5, 20),
            d_single: 32,
            d_multi: 16,
            patches: (8, 24),
            queries: 10,
            query_tokens: 10,
            key_share: 0.3,
            aug_tokens: 0,
            r: 15,
            planted: false,
            shared_patch_pool: None,
            page_px: (64, 96),
            seed: 0,
        }
    }
}

pub struct SynthCorpus {
    pub index: CorpusIndex,
    pub queries: Vec<QueryRecord>,
    /// Layout annotations, one list per document.
    pub layouts: Vec<Vec<LayoutBox>>,
    pub config: SynthConfig,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v = uniform(rng, d, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Random vector with Euclidean norm at most `max_norm`.
fn small(rng: &mut ChaCha8Rng, d: usize, max_norm: f32) -> Vec<f32> {
    let v = unit(rng, d);
    let s = rng.random_range(0.0..max_norm);
    v.into_iter().map(|x| x * s).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.docs == 0 || cfg.pages.0 == 0 || cfg.pages.0 > cfg.pages.1 {
        return Err(Error::InvalidParameter("synthetic corpus needs pages".into()));
    }
    if cfg.patches.0 == 0 || cfg.patches.0 > cfg.patches.1 || cfg.query_tokens == 0 {
        return Err(Error::InvalidParameter("synthetic corpus needs patches and tokens".into()));
    }
    if cfg.planted && cfg.queries > cfg.d_single {
        return Err(Error::InvalidParameter(format!(
            "planted corpus needs d_single >= queries ({} < {})",
            cfg.d_single, cfg.queries
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let documents: Vec<DocumentMeta> = (0..cfg.docs)
        .map(|k| DocumentMeta {
            doc_id: format!("doc{k:04}"),
            page_count: rng.random_range(cfg.pages.0..=cfg.pages.1),
        })
        .collect();
    let page_ids: Vec<PageId> = documents
        .iter()
        .enumerate()
        .flat_map(|(k, d)| (0..d.page_count).map(move |i| PageId::new(k, i)))
        .collect();
    let n_pages = page_ids.len();
    let doc_offsets: Vec<usize> = documents
        .iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d.page_count;
            Some(o)
        })
        .collect();
    let page_counts: Vec<usize> = documents.iter().map(|d| d.page_count).collect();
    let gamma = GammaMap::with_reduction_factor(&page_counts, cfg.r)?;

    let n_queries = if cfg.planted { cfg.queries.min(n_pages) } else { cfg.queries };
    let targets: Vec<usize> = if cfg.planted {
        sample(&mut rng, n_pages, n_queries).into_vec()
    } else {
        (0..n_queries).map(|_| rng.random_range(0..n_pages)).collect()
    };

    // query side
    let mut q_tokens: Vec<Vec<Vec<f32>>> = Vec::with_capacity(n_queries);
    let mut q_pooled: Vec<Vec<f32>> = Vec::with_capacity(n_queries);
    for qi in 0..n_queries {
        q_tokens.push((0..cfg.query_tokens).map(|_| unit(&mut rng, cfg.d_multi)).collect());
        q_pooled.push(if cfg.planted {
            let mut e = vec![0.0; cfg.d_single];
            e[qi] = 1.0;
            e
        } else {
            uniform(&mut rng, cfg.d_single, 1.0)
        });
    }
    let target_of: HashMap<usize, usize> =
        targets.iter().enumerate().map(|(q, &t)| (t, q)).collect();

    // page side
    let mut page_pooled = Vec::with_capacity(n_pages);
    for flat in 0..n_pages {
        let v = match (cfg.planted, target_of.get(&flat)) {
            (true, Some(&q)) => q_pooled[q].clone(),
            (true, None) => uniform(&mut rng, cfg.d_single, 0.05),
            (false, _) => uniform(&mut rng, cfg.d_single, 1.0),
        };
        page_pooled.push(PooledVector::new(v)?);
    }

    let make_patches = |rng: &mut ChaCha8Rng, planted_rows: Option<&Vec<Vec<f32>>>| {
        let n = rng.random_range(cfg.patches.0..=cfg.patches.1);
        let mut rows: Vec<Vec<f32>> = match planted_rows {
            Some(q) => q.clone(),
            None => Vec::new(),
        };
        while rows.len() < n {
            rows.push(if cfg.planted {
                small(rng, cfg.d_multi, 0.3)
            } else {
                uniform(rng, cfg.d_multi, 1.0)
            });
        }
        EmbeddingMatrix::from_rows(&rows).map(Arc::new)
    };
    let pool: Option<Vec<Arc<EmbeddingMatrix>>> = cfg
        .shared_patch_pool
        .map(|size| (0..size.max(1)).map(|_| make_patches(&mut rng, None)).collect())
        .transpose()?;
    let mut page_multi = Vec::with_capacity(n_pages);
    for flat in 0..n_pages {
        let planted_rows = if cfg.planted {
            target_of.get(&flat).map(|&q| &q_tokens[q])
        } else {
            None
        };
        let m = match (&pool, planted_rows) {
            (Some(pool), None) => pool[flat % pool.len()].clone(),
            _ => make_patches(&mut rng, planted_rows)?,
        };
        page_multi.push(m);
    }

    // VS-pages
    let mut vs_pooled = Vec::with_capacity(gamma.len());
    for v in 0..gamma.len() {
        let members = gamma.members(v);
        let first = doc_offsets[members[0].doc_index as usize] + members[0].page_index as usize;
        let flats = first..first + members.len();
        let data = if cfg.planted {
            let mut acc = uniform(&mut rng, cfg.d_single, 0.05);
            for f in flats {
                if let Some(&q) = target_of.get(&f) {
                    acc[q] += 1.0;
                }
            }
            acc
        } else {
            let mut acc = vec![0f64; cfg.d_single];
            for f in flats.clone() {
                for (a, x) in acc.iter_mut().zip(page_pooled[f].data()) {
                    *a += f64::from(*x);
                }
            }
            acc.into_iter().map(|a| (a / flats.len() as f64) as f32).collect()
        };
        vs_pooled.push(PooledVector::new(data)?);
    }

    // layouts: up to two titles and one text block per page
    let (w, h) = cfg.page_px;
    let mut layouts = vec![Vec::new(); cfg.docs];
    for p in &page_ids {
        let n_titles = rng.random_range(0..=2u32);
        let mut y = 2.0;
        for _ in 0..n_titles {
            let th = f64::from(rng.random_range(4..=h / 8));
            let tw = f64::from(rng.random_range(8..=w - 4));
            layouts[p.doc_index as usize].push(LayoutBox {
                page: *p,
                class: LayoutClass::Title,
                bbox: [2.0, y, 2.0 + tw, y + th],
                confidence: 0.9,
            });
            y += th + 2.0;
        }
        layouts[p.doc_index as usize].push(LayoutBox {
            page: *p,
            class: LayoutClass::PlainText,
            bbox: [2.0, f64::from(h) / 2.0, f64::from(w) - 2.0, f64::from(h) - 2.0],
            confidence: 0.8,
        });
    }

    // queries
    let mut queries = Vec::with_capacity(n_queries);
    for qi in 0..n_queries {
        let n = cfg.query_tokens;
        let keys = ((cfg.key_share * n as f64).round() as usize).clamp(1, n);
        let mut key_mask = vec![false; n];
        for i in sample(&mut rng, n, keys) {
            key_mask[i] = true;
        }
        let aug_mask = (cfg.aug_tokens > 0).then(|| {
            let a = cfg.aug_tokens.min(n);
            (0..n).map(|i| i >= n - a).collect()
        });
        let target = page_ids[targets[qi]];
        queries.push(QueryRecord {
            query_id: format!("q{qi:04}"),
            text: format!("synthetic question {qi}"),
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            token_embeddings: EmbeddingMatrix::from_rows(&q_tokens[qi])?,
            pooled: PooledVector::new(q_pooled[qi].clone())?,
            key_mask,
            aug_mask,
            ground_truth: vec![target],
            tagger: TaggerSource::Mask,
        });
    }

    let page_info = vec![
        PageInfo {
            dims: Some(cfg.page_px),
            grid: None,
            image_path: None,
        };
        n_pages
    ];
    let index = CorpusIndex::from_parts(IndexParts {
        documents,
        page_pooled,
        page_multi,
        page_info,
        gamma,
        vs_pooled: Some(vs_pooled),
    })?;
    Ok(SynthCorpus {
        index,
        queries,
        layouts,
        config: cfg.clone(),
    })
}

/// Paths of a corpus written to disk.
pub struct WrittenCorpus {
    pub manifest: PathBuf,
    pub queries: PathBuf,
    pub layouts: PathBuf,
}

fn page_raster(p: PageId, (w, h): (u32, u32), titles: &[&LayoutBox]) -> RgbImage {
    let mut img = RgbImage::from_pixel(w, h, Rgb([250, 250, 250]));
    let shade = (p.doc_index * 37 + p.page_index * 11) % 200;
    for t in titles {
        let [x0, y0, x1, y1] = t.bbox;
        for y in y0 as u32..(y1 as u32).min(h) {
            for x in x0 as u32..(x1 as u32).min(w) {
                img.put_pixel(x, y, Rgb([shade as u8, (x % 256) as u8, (y % 256) as u8]));
            }
        }
    }
    img
}

impl SynthCorpus {
    /// Writes embeddings, manifest (with VS-pages), layouts, queries and
    /// optionally page PNGs under `dir`.
    pub fn write_to_dir(&self, dir: &Path, with_images: bool) -> Result<WrittenCorpus> {
        let emb = dir.join("emb");
        std::fs::create_dir_all(&emb).map_err(|e| Error::io(&emb, e))?;
        if with_images {
            let img = dir.join("images");
            std::fs::create_dir_all(&img).map_err(|e| Error::io(&img, e))?;
        }
        let idx = &self.index;
        let mut pages = Vec::with_capacity(idx.page_count());
        for p in idx.page_ids() {
            let stem = format!("p_{}_{}", p.doc_index, p.page_index);
            let pooled_path = format!("emb/{stem}.pooled.hvne");
            let multi_path = format!("emb/{stem}.multi.hvne");
            write_pooled(idx.pooled(p), dir.join(&pooled_path))?;
            write_embeddings(idx.multi(p), dir.join(&multi_path))?;
            let image_path = if with_images {
                let rel = format!("images/{stem}.png");
                let titles: Vec<&LayoutBox> = self.layouts[p.doc_index as usize]
                    .iter()
                    .filter(|b| b.page == p && b.class == LayoutClass::Title)
                    .collect();
                page_raster(p, self.config.page_px, &titles)
                    .save(dir.join(&rel))
                    .map_err(|e| Error::Render(e.to_string()))?;
                Some(rel)
            } else {
                None
            };
            pages.push(PageEntry {
                doc_id: idx.documents()[p.doc_index as usize].doc_id.clone(),
                page_index: p.page_index as usize,
                pooled_path,
                multi_path,
                width_px: Some(self.config.page_px.0),
                height_px: Some(self.config.page_px.1),
                image_path,
                grid: None,
            });
        }

        let dims: HashMap<PageId, (u32, u32)> =
            idx.page_ids().map(|p| (p, self.config.page_px)).collect();
        let mut vs_records = Vec::with_capacity(idx.gamma().len());
        let vs_vectors = idx.vs_pooled().expect("synthetic corpora carry VS embeddings");
        let mut v = 0;
        for (k, doc) in idx.documents().iter().enumerate() {
            let r = effective_reduction_factor(self.config.r, doc.page_count);
            for rec in build_vs_pages(k, doc, &self.layouts[k], r)? {
                let m = assemble_manifest(&rec, &dims)?;
                let mut file_rec = VsPageFileRecord::from_manifest(&doc.doc_id, &rec, &m);
                let rel = format!("emb/vs_{}_{}.hvne", k, rec.id.group_index);
                write_pooled(&vs_vectors[v], dir.join(&rel))?;
                file_rec.pooled_path = Some(rel);
                vs_records.push(file_rec);
                v += 1;
            }
        }

        let manifest = Manifest {
            documents: idx
                .documents()
                .iter()
                .map(|d| DocEntry {
                    doc_id: d.doc_id.clone(),
                    page_count: d.page_count,
                })
                .collect(),
            pages,
            vs_pages: Some(vs_records),
        };
        let manifest_path = dir.join("manifest.json");
        std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&manifest_path, e))?;

        let mut layout_lines = String::new();
        for boxes in &self.layouts {
            for b in boxes {
                let rec = LayoutRecord {
                    doc_id: idx.documents()[b.page.doc_index as usize].doc_id.clone(),
                    page_index: b.page.page_index as usize,
                    class: b.class,
                    bbox: b.bbox,
                    confidence: b.confidence,
                };
                layout_lines.push_str(&serde_json::to_string(&rec)?);
                layout_lines.push('\n');
            }
        }
        let layouts_path = dir.join("layouts.jsonl");
        std::fs::write(&layouts_path, layout_lines).map_err(|e| Error::io(&layouts_path, e))?;

        let mut query_lines = String::new();
        for q in &self.queries {
            let pooled_path = format!("emb/{}.pooled.hvne", q.query_id);
            let multi_path = format!("emb/{}.multi.hvne", q.query_id);
            write_pooled(&q.pooled, dir.join(&pooled_path))?;
            write_embeddings(&q.token_embeddings, dir.join(&multi_path))?;
            let rec = QueryFileRecord {
                query_id: q.query_id.clone(),
                text: q.text.clone(),
                tokens: q.tokens.clone(),
                pooled_path,
                multi_path,
                gt: q
                    .ground_truth
                    .iter()
                    .map(|p| GtEntry {
                        doc_id: idx.documents()[p.doc_index as usize].doc_id.clone(),
                        page_index: p.page_index as usize,
                    })
                    .collect(),
                pos_tags: None,
                key_mask: Some(q.key_mask.clone()),
                aug_mask: q.aug_mask.clone(),
            };
            query_lines.push_str(&serde_json::to_string(&rec)?);
            query_lines.push('\n');
        }
        let queries_path = dir.join("queries.jsonl");
        std::fs::write(&queries_path, query_lines).map_err(|e| Error::io(&queries_path, e))?;

        Ok(WrittenCorpus {
            manifest: manifest_path,
            queries: queries_path,
            layouts: layouts_path,
        })
    }
}
