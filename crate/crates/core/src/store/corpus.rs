use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::embedding::{load_embeddings, load_pooled, EmbeddingMatrix, PooledVector};
use crate::error::{Error, Result};
use crate::vspage::{GammaMap, VsPageFileRecord, DEFAULT_REDUCTION_FACTOR};

/// Page `page_index` of document `doc_index`, both 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageId {
    pub doc_index: u32,
    pub page_index: u32,
}

impl PageId {
    pub fn new(doc_index: usize, page_index: usize) -> Self {
        Self {
            doc_index: doc_index as u32,
            page_index: page_index as u32,
        }
    }
}

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.doc_index, self.page_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub doc_id: String,
    pub page_count: usize,
}

/// Optional per-page attributes used by VS-page rendering and grid pooling.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageInfo {
    pub dims: Option<(u32, u32)>,
    pub grid: Option<(usize, usize)>,
    pub image_path: Option<PathBuf>,
}

/// Corpus manifest (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub documents: Vec<DocEntry>,
    pub pages: Vec<PageEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vs_pages: Option<Vec<VsPageFileRecord>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocEntry {
    pub doc_id: String,
    pub page_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageEntry {
    pub doc_id: String,
    pub page_index: usize,
    pub pooled_path: String,
    pub multi_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_px: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height_px: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    /// Patch grid `[rows, cols]` of the multi-vector embedding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
}

/// Everything needed to assemble an index, pages in document-major order.
pub struct IndexParts {
    pub documents: Vec<DocumentMeta>,
    pub page_pooled: Vec<PooledVector>,
    pub page_multi: Vec<Arc<EmbeddingMatrix>>,
    pub page_info: Vec<PageInfo>,
    pub gamma: GammaMap,
    pub vs_pooled: Option<Vec<PooledVector>>,
}

/// Immutable, validated corpus. Pages are addressed by a dense position
/// (document-major, page order) as well as by [`PageId`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    documents: Vec<DocumentMeta>,
    doc_offsets: Vec<usize>,
    doc_lookup: HashMap<String, usize>,
    page_pooled: Vec<PooledVector>,
    page_multi: Vec<Arc<EmbeddingMatrix>>,
    page_info: Vec<PageInfo>,
    gamma: GammaMap,
    vs_pooled: Option<Vec<PooledVector>>,
    dim_single: usize,
    dim_multi: usize,
}

impl CorpusIndex {
    pub fn from_parts(parts: IndexParts) -> Result<Self> {
        let IndexParts {
            documents,
            page_pooled,
            page_multi,
            page_info,
            gamma,
            vs_pooled,
        } = parts;
        if documents.is_empty() {
            return Err(Error::Empty("corpus has no documents"));
        }
        let mut doc_offsets = Vec::with_capacity(documents.len() + 1);
        let mut doc_lookup = HashMap::with_capacity(documents.len());
        let mut total = 0;
        for (k, d) in documents.iter().enumerate() {
            if d.page_count == 0 {
                return Err(Error::Manifest(format!("document {} has no pages", d.doc_id)));
            }
            if doc_lookup.insert(d.doc_id.clone(), k).is_some() {
                return Err(Error::Manifest(format!("duplicate doc_id {}", d.doc_id)));
            }
            doc_offsets.push(total);
            total += d.page_count;
        }
        doc_offsets.push(total);

        for (name, len) in [
            ("pooled", page_pooled.len()),
            ("multi-vector", page_multi.len()),
            ("page info", page_info.len()),
            ("gamma", gamma.page_count()),
        ] {
            if len != total {
                return Err(Error::Manifest(format!(
                    "{name} entries: {len}, expected {total} pages"
                )));
            }
        }
        for (v, id) in gamma.ids().iter().enumerate() {
            let k = id.doc_index as usize;
            if gamma.members(v).iter().any(|p| p.doc_index as usize != k) {
                return Err(Error::Manifest(format!("VS-page {v} spans documents")));
            }
        }

        let dim_single = page_pooled[0].dim();
        let dim_multi = page_multi[0].dim();
        for p in &page_pooled {
            if p.dim() != dim_single {
                return Err(Error::DimensionMismatch {
                    expected: dim_single,
                    found: p.dim(),
                });
            }
        }
        for m in &page_multi {
            if m.dim() != dim_multi {
                return Err(Error::DimensionMismatch {
                    expected: dim_multi,
                    found: m.dim(),
                });
            }
        }
        for (m, info) in page_multi.iter().zip(&page_info) {
            if let Some((r, c)) = info.grid {
                if r * c != m.rows() {
                    return Err(Error::Manifest(format!(
                        "patch grid {r}x{c} does not match {} rows",
                        m.rows()
                    )));
                }
            }
        }
        if let Some(vs) = &vs_pooled {
            if vs.len() != gamma.len() {
                return Err(Error::Manifest(format!(
                    "{} VS-page embeddings for {} VS-pages",
                    vs.len(),
                    gamma.len()
                )));
            }
            for v in vs {
                if v.dim() != dim_single {
                    return Err(Error::DimensionMismatch {
                        expected: dim_single,
                        found: v.dim(),
                    });
                }
            }
        }

        Ok(Self {
            documents,
            doc_offsets,
            doc_lookup,
            page_pooled,
            page_multi,
            page_info,
            gamma,
            vs_pooled,
            dim_single,
            dim_multi,
        })
    }

    pub fn documents(&self) -> &[DocumentMeta] {
        &self.documents
    }

    pub fn doc_count(&self) -> usize {
        self.documents.len()
    }

    pub fn page_count(&self) -> usize {
        self.page_pooled.len()
    }

    pub fn dim_single(&self) -> usize {
        self.dim_single
    }

    pub fn dim_multi(&self) -> usize {
        self.dim_multi
    }

    pub fn doc_index(&self, doc_id: &str) -> Option<usize> {
        self.doc_lookup.get(doc_id).copied()
    }

    /// Dense position of a page; panics on ids not produced by this index.
    #[inline]
    pub fn flat(&self, page: PageId) -> usize {
        self.doc_offsets[page.doc_index as usize] + page.page_index as usize
    }

    pub fn contains(&self, page: PageId) -> bool {
        (page.doc_index as usize) < self.documents.len()
            && (page.page_index as usize) < self.documents[page.doc_index as usize].page_count
    }

    pub fn page_id(&self, flat: usize) -> PageId {
        let k = self.doc_offsets.partition_point(|&o| o <= flat) - 1;
        PageId::new(k, flat - self.doc_offsets[k])
    }

    pub fn page_ids(&self) -> impl Iterator<Item = PageId> + '_ {
        self.documents
            .iter()
            .enumerate()
            .flat_map(|(k, d)| (0..d.page_count).map(move |i| PageId::new(k, i)))
    }

    pub fn pooled(&self, page: PageId) -> &PooledVector {
        &self.page_pooled[self.flat(page)]
    }

    pub fn multi(&self, page: PageId) -> &EmbeddingMatrix {
        &self.page_multi[self.flat(page)]
    }

    pub fn info(&self, page: PageId) -> &PageInfo {
        &self.page_info[self.flat(page)]
    }

    pub fn gamma(&self) -> &GammaMap {
        &self.gamma
    }

    pub fn vs_pooled(&self) -> Option<&[PooledVector]> {
        self.vs_pooled.as_deref()
    }

    /// Page-count-weighted sum of multi-vector rows over the corpus.
    pub fn total_patches(&self) -> usize {
        self.page_multi.iter().map(|m| m.rows()).sum()
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Loads and validates a corpus manifest plus every file it references.
/// Relative paths are resolved against the manifest's directory.
pub fn build_index(manifest_path: impl AsRef<Path>) -> Result<CorpusIndex> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    index_from_manifest(&manifest, base)
}

pub(crate) fn index_from_manifest(manifest: &Manifest, base: &Path) -> Result<CorpusIndex> {
    let documents: Vec<DocumentMeta> = manifest
        .documents
        .iter()
        .map(|d| DocumentMeta {
            doc_id: d.doc_id.clone(),
            page_count: d.page_count,
        })
        .collect();
    let mut doc_lookup = HashMap::new();
    let mut offsets = Vec::with_capacity(documents.len());
    let mut total = 0;
    for (k, d) in documents.iter().enumerate() {
        if doc_lookup.insert(d.doc_id.as_str(), k).is_some() {
            return Err(Error::Manifest(format!("duplicate doc_id {}", d.doc_id)));
        }
        offsets.push(total);
        total += d.page_count;
    }

    let mut slots: Vec<Option<&PageEntry>> = vec![None; total];
    for p in &manifest.pages {
        let k = *doc_lookup.get(p.doc_id.as_str()).ok_or_else(|| {
            Error::Manifest(format!("page references unknown doc_id {}", p.doc_id))
        })?;
        if p.page_index >= documents[k].page_count {
            return Err(Error::UnknownPage {
                doc_id: p.doc_id.clone(),
                page_index: p.page_index,
            });
        }
        let slot = &mut slots[offsets[k] + p.page_index];
        if slot.is_some() {
            return Err(Error::DuplicatePage {
                doc_id: p.doc_id.clone(),
                page_index: p.page_index,
            });
        }
        *slot = Some(p);
    }
    if let Some(missing) = slots.iter().position(Option::is_none) {
        let k = offsets.partition_point(|&o| o <= missing) - 1;
        return Err(Error::Manifest(format!(
            "document {} declares {} pages but page {} has no entry",
            documents[k].doc_id,
            documents[k].page_count,
            missing - offsets[k]
        )));
    }

    let mut page_pooled = Vec::with_capacity(total);
    let mut page_multi = Vec::with_capacity(total);
    let mut page_info = Vec::with_capacity(total);
    for p in slots.into_iter().flatten() {
        page_pooled.push(load_pooled(resolve(base, &p.pooled_path))?);
        page_multi.push(Arc::new(load_embeddings(resolve(base, &p.multi_path))?));
        let dims = match (p.width_px, p.height_px) {
            (Some(w), Some(h)) => Some((w, h)),
            (None, None) => None,
            _ => {
                return Err(Error::Manifest(format!(
                    "{}#{}: width_px and height_px must be given together",
                    p.doc_id, p.page_index
                )))
            }
        };
        page_info.push(PageInfo {
            dims,
            grid: p.grid.map(|[r, c]| (r, c)),
            image_path: p.image_path.as_deref().map(|s| resolve(base, s)),
        });
    }

    let page_counts: Vec<usize> = documents.iter().map(|d| d.page_count).collect();
    let (gamma, vs_pooled) = match &manifest.vs_pages {
        None => (
            GammaMap::with_reduction_factor(&page_counts, DEFAULT_REDUCTION_FACTOR)?,
            None,
        ),
        Some(records) => gamma_from_records(records, &documents, &doc_lookup, base)?,
    };

    CorpusIndex::from_parts(IndexParts {
        documents,
        page_pooled,
        page_multi,
        page_info,
        gamma,
        vs_pooled,
    })
}

fn gamma_from_records(
    records: &[VsPageFileRecord],
    documents: &[DocumentMeta],
    doc_lookup: &HashMap<&str, usize>,
    base: &Path,
) -> Result<(GammaMap, Option<Vec<PooledVector>>)> {
    let mut per_doc: Vec<Vec<&VsPageFileRecord>> = vec![Vec::new(); documents.len()];
    for r in records {
        let k = *doc_lookup.get(r.doc_id.as_str()).ok_or_else(|| {
            Error::Manifest(format!("VS-page references unknown doc_id {}", r.doc_id))
        })?;
        per_doc[k].push(r);
    }
    let with_path = records.iter().filter(|r| r.pooled_path.is_some()).count();
    if with_path != 0 && with_path != records.len() {
        return Err(Error::Manifest(format!(
            "{with_path} of {} VS-pages carry pooled_path; give all or none",
            records.len()
        )));
    }

    let mut windows = Vec::with_capacity(documents.len());
    let mut ordered = Vec::with_capacity(records.len());
    for (k, recs) in per_doc.iter_mut().enumerate() {
        recs.sort_by_key(|r| r.group_index);
        let mut doc_windows = Vec::with_capacity(recs.len());
        for (j, r) in recs.iter().enumerate() {
            if r.group_index != j {
                return Err(Error::Manifest(format!(
                    "document {}: VS-page group indices are not 0..{}",
                    documents[k].doc_id,
                    recs.len()
                )));
            }
            let first = *r.member_pages.first().ok_or_else(|| {
                Error::Manifest(format!(
                    "document {}: VS-page {j} has no member pages",
                    documents[k].doc_id
                ))
            })?;
            if r.member_pages.iter().enumerate().any(|(o, &p)| p != first + o) {
                return Err(Error::Manifest(format!(
                    "document {}: VS-page {j} members are not consecutive",
                    documents[k].doc_id
                )));
            }
            doc_windows.push(first..first + r.member_pages.len());
            ordered.push(*r);
        }
        windows.push(doc_windows);
    }
    let page_counts: Vec<usize> = documents.iter().map(|d| d.page_count).collect();
    let gamma = GammaMap::from_windows(&page_counts, &windows)?;
    let vs_pooled = if with_path == 0 {
        None
    } else {
        Some(
            ordered
                .iter()
                .map(|r| load_pooled(resolve(base, r.pooled_path.as_deref().unwrap())))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    Ok((gamma, vs_pooled))
}
