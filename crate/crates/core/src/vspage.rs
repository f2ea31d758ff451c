//! Visually-summarized page (VS-page) construction.
//!
//! Each document is cut into windows of `r` consecutive pages. The title
//! layouts found inside a window are cropped and stacked top to bottom into
//! one composite raster; the composite is embedded externally and scored in
//! place of the window's pages during candidate retrieval.

use std::collections::HashMap;
use std::ops::Range;

use image::{imageops, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{DocumentMeta, LayoutBox, LayoutClass, PageId};

/// Default cap on the window length.
pub const DEFAULT_REDUCTION_FACTOR: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VsPageId {
    pub doc_index: u32,
    pub group_index: u32,
}

/// Window length actually used for a document: `min(cap, page_count)`.
pub fn effective_reduction_factor(cap: usize, page_count: usize) -> usize {
    cap.min(page_count).max(1)
}

/// Splits `[0, page_count)` into `ceil(page_count / r)` consecutive windows.
pub fn partition_document(page_count: usize, r: usize) -> Result<Vec<Range<usize>>> {
    if r < 1 {
        return Err(Error::InvalidParameter(format!(
            "reduction factor must be >= 1, got {r}"
        )));
    }
    if page_count < 1 {
        return Err(Error::Empty("document has no pages"));
    }
    Ok((0..page_count.div_ceil(r))
        .map(|j| j * r..((j + 1) * r).min(page_count))
        .collect())
}

/// Page ↔ VS-page association. `forward` lists the member pages of each
/// VS-page; `inverse` maps every page (by dense position) to its VS-page.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMap {
    ids: Vec<VsPageId>,
    forward: Vec<Vec<PageId>>,
    inverse: Vec<usize>,
}

impl GammaMap {
    /// Builds the map from per-document page windows.
    ///
    /// `windows[k]` must cover `[0, page_counts[k])` with consecutive,
    /// disjoint, non-empty ranges in order.
    pub fn from_windows(page_counts: &[usize], windows: &[Vec<Range<usize>>]) -> Result<Self> {
        if page_counts.len() != windows.len() {
            return Err(Error::Manifest(format!(
                "{} documents but {} window lists",
                page_counts.len(),
                windows.len()
            )));
        }
        let total: usize = page_counts.iter().sum();
        let mut ids = Vec::new();
        let mut forward = Vec::new();
        let mut inverse = Vec::with_capacity(total);
        for (k, (&count, doc_windows)) in page_counts.iter().zip(windows).enumerate() {
            let mut next = 0;
            for (j, w) in doc_windows.iter().enumerate() {
                if w.start != next || w.end <= w.start || w.end > count {
                    return Err(Error::Manifest(format!(
                        "document {k}: VS-page {j} covers {w:?}, expected a non-empty window starting at {next}"
                    )));
                }
                next = w.end;
                let v = ids.len();
                ids.push(VsPageId {
                    doc_index: k as u32,
                    group_index: j as u32,
                });
                forward.push(
                    w.clone()
                        .map(|i| PageId::new(k, i))
                        .collect::<Vec<_>>(),
                );
                inverse.extend(std::iter::repeat_n(v, w.len()));
            }
            if next != count {
                return Err(Error::Manifest(format!(
                    "document {k}: VS-pages cover {next} of {count} pages"
                )));
            }
        }
        Ok(Self {
            ids,
            forward,
            inverse,
        })
    }

    /// Default windows of `min(cap, |D_k|)` pages.
    pub fn with_reduction_factor(page_counts: &[usize], cap: usize) -> Result<Self> {
        let windows = page_counts
            .iter()
            .map(|&n| partition_document(n, effective_reduction_factor(cap, n)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_windows(page_counts, &windows)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[VsPageId] {
        &self.ids
    }

    pub fn id(&self, vs: usize) -> VsPageId {
        self.ids[vs]
    }

    /// Member pages of a VS-page.
    pub fn members(&self, vs: usize) -> &[PageId] {
        &self.forward[vs]
    }

    /// VS-page (dense position) of the page at dense position `flat`.
    pub fn vs_of(&self, flat: usize) -> usize {
        self.inverse[flat]
    }

    pub fn page_count(&self) -> usize {
        self.inverse.len()
    }
}

/// One VS-page: its id, member pages and the ordered title crops.
#[derive(Debug, Clone, PartialEq)]
pub struct VsPageRecord {
    pub id: VsPageId,
    pub member_pages: Vec<PageId>,
    pub title_crops: Vec<LayoutBox>,
}

/// Groups a document's title layouts into VS-pages.
///
/// Non-title boxes are ignored. Titles are ordered by page, then `y0`, then
/// `x0`. Every page of the document belongs to exactly one record, including
/// pages without titles.
pub fn build_vs_pages(
    doc_index: usize,
    doc: &DocumentMeta,
    titles: &[LayoutBox],
    r: usize,
) -> Result<Vec<VsPageRecord>> {
    let windows = partition_document(doc.page_count, r)?;
    let mut sorted: Vec<&LayoutBox> = Vec::new();
    for t in titles {
        if t.page.doc_index as usize != doc_index || t.page.page_index as usize >= doc.page_count
        {
            return Err(Error::Layout(format!(
                "title on page {:?} is outside document {} ({} pages)",
                t.page, doc.doc_id, doc.page_count
            )));
        }
        if t.class == LayoutClass::Title {
            sorted.push(t);
        }
    }
    sorted.sort_by(|a, b| {
        a.page
            .page_index
            .cmp(&b.page.page_index)
            .then(a.bbox[1].total_cmp(&b.bbox[1]))
            .then(a.bbox[0].total_cmp(&b.bbox[0]))
    });

    Ok(windows
        .into_iter()
        .enumerate()
        .map(|(j, w)| VsPageRecord {
            id: VsPageId {
                doc_index: doc_index as u32,
                group_index: j as u32,
            },
            member_pages: w.clone().map(|i| PageId::new(doc_index, i)).collect(),
            title_crops: sorted
                .iter()
                .filter(|t| w.contains(&(t.page.page_index as usize)))
                .map(|t| (*t).clone())
                .collect(),
        })
        .collect())
}

/// Integer pixel rectangle `[x0, y0, x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    /// Smallest pixel rectangle containing a fractional box.
    pub fn enclosing(bbox: [f64; 4]) -> Self {
        Self {
            x0: bbox[0].max(0.0).floor() as u32,
            y0: bbox[1].max(0.0).floor() as u32,
            x1: bbox[2].max(0.0).ceil() as u32,
            y1: bbox[3].max(0.0).ceil() as u32,
        }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropInstruction {
    pub source: PageId,
    pub rect: PixelRect,
    pub target_y: u32,
}

/// How to compose a VS-page raster: crops stacked at `x = 0`, no scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyManifest {
    pub id: VsPageId,
    pub crops: Vec<CropInstruction>,
    pub width: u32,
    pub height: u32,
}

pub fn assemble_manifest(
    record: &VsPageRecord,
    page_dims: &HashMap<PageId, (u32, u32)>,
) -> Result<AssemblyManifest> {
    let mut crops = Vec::with_capacity(record.title_crops.len());
    let mut y = 0u32;
    let mut width = 0u32;
    for t in &record.title_crops {
        let &(w, h) = page_dims.get(&t.page).ok_or_else(|| {
            Error::Layout(format!("no pixel dimensions for page {:?}", t.page))
        })?;
        let rect = PixelRect::enclosing(t.bbox);
        if rect.x1 > w || rect.y1 > h || rect.width() == 0 || rect.height() == 0 {
            return Err(Error::Layout(format!(
                "bbox {:?} exceeds page {:?} of size {w}x{h}",
                t.bbox, t.page
            )));
        }
        crops.push(CropInstruction {
            source: t.page,
            rect,
            target_y: y,
        });
        y += rect.height();
        width = width.max(rect.width());
    }
    if crops.is_empty() {
        return Ok(AssemblyManifest {
            id: record.id,
            crops,
            width: 1,
            height: 1,
        });
    }
    Ok(AssemblyManifest {
        id: record.id,
        crops,
        width,
        height: y,
    })
}

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

/// Copies each crop pixel-exact into a white canvas of the composite size.
pub fn render_vs_page(
    manifest: &AssemblyManifest,
    page_rasters: &HashMap<PageId, RgbImage>,
) -> Result<RgbImage> {
    let mut out = RgbImage::from_pixel(manifest.width, manifest.height, WHITE);
    for c in &manifest.crops {
        let src = page_rasters
            .get(&c.source)
            .ok_or_else(|| Error::Render(format!("missing raster for page {:?}", c.source)))?;
        if c.rect.x1 > src.width() || c.rect.y1 > src.height() {
            return Err(Error::Render(format!(
                "crop {:?} exceeds raster {}x{} of page {:?}",
                c.rect,
                src.width(),
                src.height(),
                c.source
            )));
        }
        if c.rect.width() > manifest.width || c.target_y + c.rect.height() > manifest.height {
            return Err(Error::Render(format!(
                "crop {:?} at y={} does not fit composite {}x{}",
                c.rect, c.target_y, manifest.width, manifest.height
            )));
        }
        let view = imageops::crop_imm(src, c.rect.x0, c.rect.y0, c.rect.width(), c.rect.height());
        imageops::replace(&mut out, &*view, 0, i64::from(c.target_y));
    }
    Ok(out)
}

/// Line-oriented on-disk form of a VS-page, also accepted inline in corpus
/// manifests under `vs_pages`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsPageFileRecord {
    pub doc_id: String,
    pub group_index: usize,
    pub member_pages: Vec<usize>,
    #[serde(default)]
    pub crops: Vec<CropEntry>,
    pub composite: Composite,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropEntry {
    pub page_index: usize,
    pub bbox: [u32; 4],
    pub target_y: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Composite {
    pub w: u32,
    pub h: u32,
}

impl VsPageFileRecord {
    pub fn from_manifest(doc_id: &str, record: &VsPageRecord, m: &AssemblyManifest) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            group_index: record.id.group_index as usize,
            member_pages: record
                .member_pages
                .iter()
                .map(|p| p.page_index as usize)
                .collect(),
            crops: m
                .crops
                .iter()
                .map(|c| CropEntry {
                    page_index: c.source.page_index as usize,
                    bbox: [c.rect.x0, c.rect.y0, c.rect.x1, c.rect.y1],
                    target_y: c.target_y,
                })
                .collect(),
            composite: Composite {
                w: m.width,
                h: m.height,
            },
            pooled_path: None,
        }
    }
}

/// Serializes records one JSON object per line.
pub fn write_vs_manifest(records: &[VsPageFileRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_vs_manifest(text: &str, path: &std::path::Path) -> Result<Vec<VsPageFileRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
