use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{CorpusIndex, PageId};
use crate::error::{Error, Result};

/// Layout categories emitted by the document layout detector. Only `Title`
/// feeds VS-page construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutClass {
    Title,
    #[serde(alias = "plain text")]
    PlainText,
    Abandon,
    Figure,
    #[serde(alias = "figure caption")]
    FigureCaption,
    Table,
    #[serde(alias = "table caption")]
    TableCaption,
    #[serde(alias = "isolated formula")]
    IsolatedFormula,
    #[serde(alias = "formula caption")]
    FormulaCaption,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutBox {
    pub page: PageId,
    pub class: LayoutClass,
    /// `[x0, y0, x1, y1]` in pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
}

impl LayoutBox {
    pub fn validate(&self, dims: Option<(u32, u32)>) -> Result<()> {
        let [x0, y0, x1, y1] = self.bbox;
        if !(x0 < x1 && y0 < y1) || self.bbox.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Layout(format!("degenerate bbox {:?}", self.bbox)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Layout(format!("confidence {} outside [0,1]", self.confidence)));
        }
        if let Some((w, h)) = dims {
            if x1 > f64::from(w) || y1 > f64::from(h) {
                return Err(Error::Layout(format!(
                    "bbox {:?} outside page {} of size {w}x{h}",
                    self.bbox, self.page
                )));
            }
        }
        Ok(())
    }
}

/// One line of the layout annotation file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutRecord {
    pub doc_id: String,
    pub page_index: usize,
    pub class: LayoutClass,
    pub bbox: [f64; 4],
    pub confidence: f64,
}

/// Reads layout annotations and resolves them against the index, grouped by
/// document (outer index = document position).
pub fn load_layouts(path: impl AsRef<Path>, index: &CorpusIndex) -> Result<Vec<Vec<LayoutBox>>> {
    let path = path.as_ref();
    let records: Vec<LayoutRecord> = super::read_json_lines(path)?;
    let mut out = vec![Vec::new(); index.doc_count()];
    for r in records {
        let k = index.doc_index(&r.doc_id).ok_or_else(|| {
            Error::Layout(format!("layout references unknown doc_id {}", r.doc_id))
        })?;
        let page = PageId::new(k, r.page_index);
        if !index.contains(page) {
            return Err(Error::UnknownPage {
                doc_id: r.doc_id,
                page_index: r.page_index,
            });
        }
        let b = LayoutBox {
            page,
            class: r.class,
            bbox: r.bbox,
            confidence: r.confidence,
        };
        b.validate(index.info(page).dims)?;
        out[k].push(b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_names_parse() {
        for name in [
            "title",
            "plain_text",
            "abandon",
            "figure",
            "figure_caption",
            "table",
            "table_caption",
            "isolated_formula",
            "formula_caption",
            "plain text",
        ] {
            let c: LayoutClass = serde_json::from_str(&format!("\"{name}\"")).unwrap();
            assert_eq!(c == LayoutClass::Title, name == "title");
        }
    }

    #[test]
    fn bbox_validation() {
        let mut b = LayoutBox {
            page: PageId::new(0, 0),
            class: LayoutClass::Title,
            bbox: [0.0, 0.0, 10.0, 10.0],
            confidence: 0.5,
        };
        assert!(b.validate(Some((10, 10))).is_ok());
        assert!(b.validate(Some((9, 10))).is_err());
        b.bbox = [5.0, 0.0, 5.0, 10.0];
        assert!(b.validate(None).is_err());
    }
}
