//! Corpus data model: embeddings, manifest, layouts, queries and the
//! immutable index the retrieval methods read from.

mod corpus;
mod embedding;
mod layout;
mod query;

pub use corpus::{
    build_index, CorpusIndex, DocEntry, DocumentMeta, IndexParts, Manifest, PageEntry, PageId,
    PageInfo,
};
pub use embedding::{
    decode_embeddings, encode_embeddings, load_embeddings, load_pooled, write_embeddings,
    write_pooled, EmbeddingMatrix, PooledVector, HEADER_LEN,
};
pub use layout::{load_layouts, LayoutBox, LayoutClass, LayoutRecord};
pub use query::{
    load_queries, parse_query_line, GtEntry, QueryFileRecord, QueryRecord, TaggerSource,
};

use std::path::Path;

use crate::error::{Error, Result};

/// Parses a file of one JSON object per line; blank lines are skipped.
pub(crate) fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
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
