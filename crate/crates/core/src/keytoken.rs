//! Key-token selection: query tokens tagged as nouns.
//!
//! Tags come from the query file when the data preparation step supplied
//! them. Otherwise a small rule-based tagger stands in: function words from
//! a bundled word list keep their listed tag, everything alphabetic is a
//! noun of some kind.

use std::collections::HashMap;
use std::sync::OnceLock;

/// Tags that mark a key token.
pub const NOUN_TAGS: [&str; 4] = ["NN", "NNS", "NNP", "NNPS"];

/// Version of the bundled function-word list. Bump when the list changes.
pub const STOPLIST_VERSION: u32 = 1;

const STOPLIST: &str = include_str!("../resources/stoplist.tsv");

fn stoplist() -> &'static HashMap<&'static str, &'static str> {
    static LIST: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    LIST.get_or_init(|| {
        STOPLIST
            .lines()
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter_map(|l| l.split_once('\t'))
            .collect()
    })
}

pub fn stoplist_len() -> usize {
    stoplist().len()
}

pub fn is_noun_tag(tag: &str) -> bool {
    NOUN_TAGS.contains(&tag)
}

pub fn key_mask_from_tags<S: AsRef<str>>(tags: &[S]) -> Vec<bool> {
    tags.iter().map(|t| is_noun_tag(t.as_ref())).collect()
}

/// Strips sub-word markers some tokenizers prepend.
fn normalize(token: &str) -> &str {
    token
        .strip_prefix('\u{2581}')
        .or_else(|| token.strip_prefix('\u{120}'))
        .or_else(|| token.strip_prefix("##"))
        .unwrap_or(token)
}

fn is_wordlike(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic())
        && s.chars().all(|c| c.is_alphabetic() || c == '-' || c == '\'')
}

fn punct_tag(s: &str) -> &'static str {
    match s {
        "," => ",",
        "." | "?" | "!" => ".",
        ":" | ";" | "..." => ":",
        "(" | "[" | "{" => "(",
        ")" | "]" | "}" => ")",
        "$" => "$",
        "#" => "#",
        "\"" | "``" | "''" | "'" => "''",
        _ => "SYM",
    }
}

/// Rule-based Penn-style tagging of a token sequence.
pub fn heuristic_tag<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let list = stoplist();
    tokens
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            let tok = normalize(raw.as_ref());
            let lower = tok.to_lowercase();
            if let Some(tag) = list.get(lower.as_str()) {
                return (*tag).to_string();
            }
            if tok.is_empty() {
                return "SYM".into();
            }
            if tok
                .chars()
                .all(|c| c.is_ascii_digit() || c == '.' || c == ',' || c == '%')
                && tok.chars().any(|c| c.is_ascii_digit())
            {
                return "CD".into();
            }
            if !tok.chars().any(char::is_alphanumeric) {
                return punct_tag(tok).into();
            }
            let capitalized = tok.chars().next().is_some_and(char::is_uppercase);
            if capitalized && i > 0 {
                return "NNP".into();
            }
            if is_wordlike(tok) {
                if lower.len() > 1 && lower.ends_with('s') {
                    "NNS".into()
                } else {
                    "NN".into()
                }
            } else if tok.chars().any(char::is_alphabetic) {
                // mixed letters and digits, e.g. "Q3" or "COVID-19"
                "NN".into()
            } else {
                "CD".into()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_set_selection() {
        assert_eq!(
            key_mask_from_tags(&["DT", "NN", "VBZ", "NNS"]),
            vec![false, true, false, true]
        );
        assert_eq!(key_mask_from_tags(&["NN", "NN"]), vec![true, true]);
        assert_eq!(key_mask_from_tags(&["DT", "VB"]), vec![false, false]);
        assert!(key_mask_from_tags(&["NNP", "NNPS"]).iter().all(|&b| b));
    }

    #[test]
    fn heuristic_examples() {
        let tags = heuristic_tag(&["what", "is", "the", "revenue"]);
        assert_eq!(key_mask_from_tags(&tags), vec![false, false, false, true]);
        assert_eq!(tags[3], "NN");

        let tags = heuristic_tag(&["Which", "company", "acquired", "DataCorp"]);
        assert_eq!(tags[3], "NNP");
        assert!(!is_noun_tag(&tags[0]));

        assert!(!is_noun_tag(&heuristic_tag(&[","])[0]));
        assert_eq!(heuristic_tag(&["2019"]), vec!["CD"]);
        assert_eq!(heuristic_tag(&["the", "sales"])[1], "NNS");
        assert_eq!(heuristic_tag(&["\u{2581}revenue"]), vec!["NN"]);
    }

    #[test]
    fn stoplist_is_loaded() {
        // golden size: editing the list must bump STOPLIST_VERSION
        assert_eq!(STOPLIST_VERSION, 1);
        assert_eq!(stoplist_len(), 150);
        assert!(stoplist().values().all(|t| !is_noun_tag(t)));
    }

    #[test]
    fn deterministic() {
        let toks = ["How", "many", "Employees", "did", "Acme", "report", "?"];
        assert_eq!(heuristic_tag(&toks), heuristic_tag(&toks));
        assert_eq!(heuristic_tag(&toks).len(), toks.len());
    }
}
