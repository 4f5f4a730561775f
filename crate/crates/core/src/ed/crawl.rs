use std::collections::HashSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sources::{DictionarySource, EncyclopediaSource, SourceError};
use crate::text::normalize_whitespace;
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Encyclopedia,
    Dictionary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub source: SourceTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdCandidateSet {
    pub class_id: ClassId,
    pub query: String,
    pub candidates: Vec<Candidate>,
    pub fetched_at: DateTime<Utc>,
    /// Set when the sources answered but produced nothing usable.
    pub warning: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrawlError {
    #[error("every source was unreachable for {query:?}: {last}")]
    Unreachable { query: String, last: SourceError },
    #[error("empty query")]
    EmptyQuery,
    #[error("class list line {line}: {reason}")]
    BadClassList { line: usize, reason: String },
}

impl CrawlError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Unreachable { .. })
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "the", "of", "on", "in", "to", "with", "or", "at", "for", "by",
];

/// Splits at `.`, `!` or `?` followed by whitespace or the end of text.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            out.push(std::mem::take(&mut current));
        }
    }
    out.push(current);
    out.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Drops non-ASCII characters and collapses whitespace.
pub fn clean_sentence(s: &str) -> String {
    let ascii: String = s
        .chars()
        .map(|c| if c.is_whitespace() { ' ' } else { c })
        .filter(|c| c.is_ascii() && !c.is_ascii_control())
        .collect();
    normalize_whitespace(&ascii)
}

/// The whole query first, then each content word.
fn dictionary_terms(query: &str) -> Vec<String> {
    let phrase = normalize_whitespace(query).to_lowercase();
    let mut terms = vec![phrase.clone()];
    for w in phrase.split(' ') {
        if !STOPWORDS.contains(&w) && !terms.iter().any(|t| t == w) {
            terms.push(w.to_string());
        }
    }
    terms
}

/// Collects candidate sentences for one class: encyclopedia summary
/// sentences first, then dictionary definitions for the query phrase and
/// its words. Sentences are ASCII-cleaned and deduplicated, keeping the
/// first occurrence.
pub fn crawl_candidates(
    class_id: ClassId,
    class_name: &str,
    encyclopedia: &dyn EncyclopediaSource,
    dictionary: &dyn DictionarySource,
) -> Result<EdCandidateSet, CrawlError> {
    let query = normalize_whitespace(class_name);
    if query.is_empty() {
        return Err(CrawlError::EmptyQuery);
    }
    let mut raw: Vec<(String, SourceTag)> = Vec::new();
    let mut reached = false;
    let mut last_error = None;
    let mut note = |r: Result<(), SourceError>| match r {
        Ok(()) => reached = true,
        Err(e) => {
            log::warn!("source error for {query:?}: {e}");
            last_error = Some(e);
        }
    };

    let summary = encyclopedia.summary(&query).and_then(|s| match s {
        Some(s) => Ok(Some(s)),
        None => match encyclopedia.fallback_title(&query)? {
            Some(title) => encyclopedia.summary(&title),
            None => Ok(None),
        },
    });
    note(summary.map(|s| {
        for sentence in s.iter().flat_map(|s| split_sentences(s)) {
            raw.push((sentence, SourceTag::Encyclopedia));
        }
    }));
    for term in dictionary_terms(&query) {
        note(dictionary.definitions(&term).map(|defs| {
            for sentence in defs.iter().flat_map(|d| split_sentences(d)) {
                raw.push((sentence, SourceTag::Dictionary));
            }
        }));
    }
    if !reached {
        return Err(CrawlError::Unreachable {
            query,
            last: last_error.expect("at least one source was queried"),
        });
    }

    let mut seen = HashSet::new();
    let candidates: Vec<Candidate> = raw
        .into_iter()
        .map(|(s, source)| (clean_sentence(&s), source))
        .filter(|(s, _)| !s.is_empty() && seen.insert(s.clone()))
        .map(|(text, source)| Candidate { text, source })
        .collect();
    let warning = candidates
        .is_empty()
        .then(|| format!("no candidate sentences found for {query:?}"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(EdCandidateSet {
        class_id,
        query,
        candidates,
        fetched_at: Utc::now(),
        warning,
    })
}

/// Parses `id<TAB>name` lines. Blank lines and `#` comments are skipped;
/// ids and names must be unique.
pub fn parse_class_list(contents: &str) -> Result<Vec<(ClassId, String)>, CrawlError> {
    let mut out: Vec<(ClassId, String)> = Vec::new();
    let mut seen_ids = std::collections::BTreeSet::new();
    let mut seen_names = std::collections::BTreeSet::new();
    for (n, raw) in contents.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| CrawlError::BadClassList { line: n + 1, reason };
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected id<TAB>name".into()))?;
        let id: ClassId = id.trim().parse().map_err(|e| bad(format!("class id {id:?}: {e}")))?;
        let name = normalize_whitespace(name);
        if name.is_empty() {
            return Err(bad("empty class name".into()));
        }
        if !seen_ids.insert(id) || !seen_names.insert(name.clone()) {
            return Err(bad(format!("duplicate class {id} {name:?}")));
        }
        out.push((id, name));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::sources::FixtureSources;
    use super::*;

    fn fixtures() -> FixtureSources {
        let mut f = FixtureSources::default();
        f.encyclopedia.insert(
            "Archery".into(),
            "Archery is the sport of using a bow to shoot arrows. The word comes from Latin. It was used in hunting."
                .into(),
        );
        f.dictionary.insert(
            "archery".into(),
            vec!["the sport of shooting arrows with a bow.".into()],
        );
        f.dictionary.insert(
            "bow".into(),
            vec!["Archery is the sport of using a bow to shoot arrows.".into()],
        );
        f
    }

    #[test]
    fn sentence_split_keeps_terminators() {
        assert_eq!(split_sentences("One. Two!  Three"), vec!["One.", "Two!", "Three"]);
        assert_eq!(split_sentences("v1.5 is out."), vec!["v1.5 is out."]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn cleaning_removes_non_ascii() {
        assert_eq!(clean_sentence("caf\u{e9}  au\tlait \u{2014} ok"), "caf au lait ok");
    }

    #[test]
    fn encyclopedia_sentences_come_first_in_order() {
        let f = fixtures();
        let set = crawl_candidates(3, "archery", &f, &f).unwrap();
        let texts: Vec<&str> = set.candidates.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(
            texts,
            vec![
                "Archery is the sport of using a bow to shoot arrows.",
                "The word comes from Latin.",
                "It was used in hunting.",
                "the sport of shooting arrows with a bow.",
            ]
        );
        assert_eq!(set.candidates[3].source, SourceTag::Dictionary);
        assert!(set.warning.is_none());
    }

    #[test]
    fn duplicates_across_sources_are_stored_once() {
        let f = fixtures();
        let set = crawl_candidates(3, "archery bow", &f, &f).unwrap();
        let n = set
            .candidates
            .iter()
            .filter(|c| c.text == "Archery is the sport of using a bow to shoot arrows.")
            .count();
        assert_eq!(n, 1);
    }

    #[test]
    fn fallback_hook_is_consulted() {
        let mut f = fixtures();
        f.redirects.insert("shooting arrows".into(), "Archery".into());
        let set = crawl_candidates(1, "shooting arrows", &f, &f).unwrap();
        assert_eq!(set.candidates[0].source, SourceTag::Encyclopedia);
    }

    #[test]
    fn empty_and_unreachable() {
        let f = FixtureSources::default();
        let set = crawl_candidates(1, "zorbing", &f, &f).unwrap();
        assert!(set.candidates.is_empty());
        assert!(set.warning.is_some());

        let down = FixtureSources {
            offline: true,
            ..FixtureSources::default()
        };
        let err = crawl_candidates(1, "zorbing", &down, &down).unwrap_err();
        assert!(err.is_retryable());
    }

    #[test]
    fn fixture_crawl_is_idempotent() {
        let f = fixtures();
        let a = crawl_candidates(3, "archery", &f, &f).unwrap();
        let b = crawl_candidates(3, "archery", &f, &f).unwrap();
        assert_eq!(a.candidates, b.candidates);
    }
}
