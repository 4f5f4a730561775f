//! Candidate sentence sources. The crawler only sees these traits, so tests
//! and offline runs use recorded fixtures.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SourceError {
    /// Transport-level failure; the crawl can be retried.
    #[error("source unreachable: {0}")]
    Unreachable(String),
    #[error("bad response: {0}")]
    BadResponse(String),
}

/// Summary paragraphs keyed by page title.
pub trait EncyclopediaSource: Send + Sync {
    /// Summary of the page titled exactly `title`, or `None` if no such page.
    fn summary(&self, title: &str) -> Result<Option<String>, SourceError>;

    /// Title of a relevant page when `query` has no exact match. The default
    /// gives up; sources with a search endpoint override it.
    fn fallback_title(&self, _query: &str) -> Result<Option<String>, SourceError> {
        Ok(None)
    }
}

/// Definitions for a word or phrase.
pub trait DictionarySource: Send + Sync {
    fn definitions(&self, term: &str) -> Result<Vec<String>, SourceError>;
}

/// Recorded responses for both source kinds, stored as one JSON document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureSources {
    /// Page title → summary.
    pub encyclopedia: BTreeMap<String, String>,
    /// Query → page title, consulted when there is no exact page.
    pub redirects: BTreeMap<String, String>,
    /// Term → definitions.
    pub dictionary: BTreeMap<String, Vec<String>>,
    /// Simulate an outage.
    pub offline: bool,
}

impl FixtureSources {
    pub fn load(path: &Path) -> Result<Self, SourceError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SourceError::Unreachable(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| SourceError::BadResponse(format!("{}: {e}", path.display())))
    }

    fn guard(&self) -> Result<(), SourceError> {
        if self.offline {
            Err(SourceError::Unreachable("fixture marked offline".into()))
        } else {
            Ok(())
        }
    }
}

fn key(s: &str) -> String {
    s.trim().to_lowercase()
}

impl EncyclopediaSource for FixtureSources {
    fn summary(&self, title: &str) -> Result<Option<String>, SourceError> {
        self.guard()?;
        Ok(self
            .encyclopedia
            .iter()
            .find(|(t, _)| key(t) == key(title))
            .map(|(_, s)| s.clone()))
    }

    fn fallback_title(&self, query: &str) -> Result<Option<String>, SourceError> {
        self.guard()?;
        Ok(self
            .redirects
            .iter()
            .find(|(q, _)| key(q) == key(query))
            .map(|(_, t)| t.clone()))
    }
}

impl DictionarySource for FixtureSources {
    fn definitions(&self, term: &str) -> Result<Vec<String>, SourceError> {
        self.guard()?;
        Ok(self
            .dictionary
            .iter()
            .find(|(t, _)| key(t) == key(term))
            .map(|(_, d)| d.clone())
            .unwrap_or_default())
    }
}

#[cfg(feature = "online")]
pub use online::{DictionaryClient, EncyclopediaClient};

#[cfg(feature = "online")]
mod online {
    use super::*;
    use reqwest::blocking::Client;
    use reqwest::StatusCode;

    fn client() -> Result<Client, SourceError> {
        Client::builder()
            .user_agent(concat!("rehearsal/", env!("CARGO_PKG_VERSION")))
            .timeout(std::time::Duration::from_secs(20))
            .build()
            .map_err(|e| SourceError::Unreachable(e.to_string()))
    }

    fn get_json(client: &Client, url: &str) -> Result<Option<serde_json::Value>, SourceError> {
        let resp = client
            .get(url)
            .send()
            .map_err(|e| SourceError::Unreachable(e.to_string()))?;
        if resp.status() == StatusCode::NOT_FOUND {
            return Ok(None);
        }
        let resp = resp
            .error_for_status()
            .map_err(|e| SourceError::BadResponse(e.to_string()))?;
        resp.json()
            .map(Some)
            .map_err(|e| SourceError::BadResponse(e.to_string()))
    }

    /// Wikipedia REST summaries with opensearch as the fallback hook.
    pub struct EncyclopediaClient {
        client: Client,
        base: String,
    }

    impl EncyclopediaClient {
        pub fn new(base: impl Into<String>) -> Result<Self, SourceError> {
            Ok(Self {
                client: client()?,
                base: base.into(),
            })
        }
    }

    impl EncyclopediaSource for EncyclopediaClient {
        fn summary(&self, title: &str) -> Result<Option<String>, SourceError> {
            let url = format!(
                "{}/api/rest_v1/page/summary/{}",
                self.base,
                title.trim().replace(' ', "_")
            );
            Ok(get_json(&self.client, &url)?.and_then(|v| v.get("extract")?.as_str().map(str::to_string)))
        }

        fn fallback_title(&self, query: &str) -> Result<Option<String>, SourceError> {
            let url = reqwest::Url::parse_with_params(
                &format!("{}/w/api.php", self.base),
                &[
                    ("action", "opensearch"),
                    ("limit", "1"),
                    ("format", "json"),
                    ("search", query),
                ],
            )
            .map_err(|e| SourceError::BadResponse(e.to_string()))?;
            Ok(get_json(&self.client, url.as_str())?.and_then(|v| v.get(1)?.get(0)?.as_str().map(str::to_string)))
        }
    }

    /// Free dictionary API client.
    pub struct DictionaryClient {
        client: Client,
        base: String,
    }

    impl DictionaryClient {
        pub fn new(base: impl Into<String>) -> Result<Self, SourceError> {
            Ok(Self {
                client: client()?,
                base: base.into(),
            })
        }
    }

    impl DictionarySource for DictionaryClient {
        fn definitions(&self, term: &str) -> Result<Vec<String>, SourceError> {
            let url = format!("{}/api/v2/entries/en/{}", self.base, term.trim());
            let Some(v) = get_json(&self.client, &url)? else {
                return Ok(Vec::new());
            };
            let mut out = Vec::new();
            for entry in v.as_array().into_iter().flatten() {
                for meaning in entry.get("meanings").and_then(|m| m.as_array()).into_iter().flatten() {
                    for def in meaning
                        .get("definitions")
                        .and_then(|d| d.as_array())
                        .into_iter()
                        .flatten()
                    {
                        if let Some(s) = def.get("definition").and_then(|s| s.as_str()) {
                            out.push(s.to_string());
                        }
                    }
                }
            }
            Ok(out)
        }
    }
}
