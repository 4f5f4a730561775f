//! Request and response bodies of the annotation HTTP API, shared by the
//! service and its client.

use serde::{Deserialize, Serialize};

use super::crawl::Candidate;
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationStatus {
    Pending,
    Done,
}

impl std::str::FromStr for AnnotationStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(Self::Pending),
            "done" => Ok(Self::Done),
            other => Err(format!("unknown status {other:?}; expected pending or done")),
        }
    }
}

impl std::fmt::Display for AnnotationStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pending => "pending",
            Self::Done => "done",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class_id: ClassId,
    pub name: String,
    pub status: AnnotationStatus,
    /// Number of accepted submissions.
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: ClassId,
    pub selected: Vec<usize>,
    pub free_text: Option<String>,
    pub annotator: String,
    pub status: AnnotationStatus,
    pub duration_secs: f64,
    /// Definition text as it will be exported (without the class name).
    pub body: String,
    pub version: u64,
    pub updated_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDetail {
    pub class_id: ClassId,
    pub name: String,
    pub exemplar_url: Option<String>,
    pub candidates: Vec<Candidate>,
    pub warning: Option<String>,
    pub annotation: Option<Annotation>,
}

fn done() -> AnnotationStatus {
    AnnotationStatus::Done
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRequest {
    /// Candidate indices, concatenated in the given order.
    #[serde(default)]
    pub selected: Vec<usize>,
    /// Replaces the selection when non-empty.
    #[serde(default)]
    pub free_text: Option<String>,
    #[serde(default)]
    pub annotator: String,
    #[serde(default = "done")]
    pub status: AnnotationStatus,
    #[serde(default)]
    pub duration_secs: f64,
    /// Version the annotator started from; a stale value is accepted but
    /// flagged as a conflict.
    #[serde(default)]
    pub base_version: Option<u64>,
}

impl AnnotationRequest {
    pub fn select(indices: &[usize]) -> Self {
        Self {
            selected: indices.to_vec(),
            free_text: None,
            annotator: String::new(),
            status: AnnotationStatus::Done,
            duration_secs: 0.0,
            base_version: None,
        }
    }

    pub fn free_text(text: &str) -> Self {
        Self {
            free_text: Some(text.to_string()),
            ..Self::select(&[])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub class_id: ClassId,
    pub version: u64,
    pub conflict: bool,
    pub warning: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub error: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pending: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassQuery {
    pub status: Option<AnnotationStatus>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExportQuery {
    #[serde(default)]
    pub partial: bool,
}
