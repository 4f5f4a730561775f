use std::path::Path;

use chrono::Utc;
use rusqlite::{params, Connection, OptionalExtension};
use thiserror::Error;

use super::api::{Annotation, AnnotationRequest, AnnotationResponse, AnnotationStatus, ClassDetail, ClassSummary};
use super::crawl::{Candidate, EdCandidateSet, SourceTag};
use crate::text::{normalize_whitespace, ElaborativeDescription, TextError};
use crate::ClassId;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("unknown class {0}")]
    NotFound(ClassId),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("{} classes still pending: {}", pending.len(), pending.join(", "))]
    Incomplete { pending: Vec<String> },
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("corrupt row: {0}")]
    Corrupt(String),
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS classes (
    class_id     INTEGER PRIMARY KEY,
    name         TEXT NOT NULL,
    exemplar_url TEXT,
    fetched_at   TEXT NOT NULL,
    warning      TEXT
);
CREATE TABLE IF NOT EXISTS candidates (
    class_id INTEGER NOT NULL REFERENCES classes(class_id),
    idx      INTEGER NOT NULL,
    text     TEXT NOT NULL,
    source   TEXT NOT NULL,
    PRIMARY KEY (class_id, idx)
);
CREATE TABLE IF NOT EXISTS annotations (
    class_id      INTEGER PRIMARY KEY REFERENCES classes(class_id),
    selected      TEXT NOT NULL,
    free_text     TEXT,
    annotator     TEXT NOT NULL,
    status        TEXT NOT NULL,
    duration_secs REAL NOT NULL,
    body          TEXT NOT NULL,
    version       INTEGER NOT NULL,
    updated_at    TEXT NOT NULL
);
";

/// Candidate and annotation persistence in a single SQLite file. Every
/// write is a committed transaction with `synchronous=FULL`, so a returned
/// `Ok` means the data is on disk.
pub struct EdStore {
    conn: Connection,
}

fn source_str(s: SourceTag) -> &'static str {
    match s {
        SourceTag::Encyclopedia => "encyclopedia",
        SourceTag::Dictionary => "dictionary",
    }
}

fn parse_source(s: &str) -> Result<SourceTag, StoreError> {
    match s {
        "encyclopedia" => Ok(SourceTag::Encyclopedia),
        "dictionary" => Ok(SourceTag::Dictionary),
        other => Err(StoreError::Corrupt(format!("source tag {other:?}"))),
    }
}

impl EdStore {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        Self::init(Connection::open(path)?)
    }

    /// A read-only connection to a store created elsewhere. Under WAL it
    /// reads committed snapshots without blocking the writer.
    pub fn open_read_only(path: &Path) -> Result<Self, StoreError> {
        use rusqlite::OpenFlags;
        let conn =
            Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)?;
        Ok(Self { conn })
    }

    pub fn open_in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn })
    }

    /// Replaces the candidates of `set.class_id`. An existing annotation is
    /// kept; its indices refer to the old list, so re-crawling an annotated
    /// class should be rare.
    pub fn put_candidates(&mut self, set: &EdCandidateSet, exemplar_url: Option<&str>) -> Result<(), StoreError> {
        let tx = self.conn.transaction()?;
        tx.execute(
            "INSERT INTO classes (class_id, name, exemplar_url, fetched_at, warning) VALUES (?1, ?2, ?3, ?4, ?5)
             ON CONFLICT(class_id) DO UPDATE SET name = ?2, exemplar_url = ?3, fetched_at = ?4, warning = ?5",
            params![
                set.class_id,
                set.query,
                exemplar_url,
                set.fetched_at.to_rfc3339(),
                set.warning
            ],
        )?;
        tx.execute("DELETE FROM candidates WHERE class_id = ?1", [set.class_id])?;
        for (i, c) in set.candidates.iter().enumerate() {
            tx.execute(
                "INSERT INTO candidates (class_id, idx, text, source) VALUES (?1, ?2, ?3, ?4)",
                params![set.class_id, i as i64, c.text, source_str(c.source)],
            )?;
        }
        tx.commit()?;
        Ok(())
    }

    pub fn list_classes(&self, status: Option<AnnotationStatus>) -> Result<Vec<ClassSummary>, StoreError> {
        let mut stmt = self.conn.prepare(
            "SELECT c.class_id, c.name, a.status, a.version FROM classes c
             LEFT JOIN annotations a ON a.class_id = c.class_id ORDER BY c.class_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, ClassId>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, Option<String>>(2)?,
                r.get::<_, Option<i64>>(3)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (class_id, name, st, version) = row?;
            let st = match st {
                Some(s) => s.parse().map_err(StoreError::Corrupt)?,
                None => AnnotationStatus::Pending,
            };
            if status.is_none_or(|want| want == st) {
                out.push(ClassSummary {
                    class_id,
                    name,
                    status: st,
                    version: version.unwrap_or(0) as u64,
                });
            }
        }
        Ok(out)
    }

    fn candidates(&self, class_id: ClassId) -> Result<Vec<Candidate>, StoreError> {
        let mut stmt = self
            .conn
            .prepare("SELECT text, source FROM candidates WHERE class_id = ?1 ORDER BY idx")?;
        let rows = stmt.query_map([class_id], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?;
        rows.map(|row| {
            let (text, source) = row?;
            Ok(Candidate {
                text,
                source: parse_source(&source)?,
            })
        })
        .collect()
    }

    fn annotation(&self, class_id: ClassId) -> Result<Option<Annotation>, StoreError> {
        let row = self
            .conn
            .query_row(
                "SELECT selected, free_text, annotator, status, duration_secs, body, version, updated_at
                 FROM annotations WHERE class_id = ?1",
                [class_id],
                |r| {
                    Ok((
                        r.get::<_, String>(0)?,
                        r.get::<_, Option<String>>(1)?,
                        r.get::<_, String>(2)?,
                        r.get::<_, String>(3)?,
                        r.get::<_, f64>(4)?,
                        r.get::<_, String>(5)?,
                        r.get::<_, i64>(6)?,
                        r.get::<_, String>(7)?,
                    ))
                },
            )
            .optional()?;
        row.map(
            |(selected, free_text, annotator, status, duration_secs, body, version, updated_at)| {
                Ok(Annotation {
                    class_id,
                    selected: serde_json::from_str(&selected).map_err(|e| StoreError::Corrupt(e.to_string()))?,
                    free_text,
                    annotator,
                    status: status.parse().map_err(StoreError::Corrupt)?,
                    duration_secs,
                    body,
                    version: version as u64,
                    updated_at,
                })
            },
        )
        .transpose()
    }

    pub fn detail(&self, class_id: ClassId) -> Result<ClassDetail, StoreError> {
        let (name, exemplar_url, warning) = self
            .conn
            .query_row(
                "SELECT name, exemplar_url, warning FROM classes WHERE class_id = ?1",
                [class_id],
                |r| Ok((r.get::<_, String>(0)?, r.get(1)?, r.get(2)?)),
            )
            .optional()?
            .ok_or(StoreError::NotFound(class_id))?;
        Ok(ClassDetail {
            class_id,
            name,
            exemplar_url,
            candidates: self.candidates(class_id)?,
            warning,
            annotation: self.annotation(class_id)?,
        })
    }

    /// Records an annotation. Concurrent submissions are last-writer-wins;
    /// a stale `base_version` is accepted and reported as a conflict.
    pub fn submit(&mut self, class_id: ClassId, req: &AnnotationRequest) -> Result<AnnotationResponse, StoreError> {
        let tx = self.conn.transaction()?;
        let exists: Option<i64> = tx
            .query_row("SELECT 1 FROM classes WHERE class_id = ?1", [class_id], |r| r.get(0))
            .optional()?;
        if exists.is_none() {
            return Err(StoreError::NotFound(class_id));
        }
        let candidates: Vec<String> = {
            let mut stmt = tx.prepare("SELECT text FROM candidates WHERE class_id = ?1 ORDER BY idx")?;
            let rows = stmt.query_map([class_id], |r| r.get(0))?;
            rows.collect::<Result<_, _>>()?
        };
        let body = compose_body(&candidates, req)?;
        if req.status == AnnotationStatus::Done && body.is_empty() {
            return Err(StoreError::InvalidAnnotation(
                "a done annotation needs a non-empty body".into(),
            ));
        }
        if !req.duration_secs.is_finite() || req.duration_secs < 0.0 {
            return Err(StoreError::InvalidAnnotation(format!("duration {}", req.duration_secs)));
        }
        let current: u64 = tx
            .query_row("SELECT version FROM annotations WHERE class_id = ?1", [class_id], |r| {
                r.get::<_, i64>(0)
            })
            .optional()?
            .unwrap_or(0) as u64;
        let conflict = req.base_version.is_some_and(|b| b != current);
        let version = current + 1;
        tx.execute(
            "INSERT INTO annotations (class_id, selected, free_text, annotator, status, duration_secs, body, version, updated_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)
             ON CONFLICT(class_id) DO UPDATE SET selected = ?2, free_text = ?3, annotator = ?4, status = ?5,
                 duration_secs = ?6, body = ?7, version = ?8, updated_at = ?9",
            params![
                class_id,
                serde_json::to_string(&req.selected).expect("indices serialize"),
                req.free_text,
                req.annotator,
                req.status.to_string(),
                req.duration_secs,
                body,
                version as i64,
                Utc::now().to_rfc3339(),
            ],
        )?;
        tx.commit()?;
        let warning = conflict.then(|| {
            format!(
                "class {class_id} changed since version {}; overwrote version {current}",
                req.base_version.unwrap_or_default()
            )
        });
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        Ok(AnnotationResponse {
            class_id,
            version,
            conflict,
            warning,
            body,
        })
    }

    /// Final descriptions of every done class, in class id order. Without
    /// `partial`, any pending class is an error.
    pub fn export(&self, partial: bool) -> Result<Vec<ElaborativeDescription>, StoreError> {
        let classes = self.list_classes(None)?;
        let pending: Vec<String> = classes
            .iter()
            .filter(|c| c.status == AnnotationStatus::Pending)
            .map(|c| format!("{} ({})", c.name, c.class_id))
            .collect();
        if !partial && !pending.is_empty() {
            return Err(StoreError::Incomplete { pending });
        }
        classes
            .iter()
            .filter(|c| c.status == AnnotationStatus::Done)
            .map(|c| {
                let ann = self.annotation(c.class_id)?.ok_or(StoreError::NotFound(c.class_id))?;
                Ok(ElaborativeDescription::from_definition(c.class_id, &c.name, &ann.body)?)
            })
            .collect()
    }
}

fn compose_body(candidates: &[String], req: &AnnotationRequest) -> Result<String, StoreError> {
    if let Some(text) = req
        .free_text
        .as_deref()
        .map(normalize_whitespace)
        .filter(|t| !t.is_empty())
    {
        return Ok(text);
    }
    let mut seen = std::collections::HashSet::new();
    let mut parts = Vec::with_capacity(req.selected.len());
    for &i in &req.selected {
        let text = candidates.get(i).ok_or_else(|| {
            StoreError::InvalidAnnotation(format!("candidate {i} out of range ({} candidates)", candidates.len()))
        })?;
        if !seen.insert(i) {
            return Err(StoreError::InvalidAnnotation(format!("candidate {i} selected twice")));
        }
        parts.push(text.as_str());
    }
    Ok(normalize_whitespace(&parts.join(" ")))
}
