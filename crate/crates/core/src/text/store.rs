//! Line-delimited description files.
//!
//! One UTF-8 record per line: `subject_id<TAB>name<TAB>body`, where `body`
//! is the `"name : definition"` text. Blank lines and lines starting with
//! `#` are ignored.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::{normalize_whitespace, ElaborativeDescription, TextError};

#[derive(Debug, Error)]
pub enum EdFileError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate subject id {id}")]
    Duplicate { line: usize, id: u32 },
}

pub fn format_record(ed: &ElaborativeDescription) -> String {
    format!("{}\t{}\t{}", ed.subject_id, normalize_whitespace(&ed.name), ed.body)
}

pub fn parse(contents: &str) -> Result<Vec<ElaborativeDescription>, EdFileError> {
    let mut out: Vec<ElaborativeDescription> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in contents.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut fields = raw.splitn(3, '\t');
        let (Some(id), Some(name), Some(body)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(EdFileError::Parse {
                line,
                message: "expected three tab-separated fields".into(),
            });
        };
        let id: u32 = id.trim().parse().map_err(|_| EdFileError::Parse {
            line,
            message: format!("invalid subject id {id:?}"),
        })?;
        if !seen.insert(id) {
            return Err(EdFileError::Duplicate { line, id });
        }
        let ed = ElaborativeDescription::new(id, name, body).map_err(|e: TextError| EdFileError::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(ed);
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<ElaborativeDescription>, EdFileError> {
    let contents = fs::read_to_string(path).map_err(|source| EdFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&contents)
}

pub fn render(eds: &[ElaborativeDescription]) -> String {
    let mut out = String::new();
    for ed in eds {
        out.push_str(&format_record(ed));
        out.push('\n');
    }
    out
}

pub fn write(path: &Path, eds: &[ElaborativeDescription]) -> Result<(), EdFileError> {
    let io_err = |source| EdFileError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(render(eds).as_bytes()).map_err(io_err)?;
    file.sync_all().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bodies() {
        let eds = vec![
            ElaborativeDescription::from_definition(0, "clean and jerk", "a two - movement weightlifting exercise .")
                .unwrap(),
            ElaborativeDescription::from_definition(5, "fidgeting", "playing fidget spinner").unwrap(),
        ];
        let parsed = parse(&render(&eds)).unwrap();
        assert_eq!(parsed, eds);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(parse("1\tonly two"), Err(EdFileError::Parse { line: 1, .. })));
        assert!(matches!(parse("x\ta\tb"), Err(EdFileError::Parse { .. })));
        assert!(matches!(
            parse("1\ta\tb\n1\tc\td"),
            Err(EdFileError::Duplicate { line: 2, id: 1 })
        ));
        assert!(matches!(parse("1\ta\t  "), Err(EdFileError::Parse { .. })));
    }

    #[test]
    fn skips_comments_and_blanks() {
        assert_eq!(parse("# header\n\n2\tx\tx : y\n").unwrap().len(), 1);
    }
}
