use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_whitespace;
use crate::ClassId;

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed catalog: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{taxonomy} taxonomy is empty")]
    EmptyTaxonomy { taxonomy: &'static str },
    #[error("{taxonomy} taxonomy repeats {what} {value:?}")]
    Duplicate {
        taxonomy: &'static str,
        what: &'static str,
        value: String,
    },
    #[error("overlap threshold {0} outside (0, 1]")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogClass {
    pub id: ClassId,
    pub name: String,
}

/// Which class a shared video carries in each taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapEntry {
    pub old: Option<ClassId>,
    pub new: Option<ClassId>,
}

/// Old and new class taxonomies plus the videos they share.
///
/// Class ids live in one space: a class present in both taxonomies under
/// the same id is the same class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCatalog {
    pub old_taxonomy: Vec<CatalogClass>,
    pub new_taxonomy: Vec<CatalogClass>,
    #[serde(default)]
    pub overlap_video_map: BTreeMap<String, OverlapEntry>,
}

fn name_key(name: &str) -> String {
    normalize_whitespace(name).to_lowercase()
}

fn check_unique(taxonomy: &'static str, classes: &[CatalogClass]) -> Result<(), CatalogError> {
    let mut ids = BTreeSet::new();
    let mut names = BTreeSet::new();
    for c in classes {
        if !ids.insert(c.id) {
            return Err(CatalogError::Duplicate {
                taxonomy,
                what: "id",
                value: c.id.to_string(),
            });
        }
        if !names.insert(name_key(&c.name)) {
            return Err(CatalogError::Duplicate {
                taxonomy,
                what: "name",
                value: c.name.clone(),
            });
        }
    }
    Ok(())
}

impl ClassCatalog {
    pub fn validate(&self) -> Result<(), CatalogError> {
        check_unique("old", &self.old_taxonomy)?;
        check_unique("new", &self.new_taxonomy)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let catalog: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn old_ids(&self) -> Vec<ClassId> {
        self.old_taxonomy.iter().map(|c| c.id).collect()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.new_taxonomy
            .iter()
            .chain(&self.old_taxonomy)
            .find(|c| c.id == id)
            .map(|c| c.name.as_str())
    }

    /// Largest fraction of `new` class videos that carry a single old label.
    pub fn max_overlap(&self, new: ClassId) -> f64 {
        let mut total = 0usize;
        let mut shared: BTreeMap<ClassId, usize> = BTreeMap::new();
        for e in self.overlap_video_map.values().filter(|e| e.new == Some(new)) {
            total += 1;
            if let Some(old) = e.old {
                *shared.entry(old).or_default() += 1;
            }
        }
        if total == 0 {
            return 0.0;
        }
        shared.values().copied().max().unwrap_or(0) as f64 / total as f64
    }
}

/// New-taxonomy classes that are genuinely new: the name does not appear in
/// the old taxonomy and no old class holds `threshold` or more of its
/// videos. Returned in ascending id order.
pub fn derive_new_classes(catalog: &ClassCatalog, threshold: f64) -> Result<Vec<ClassId>, CatalogError> {
    if catalog.old_taxonomy.is_empty() {
        return Err(CatalogError::EmptyTaxonomy { taxonomy: "old" });
    }
    if catalog.new_taxonomy.is_empty() {
        return Err(CatalogError::EmptyTaxonomy { taxonomy: "new" });
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(CatalogError::BadThreshold(threshold));
    }
    catalog.validate()?;
    let old_names: BTreeSet<String> = catalog.old_taxonomy.iter().map(|c| name_key(&c.name)).collect();
    let old_ids: BTreeSet<ClassId> = catalog.old_taxonomy.iter().map(|c| c.id).collect();
    let mut out: Vec<ClassId> = catalog
        .new_taxonomy
        .iter()
        .filter(|c| !old_ids.contains(&c.id))
        .filter(|c| !old_names.contains(&name_key(&c.name)))
        .filter(|c| catalog.max_overlap(c.id) < threshold)
        .map(|c| c.id)
        .collect();
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class(id: ClassId, name: &str) -> CatalogClass {
        CatalogClass { id, name: name.into() }
    }

    fn catalog() -> ClassCatalog {
        let mut overlap = BTreeMap::new();
        // class 11 ("weight lifting") shares 9 of 10 videos with old class 2
        for i in 0..10 {
            overlap.insert(
                format!("v{i}"),
                OverlapEntry {
                    old: (i < 9).then_some(2),
                    new: Some(11),
                },
            );
        }
        overlap.insert(
            "w0".into(),
            OverlapEntry {
                old: Some(1),
                new: Some(12),
            },
        );
        for i in 1..5 {
            overlap.insert(
                format!("w{i}"),
                OverlapEntry {
                    old: None,
                    new: Some(12),
                },
            );
        }
        ClassCatalog {
            old_taxonomy: vec![class(1, "archery"), class(2, "snatch weight lifting")],
            new_taxonomy: vec![
                class(1, "archery"),
                class(10, "Archery "),
                class(11, "weight lifting"),
                class(12, "clean and jerk"),
                class(13, "tightrope walking"),
            ],
            overlap_video_map: overlap,
        }
    }

    #[test]
    fn derives_genuinely_new_classes() {
        let c = catalog();
        assert!(matches!(
            c.validate(),
            Err(CatalogError::Duplicate { what: "name", .. })
        ));
        let mut c = c;
        c.new_taxonomy.remove(1);
        assert_eq!(derive_new_classes(&c, 0.5).unwrap(), vec![12, 13]);
        assert!((c.max_overlap(11) - 0.9).abs() < 1e-12);
        assert!((c.max_overlap(12) - 0.2).abs() < 1e-12);
        // a stricter threshold drops the class with 20% overlap too
        assert_eq!(derive_new_classes(&c, 0.2).unwrap(), vec![13]);
    }

    #[test]
    fn same_name_under_new_id_is_excluded() {
        let mut c = catalog();
        c.new_taxonomy.retain(|x| x.id != 1);
        assert!(!derive_new_classes(&c, 0.5).unwrap().contains(&10));
    }

    #[test]
    fn empty_taxonomies_error() {
        let mut c = catalog();
        c.old_taxonomy.clear();
        assert!(matches!(
            derive_new_classes(&c, 0.5),
            Err(CatalogError::EmptyTaxonomy { taxonomy: "old" })
        ));
    }
}
