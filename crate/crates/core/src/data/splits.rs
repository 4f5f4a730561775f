use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ClassId;

pub const SPLIT_VERSION: u32 = 1;
pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("need {needed} new classes for the requested partition, have {available}")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("split {split_index}: classes {classes:?} leak between {between}")]
    Leakage {
        split_index: usize,
        between: &'static str,
        classes: Vec<ClassId>,
    },
    #[error("unsupported split version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed split file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub n_val: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            n_val: 60,
            n_test: 160,
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }
}

/// One seen/validation/test partition. Class lists are stored sorted so the
/// file is a pure function of (classes, seed, counts).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub version: u32,
    pub split_index: usize,
    pub seed: u64,
    pub seen_classes: BTreeSet<ClassId>,
    pub val_classes: BTreeSet<ClassId>,
    pub test_classes: BTreeSet<ClassId>,
}

fn overlap(a: &BTreeSet<ClassId>, b: &BTreeSet<ClassId>) -> Vec<ClassId> {
    a.intersection(b).copied().collect()
}

impl SplitSpec {
    pub fn check_leakage(&self) -> Result<(), SplitError> {
        let pairs = [
            ("validation and test", &self.val_classes, &self.test_classes),
            ("seen and validation", &self.seen_classes, &self.val_classes),
            ("seen and test", &self.seen_classes, &self.test_classes),
        ];
        for (between, a, b) in pairs {
            let classes = overlap(a, b);
            if !classes.is_empty() {
                return Err(SplitError::Leakage {
                    split_index: self.split_index,
                    between,
                    classes,
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), SplitError> {
        self.check_leakage()?;
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Parses and re-checks leakage; a spec is never trusted just because
    /// it was valid when built.
    pub fn load(path: &Path) -> Result<Self, SplitError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, SplitError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != SPLIT_VERSION {
            return Err(SplitError::VersionMismatch {
                found,
                expected: SPLIT_VERSION,
            });
        }
        let spec: Self = serde_json::from_value(raw)?;
        spec.check_leakage()?;
        Ok(spec)
    }

    /// Canonical file name for the `split_index`-th split.
    pub fn file_name(split_index: usize) -> String {
        format!("split_{split_index}.json")
    }
}

/// Shuffles `new_classes` once per seed and takes the first `n_val` as
/// validation and the next `n_test` as test classes.
pub fn build_splits(
    seen: &[ClassId],
    new_classes: &[ClassId],
    cfg: &SplitConfig,
) -> Result<Vec<SplitSpec>, SplitError> {
    let mut pool: Vec<ClassId> = new_classes.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let needed = cfg.n_val + cfg.n_test;
    if needed > pool.len() {
        return Err(SplitError::InsufficientClasses {
            needed,
            available: pool.len(),
        });
    }
    let seen: BTreeSet<ClassId> = seen.iter().copied().collect();
    cfg.seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut order = pool.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let spec = SplitSpec {
                version: SPLIT_VERSION,
                split_index: i + 1,
                seed,
                seen_classes: seen.clone(),
                val_classes: order[..cfg.n_val].iter().copied().collect(),
                test_classes: order[cfg.n_val..needed].iter().copied().collect(),
            };
            spec.check_leakage()?;
            Ok(spec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(n_val: usize, n_test: usize, seeds: Vec<u64>) -> SplitConfig {
        SplitConfig { n_val, n_test, seeds }
    }

    #[test]
    fn partitions_are_disjoint_and_sized() {
        let seen: Vec<ClassId> = (0..40).collect();
        let new: Vec<ClassId> = (100..122).collect();
        let specs = build_splits(&seen, &new, &counts(6, 16, vec![1, 2, 3])).unwrap();
        assert_eq!(specs.len(), 3);
        for s in &specs {
            assert_eq!((s.val_classes.len(), s.test_classes.len()), (6, 16));
            s.check_leakage().unwrap();
        }
        assert_ne!(specs[0].val_classes, specs[1].val_classes);
    }

    #[test]
    fn input_order_does_not_matter() {
        let new: Vec<ClassId> = (0..30).collect();
        let mut rev = new.clone();
        rev.reverse();
        let cfg = counts(5, 10, vec![9]);
        assert_eq!(
            build_splits(&[], &new, &cfg).unwrap(),
            build_splits(&[], &rev, &cfg).unwrap()
        );
    }

    #[test]
    fn insufficient_classes() {
        assert!(matches!(
            build_splits(&[], &[1, 2, 3], &counts(2, 2, vec![1])),
            Err(SplitError::InsufficientClasses {
                needed: 4,
                available: 3
            })
        ));
    }

    #[test]
    fn leakage_is_detected_on_parse() {
        let mut spec = build_splits(&[1, 2], &(10..20).collect::<Vec<_>>(), &counts(2, 3, vec![1]))
            .unwrap()
            .remove(0);
        let leaked = *spec.test_classes.iter().next().unwrap();
        spec.seen_classes.insert(leaked);
        let err = SplitSpec::parse(&spec.to_json()).unwrap_err();
        assert!(
            matches!(
                err,
                SplitError::Leakage {
                    between: "seen and test",
                    ..
                }
            ),
            "{err}"
        );
    }
}
