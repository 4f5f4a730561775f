//! Artifact files written by the pipeline stages. Each one records the
//! config hash of the run that produced it.

use std::path::{Path, PathBuf};

use anyhow::Context;
use rehearsal_core::evaluation::{ShotResult, SplitEval};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An input another stage should have produced is absent.
#[derive(Debug, Error)]
#[error("missing {what}: {} (run `{producer}` first)", path.display())]
pub struct MissingDependency {
    pub what: &'static str,
    pub path: PathBuf,
    pub producer: &'static str,
}

pub fn require(path: &Path, what: &'static str, producer: &'static str) -> Result<(), MissingDependency> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingDependency {
            what,
            path: path.to_path_buf(),
            producer,
        })
    }
}

/// Zero-shot metrics of one method on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEval {
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
    pub eval: SplitEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewShotArtifact {
    pub config_hash: String,
    pub split_index: usize,
    pub seed: u64,
    pub results: Vec<ShotResult>,
}

/// Any artifact `report` can aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReportInput {
    Eval(MethodEval),
    FewShot(FewShotArtifact),
}

impl ReportInput {
    pub fn config_hash(&self) -> &str {
        match self {
            Self::Eval(e) => &e.config_hash,
            Self::FewShot(f) => &f.config_hash,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Output layout under `output_dir`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn split_dir(&self, split: usize) -> PathBuf {
        self.root.join(format!("split_{split}"))
    }

    pub fn checkpoint(&self, split: usize) -> PathBuf {
        self.split_dir(split).join("checkpoint.json")
    }

    pub fn train_log(&self, split: usize) -> PathBuf {
        self.split_dir(split).join("train_log.jsonl")
    }

    pub fn eval(&self, split: usize) -> PathBuf {
        self.split_dir(split).join("eval.json")
    }

    pub fn baseline(&self, split: usize, method: &str) -> PathBuf {
        self.split_dir(split).join(format!("baseline_{method}.json"))
    }

    pub fn fewshot(&self, split: usize) -> PathBuf {
        self.split_dir(split).join("fewshot.json")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("run_summary.json")
    }
}

/// Machine-readable record of one invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_at: String,
    pub duration_secs: f64,
    pub artifacts: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metrics: serde_json::Value,
}
