//! Layered run configuration: defaults < TOML file < environment < `--set`.

use std::path::{Path, PathBuf};

use rehearsal_core::baselines::BaselineConfig;
use rehearsal_core::data::{SplitConfig, DEFAULT_OVERLAP_THRESHOLD};
use rehearsal_core::evaluation::ProbeConfig;
use rehearsal_core::synth::ToyConfig;
use rehearsal_core::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Prefix of environment overrides, e.g. `REHEARSAL__TRAIN__BASE_LR=0.01`.
pub const ENV_PREFIX: &str = "REHEARSAL__";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("override `{key}`: {message}")]
    Override { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Feature manifest written by the feature extractor or `synth`.
    pub manifest: PathBuf,
    pub class_descriptions: PathBuf,
    pub concept_descriptions: PathBuf,
    pub splits_dir: PathBuf,
    /// One-based split index used by train, eval, baseline and fewshot.
    pub split: usize,
    /// Manifest tag of seen-class training videos.
    pub train_tag: String,
    /// Manifest tag of videos used for validation and test classes.
    pub eval_tag: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: "data/features.json".into(),
            class_descriptions: "data/classes.ed".into(),
            concept_descriptions: "data/concepts.ed".into(),
            splits_dir: "splits".into(),
            split: 1,
            train_tag: "train".into(),
            eval_tag: "test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { embed_dim: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewShotConfig {
    pub shots: Vec<usize>,
    pub queries_per_class: usize,
    pub draws: usize,
    pub probe: ProbeConfig,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            shots: vec![1, 2, 5],
            queries_per_class: 10,
            draws: 5,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub catalog: PathBuf,
    pub overlap_threshold: f64,
    pub n_val: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        let d = SplitConfig::default();
        Self {
            catalog: "data/catalog.json".into(),
            overlap_threshold: DEFAULT_OVERLAP_THRESHOLD,
            n_val: d.n_val,
            n_test: d.n_test,
            seeds: d.seeds,
        }
    }
}

impl SplitSection {
    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            n_val: self.n_val,
            n_test: self.n_test,
            seeds: self.seeds.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdConfig {
    pub store: PathBuf,
    /// `id<TAB>name` list of classes to crawl.
    pub classes: PathBuf,
    /// Recorded source responses; used unless `online` is set.
    pub fixtures: Option<PathBuf>,
    pub online: bool,
    pub retries: usize,
    pub addr: String,
    pub static_dir: Option<PathBuf>,
    /// `{name}` is replaced by the URL-encoded class name.
    pub exemplar_url: Option<String>,
}

impl Default for EdConfig {
    fn default() -> Self {
        Self {
            store: "ed.sqlite".into(),
            classes: "data/ed_classes.tsv".into(),
            fixtures: None,
            online: false,
            retries: 3,
            addr: "127.0.0.1:8080".into(),
            static_dir: None,
            exemplar_url: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub fewshot: FewShotConfig,
    pub split: SplitSection,
    pub ed: EdConfig,
    pub synth: ToyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: "runs".into(),
            data: DataConfig::default(),
            encoder: EncoderConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            fewshot: FewShotConfig::default(),
            split: SplitSection::default(),
            ed: EdConfig::default(),
            synth: ToyConfig::default(),
        }
    }
}

/// Keys that select a run rather than define an experiment. They are left
/// out of the config hash so per-split and per-seed artifacts stay comparable.
const UNHASHED: &[&[&str]] = &[
    &["output_dir"],
    &["data", "split"],
    &["train", "seed"],
    &["baseline", "seed"],
    &["fewshot", "probe", "seed"],
    &["ed"],
];

fn parse_scalar(raw: &str) -> toml::Value {
    // bare words that are not valid TOML values are taken as strings
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let err = |message: String| ConfigError::Override {
        key: key.to_string(),
        message,
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err("empty key segment".into()));
    }
    let mut table = root;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = table
            .get_mut(*part)
            .ok_or_else(|| err(format!("unknown section `{}`", parts[..=i].join("."))))?;
        table = entry
            .as_table_mut()
            .ok_or_else(|| err(format!("`{}` is not a section", parts[..=i].join("."))))?;
    }
    let last = parts[parts.len() - 1];
    // unset optional keys are absent from the serialized defaults, so new
    // leaves are allowed here and checked by deserialization below
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text. Errors carry the line and column of the problem.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })
    }

    /// Builds the effective config. `file` is optional; `env` is the process
    /// environment (passed in for testability); `sets` are `key=value` pairs.
    pub fn load<I>(file: Option<&Path>, env: I, sets: &[String]) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                let mut cfg = Self::from_toml(&text, path)?;
                cfg.resolve_relative(path.parent().unwrap_or(Path::new(".")));
                cfg
            }
            None => Self::default(),
        };
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| {
                let rest = k.strip_prefix(ENV_PREFIX)?;
                Some((rest.to_ascii_lowercase().replace("__", "."), v))
            })
            .collect();
        overrides.sort();
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Override {
                key: s.clone(),
                message: "expected key=value".into(),
            })?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if overrides.is_empty() {
            return Ok(cfg);
        }
        for (key, raw) in overrides {
            let mut table = toml::Table::try_from(&cfg).expect("config serializes to a table");
            set_path(&mut table, &key, parse_scalar(&raw))?;
            cfg = toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Override {
                    key: key.clone(),
                    message: e.message().to_string(),
                })?;
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.manifest);
        fix(&mut self.data.class_descriptions);
        fix(&mut self.data.concept_descriptions);
        fix(&mut self.data.splits_dir);
        fix(&mut self.split.catalog);
        fix(&mut self.ed.store);
        fix(&mut self.ed.classes);
        if let Some(p) = self.ed.fixtures.as_mut() {
            fix(p);
        }
        if let Some(p) = self.ed.static_dir.as_mut() {
            fix(p);
        }
    }

    /// Applies the single `--seed` knob to every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.baseline.seed = seed;
        self.fewshot.probe.seed = seed;
    }

    /// First 16 hex digits of the SHA-256 of the experiment-defining keys.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for path in UNHASHED {
            let (last, parents) = path.split_last().expect("non-empty path");
            let mut node = &mut value;
            for p in parents {
                node = &mut node[*p];
            }
            if let Some(obj) = node.as_object_mut() {
                obj.remove(*last);
            }
        }
        // serde_json maps are ordered, so this string is canonical
        let digest = Sha256::digest(value.to_string().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
