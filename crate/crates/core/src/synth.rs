//! Synthetic worlds with a planted linear link between class text and video
//! features, used for smoke tests, demos and the property checks.
//!
//! Every class is a set of attribute words. A class description mentions
//! its attributes, each attribute is also an object concept, and a video's
//! spatio-temporal feature is the sum of per-attribute visual directions
//! plus noise. Videos can carry extra attributes that are not part of
//! their class; when those extras are drawn from attributes that only
//! unseen classes are defined by, the concept supervision is the only
//! training signal that ties them to text.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CatalogClass, ClassCatalog, OverlapEntry};
use crate::evaluation::{self, EvalSet};
use crate::text::{ElaborativeDescription, ToyEncoder};
use crate::training::{
    train as train_model, Batch, JointModel, ModelError, PreparedVideo, TextBank, TrainConfig, TrainError, TrainingData,
};
use crate::video::{ConceptVocabulary, FeatureRecord};
use crate::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub n_seen: usize,
    pub n_unseen: usize,
    /// Attributes seen classes are built from.
    pub n_core_attributes: usize,
    /// Attributes that appear only in unseen class definitions.
    pub n_heldout_attributes: usize,
    pub attributes_per_class: usize,
    /// How many of an unseen class's attributes come from the held-out pool.
    pub heldout_per_unseen: usize,
    /// Held-out attributes sprinkled into each seen training video.
    pub extras_per_video: usize,
    pub train_videos_per_class: usize,
    pub test_videos_per_class: usize,
    pub st_dim: usize,
    pub hidden_dim: usize,
    pub frames: usize,
    /// Standard deviation of the feature noise relative to one attribute.
    pub feature_noise: f64,
    /// Upper bound of background object probabilities.
    pub object_noise: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_seen: 10,
            n_unseen: 5,
            n_core_attributes: 12,
            n_heldout_attributes: 0,
            attributes_per_class: 3,
            heldout_per_unseen: 0,
            extras_per_video: 0,
            train_videos_per_class: 20,
            test_videos_per_class: 20,
            st_dim: 32,
            hidden_dim: 32,
            frames: 4,
            feature_noise: 0.3,
            object_noise: 0.4,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), String> {
        let per = self.attributes_per_class;
        if per == 0 || self.n_seen == 0 || self.n_unseen == 0 {
            return Err("classes and attributes per class must be positive".into());
        }
        if per > self.n_core_attributes {
            return Err(format!(
                "{per} attributes per class but only {} core attributes",
                self.n_core_attributes
            ));
        }
        if self.heldout_per_unseen > per || self.heldout_per_unseen > self.n_heldout_attributes {
            return Err("heldout_per_unseen exceeds the class size or the held-out pool".into());
        }
        if self.extras_per_video > self.n_heldout_attributes {
            return Err("extras_per_video exceeds the held-out pool".into());
        }
        if self.frames == 0 || self.st_dim == 0 || self.hidden_dim == 0 {
            return Err("dimensions must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub config: ToyConfig,
    /// Class descriptions indexed by class id.
    pub classes: Vec<ElaborativeDescription>,
    pub class_attributes: BTreeMap<ClassId, Vec<usize>>,
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
    pub vocab: ConceptVocabulary,
    /// Seen-class training videos.
    pub train: Vec<FeatureRecord>,
    /// Held-out videos of seen classes.
    pub seen_test: Vec<FeatureRecord>,
    /// Videos of unseen classes.
    pub unseen_test: Vec<FeatureRecord>,
}

pub fn attribute_word(i: usize) -> String {
    format!("attr{i:02}")
}

fn pick_sets(
    rng: &mut ChaCha8Rng,
    count: usize,
    taken: &mut BTreeSet<Vec<usize>>,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Vec<usize>,
) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        let mut set = draw(rng);
        set.sort_unstable();
        attempts += 1;
        // distinct attribute sets when possible; give up on that after many tries
        if taken.insert(set.clone()) || attempts > 10_000 {
            out.push(set);
        }
    }
    out
}

impl ToyWorld {
    pub fn generate(cfg: &ToyConfig) -> Result<Self, String> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n_attr = cfg.n_core_attributes + cfg.n_heldout_attributes;
        let core: Vec<usize> = (0..cfg.n_core_attributes).collect();
        let heldout: Vec<usize> = (cfg.n_core_attributes..n_attr).collect();
        let per = cfg.attributes_per_class;

        let mut taken = BTreeSet::new();
        let seen_sets = pick_sets(&mut rng, cfg.n_seen, &mut taken, |r| {
            core.choose_multiple(r, per).copied().collect()
        });
        let unseen_sets = pick_sets(&mut rng, cfg.n_unseen, &mut taken, |r| {
            let mut s: Vec<usize> = heldout.choose_multiple(r, cfg.heldout_per_unseen).copied().collect();
            s.extend(core.choose_multiple(r, per - cfg.heldout_per_unseen).copied());
            s
        });

        let mut classes = Vec::new();
        let mut class_attributes = BTreeMap::new();
        for (id, attrs) in seen_sets.iter().chain(&unseen_sets).enumerate() {
            let words: Vec<String> = attrs.iter().map(|&a| attribute_word(a)).collect();
            let name = words.join(" ");
            let definition = format!("an action showing {}", words.join(" and "));
            classes.push(
                ElaborativeDescription::from_definition(id as u32, &name, &definition).map_err(|e| e.to_string())?,
            );
            class_attributes.insert(id as ClassId, attrs.clone());
        }
        let vocab = ConceptVocabulary::from_descriptions(
            (0..n_attr)
                .map(|a| {
                    let w = attribute_word(a);
                    ElaborativeDescription::from_definition(a as u32, &w, &format!("a visible {w}"))
                })
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;

        let scale = 1.0 / (cfg.st_dim as f64).sqrt();
        let visual: Vec<DVector<f64>> = (0..n_attr)
            .map(|_| {
                DVector::from_fn(cfg.st_dim, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
            })
            .collect();

        let seen: Vec<ClassId> = (0..cfg.n_seen as ClassId).collect();
        let unseen: Vec<ClassId> = (cfg.n_seen as ClassId..(cfg.n_seen + cfg.n_unseen) as ClassId).collect();
        let make_video = |rng: &mut ChaCha8Rng, tag: &str, class: ClassId, i: usize, extras: usize| {
            let mut present = class_attributes[&class].clone();
            present.extend(heldout.choose_multiple(rng, extras).copied());
            let mut st = DVector::from_fn(cfg.st_dim, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale * cfg.feature_noise
            });
            for &a in &present {
                st += &visual[a];
            }
            let probs = DMatrix::from_fn(cfg.frames, n_attr, |_, c| {
                let base = rng.gen_range(0.0..cfg.object_noise.max(1e-9));
                if present.contains(&c) {
                    (0.5 + base).min(1.0)
                } else {
                    base
                }
            });
            FeatureRecord {
                video_id: format!("{tag}-{class:03}-{i:03}"),
                st_feature: st,
                frame_object_probs: probs,
                label: Some(class),
            }
        };
        let mut train = Vec::new();
        let mut seen_test = Vec::new();
        let mut unseen_test = Vec::new();
        for &c in &seen {
            for i in 0..cfg.train_videos_per_class {
                train.push(make_video(&mut rng, "train", c, i, cfg.extras_per_video));
            }
            for i in 0..cfg.test_videos_per_class {
                seen_test.push(make_video(&mut rng, "seen", c, i, cfg.extras_per_video));
            }
        }
        for &c in &unseen {
            for i in 0..cfg.test_videos_per_class {
                unseen_test.push(make_video(&mut rng, "unseen", c, i, 0));
            }
        }
        Ok(Self {
            config: cfg.clone(),
            classes,
            class_attributes,
            seen,
            unseen,
            vocab,
            train,
            seen_test,
            unseen_test,
        })
    }

    /// The frozen token encoder matching this world's text dimension.
    pub fn encoder(&self) -> ToyEncoder {
        ToyEncoder::new(self.config.hidden_dim, self.config.seed)
    }

    pub fn class(&self, id: ClassId) -> &ElaborativeDescription {
        &self.classes[id as usize]
    }
}

/// Accuracies of one synthetic training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyRun {
    pub seen_train_top1: f64,
    pub seen_test_top1: f64,
    pub unseen_top1: f64,
    pub unseen_top5: f64,
    pub best_epoch: usize,
    pub final_loss: f64,
}

impl ToyWorld {
    /// Trains on the seen classes and evaluates zero-shot on the unseen ones.
    pub fn train_and_evaluate(&self, cfg: &TrainConfig, embed_dim: usize) -> Result<(ToyRun, JointModel), TrainError> {
        let enc = self.encoder();
        let bank = TextBank::build(&self.classes, &self.vocab, &enc).map_err(ModelError::from)?;
        let prep = |r: &[FeatureRecord]| {
            PreparedVideo::prepare_all(r, &self.vocab, cfg.n_objects, &enc).map_err(ModelError::from)
        };
        let train = prep(&self.train)?;
        let seen_test = prep(&self.seen_test)?;
        let unseen = prep(&self.unseen_test)?;
        let model = JointModel::init(embed_dim, self.config.hidden_dim, self.config.st_dim, cfg.seed);
        let data = TrainingData {
            train: &train,
            seen_classes: &self.seen,
            bank: &bank,
            val: None,
        };
        let outcome = train_model(&data, cfg, model)?;
        let eval = |videos: &[PreparedVideo], classes: &[ClassId]| {
            evaluation::evaluate(&outcome.model, &EvalSet { videos, classes }, &bank, 0)
        };
        let seen_train = eval(&train, &self.seen)?;
        let seen_test = eval(&seen_test, &self.seen)?;
        let unseen = eval(&unseen, &self.unseen)?;
        let run = ToyRun {
            seen_train_top1: seen_train.top1,
            seen_test_top1: seen_test.top1,
            unseen_top1: unseen.top1,
            unseen_top5: unseen.top5,
            best_epoch: outcome.best_epoch,
            final_loss: outcome.log.last().map(|l| l.loss).unwrap_or(f64::NAN),
        };
        Ok((run, outcome.model))
    }
}

impl ToyWorld {
    /// Held-out attributes appear in unseen definitions and as unlabeled
    /// extras in seen videos, so only the rehearsal loss can ground them.
    pub fn heldout_overlap_config(seed: u64) -> ToyConfig {
        ToyConfig {
            n_heldout_attributes: 6,
            heldout_per_unseen: 2,
            extras_per_video: 2,
            object_noise: 0.6,
            seed,
            ..ToyConfig::default()
        }
    }

    /// Noisy enough that a linear probe keeps improving from one to five shots.
    pub fn few_shot_config(seed: u64) -> ToyConfig {
        ToyConfig {
            feature_noise: 2.0,
            seed,
            ..ToyConfig::default()
        }
    }

    /// Raw spatio-temporal features of the unseen-class videos.
    pub fn unseen_st_features(&self) -> Vec<(DVector<f64>, ClassId)> {
        self.unseen_test
            .iter()
            .filter_map(|r| Some((r.st_feature.clone(), r.label?)))
            .collect()
    }
}

/// A small fixed batch for gradient checks: 4 videos, 3 classes and
/// 6 concepts with randomly initialized parameters.
pub struct GradientFixture {
    pub model: JointModel,
    pub videos: Vec<PreparedVideo>,
    pub labels: Vec<usize>,
    pub bank: TextBank,
    pub class_ids: Vec<ClassId>,
}

impl GradientFixture {
    pub fn new(seed: u64) -> Self {
        let enc = ToyEncoder::new(12, seed);
        let concepts = ["ball", "bat", "rope", "water", "horse", "bike"];
        let vocab = ConceptVocabulary::from_descriptions(
            concepts
                .iter()
                .enumerate()
                .map(|(i, w)| ElaborativeDescription::from_definition(i as u32, w, &format!("an object named {w}")))
                .collect::<Result<_, _>>()
                .expect("fixture descriptions are valid"),
        )
        .expect("dense ids");
        let classes = [
            ("cricket", "hitting a ball with a bat"),
            ("rope climbing", "climbing up a rope"),
            ("horse riding", "riding a horse over water"),
        ]
        .iter()
        .enumerate()
        .map(|(i, (n, d))| ElaborativeDescription::from_definition(i as u32, n, d))
        .collect::<Result<Vec<_>, _>>()
        .expect("fixture descriptions are valid");
        let bank = TextBank::build(&classes, &vocab, &enc).expect("fixture text encodes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = vec![0, 1, 2, 0];
        let videos = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let rec = FeatureRecord {
                    video_id: format!("v{i}"),
                    st_feature: DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0)),
                    frame_object_probs: DMatrix::from_fn(2, 6, |_, _| rng.gen_range(0.0..1.0)),
                    label: Some(l as ClassId),
                };
                PreparedVideo::prepare(&rec, &vocab, 2, &enc).expect("fixture video prepares")
            })
            .collect();
        Self {
            model: JointModel::init(6, 12, 5, seed),
            videos,
            labels,
            bank,
            class_ids: vec![0, 1, 2],
        }
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch {
            videos: self.videos.iter().collect(),
            labels: self.labels.clone(),
            class_pooled: self.class_ids.iter().map(|c| &self.bank.classes[c]).collect(),
            concept_pooled: &self.bank.concepts,
        }
    }
}

/// A two-taxonomy catalog: `n_old` old classes, all of which reappear
/// unchanged in the new taxonomy, plus `n_renamed` renamed copies sharing
/// 90% of their videos with an old class and `n_new` genuinely new classes.
pub fn toy_catalog(n_old: usize, n_renamed: usize, n_new: usize) -> ClassCatalog {
    let old: Vec<CatalogClass> = (0..n_old)
        .map(|i| CatalogClass {
            id: i as ClassId,
            name: format!("old action {i}"),
        })
        .collect();
    let mut new = old.clone();
    let mut overlap = BTreeMap::new();
    for r in 0..n_renamed {
        let id = (n_old + r) as ClassId;
        new.push(CatalogClass {
            id,
            name: format!("renamed action {r}"),
        });
        let source = (r % n_old.max(1)) as ClassId;
        for v in 0..10 {
            overlap.insert(
                format!("renamed-{r}-{v}"),
                OverlapEntry {
                    old: (v < 9 && n_old > 0).then_some(source),
                    new: Some(id),
                },
            );
        }
    }
    for k in 0..n_new {
        new.push(CatalogClass {
            id: (n_old + n_renamed + k) as ClassId,
            name: format!("new action {k}"),
        });
    }
    ClassCatalog {
        old_taxonomy: old,
        new_taxonomy: new,
        overlap_video_map: overlap,
    }
}
