//! Training and evaluation stages over a feature manifest and a split file.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context as _};
use nalgebra::DVector;
use rehearsal_core::baselines::{self, class_feature_matrix, BaselineKind};
use rehearsal_core::data::{Dataset, SplitSpec};
use rehearsal_core::evaluation::{self, few_shot_curve, EvalSet};
use rehearsal_core::text::store as ed_file;
use rehearsal_core::training::{self, Checkpoint, PreparedVideo, TextBank, TrainingData};
use rehearsal_core::{ClassId, ConceptVocabulary, ElaborativeDescription, FeatureRecord, JointModel, ToyEncoder};

use crate::artifacts::{require, write_json, FewShotArtifact, MethodEval};
use crate::Context;

/// Everything a stage needs for one split.
struct Inputs {
    dataset: Dataset,
    classes: Vec<ElaborativeDescription>,
    vocab: ConceptVocabulary,
    split: SplitSpec,
    encoder: ToyEncoder,
}

impl Inputs {
    fn load(ctx: &Context) -> anyhow::Result<Self> {
        let d = &ctx.cfg.data;
        let split_path = d.splits_dir.join(SplitSpec::file_name(d.split));
        require(&d.manifest, "feature manifest", "synth world")?;
        require(&d.class_descriptions, "class descriptions", "ed export")?;
        require(&d.concept_descriptions, "concept descriptions", "synth world")?;
        require(&split_path, "split file", "split build")?;
        let dataset = Dataset::load(&d.manifest)?;
        let classes = ed_file::load(&d.class_descriptions)?;
        let vocab = ConceptVocabulary::from_descriptions(ed_file::load(&d.concept_descriptions)?)?;
        let split = SplitSpec::load(&split_path).with_context(|| format!("loading {}", split_path.display()))?;
        if vocab.len() != dataset.manifest.vocab {
            bail!(
                "concept file has {} concepts but features were extracted over {}",
                vocab.len(),
                dataset.manifest.vocab
            );
        }
        let described: BTreeSet<ClassId> = classes.iter().map(|c| c.subject_id).collect();
        let missing: Vec<ClassId> = split
            .seen_classes
            .iter()
            .chain(&split.val_classes)
            .chain(&split.test_classes)
            .filter(|c| !described.contains(c))
            .copied()
            .collect();
        if !missing.is_empty() {
            bail!(
                "classes without descriptions in {}: {missing:?}",
                d.class_descriptions.display()
            );
        }
        let encoder = ToyEncoder::new(ctx.cfg.encoder.hidden_dim, ctx.cfg.encoder.seed);
        Ok(Self {
            dataset,
            classes,
            vocab,
            split,
            encoder,
        })
    }

    fn records(&self, tag: &str, classes: &BTreeSet<ClassId>) -> Vec<&FeatureRecord> {
        self.dataset
            .split(tag)
            .into_iter()
            .filter(|r| r.label.is_some_and(|l| classes.contains(&l)))
            .collect()
    }

    fn prepare(&self, records: &[&FeatureRecord], n_o: usize) -> anyhow::Result<Vec<PreparedVideo>> {
        Ok(PreparedVideo::prepare_all(
            records.iter().copied(),
            &self.vocab,
            n_o,
            &self.encoder,
        )?)
    }

    fn bank(&self) -> anyhow::Result<TextBank> {
        Ok(TextBank::build(&self.classes, &self.vocab, &self.encoder)?)
    }

    fn description(&self, id: ClassId) -> &ElaborativeDescription {
        self.classes
            .iter()
            .find(|c| c.subject_id == id)
            .expect("checked on load")
    }
}

fn ids(set: &BTreeSet<ClassId>) -> Vec<ClassId> {
    set.iter().copied().collect()
}

pub fn train(ctx: &mut Context) -> anyhow::Result<()> {
    let inputs = Inputs::load(ctx)?;
    let cfg = &ctx.cfg;
    let n_o = cfg.train.n_objects;
    let train_recs = inputs.records(&cfg.data.train_tag, &inputs.split.seen_classes);
    if train_recs.is_empty() {
        bail!(
            "no `{}` videos of seen classes in {}",
            cfg.data.train_tag,
            cfg.data.manifest.display()
        );
    }
    let val_recs = inputs.records(&cfg.data.eval_tag, &inputs.split.val_classes);
    let train_videos = inputs.prepare(&train_recs, n_o)?;
    let val_videos = inputs.prepare(&val_recs, n_o)?;
    let bank = inputs.bank()?;
    let seen = ids(&inputs.split.seen_classes);
    let val_ids = ids(&inputs.split.val_classes);
    let data = TrainingData {
        train: &train_videos,
        seen_classes: &seen,
        bank: &bank,
        val: (!val_videos.is_empty()).then_some(EvalSet {
            videos: &val_videos,
            classes: &val_ids,
        }),
    };
    let model = JointModel::init(
        cfg.model.embed_dim,
        cfg.encoder.hidden_dim,
        inputs.dataset.manifest.st_dim,
        cfg.train.seed,
    );
    log::info!(
        "training on {} videos of {} seen classes, {} validation videos",
        train_videos.len(),
        seen.len(),
        val_videos.len()
    );
    let outcome = training::train(&data, &cfg.train, model)?;

    let split = cfg.data.split;
    let ckpt_path = ctx.layout.checkpoint(split);
    let ckpt = Checkpoint::new(ctx.hash.clone(), cfg.train.clone(), outcome.best_epoch, outcome.model);
    std::fs::create_dir_all(ctx.layout.split_dir(split))?;
    ckpt.save(&ckpt_path)?;
    let log_path = ctx.layout.train_log(split);
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    for rec in &outcome.log {
        serde_json::to_writer(&mut log, rec)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;
    let last = outcome.log.last().map(|r| r.loss);
    println!(
        "trained split {split}: best epoch {} val top-1 {} final loss {}",
        outcome.best_epoch,
        outcome.best_val_top1.map_or("n/a".into(), |v| format!("{v:.1}")),
        last.map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    ctx.metrics = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "best_val_top1": outcome.best_val_top1,
        "final_loss": last,
    });
    ctx.artifacts.extend([ckpt_path, log_path]);
    Ok(())
}

pub fn eval(ctx: &mut Context, checkpoint: Option<PathBuf>) -> anyhow::Result<()> {
    let split = ctx.cfg.data.split;
    let path = checkpoint.unwrap_or_else(|| ctx.layout.checkpoint(split));
    require(&path, "checkpoint", "train")?;
    let ckpt = Checkpoint::load(&path)?;
    if ckpt.config_hash != ctx.hash && !ctx.force {
        bail!(
            "checkpoint {} was trained under config {} but the current config is {} (use --force to evaluate anyway)",
            path.display(),
            ckpt.config_hash,
            ctx.hash
        );
    }
    let inputs = Inputs::load(ctx)?;
    let test_recs = inputs.records(&ctx.cfg.data.eval_tag, &inputs.split.test_classes);
    if test_recs.is_empty() {
        bail!("no `{}` videos of test classes", ctx.cfg.data.eval_tag);
    }
    let videos = inputs.prepare(&test_recs, ckpt.train.n_objects)?;
    let bank = inputs.bank()?;
    let test_ids = ids(&inputs.split.test_classes);
    let mut result = evaluation::evaluate(
        &ckpt.model,
        &EvalSet {
            videos: &videos,
            classes: &test_ids,
        },
        &bank,
        split,
    )?;
    result.config_hash = Some(ctx.hash.clone());
    println!(
        "split {split}: top-1 {:.1} top-5 {:.1} over {} videos of {} classes",
        result.top1, result.top5, result.videos, result.classes
    );
    ctx.metrics = serde_json::json!({"top1": result.top1, "top5": result.top5});
    let out = ctx.layout.eval(split);
    write_json(
        &out,
        &MethodEval {
            method: "er".into(),
            config_hash: ctx.hash.clone(),
            seed: ckpt.seed,
            eval: result,
        },
    )?;
    ctx.artifacts.push(out);
    Ok(())
}

fn st_pairs(records: &[&FeatureRecord]) -> Vec<(DVector<f64>, ClassId)> {
    records
        .iter()
        .filter_map(|r| Some((r.st_feature.clone(), r.label?)))
        .collect()
}

pub fn baseline(ctx: &mut Context, method: BaselineKind) -> anyhow::Result<()> {
    let inputs = Inputs::load(ctx)?;
    let cfg = &ctx.cfg;
    let seen = ids(&inputs.split.seen_classes);
    let test_ids = ids(&inputs.split.test_classes);
    let text_of = |id: &ClassId| {
        let ed = inputs.description(*id);
        if cfg.baseline.use_descriptions {
            ed.body.clone()
        } else {
            ed.name.clone()
        }
    };
    let seen_text: Vec<String> = seen.iter().map(text_of).collect();
    let test_text: Vec<String> = test_ids.iter().map(text_of).collect();
    let seen_refs: Vec<&str> = seen_text.iter().map(String::as_str).collect();
    let test_refs: Vec<&str> = test_text.iter().map(String::as_str).collect();
    let seen_feats = class_feature_matrix(&seen_refs, &inputs.encoder)?;
    let test_feats = class_feature_matrix(&test_refs, &inputs.encoder)?;

    let train = st_pairs(&inputs.records(&cfg.data.train_tag, &inputs.split.seen_classes));
    if train.is_empty() {
        bail!("no `{}` videos of seen classes", cfg.data.train_tag);
    }
    let column = |c: ClassId| seen.binary_search(&c).expect("filtered to seen classes");
    let videos: Vec<DVector<f64>> = train.iter().map(|(v, _)| v.clone()).collect();
    let labels: Vec<usize> = train.iter().map(|(_, c)| column(*c)).collect();
    let fitted = baselines::fit(method, &videos, &labels, &seen_feats, &cfg.baseline)?;
    let test = st_pairs(&inputs.records(&cfg.data.eval_tag, &inputs.split.test_classes));
    let split = cfg.data.split;
    let mut result = baselines::evaluate(&fitted, &test, &test_feats, &test_ids, split)?;
    result.config_hash = Some(ctx.hash.clone());
    println!(
        "{method} split {split}: top-1 {:.1} top-5 {:.1}",
        result.top1, result.top5
    );
    ctx.metrics = serde_json::json!({"top1": result.top1, "top5": result.top5});
    let out = ctx.layout.baseline(split, &method.to_string());
    write_json(
        &out,
        &MethodEval {
            method: method.to_string(),
            config_hash: ctx.hash.clone(),
            seed: cfg.baseline.seed,
            eval: result,
        },
    )?;
    ctx.artifacts.push(out);
    Ok(())
}

pub fn fewshot(ctx: &mut Context) -> anyhow::Result<()> {
    let inputs = Inputs::load(ctx)?;
    let cfg = &ctx.cfg.fewshot;
    let split = ctx.cfg.data.split;
    let samples = st_pairs(&inputs.records(&ctx.cfg.data.eval_tag, &inputs.split.test_classes));
    let test_ids = ids(&inputs.split.test_classes);
    let results = few_shot_curve(
        &samples,
        &test_ids,
        &cfg.shots,
        cfg.queries_per_class,
        cfg.draws,
        &cfg.probe,
    )?;
    for r in &results {
        println!("{}-shot: top-1 {:.1} top-5 {:.1}", r.shots, r.mean_top1, r.mean_top5);
    }
    ctx.metrics = serde_json::to_value(&results)?;
    let out = ctx.layout.fewshot(split);
    write_json(
        &out,
        &FewShotArtifact {
            config_hash: ctx.hash.clone(),
            split_index: split,
            seed: cfg.probe.seed,
            results,
        },
    )?;
    ctx.artifacts.push(out);
    Ok(())
}
