//! `synth` and `split` subcommands.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use rehearsal_core::data::{build_splits, derive_new_classes, ClassCatalog, Dataset, SplitConfig, SplitSpec};
use rehearsal_core::synth::{toy_catalog, ToyWorld};
use rehearsal_core::text::store as ed_file;
use rehearsal_core::ClassId;

use crate::config::RunConfig;
use crate::Context;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Seen and unseen classes built from one attribute pool.
    Default,
    /// Unseen classes use attributes that seen videos show but never name.
    Heldout,
    /// Noisier features for few-shot curves.
    Fewshot,
}

pub struct WorldArgs {
    pub out: PathBuf,
    pub preset: Preset,
    pub seed: u64,
    pub n_val: usize,
    pub n_test: usize,
}

pub fn synth_world(ctx: &mut Context, args: &WorldArgs) -> anyhow::Result<()> {
    let toy = match args.preset {
        Preset::Default => rehearsal_core::synth::ToyConfig {
            seed: args.seed,
            ..ctx.cfg.synth.clone()
        },
        Preset::Heldout => ToyWorld::heldout_overlap_config(args.seed),
        Preset::Fewshot => ToyWorld::few_shot_config(args.seed),
    };
    let world = ToyWorld::generate(&toy).map_err(|e| anyhow::anyhow!("synthetic config: {e}"))?;
    let out = &args.out;
    std::fs::create_dir_all(out.join("splits"))?;

    let mut records = Vec::new();
    let mut tags = Vec::new();
    for (set, tag) in [
        (&world.train, "train"),
        (&world.seen_test, "seen_test"),
        (&world.unseen_test, "test"),
    ] {
        records.extend(set.iter().cloned());
        tags.extend(std::iter::repeat_n(tag.to_string(), set.len()));
    }
    let manifest = out.join("features.json");
    let dims = (toy.st_dim, toy.frames, world.vocab.len());
    Dataset::write(&manifest, &records, &tags, dims, Some(ctx.hash.clone()))?;
    let classes = out.join("classes.ed");
    ed_file::write(&classes, &world.classes)?;
    let concepts = out.join("concepts.ed");
    let concept_eds: Vec<_> = world.vocab.concepts().iter().map(|c| c.ed.clone()).collect();
    ed_file::write(&concepts, &concept_eds)?;

    let split_cfg = SplitConfig {
        n_val: args.n_val,
        n_test: args.n_test,
        seeds: ctx.cfg.split.seeds.clone(),
    };
    let splits = build_splits(&world.seen, &world.unseen, &split_cfg)?;
    for s in &splits {
        let path = out.join("splits").join(SplitSpec::file_name(s.split_index));
        s.save(&path)?;
        ctx.artifacts.push(path);
    }

    let mut cfg = RunConfig::default();
    cfg.output_dir = "runs".into();
    cfg.data.manifest = "features.json".into();
    cfg.data.class_descriptions = "classes.ed".into();
    cfg.data.concept_descriptions = "concepts.ed".into();
    cfg.data.splits_dir = "splits".into();
    cfg.encoder.hidden_dim = toy.hidden_dim;
    cfg.encoder.seed = toy.seed;
    cfg.model.embed_dim = 32;
    cfg.train.base_lr = 1e-2;
    cfg.train.epochs = 50;
    cfg.train.batch_size = 32;
    cfg.train.n_objects = 3;
    cfg.fewshot.queries_per_class = toy.test_videos_per_class / 2;
    cfg.split.n_val = args.n_val;
    cfg.split.n_test = args.n_test;
    cfg.synth = toy;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml())?;
    println!(
        "wrote {} videos, {} classes ({} seen, {} unseen), {} splits to {}",
        records.len(),
        world.classes.len(),
        world.seen.len(),
        world.unseen.len(),
        splits.len(),
        out.display()
    );
    ctx.artifacts.extend([manifest, classes, concepts, cfg_path]);
    Ok(())
}

pub fn synth_catalog(ctx: &mut Context, out: &Path, old: usize, renamed: usize, new: usize) -> anyhow::Result<()> {
    let catalog = toy_catalog(old, renamed, new);
    catalog.save(out)?;
    println!(
        "wrote catalog with {} old and {} new-taxonomy classes to {}",
        catalog.old_taxonomy.len(),
        catalog.new_taxonomy.len(),
        out.display()
    );
    ctx.artifacts.push(out.to_path_buf());
    Ok(())
}

pub fn split_build(ctx: &mut Context, catalog: Option<PathBuf>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let catalog_path = catalog.unwrap_or_else(|| ctx.cfg.split.catalog.clone());
    crate::artifacts::require(&catalog_path, "class catalog", "synth catalog")?;
    let catalog = ClassCatalog::load(&catalog_path)?;
    let new = derive_new_classes(&catalog, ctx.cfg.split.overlap_threshold)?;
    let seen = catalog.old_ids();
    println!(
        "{} seen classes, {} new classes after overlap filtering",
        seen.len(),
        new.len()
    );
    let splits = build_splits(&seen, &new, &ctx.cfg.split.split_config())?;
    let dir = out.unwrap_or_else(|| ctx.cfg.data.splits_dir.clone());
    std::fs::create_dir_all(&dir)?;
    for s in &splits {
        let path = dir.join(SplitSpec::file_name(s.split_index));
        s.save(&path)?;
        println!(
            "split {} (seed {}): {} seen / {} val / {} test",
            s.split_index,
            s.seed,
            s.seen_classes.len(),
            s.val_classes.len(),
            s.test_classes.len()
        );
        ctx.artifacts.push(path);
    }
    ctx.metrics = serde_json::json!({"seen": seen.len(), "new": new.len(), "splits": splits.len()});
    Ok(())
}

/// Re-checks every split file in `dir`, optionally against a catalog.
pub fn split_verify(ctx: &mut Context, dir: Option<PathBuf>, catalog: Option<PathBuf>) -> anyhow::Result<()> {
    let dir = dir.unwrap_or_else(|| ctx.cfg.data.splits_dir.clone());
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("split_") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no split_*.json files in {}", dir.display());
    }
    let reference = match catalog {
        Some(path) => {
            let c = ClassCatalog::load(&path)?;
            let new: BTreeSet<ClassId> = derive_new_classes(&c, ctx.cfg.split.overlap_threshold)?
                .into_iter()
                .collect();
            Some((c.old_ids().into_iter().collect::<BTreeSet<ClassId>>(), new))
        }
        None => None,
    };
    for f in &files {
        let s = SplitSpec::load(f).with_context(|| format!("verifying {}", f.display()))?;
        if let Some((old, new)) = &reference {
            if &s.seen_classes != old {
                bail!("{}: seen classes differ from the catalog's old taxonomy", f.display());
            }
            let stray: Vec<ClassId> = s
                .val_classes
                .union(&s.test_classes)
                .filter(|c| !new.contains(c))
                .copied()
                .collect();
            if !stray.is_empty() {
                bail!(
                    "{}: evaluation classes outside the new-class pool: {stray:?}",
                    f.display()
                );
            }
        }
        println!(
            "{}: ok ({} seen / {} val / {} test)",
            f.display(),
            s.seen_classes.len(),
            s.val_classes.len(),
            s.test_classes.len()
        );
    }
    Ok(())
}
