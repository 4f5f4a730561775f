//! Aggregates per-split artifacts into mean ± std tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::bail;
use rehearsal_core::evaluation::{aggregate_splits, EvalReport, MeanStd};
use serde::Serialize;

use crate::artifacts::{read_json, write_json, ReportInput};
use crate::Context;

#[derive(Debug, Serialize)]
struct MethodRow {
    method: String,
    splits: Vec<usize>,
    top1: MeanStd,
    top5: MeanStd,
}

#[derive(Debug, Serialize)]
struct ShotRow {
    shots: usize,
    splits: usize,
    top1: MeanStd,
}

#[derive(Debug, Serialize)]
struct Report {
    config_hashes: Vec<String>,
    methods: Vec<MethodRow>,
    fewshot: Vec<ShotRow>,
}

pub fn report(ctx: &mut Context, inputs: &[PathBuf], out: Option<PathBuf>) -> anyhow::Result<()> {
    if inputs.is_empty() {
        bail!("no report inputs given");
    }
    let mut loaded = Vec::with_capacity(inputs.len());
    for path in inputs {
        let input: ReportInput = read_json(path)?;
        loaded.push((path, input));
    }
    let mut hashes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (path, input) in &loaded {
        hashes
            .entry(input.config_hash().to_string())
            .or_default()
            .push(path.display().to_string());
    }
    if hashes.len() > 1 {
        let detail: Vec<String> = hashes
            .iter()
            .map(|(h, files)| format!("{h}: {}", files.join(", ")))
            .collect();
        if !ctx.force {
            bail!(
                "inputs come from different configs (use --force to mix them):\n  {}",
                detail.join("\n  ")
            );
        }
        log::warn!("mixing configs: {}", detail.join("; "));
    }

    let mut by_method: BTreeMap<String, Vec<_>> = BTreeMap::new();
    let mut by_shots: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (_, input) in loaded {
        match input {
            ReportInput::Eval(e) => by_method.entry(e.method).or_default().push(e.eval),
            ReportInput::FewShot(f) => {
                for r in f.results {
                    by_shots.entry(r.shots).or_default().push(r.mean_top1);
                }
            }
        }
    }

    let mut methods = Vec::new();
    for (method, mut splits) in by_method {
        splits.sort_by_key(|s| s.split_index);
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = splits.iter().find(|s| !seen.insert(s.split_index)) {
            bail!("method {method} has two results for split {}", dup.split_index);
        }
        let agg = EvalReport::from_splits(splits)?;
        methods.push(MethodRow {
            method,
            splits: agg.splits.iter().map(|s| s.split_index).collect(),
            top1: agg.top1,
            top5: agg.top5,
        });
    }
    let fewshot = by_shots
        .into_iter()
        .map(|(shots, v)| {
            Ok(ShotRow {
                shots,
                splits: v.len(),
                top1: aggregate_splits(&v)?,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut table = String::new();
    if !methods.is_empty() {
        let _ = writeln!(
            table,
            "{:<10} {:>6}  {:<14} {:<14}",
            "method", "splits", "top-1", "top-5"
        );
        for m in &methods {
            let _ = writeln!(
                table,
                "{:<10} {:>6}  {:<14} {:<14}",
                m.method,
                m.splits.len(),
                m.top1.to_string(),
                m.top5.to_string()
            );
        }
    }
    if !fewshot.is_empty() {
        let _ = writeln!(table, "{:<10} {:>6}  {:<14}", "few-shot", "splits", "top-1");
        for r in &fewshot {
            let _ = writeln!(
                table,
                "{:<10} {:>6}  {:<14}",
                format!("{}-shot", r.shots),
                r.splits,
                r.top1.to_string()
            );
        }
    }
    print!("{table}");

    let report = Report {
        config_hashes: hashes.into_keys().collect(),
        methods,
        fewshot,
    };
    let out = out.unwrap_or_else(|| ctx.layout.root.join("report.json"));
    write_json(&out, &report)?;
    let txt = out.with_extension("txt");
    std::fs::write(&txt, &table)?;
    ctx.metrics = serde_json::to_value(&report)?;
    ctx.artifacts.extend([out, txt]);
    Ok(())
}
