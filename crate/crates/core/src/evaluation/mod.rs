//! Zero-shot inference, top-k metrics and multi-split aggregation.

mod fewshot;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::training::{JointModel, PreparedVideo, TextBank};
use crate::ClassId;

pub use fewshot::{few_shot_curve, few_shot_probe, LinearProbe, ProbeConfig, ProbeReport, ShotResult};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("candidate class set is empty")]
    EmptyClassSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no values to aggregate")]
    EmptyAggregate,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("embedding failed: {0}")]
    Embedding(String),
}

/// Candidate classes ordered by score, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<(ClassId, f64)>,
}

impl Ranking {
    /// Sorts by score descending, breaking ties by class id ascending.
    pub fn from_scores(class_ids: &[ClassId], scores: &[f64]) -> Self {
        let mut entries: Vec<(ClassId, f64)> = class_ids.iter().copied().zip(scores.iter().copied()).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn top(&self) -> Option<ClassId> {
        self.entries.first().map(|e| e.0)
    }

    pub fn position(&self, class: ClassId) -> Option<usize> {
        self.entries.iter().position(|e| e.0 == class)
    }
}

/// Scores `x_vo·ψ(y) + max(x_ov·ψ(y), 0)` for every column of `z` and ranks them.
pub fn predict(
    x_vo: &DVector<f64>,
    x_ov: &DVector<f64>,
    z: &DMatrix<f64>,
    class_ids: &[ClassId],
) -> Result<Ranking, EvalError> {
    if class_ids.is_empty() || z.ncols() == 0 {
        return Err(EvalError::EmptyClassSet);
    }
    if z.ncols() != class_ids.len() || z.nrows() != x_vo.len() || z.nrows() != x_ov.len() {
        return Err(EvalError::InvalidArgument(format!(
            "class matrix {:?} with {} ids and embeddings of length {}/{}",
            z.shape(),
            class_ids.len(),
            x_vo.len(),
            x_ov.len()
        )));
    }
    let p_v = z.tr_mul(x_vo);
    let p_o = z.tr_mul(x_ov);
    let scores: Vec<f64> = p_v.iter().zip(p_o.iter()).map(|(v, o)| v + o.max(0.0)).collect();
    Ok(Ranking::from_scores(class_ids, &scores))
}

/// Percentage of samples whose label is among the first `k` ranked classes.
pub fn topk_accuracy(rankings: &[Ranking], labels: &[ClassId], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidArgument("k must be at least 1".into()));
    }
    if rankings.len() != labels.len() {
        return Err(EvalError::InvalidArgument(format!(
            "{} rankings for {} labels",
            rankings.len(),
            labels.len()
        )));
    }
    if rankings.is_empty() {
        return Err(EvalError::InvalidArgument("no samples to score".into()));
    }
    let hits = rankings
        .iter()
        .zip(labels)
        .map(|(r, &y)| {
            if k > r.entries.len() {
                return Err(EvalError::InvalidArgument(format!(
                    "k = {k} exceeds the {} candidate classes",
                    r.entries.len()
                )));
            }
            Ok(r.entries[..k].iter().any(|e| e.0 == y))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|&h| h)
        .count();
    Ok(100.0 * hits as f64 / rankings.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (N−1 denominator); 0 for a single value.
    pub std: f64,
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.mean, self.std)
    }
}

pub fn aggregate_splits(values: &[f64]) -> Result<MeanStd, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyAggregate);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(MeanStd { mean, std })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class_id: ClassId,
    pub videos: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_class: ClassId,
    pub predicted: ClassId,
    pub count: usize,
}

/// Metrics for one evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEval {
    pub split_index: usize,
    pub videos: usize,
    pub classes: usize,
    pub top1: f64,
    /// Top-5, or top-|T| when fewer than five candidate classes exist.
    pub top5: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub confusions: Vec<Confusion>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

/// How many confused (true, predicted) pairs a report keeps.
pub const CONFUSION_SUMMARY_LEN: usize = 10;

/// Builds split metrics from per-video rankings, in video order.
pub fn summarize_rankings(
    rankings: &[Ranking],
    labels: &[ClassId],
    class_count: usize,
    split_index: usize,
) -> Result<SplitEval, EvalError> {
    let top1 = topk_accuracy(rankings, labels, 1)?;
    let top5 = topk_accuracy(rankings, labels, 5.min(class_count))?;
    let mut per_class: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    let mut confusions: BTreeMap<(ClassId, ClassId), usize> = BTreeMap::new();
    for (r, &y) in rankings.iter().zip(labels) {
        let entry = per_class.entry(y).or_default();
        entry.0 += 1;
        let predicted = r.top().expect("rankings are non-empty");
        if predicted == y {
            entry.1 += 1;
        } else {
            *confusions.entry((y, predicted)).or_default() += 1;
        }
    }
    let mut confusions: Vec<Confusion> = confusions
        .into_iter()
        .map(|((true_class, predicted), count)| Confusion {
            true_class,
            predicted,
            count,
        })
        .collect();
    confusions.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then((a.true_class, a.predicted).cmp(&(b.true_class, b.predicted)))
    });
    confusions.truncate(CONFUSION_SUMMARY_LEN);
    Ok(SplitEval {
        split_index,
        videos: rankings.len(),
        classes: class_count,
        top1,
        top5,
        per_class: per_class
            .into_iter()
            .map(|(class_id, (videos, correct))| ClassAccuracy {
                class_id,
                videos,
                correct,
                accuracy: 100.0 * correct as f64 / videos as f64,
            })
            .collect(),
        confusions,
        config_hash: None,
    })
}

/// Videos to classify and the candidate (unseen) classes.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub videos: &'a [PreparedVideo],
    pub classes: &'a [ClassId],
}

/// Zero-shot evaluation of the joint model on one split.
pub fn evaluate(
    model: &JointModel,
    set: &EvalSet<'_>,
    bank: &TextBank,
    split_index: usize,
) -> Result<SplitEval, EvalError> {
    let rankings = rank_videos(model, set, bank)?;
    let labels = set
        .videos
        .iter()
        .map(|v| {
            v.label.filter(|l| set.classes.contains(l)).ok_or_else(|| {
                EvalError::InvalidDataset(format!("video {} is not labeled with a candidate class", v.video_id))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    summarize_rankings(&rankings, &labels, set.classes.len(), split_index)
}

/// Rankings for every video, computed in parallel and returned in input order.
pub fn rank_videos(model: &JointModel, set: &EvalSet<'_>, bank: &TextBank) -> Result<Vec<Ranking>, EvalError> {
    if set.classes.is_empty() {
        return Err(EvalError::EmptyClassSet);
    }
    let pooled = set
        .classes
        .iter()
        .map(|c| {
            bank.class(*c)
                .ok_or_else(|| EvalError::InvalidDataset(format!("class {c} has no description")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let z = model
        .class_matrix(&pooled)
        .map_err(|e| EvalError::Embedding(e.to_string()))?;
    set.videos
        .par_iter()
        .map(|v| {
            let (x_vo, x_ov) = model
                .embed_prepared(v)
                .map_err(|e| EvalError::Embedding(e.to_string()))?;
            predict(&x_vo, &x_ov, &z, set.classes)
        })
        .collect()
}

/// Per-split results with their mean ± std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub splits: Vec<SplitEval>,
    pub top1: MeanStd,
    pub top5: MeanStd,
    pub config_hash: Option<String>,
}

impl EvalReport {
    pub fn from_splits(splits: Vec<SplitEval>) -> Result<Self, EvalError> {
        let top1 = aggregate_splits(&splits.iter().map(|s| s.top1).collect::<Vec<_>>())?;
        let top5 = aggregate_splits(&splits.iter().map(|s| s.top5).collect::<Vec<_>>())?;
        let config_hash = splits.first().and_then(|s| s.config_hash.clone());
        Ok(Self {
            splits,
            top1,
            top5,
            config_hash,
        })
    }

    /// Human readable table.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split  videos  classes  top-1   top-5");
        for s in &self.splits {
            let _ = writeln!(
                out,
                "{:>5}  {:>6}  {:>7}  {:>5.1}   {:>5.1}",
                s.split_index, s.videos, s.classes, s.top1, s.top5
            );
        }
        let _ = writeln!(out, "mean   top-1 {}   top-5 {}", self.top1, self.top5);
        for s in &self.splits {
            if s.confusions.is_empty() {
                continue;
            }
            let pairs: Vec<String> = s
                .confusions
                .iter()
                .take(3)
                .map(|c| format!("{}→{} ({})", c.true_class, c.predicted, c.count))
                .collect();
            let _ = writeln!(out, "split {} most confused: {}", s.split_index, pairs.join(", "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn predict_fuses_and_ranks() {
        // columns chosen so that x_vo·Z = (0.2, 0.6) and x_ov·Z = (-0.5, 0.1)
        let z = DMatrix::from_row_slice(2, 2, &[0.2, 0.6, -0.5, 0.1]);
        let r = predict(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), &z, &[1, 2]).unwrap();
        assert_eq!(r.entries[0].0, 2);
        assert_abs_diff_eq!(r.entries[0].1, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(r.entries[1].1, 0.2, epsilon = 1e-15);
        assert_eq!(
            predict(&v(&[1.0]), &v(&[1.0]), &DMatrix::zeros(1, 0), &[]),
            Err(EvalError::EmptyClassSet)
        );
    }

    #[test]
    fn negative_object_scores_do_not_change_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // first row negative, so x_ov = e0 has a negative similarity with every class
        let z = DMatrix::from_fn(4, 6, |r, _| {
            if r == 0 {
                -rng.gen_range(0.1..1.0)
            } else {
                rng.gen_range(-1.0..1.0)
            }
        });
        let x_vo = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let x_ov = v(&[1.0, 0.0, 0.0, 0.0]);
        let ids = [0, 1, 2, 3, 4, 5];
        let full = predict(&x_vo, &x_ov, &z, &ids).unwrap();
        let visual_only = Ranking::from_scores(&ids, z.tr_mul(&x_vo).as_slice());
        assert_eq!(full, visual_only);
    }

    #[test]
    fn ties_break_by_class_id() {
        let r = Ranking::from_scores(&[7, 3, 5], &[0.5, 0.5, 0.9]);
        assert_eq!(r.entries.iter().map(|e| e.0).collect::<Vec<_>>(), vec![5, 3, 7]);
    }

    #[test]
    fn topk_examples() {
        let rs: Vec<Ranking> = (0..4)
            .map(|i| {
                Ranking::from_scores(
                    &[0, 1, 2, 3, 4, 5],
                    &[if i == 0 { 1.0 } else { 0.0 }, 0.5, 0.0, 0.0, 0.0, 0.0],
                )
            })
            .collect();
        let labels = vec![0, 1, 1, 1];
        assert_eq!(topk_accuracy(&rs, &labels, 1).unwrap(), 100.0);
        assert_eq!(topk_accuracy(&rs, &labels, 5).unwrap(), 100.0);
        assert_eq!(topk_accuracy(&rs, &[5, 5, 5, 5], 6).unwrap(), 100.0);
        assert!(topk_accuracy(&rs, &labels, 7).is_err());
        assert!(topk_accuracy(&rs, &labels, 0).is_err());
    }

    #[test]
    fn topk_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ids: Vec<ClassId> = (0..8).collect();
        let mut rankings = Vec::new();
        let mut labels = Vec::new();
        let mut scores_all = Vec::new();
        for _ in 0..20 {
            let s: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            rankings.push(Ranking::from_scores(&ids, &s));
            labels.push(rng.gen_range(0..8));
            scores_all.push(s);
        }
        for k in 1..=8 {
            let mut hits = 0;
            for (s, &y) in scores_all.iter().zip(&labels) {
                // rank of y = number of classes strictly better, plus lower-id ties
                let better = (0..8)
                    .filter(|&c| s[c] > s[y as usize] || (s[c] == s[y as usize] && (c as u32) < y))
                    .count();
                if better < k {
                    hits += 1;
                }
            }
            assert_abs_diff_eq!(
                topk_accuracy(&rankings, &labels, k).unwrap(),
                100.0 * hits as f64 / 20.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate_splits(&[40.0, 42.0, 44.0]).unwrap();
        assert_eq!((a.mean, a.std), (42.0, 2.0));
        assert_eq!(a.to_string(), "42.0 ± 2.0");
        let s = aggregate_splits(&[37.1]).unwrap();
        assert_eq!((s.mean, s.std), (37.1, 0.0));
        assert_eq!(aggregate_splits(&[]), Err(EvalError::EmptyAggregate));
    }

    #[test]
    fn aggregate_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..100.0)).collect();
            // Welford's update as an independent route
            let (mut mean, mut m2) = (0.0, 0.0);
            for (i, x) in xs.iter().enumerate() {
                let d = x - mean;
                mean += d / (i + 1) as f64;
                m2 += d * (x - mean);
            }
            let a = aggregate_splits(&xs).unwrap();
            assert_abs_diff_eq!(a.mean, mean, epsilon = 1e-10);
            assert_abs_diff_eq!(a.std, (m2 / 2.0).sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn per_class_accuracy_weights_to_overall() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let ids: Vec<ClassId> = (0..5).collect();
        let rankings: Vec<Ranking> = (0..37)
            .map(|_| Ranking::from_scores(&ids, &(0..5).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let labels: Vec<ClassId> = (0..37).map(|_| rng.gen_range(0..5)).collect();
        let s = summarize_rankings(&rankings, &labels, 5, 1).unwrap();
        let weighted: f64 = s.per_class.iter().map(|c| c.accuracy * c.videos as f64).sum::<f64>() / s.videos as f64;
        assert_abs_diff_eq!(weighted, s.top1, epsilon = 1e-9);
        assert!(s.top1 <= s.top5);
    }

    proptest! {
        #[test]
        fn topk_is_monotone_in_k(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ids: Vec<ClassId> = (0..6).collect();
            let rankings: Vec<Ranking> = (0..15)
                .map(|_| Ranking::from_scores(&ids, &(0..6).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>()))
                .collect();
            let labels: Vec<ClassId> = (0..15).map(|_| rng.gen_range(0..6)).collect();
            let mut last = 0.0;
            for k in 1..=6 {
                let acc = topk_accuracy(&rankings, &labels, k).unwrap();
                prop_assert!(acc >= last);
                last = acc;
            }
        }

        #[test]
        fn shifting_visual_scores_keeps_order(seed in 0u64..1000, shift in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ids: Vec<ClassId> = (0..5).collect();
            let pv: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let po: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fused = |pv: &[f64]| pv.iter().zip(&po).map(|(v, o)| v + o.max(0.0)).collect::<Vec<_>>();
            let a = Ranking::from_scores(&ids, &fused(&pv));
            let shifted: Vec<f64> = pv.iter().map(|v| v + shift).collect();
            let b = Ranking::from_scores(&ids, &fused(&shifted));
            let order = |r: &Ranking| r.entries.iter().map(|e| e.0).collect::<Vec<_>>();
            prop_assert_eq!(order(&a), order(&b));
        }
    }
}
