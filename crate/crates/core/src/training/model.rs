//! The joint embedding model and its analytic gradients.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{self, LossError};
use crate::linalg;
use crate::text::{self, ClassEmbedderParams, ElaborativeDescription, TextError, TokenEncoder};
use crate::video::{self, ConceptVocabulary, FeatureRecord, GateTrace, VideoEmbedderParams, VideoError};
use crate::{ClassId, ConceptId};

/// All learned parameters: the shared text projection and the video embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub class: ClassEmbedderParams,
    pub video: VideoEmbedderParams,
}

/// Names of the trainable tensors, in a fixed order.
pub const PARAM_NAMES: [&str; 8] = [
    "class.projection_weight",
    "class.projection_bias",
    "video.st_projection_weight",
    "video.st_projection_bias",
    "video.gate_vo_w1",
    "video.gate_vo_w2",
    "video.gate_ov_w1",
    "video.gate_ov_w2",
];

impl JointModel {
    pub fn init(embed_dim: usize, hidden_dim: usize, st_dim: usize, seed: u64) -> Self {
        Self {
            class: ClassEmbedderParams::init(embed_dim, hidden_dim, seed),
            video: VideoEmbedderParams::init(embed_dim, st_dim, seed.wrapping_add(0x9e37_79b9)),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.class.embed_dim()
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 8] {
        [
            (PARAM_NAMES[0], self.class.projection_weight.as_slice()),
            (PARAM_NAMES[1], self.class.projection_bias.as_slice()),
            (PARAM_NAMES[2], self.video.st_projection_weight.as_slice()),
            (PARAM_NAMES[3], self.video.st_projection_bias.as_slice()),
            (PARAM_NAMES[4], self.video.gate_vo_w1.as_slice()),
            (PARAM_NAMES[5], self.video.gate_vo_w2.as_slice()),
            (PARAM_NAMES[6], self.video.gate_ov_w1.as_slice()),
            (PARAM_NAMES[7], self.video.gate_ov_w2.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 8] {
        [
            (PARAM_NAMES[0], self.class.projection_weight.as_mut_slice()),
            (PARAM_NAMES[1], self.class.projection_bias.as_mut_slice()),
            (PARAM_NAMES[2], self.video.st_projection_weight.as_mut_slice()),
            (PARAM_NAMES[3], self.video.st_projection_bias.as_mut_slice()),
            (PARAM_NAMES[4], self.video.gate_vo_w1.as_mut_slice()),
            (PARAM_NAMES[5], self.video.gate_vo_w2.as_mut_slice()),
            (PARAM_NAMES[6], self.video.gate_ov_w1.as_mut_slice()),
            (PARAM_NAMES[7], self.video.gate_ov_w2.as_mut_slice()),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| linalg::all_finite(t))
    }

    /// Adds `scale * other` to every tensor.
    pub fn axpy(&mut self, scale: f64, other: &JointModel) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    /// Unit-norm class embeddings stacked as columns.
    pub fn class_matrix(&self, pooled: &[&DVector<f64>]) -> Result<DMatrix<f64>, TextError> {
        let cols = pooled
            .iter()
            .map(|h| self.class.embed_pooled(h))
            .collect::<Result<Vec<_>, _>>()?;
        if cols.is_empty() {
            return Ok(DMatrix::zeros(self.embed_dim(), 0));
        }
        Ok(DMatrix::from_columns(&cols))
    }

    /// `(x_vo, x_ov)` for a prepared video.
    pub fn embed_prepared(&self, v: &PreparedVideo) -> Result<(DVector<f64>, DVector<f64>), VideoError> {
        let (x_v, _) = video::project_st(&v.st, &self.video)?;
        let x_o = self.class.embed_pooled(&v.objects_pooled)?;
        video::fuse_streams(&x_v, &x_o, &self.video)
    }
}

/// A video with its encoder-side work already done: the object-stream text
/// is pooled once because the token encoder is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedVideo {
    pub video_id: String,
    pub st: DVector<f64>,
    pub objects_pooled: DVector<f64>,
    pub top_concepts: Vec<ConceptId>,
    pub label: Option<ClassId>,
}

impl PreparedVideo {
    pub fn prepare(
        rec: &FeatureRecord,
        vocab: &ConceptVocabulary,
        n_o: usize,
        enc: &dyn TokenEncoder,
    ) -> Result<Self, VideoError> {
        let top = video::top_objects(rec, vocab, n_o)?;
        let eds: Vec<&ElaborativeDescription> = top
            .iter()
            .map(|&id| &vocab.get(id).expect("top_objects returns in-vocabulary ids").ed)
            .collect();
        let pooled = text::pooled_concept_sequence(&eds, enc, n_o.max(text::DEFAULT_MAX_CONCEPTS))?;
        Ok(Self {
            video_id: rec.video_id.clone(),
            st: rec.st_feature.clone(),
            objects_pooled: pooled,
            top_concepts: top,
            label: rec.label,
        })
    }

    /// Prepares many records in parallel, preserving order.
    pub fn prepare_all<'r>(
        records: impl IntoIterator<Item = &'r FeatureRecord>,
        vocab: &ConceptVocabulary,
        n_o: usize,
        enc: &dyn TokenEncoder,
    ) -> Result<Vec<Self>, VideoError> {
        use rayon::prelude::*;
        let records: Vec<&FeatureRecord> = records.into_iter().collect();
        records.par_iter().map(|r| Self::prepare(r, vocab, n_o, enc)).collect()
    }
}

/// Pooled encoder outputs for class and concept descriptions.
#[derive(Debug, Clone, Default)]
pub struct TextBank {
    pub classes: std::collections::BTreeMap<ClassId, DVector<f64>>,
    /// Indexed by concept id.
    pub concepts: Vec<DVector<f64>>,
}

impl TextBank {
    pub fn build(
        classes: &[ElaborativeDescription],
        vocab: &ConceptVocabulary,
        enc: &dyn TokenEncoder,
    ) -> Result<Self, TextError> {
        let classes = classes
            .iter()
            .map(|ed| Ok((ed.subject_id, text::pooled_description(ed, enc)?)))
            .collect::<Result<_, TextError>>()?;
        let concepts = vocab
            .concepts()
            .iter()
            .map(|c| text::pooled_description(&c.ed, enc))
            .collect::<Result<_, _>>()?;
        Ok(Self { classes, concepts })
    }

    pub fn class(&self, id: ClassId) -> Option<&DVector<f64>> {
        self.classes.get(&id)
    }
}

/// Hyperparameters of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub tau: f64,
    pub lambda: f64,
    pub average_three: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ar: f64,
    pub er: f64,
    pub total: f64,
    /// Videos left out of the rehearsal term for lacking a positive concept.
    pub er_excluded: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("batch problem: {0}")]
    Batch(String),
}

/// One minibatch of seen-class training data.
pub struct Batch<'a> {
    pub videos: Vec<&'a PreparedVideo>,
    /// Column index of each video's label within `class_pooled`.
    pub labels: Vec<usize>,
    /// Pooled descriptions of the seen classes, one per column.
    pub class_pooled: Vec<&'a DVector<f64>>,
    /// Pooled descriptions indexed by concept id.
    pub concept_pooled: &'a [DVector<f64>],
}

/// Sorted, de-duplicated union of the batch videos' top concepts.
pub fn batch_concept_union(videos: &[&PreparedVideo]) -> Vec<ConceptId> {
    let mut ids: Vec<ConceptId> = videos.iter().flat_map(|v| v.top_concepts.iter().copied()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

struct Projected {
    unit: DVector<f64>,
    norm: f64,
}

fn project_text(params: &ClassEmbedderParams, pooled: &DVector<f64>) -> Result<Projected, ModelError> {
    let raw = params.project(pooled)?;
    let (unit, norm) = linalg::normalize(&raw).ok_or(TextError::DegenerateEmbedding)?;
    Ok(Projected { unit, norm })
}

struct VideoForward {
    x_v: Projected,
    x_o: Projected,
    vo: GateTrace,
    ov: GateTrace,
}

/// Per-video contribution from the backward pass.
struct VideoGrad {
    ar: f64,
    er: Option<f64>,
    class_cols: DMatrix<f64>,
    concept_cols: DMatrix<f64>,
    model: JointModel,
}

fn forward_video(model: &JointModel, v: &PreparedVideo) -> Result<VideoForward, ModelError> {
    let (x_v_raw, x_v_norm) = {
        let (unit, norm) = video::project_st(&v.st, &model.video)?;
        (unit, norm)
    };
    let x_o = project_text(&model.class, &v.objects_pooled)?;
    let p = &model.video;
    let vo = video::channel_gate_traced(&x_v_raw, &x_o.unit, &p.gate_vo_w1, &p.gate_vo_w2)?;
    let ov = video::channel_gate_traced(&x_o.unit, &x_v_raw, &p.gate_ov_w1, &p.gate_ov_w2)?;
    Ok(VideoForward {
        x_v: Projected {
            unit: x_v_raw,
            norm: x_v_norm,
        },
        x_o,
        vo,
        ov,
    })
}

/// Smallest distance to a non-differentiable point over the batch: gate
/// ReLU pre-activations and the object scores clipped at zero in the fused
/// score. Finite differences with a step well below this are meaningful.
pub fn kink_margin(model: &JointModel, batch: &Batch<'_>) -> Result<f64, ModelError> {
    let class_z = model.class_matrix(&batch.class_pooled)?;
    let mut margin = f64::INFINITY;
    for v in &batch.videos {
        let fwd = forward_video(model, v)?;
        let (_, p_o) = loss::similarity(&fwd.vo.output, &fwd.ov.output, &class_z)?;
        for x in fwd
            .vo
            .hidden_pre
            .iter()
            .chain(fwd.ov.hidden_pre.iter())
            .chain(p_o.iter())
        {
            margin = margin.min(x.abs());
        }
    }
    Ok(margin)
}

/// Accumulates `dL/dp` for the three rows of one score triple and returns
/// the loss; `fused_clip` applies the `max(p_o, 0)` derivative.
fn triple_grad(
    s: &loss::ScoreTriple,
    q: &DVector<f64>,
    settings: &LossSettings,
    weight: f64,
    fused_clip: bool,
) -> Result<(f64, DVector<f64>, DVector<f64>), LossError> {
    let scale = if settings.average_three { 1.0 / 3.0 } else { 1.0 };
    let (lf, gf) = loss::contrastive_loss_with_grad(&s.fused, q, settings.tau)?;
    let (lv, gv) = loss::contrastive_loss_with_grad(&s.visual, q, settings.tau)?;
    let (lo, go) = loss::contrastive_loss_with_grad(&s.object, q, settings.tau)?;
    let w = weight * scale;
    let grad_visual = (&gv + &gf) * w;
    let grad_object = if fused_clip {
        let clipped = gf.zip_map(&s.object, |g, o| if o > 0.0 { g } else { 0.0 });
        (&go + &clipped) * w
    } else {
        (&go + &gf) * w
    };
    Ok(((lf + lv + lo) * scale, grad_visual, grad_object))
}

fn video_backward(
    model: &JointModel,
    v: &PreparedVideo,
    label: usize,
    class_z: &DMatrix<f64>,
    union: &[ConceptId],
    concept_z: &DMatrix<f64>,
    settings: &LossSettings,
    ar_weight: f64,
    er_weight: f64,
) -> Result<VideoGrad, ModelError> {
    let fwd = forward_video(model, v)?;
    let x_vo = &fwd.vo.output;
    let x_ov = &fwd.ov.output;

    let (p_v, p_o) = loss::similarity(x_vo, x_ov, class_z)?;
    let triple = loss::ScoreTriple {
        fused: loss::fuse_scores(&p_v, &p_o),
        visual: p_v,
        object: p_o,
    };
    let q = loss::one_hot(class_z.ncols(), label);
    let (ar, g_pv, g_po) = triple_grad(&triple, &q, settings, ar_weight, true)?;
    let mut grad_vo = class_z * &g_pv;
    let mut grad_ov = class_z * &g_po;
    let class_cols = x_vo * g_pv.transpose() + x_ov * g_po.transpose();

    let mut concept_cols = DMatrix::zeros(concept_z.nrows(), concept_z.ncols());
    let qc = DVector::from_fn(
        union.len(),
        |j, _| if v.top_concepts.contains(&union[j]) { 1.0 } else { 0.0 },
    );
    let er = if qc.sum() > 0.0 {
        let s = loss::concept_scores(x_vo, x_ov, concept_z)?;
        let (er, g_cv, g_co) = triple_grad(&s, &qc, settings, er_weight, false)?;
        grad_vo += concept_z * &g_cv;
        grad_ov += concept_z * &g_co;
        concept_cols = x_vo * g_cv.transpose() + x_ov * g_co.transpose();
        Some(er)
    } else {
        None
    };

    let p = &model.video;
    let gvo = video::channel_gate_backward(&fwd.vo, &p.gate_vo_w1, &p.gate_vo_w2, &grad_vo);
    let gov = video::channel_gate_backward(&fwd.ov, &p.gate_ov_w1, &p.gate_ov_w2, &grad_ov);
    let grad_xv = &gvo.x_a + &gov.x_b;
    let grad_xo = &gvo.x_b + &gov.x_a;

    let mut g = model.zeros_like();
    let d_st = linalg::normalize_backward(&fwd.x_v.unit, fwd.x_v.norm, &grad_xv);
    g.video.st_projection_weight = &d_st * v.st.transpose();
    g.video.st_projection_bias = d_st;
    let d_obj = linalg::normalize_backward(&fwd.x_o.unit, fwd.x_o.norm, &grad_xo);
    g.class.projection_weight = &d_obj * v.objects_pooled.transpose();
    g.class.projection_bias = d_obj;
    g.video.gate_vo_w1 = gvo.w1;
    g.video.gate_vo_w2 = gvo.w2;
    g.video.gate_ov_w1 = gov.w1;
    g.video.gate_ov_w2 = gov.w2;

    Ok(VideoGrad {
        ar,
        er,
        class_cols,
        concept_cols,
        model: g,
    })
}

/// Loss of one batch and, when requested, its gradient with respect to
/// every trainable tensor.
///
/// Per-video work runs in parallel but contributions are summed in batch
/// order, so results are identical regardless of thread count.
pub fn batch_loss(
    model: &JointModel,
    batch: &Batch<'_>,
    settings: &LossSettings,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<JointModel>), ModelError> {
    let n = batch.videos.len();
    if n == 0 || batch.labels.len() != n {
        return Err(ModelError::Batch(format!(
            "{n} videos with {} labels",
            batch.labels.len()
        )));
    }
    if batch.class_pooled.is_empty() {
        return Err(ModelError::Batch("no classes in label space".into()));
    }
    let class_proj = batch
        .class_pooled
        .iter()
        .map(|h| project_text(&model.class, h))
        .collect::<Result<Vec<_>, _>>()?;
    let class_z = DMatrix::from_columns(&class_proj.iter().map(|p| p.unit.clone()).collect::<Vec<_>>());

    let union = batch_concept_union(&batch.videos);
    let concept_proj = union
        .iter()
        .map(|&id| {
            let pooled = batch
                .concept_pooled
                .get(id as usize)
                .ok_or_else(|| ModelError::Batch(format!("concept {id} has no pooled description")))?;
            project_text(&model.class, pooled)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let k = model.embed_dim();
    let concept_z = if concept_proj.is_empty() {
        DMatrix::zeros(k, 0)
    } else {
        DMatrix::from_columns(&concept_proj.iter().map(|p| p.unit.clone()).collect::<Vec<_>>())
    };

    // rows lacking a positive concept are excluded before weighting
    let er_rows = batch
        .videos
        .iter()
        .filter(|v| v.top_concepts.iter().any(|c| union.contains(c)))
        .count();
    let ar_weight = 1.0 / n as f64;
    let er_weight = if er_rows == 0 {
        0.0
    } else {
        settings.lambda / er_rows as f64
    };

    let per_video = batch
        .videos
        .par_iter()
        .zip(batch.labels.par_iter())
        .map(|(v, &label)| {
            video_backward(
                model, v, label, &class_z, &union, &concept_z, settings, ar_weight, er_weight,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut ar = 0.0;
    let mut er = 0.0;
    let mut counted = 0usize;
    let mut grad = if with_grad { Some(model.zeros_like()) } else { None };
    let mut class_cols = DMatrix::zeros(k, class_z.ncols());
    let mut concept_cols = DMatrix::zeros(k, concept_z.ncols());
    for vg in &per_video {
        ar += vg.ar;
        if let Some(e) = vg.er {
            er += e;
            counted += 1;
        }
        if let Some(g) = grad.as_mut() {
            g.axpy(1.0, &vg.model);
            class_cols += &vg.class_cols;
            concept_cols += &vg.concept_cols;
        }
    }
    let ar = ar / n as f64;
    let er = if counted == 0 { 0.0 } else { er / counted as f64 };

    if let Some(g) = grad.as_mut() {
        for (j, (proj, pooled)) in class_proj.iter().zip(&batch.class_pooled).enumerate() {
            let d = linalg::normalize_backward(&proj.unit, proj.norm, &class_cols.column(j).into_owned());
            g.class.projection_weight += &d * pooled.transpose();
            g.class.projection_bias += d;
        }
        for (j, (proj, &id)) in concept_proj.iter().zip(&union).enumerate() {
            let d = linalg::normalize_backward(&proj.unit, proj.norm, &concept_cols.column(j).into_owned());
            g.class.projection_weight += &d * batch.concept_pooled[id as usize].transpose();
            g.class.projection_bias += d;
        }
    }

    Ok((
        LossBreakdown {
            ar,
            er,
            total: loss::total_loss(ar, er, settings.lambda),
            er_excluded: n - counted,
        },
        grad,
    ))
}
