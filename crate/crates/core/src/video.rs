//! Video side of the joint space.
//!
//! A video arrives as a precomputed spatio-temporal feature plus per-frame
//! object probabilities. The feature is projected and normalized (`x_v`);
//! the top detected objects are embedded through the shared text function
//! (`x_o`). Two channel gates let each stream reweight the other, giving the
//! pair `(x_vo, x_ov)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, sigmoid};
use crate::text::{self, ClassEmbedderParams, ElaborativeDescription, TextError, TokenEncoder};
use crate::{ClassId, ConceptId};

#[derive(Debug, Error, PartialEq)]
pub enum VideoError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("projection produced a zero vector; cannot normalize")]
    DegenerateEmbedding,
    #[error(transparent)]
    Text(#[from] TextError),
}

/// Precomputed features of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub video_id: String,
    pub st_feature: DVector<f64>,
    /// Frames × concepts detector probabilities.
    pub frame_object_probs: DMatrix<f64>,
    pub label: Option<ClassId>,
}

impl FeatureRecord {
    pub fn validate(&self, st_dim: usize, vocab_size: usize) -> Result<(), VideoError> {
        if self.st_feature.len() != st_dim {
            return Err(VideoError::ShapeMismatch(format!(
                "{}: st feature has length {}, expected {st_dim}",
                self.video_id,
                self.st_feature.len()
            )));
        }
        if !linalg::all_finite(self.st_feature.as_slice()) {
            return Err(VideoError::InvalidArgument(format!(
                "{}: non-finite st feature",
                self.video_id
            )));
        }
        if self.frame_object_probs.ncols() != vocab_size {
            return Err(VideoError::ShapeMismatch(format!(
                "{}: probability rows have {} concepts, vocabulary has {vocab_size}",
                self.video_id,
                self.frame_object_probs.ncols()
            )));
        }
        if self.frame_object_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(VideoError::InvalidArgument(format!(
                "{}: object probabilities outside [0, 1]",
                self.video_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectConcept {
    pub id: ConceptId,
    pub name: String,
    pub ed: ElaborativeDescription,
}

/// Ordered object label space of the frame classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptVocabulary {
    concepts: Vec<ObjectConcept>,
}

impl ConceptVocabulary {
    /// Concept ids must be exactly `0..V` in order.
    pub fn new(concepts: Vec<ObjectConcept>) -> Result<Self, VideoError> {
        for (i, c) in concepts.iter().enumerate() {
            if c.id as usize != i {
                return Err(VideoError::InvalidArgument(format!(
                    "concept ids must be dense and ordered; position {i} holds id {}",
                    c.id
                )));
            }
        }
        Ok(Self { concepts })
    }

    /// Builds the vocabulary from descriptions whose subject ids are the concept ids.
    pub fn from_descriptions(eds: Vec<ElaborativeDescription>) -> Result<Self, VideoError> {
        Self::new(
            eds.into_iter()
                .map(|ed| ObjectConcept {
                    id: ed.subject_id,
                    name: ed.name.clone(),
                    ed,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: ConceptId) -> Option<&ObjectConcept> {
        self.concepts.get(id as usize)
    }

    pub fn concepts(&self) -> &[ObjectConcept] {
        &self.concepts
    }
}

/// Learned parameters of the video embedding: the spatio-temporal projection
/// and the two channel gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEmbedderParams {
    pub st_projection_weight: DMatrix<f64>,
    pub st_projection_bias: DVector<f64>,
    pub gate_vo_w1: DMatrix<f64>,
    pub gate_vo_w2: DMatrix<f64>,
    pub gate_ov_w1: DMatrix<f64>,
    pub gate_ov_w2: DMatrix<f64>,
}

impl VideoEmbedderParams {
    pub fn init(embed_dim: usize, st_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = embed_dim;
        let st_bound = 1.0 / (st_dim as f64).sqrt();
        let w1_bound = 1.0 / ((2 * k) as f64).sqrt();
        let w2_bound = 1.0 / (k as f64).sqrt();
        Self {
            st_projection_weight: linalg::uniform_matrix(k, st_dim, st_bound, &mut rng),
            st_projection_bias: linalg::uniform_vector(k, st_bound, &mut rng),
            gate_vo_w1: linalg::uniform_matrix(k, 2 * k, w1_bound, &mut rng),
            gate_vo_w2: linalg::uniform_matrix(k, k, w2_bound, &mut rng),
            gate_ov_w1: linalg::uniform_matrix(k, 2 * k, w1_bound, &mut rng),
            gate_ov_w2: linalg::uniform_matrix(k, k, w2_bound, &mut rng),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.st_projection_weight.nrows()
    }

    pub fn st_dim(&self) -> usize {
        self.st_projection_weight.ncols()
    }

    pub fn validate(&self) -> Result<(), VideoError> {
        let k = self.embed_dim();
        let shapes = [
            ("st_projection_bias", (self.st_projection_bias.len(), 1), (k, 1)),
            ("gate_vo_w1", self.gate_vo_w1.shape(), (k, 2 * k)),
            ("gate_vo_w2", self.gate_vo_w2.shape(), (k, k)),
            ("gate_ov_w1", self.gate_ov_w1.shape(), (k, 2 * k)),
            ("gate_ov_w2", self.gate_ov_w2.shape(), (k, k)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(VideoError::ShapeMismatch(format!(
                    "{name} is {got:?}, expected {want:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Projected, normalized spatio-temporal embedding `x_v`.
pub fn embed_st(rec: &FeatureRecord, params: &VideoEmbedderParams) -> Result<DVector<f64>, VideoError> {
    project_st(&rec.st_feature, params).map(|(x, _)| x)
}

/// Returns the unit embedding and the pre-normalization norm.
pub(crate) fn project_st(
    feature: &DVector<f64>,
    params: &VideoEmbedderParams,
) -> Result<(DVector<f64>, f64), VideoError> {
    if feature.len() != params.st_dim() {
        return Err(VideoError::ShapeMismatch(format!(
            "st feature has length {}, projection expects {}",
            feature.len(),
            params.st_dim()
        )));
    }
    let projected = &params.st_projection_weight * feature + &params.st_projection_bias;
    linalg::normalize(&projected).ok_or(VideoError::DegenerateEmbedding)
}

/// Mean object probability per concept over frames.
pub fn average_object_probs(probs: &DMatrix<f64>) -> DVector<f64> {
    let frames = probs.nrows().max(1) as f64;
    DVector::from_fn(probs.ncols(), |j, _| probs.column(j).sum() / frames)
}

/// The `n_o` concepts with the highest frame-averaged probability, ordered by
/// probability descending and then concept id ascending.
pub fn top_objects(rec: &FeatureRecord, vocab: &ConceptVocabulary, n_o: usize) -> Result<Vec<ConceptId>, VideoError> {
    let v = vocab.len();
    if rec.frame_object_probs.ncols() != v {
        return Err(VideoError::ShapeMismatch(format!(
            "probability matrix has {} concepts, vocabulary has {v}",
            rec.frame_object_probs.ncols()
        )));
    }
    if n_o == 0 || n_o > v {
        return Err(VideoError::InvalidArgument(format!("n_o = {n_o} must be in [1, {v}]")));
    }
    let avg = average_object_probs(&rec.frame_object_probs);
    let mut ids: Vec<ConceptId> = (0..v as ConceptId).collect();
    ids.sort_by(|&a, &b| avg[b as usize].total_cmp(&avg[a as usize]).then(a.cmp(&b)));
    ids.truncate(n_o);
    Ok(ids)
}

/// Object-stream embedding `x_o`: the top objects' descriptions joined and
/// embedded with the class parameters.
pub fn embed_objects(
    rec: &FeatureRecord,
    vocab: &ConceptVocabulary,
    n_o: usize,
    enc: &dyn TokenEncoder,
    class_params: &ClassEmbedderParams,
) -> Result<DVector<f64>, VideoError> {
    let eds = top_object_descriptions(rec, vocab, n_o)?;
    Ok(text::embed_concept_sequence(&eds, enc, class_params)?)
}

pub(crate) fn top_object_descriptions<'a>(
    rec: &FeatureRecord,
    vocab: &'a ConceptVocabulary,
    n_o: usize,
) -> Result<Vec<&'a ElaborativeDescription>, VideoError> {
    Ok(top_objects(rec, vocab, n_o)?
        .into_iter()
        .map(|id| &vocab.get(id).expect("top_objects returns in-vocabulary ids").ed)
        .collect())
}

/// Intermediate values of one channel gate, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GateTrace {
    pub input: DVector<f64>,
    pub hidden_pre: DVector<f64>,
    pub hidden: DVector<f64>,
    pub gate: DVector<f64>,
    pub output: DVector<f64>,
    pub gated_norm: f64,
}

/// `normalize(x_a ⊙ σ(W2 · relu(W1 · [x_a; x_b])))` with its trace.
pub fn channel_gate_traced(
    x_a: &DVector<f64>,
    x_b: &DVector<f64>,
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
) -> Result<GateTrace, VideoError> {
    let k = x_a.len();
    if x_b.len() != k || w1.shape() != (k, 2 * k) || w2.shape() != (k, k) {
        return Err(VideoError::ShapeMismatch(format!(
            "gate inputs {}/{} with w1 {:?} and w2 {:?}",
            k,
            x_b.len(),
            w1.shape(),
            w2.shape()
        )));
    }
    let mut input = DVector::zeros(2 * k);
    input.rows_mut(0, k).copy_from(x_a);
    input.rows_mut(k, k).copy_from(x_b);
    let hidden_pre = w1 * &input;
    let hidden = hidden_pre.map(|a| a.max(0.0));
    let gate = (w2 * &hidden).map(sigmoid);
    let gated = x_a.component_mul(&gate);
    let (output, gated_norm) = linalg::normalize(&gated).ok_or(VideoError::DegenerateEmbedding)?;
    Ok(GateTrace {
        input,
        hidden_pre,
        hidden,
        gate,
        output,
        gated_norm,
    })
}

pub fn channel_gate(
    x_a: &DVector<f64>,
    x_b: &DVector<f64>,
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
) -> Result<DVector<f64>, VideoError> {
    channel_gate_traced(x_a, x_b, w1, w2).map(|t| t.output)
}

/// Gradients of one gate with respect to its inputs and weights.
pub struct GateGrads {
    pub x_a: DVector<f64>,
    pub x_b: DVector<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
}

/// Backward pass of [`channel_gate_traced`] given `dL/d output`.
pub fn channel_gate_backward(
    trace: &GateTrace,
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    grad_out: &DVector<f64>,
) -> GateGrads {
    let k = trace.output.len();
    let x_a = trace.input.rows(0, k).into_owned();
    let grad_gated = linalg::normalize_backward(&trace.output, trace.gated_norm, grad_out);
    let mut grad_xa = grad_gated.component_mul(&trace.gate);
    let grad_gate = grad_gated.component_mul(&x_a);
    let grad_logit = grad_gate.zip_map(&trace.gate, |d, g| d * g * (1.0 - g));
    let grad_w2 = &grad_logit * trace.hidden.transpose();
    let grad_hidden = w2.transpose() * &grad_logit;
    let grad_hidden_pre = grad_hidden.zip_map(&trace.hidden_pre, |d, a| if a > 0.0 { d } else { 0.0 });
    let grad_w1 = &grad_hidden_pre * trace.input.transpose();
    let grad_input = w1.transpose() * &grad_hidden_pre;
    grad_xa += grad_input.rows(0, k);
    GateGrads {
        x_a: grad_xa,
        x_b: grad_input.rows(k, k).into_owned(),
        w1: grad_w1,
        w2: grad_w2,
    }
}

/// The two video embeddings `(x_vo, x_ov)`.
pub fn embed_video(
    rec: &FeatureRecord,
    vocab: &ConceptVocabulary,
    n_o: usize,
    enc: &dyn TokenEncoder,
    class_params: &ClassEmbedderParams,
    video_params: &VideoEmbedderParams,
) -> Result<(DVector<f64>, DVector<f64>), VideoError> {
    let x_v = embed_st(rec, video_params)?;
    let x_o = embed_objects(rec, vocab, n_o, enc, class_params)?;
    fuse_streams(&x_v, &x_o, video_params)
}

/// Applies both channel gates to already embedded streams.
pub fn fuse_streams(
    x_v: &DVector<f64>,
    x_o: &DVector<f64>,
    params: &VideoEmbedderParams,
) -> Result<(DVector<f64>, DVector<f64>), VideoError> {
    let x_vo = channel_gate(x_v, x_o, &params.gate_vo_w1, &params.gate_vo_w2)?;
    let x_ov = channel_gate(x_o, x_v, &params.gate_ov_w1, &params.gate_ov_w2)?;
    Ok((x_vo, x_ov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::ToyEncoder;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn vocab(n: usize) -> ConceptVocabulary {
        ConceptVocabulary::from_descriptions(
            (0..n as u32)
                .map(|i| {
                    ElaborativeDescription::from_definition(i, &format!("thing{i}"), &format!("object number {i}"))
                        .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    fn record(probs: DMatrix<f64>, st: Vec<f64>) -> FeatureRecord {
        FeatureRecord {
            video_id: "v0".into(),
            st_feature: DVector::from_vec(st),
            frame_object_probs: probs,
            label: None,
        }
    }

    #[test]
    fn embed_st_identity_projection() {
        let k = 3;
        let mut params = VideoEmbedderParams::init(k, 4, 0);
        params.st_projection_weight = DMatrix::from_fn(k, 4, |r, c| if r == c { 1.0 } else { 0.0 });
        params.st_projection_bias = DVector::zeros(k);
        let rec = record(DMatrix::zeros(1, 1), vec![3.0, 4.0, 0.0, 9.0]);
        let x = embed_st(&rec, &params).unwrap();
        assert_abs_diff_eq!(x[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 0.8, epsilon = 1e-15);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn embed_st_rejects_zero_projection() {
        let mut params = VideoEmbedderParams::init(3, 2, 0);
        params.st_projection_weight.fill(0.0);
        params.st_projection_bias.fill(0.0);
        let rec = record(DMatrix::zeros(1, 1), vec![1.0, 1.0]);
        assert_eq!(embed_st(&rec, &params), Err(VideoError::DegenerateEmbedding));
    }

    #[test]
    fn embed_st_golden() {
        let params = VideoEmbedderParams::init(4, 6, 11);
        let rec = record(DMatrix::zeros(1, 1), vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.25]);
        let x = embed_st(&rec, &params).unwrap();
        for (a, b) in x.iter().zip(GOLDEN_ST.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
    const GOLDEN_ST: [f64; 4] = [
        0.15404612144572866,
        -0.7957932383151779,
        -0.29326740250406225,
        0.5069291320765565,
    ];

    #[test]
    fn top_objects_breaks_ties_by_id() {
        let probs = DMatrix::from_row_slice(2, 3, &[0.6, 0.3, 0.1, 0.2, 0.5, 0.3]);
        let rec = record(probs, vec![1.0]);
        assert_eq!(top_objects(&rec, &vocab(3), 2).unwrap(), vec![0, 1]);
        assert_eq!(top_objects(&rec, &vocab(3), 3).unwrap(), vec![0, 1, 2]);
        assert!(matches!(
            top_objects(&rec, &vocab(3), 4),
            Err(VideoError::InvalidArgument(_))
        ));
        assert!(matches!(
            top_objects(&rec, &vocab(3), 0),
            Err(VideoError::InvalidArgument(_))
        ));
    }

    #[test]
    fn top_objects_all_equal_is_id_order() {
        let rec = record(DMatrix::from_element(8, 5, 0.2), vec![1.0]);
        assert_eq!(top_objects(&rec, &vocab(5), 5).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn top_objects_matches_full_sort_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let probs = DMatrix::from_fn(4, 10, |_, _| rng.gen_range(0.0..0.1));
        let rec = record(probs.clone(), vec![1.0]);
        // oracle: explicit sums, stable sort of (prob, id) pairs
        let mut pairs: Vec<(f64, u32)> = (0..10)
            .map(|j| {
                let mut s = 0.0;
                for f in 0..4 {
                    s += probs[(f, j)];
                }
                (s / 4.0, j as u32)
            })
            .collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<u32> = pairs.iter().take(3).map(|p| p.1).collect();
        assert_eq!(top_objects(&rec, &vocab(10), 3).unwrap(), expected);
    }

    #[test]
    fn single_object_stream_equals_class_embedding() {
        let enc = ToyEncoder::new(8, 1);
        let cp = ClassEmbedderParams::init(4, 8, 1);
        let vocab = vocab(3);
        let probs = DMatrix::from_row_slice(1, 3, &[0.1, 0.7, 0.2]);
        let rec = record(probs, vec![1.0]);
        let x_o = embed_objects(&rec, &vocab, 1, &enc, &cp).unwrap();
        assert_eq!(x_o, text::embed_class(&vocab.get(1).unwrap().ed, &enc, &cp).unwrap());
        let x5 = embed_objects(&rec, &vocab, 3, &enc, &cp).unwrap();
        assert_abs_diff_eq!(x5.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn embed_objects_golden() {
        let enc = ToyEncoder::new(8, 42);
        let cp = ClassEmbedderParams::init(4, 8, 42);
        let probs = DMatrix::from_row_slice(2, 4, &[0.1, 0.5, 0.3, 0.1, 0.2, 0.4, 0.3, 0.1]);
        let x_o = embed_objects(&record(probs, vec![1.0]), &vocab(4), 2, &enc, &cp).unwrap();
        for (a, b) in x_o.iter().zip(GOLDEN_OBJ.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
    const GOLDEN_OBJ: [f64; 4] = [
        -0.6983853057291046,
        -0.604860635152809,
        0.05093316747434014,
        0.379219447332592,
    ];

    #[test]
    fn zero_gate_is_identity() {
        let k = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x_a = linalg::normalize(&linalg::uniform_vector(k, 1.0, &mut rng)).unwrap().0;
        let x_b = linalg::normalize(&linalg::uniform_vector(k, 1.0, &mut rng)).unwrap().0;
        let out = channel_gate(&x_a, &x_b, &DMatrix::zeros(k, 2 * k), &DMatrix::zeros(k, k)).unwrap();
        let trace = channel_gate_traced(&x_a, &x_b, &DMatrix::zeros(k, 2 * k), &DMatrix::zeros(k, k)).unwrap();
        assert!(trace.gate.iter().all(|&g| g == 0.5));
        for i in 0..k {
            assert_abs_diff_eq!(out[i], x_a[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn gate_matches_scalar_loop_oracle() {
        let k = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x_a = linalg::normalize(&linalg::uniform_vector(k, 1.0, &mut rng)).unwrap().0;
        let x_b = linalg::normalize(&linalg::uniform_vector(k, 1.0, &mut rng)).unwrap().0;
        let w1 = linalg::uniform_matrix(k, 2 * k, 1.0, &mut rng);
        let w2 = linalg::uniform_matrix(k, k, 1.0, &mut rng);
        let out = channel_gate(&x_a, &x_b, &w1, &w2).unwrap();

        let cat: Vec<f64> = x_a.iter().chain(x_b.iter()).copied().collect();
        let mut hidden = vec![0.0; k];
        for i in 0..k {
            let mut s = 0.0;
            for j in 0..2 * k {
                s += w1[(i, j)] * cat[j];
            }
            hidden[i] = if s > 0.0 { s } else { 0.0 };
        }
        let mut gated = vec![0.0; k];
        for i in 0..k {
            let mut s = 0.0;
            for j in 0..k {
                s += w2[(i, j)] * hidden[j];
            }
            gated[i] = x_a[i] / (1.0 + (-s).exp());
        }
        let norm = gated.iter().map(|g| g * g).sum::<f64>().sqrt();
        for i in 0..k {
            assert_abs_diff_eq!(out[i], gated[i] / norm, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_gates_return_streams_unchanged() {
        let enc = ToyEncoder::new(8, 2);
        let cp = ClassEmbedderParams::init(4, 8, 2);
        let mut vp = VideoEmbedderParams::init(4, 3, 2);
        for w in [
            &mut vp.gate_vo_w1,
            &mut vp.gate_vo_w2,
            &mut vp.gate_ov_w1,
            &mut vp.gate_ov_w2,
        ] {
            w.fill(0.0);
        }
        let vocab = vocab(4);
        let rec = record(
            DMatrix::from_row_slice(1, 4, &[0.1, 0.2, 0.6, 0.1]),
            vec![0.3, -0.7, 1.1],
        );
        let (x_vo, x_ov) = embed_video(&rec, &vocab, 2, &enc, &cp, &vp).unwrap();
        assert_eq!(x_vo, embed_st(&rec, &vp).unwrap());
        assert_eq!(x_ov, embed_objects(&rec, &vocab, 2, &enc, &cp).unwrap());
    }

    #[test]
    fn embed_video_golden() {
        let enc = ToyEncoder::new(8, 5);
        let cp = ClassEmbedderParams::init(4, 8, 5);
        let vp = VideoEmbedderParams::init(4, 3, 5);
        let rec = record(
            DMatrix::from_row_slice(1, 4, &[0.1, 0.2, 0.6, 0.1]),
            vec![0.3, -0.7, 1.1],
        );
        let (x_vo, x_ov) = embed_video(&rec, &vocab(4), 2, &enc, &cp, &vp).unwrap();
        for (a, b) in x_vo.iter().chain(x_ov.iter()).zip(GOLDEN_PAIR.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
    const GOLDEN_PAIR: [f64; 8] = [
        -0.39524658930357537,
        0.6949870429131423,
        0.5534373613277149,
        0.2334100060266343,
        0.38481932509425965,
        -0.3023714663577037,
        0.7011894874055298,
        0.5184774692488199,
    ];

    proptest! {
        #[test]
        fn gate_output_is_unit_and_activations_open(seed in 0u64..500, k in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x_a = linalg::normalize(&linalg::uniform_vector(k, 1.0, &mut rng)).unwrap().0;
            let x_b = linalg::normalize(&linalg::uniform_vector(k, 1.0, &mut rng)).unwrap().0;
            let w1 = linalg::uniform_matrix(k, 2 * k, 2.0, &mut rng);
            let w2 = linalg::uniform_matrix(k, k, 2.0, &mut rng);
            let t = channel_gate_traced(&x_a, &x_b, &w1, &w2).unwrap();
            prop_assert!((t.output.norm() - 1.0).abs() <= 1e-6);
            prop_assert!(t.gate.iter().all(|&g| g > 0.0 && g < 1.0));
        }

        #[test]
        fn top_objects_is_a_total_order(seed in 0u64..500, frames in 1usize..5, v in 1usize..12) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // coarse values force many ties
            let probs = DMatrix::from_fn(frames, v, |_, _| rng.gen_range(0..3) as f64 / 10.0);
            let rec = record(probs, vec![1.0]);
            let all = top_objects(&rec, &vocab(v), v).unwrap();
            let mut sorted = all.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..v as u32).collect::<Vec<_>>());
            prop_assert_eq!(top_objects(&rec, &vocab(v), v).unwrap(), all);
        }
    }
}
