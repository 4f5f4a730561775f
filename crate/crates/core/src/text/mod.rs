//! Text side of the joint space: Elaborative Descriptions and the shared
//! class/concept embedding function.
//!
//! A description is tokenized, run through a [`TokenEncoder`], mean pooled,
//! linearly projected to `K` dimensions and L2 normalized. The same
//! [`ClassEmbedderParams`] embed action classes and the concatenated
//! descriptions of a video's detected objects.

mod encoder;
pub mod store;
mod tokenize;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

pub use encoder::{TokenEncoder, TokenEncoderHandle, ToyEncoder};
pub use tokenize::{tokenize, SEPARATOR_TOKEN};

/// Default cap on encoder input length; longer inputs lose their tail.
pub const DEFAULT_MAX_TOKENS: usize = 256;
/// Default cap on the number of concept descriptions joined into one sequence.
pub const DEFAULT_MAX_CONCEPTS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("projection produced a zero vector; cannot normalize")]
    DegenerateEmbedding,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// A class or concept name concatenated with its sentence definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElaborativeDescription {
    pub subject_id: u32,
    pub name: String,
    pub body: String,
    pub token_count: usize,
}

impl ElaborativeDescription {
    /// Builds a description from its parts. `body` is whitespace-normalized
    /// and must contain at least one token.
    pub fn new(subject_id: u32, name: &str, body: &str) -> Result<Self, TextError> {
        let body = normalize_whitespace(body);
        if body.is_empty() {
            return Err(TextError::MalformedInput(format!(
                "empty description body for subject {subject_id}"
            )));
        }
        let token_count = tokenize(&body).len();
        if token_count == 0 {
            return Err(TextError::MalformedInput(format!(
                "description for subject {subject_id} has no tokens"
            )));
        }
        Ok(Self {
            subject_id,
            name: normalize_whitespace(name),
            body,
            token_count,
        })
    }

    /// The `"name : definition"` form used for class descriptions.
    pub fn from_definition(subject_id: u32, name: &str, definition: &str) -> Result<Self, TextError> {
        let name = normalize_whitespace(name);
        Self::new(subject_id, &name, &format!("{name} : {definition}"))
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.body)
    }
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hidden states for one input plus the truncation flag.
#[derive(Debug, Clone)]
pub struct EncodedTokens {
    pub hidden: Vec<DVector<f64>>,
    pub truncated: bool,
}

/// Runs the encoder over a description's tokens.
///
/// Inputs longer than the encoder's maximum length keep their head; the
/// truncation is logged and reported in [`EncodedTokens::truncated`].
pub fn encode_tokens(ed: &ElaborativeDescription, enc: &dyn TokenEncoder) -> Result<EncodedTokens, TextError> {
    encode_token_list(ed.tokens(), enc)
}

fn encode_token_list(mut tokens: Vec<String>, enc: &dyn TokenEncoder) -> Result<EncodedTokens, TextError> {
    if tokens.is_empty() {
        return Err(TextError::MalformedInput("no tokens to encode".into()));
    }
    let max = enc.max_len();
    let truncated = tokens.len() > max;
    if truncated {
        log::warn!(
            "encoder input of {} tokens truncated to {} ({})",
            tokens.len(),
            max,
            enc.handle().encoder_id
        );
        tokens.truncate(max);
    }
    Ok(EncodedTokens {
        hidden: enc.encode(&tokens),
        truncated,
    })
}

/// Arithmetic mean of a non-empty sequence of equal-length vectors.
pub fn sentence_pool(hidden: &[DVector<f64>]) -> Result<DVector<f64>, TextError> {
    let first = hidden
        .first()
        .ok_or_else(|| TextError::MalformedInput("cannot pool an empty sequence".into()))?;
    let dim = first.len();
    let mut acc = DVector::zeros(dim);
    for h in hidden {
        if h.len() != dim {
            return Err(TextError::ShapeMismatch(format!(
                "hidden vector of length {} in a sequence of length-{dim} vectors",
                h.len()
            )));
        }
        acc += h;
    }
    Ok(acc / hidden.len() as f64)
}

/// Linear projection from encoder space into the `K`-dimensional joint space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEmbedderParams {
    pub projection_weight: DMatrix<f64>,
    pub projection_bias: DVector<f64>,
}

impl ClassEmbedderParams {
    pub fn new(projection_weight: DMatrix<f64>, projection_bias: DVector<f64>) -> Result<Self, TextError> {
        if projection_weight.nrows() != projection_bias.len() {
            return Err(TextError::ShapeMismatch(format!(
                "projection weight has {} rows but bias has length {}",
                projection_weight.nrows(),
                projection_bias.len()
            )));
        }
        if !linalg::all_finite(projection_weight.as_slice()) || !linalg::all_finite(projection_bias.as_slice()) {
            return Err(TextError::MalformedInput("non-finite projection parameters".into()));
        }
        Ok(Self {
            projection_weight,
            projection_bias,
        })
    }

    /// Fan-in uniform initialisation from a seed.
    pub fn init(embed_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        Self {
            projection_weight: linalg::uniform_matrix(embed_dim, hidden_dim, bound, &mut rng),
            projection_bias: linalg::uniform_vector(embed_dim, bound, &mut rng),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.projection_weight.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.projection_weight.ncols()
    }

    /// Pre-normalization projection `W h + b`.
    pub fn project(&self, pooled: &DVector<f64>) -> Result<DVector<f64>, TextError> {
        if pooled.len() != self.hidden_dim() {
            return Err(TextError::ShapeMismatch(format!(
                "pooled vector has length {} but projection expects {}",
                pooled.len(),
                self.hidden_dim()
            )));
        }
        Ok(&self.projection_weight * pooled + &self.projection_bias)
    }

    /// Projects and normalizes an already pooled encoder output.
    pub fn embed_pooled(&self, pooled: &DVector<f64>) -> Result<DVector<f64>, TextError> {
        let projected = self.project(pooled)?;
        linalg::normalize(&projected)
            .map(|(unit, _)| unit)
            .ok_or(TextError::DegenerateEmbedding)
    }
}

/// Mean-pooled encoder output for a description.
pub fn pooled_description(ed: &ElaborativeDescription, enc: &dyn TokenEncoder) -> Result<DVector<f64>, TextError> {
    sentence_pool(&encode_tokens(ed, enc)?.hidden)
}

/// Unit-norm embedding of one action class or object concept.
pub fn embed_class(
    ed: &ElaborativeDescription,
    enc: &dyn TokenEncoder,
    params: &ClassEmbedderParams,
) -> Result<DVector<f64>, TextError> {
    params.embed_pooled(&pooled_description(ed, enc)?)
}

/// Tokens of several descriptions joined by [`SEPARATOR_TOKEN`].
pub fn concept_sequence_tokens(concepts: &[&ElaborativeDescription]) -> Vec<String> {
    let mut tokens = Vec::new();
    for (i, ed) in concepts.iter().enumerate() {
        if i > 0 {
            tokens.push(SEPARATOR_TOKEN.to_string());
        }
        tokens.extend(ed.tokens());
    }
    tokens
}

/// Mean-pooled encoder output of a joined concept sequence.
pub fn pooled_concept_sequence(
    concepts: &[&ElaborativeDescription],
    enc: &dyn TokenEncoder,
    max_concepts: usize,
) -> Result<DVector<f64>, TextError> {
    if concepts.is_empty() {
        return Err(TextError::MalformedInput("empty concept list".into()));
    }
    if concepts.len() > max_concepts {
        return Err(TextError::MalformedInput(format!(
            "{} concepts exceeds the configured maximum of {max_concepts}",
            concepts.len()
        )));
    }
    let encoded = encode_token_list(concept_sequence_tokens(concepts), enc)?;
    sentence_pool(&encoded.hidden)
}

/// Embeds an ordered list of concept descriptions as one text through the
/// same parameters used for action classes.
pub fn embed_concept_sequence(
    concepts: &[&ElaborativeDescription],
    enc: &dyn TokenEncoder,
    params: &ClassEmbedderParams,
) -> Result<DVector<f64>, TextError> {
    params.embed_pooled(&pooled_concept_sequence(concepts, enc, DEFAULT_MAX_CONCEPTS)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toy(dim: usize) -> ToyEncoder {
        ToyEncoder::new(dim, 7)
    }

    fn identity_padded(k: usize, h: usize) -> ClassEmbedderParams {
        ClassEmbedderParams::new(
            DMatrix::from_fn(k, h, |r, c| if r == c { 1.0 } else { 0.0 }),
            DVector::zeros(k),
        )
        .unwrap()
    }

    #[test]
    fn empty_body_is_malformed() {
        assert!(matches!(
            ElaborativeDescription::new(0, "x", "   \n\t"),
            Err(TextError::MalformedInput(_))
        ));
    }

    #[test]
    fn token_count_matches_tokenizer() {
        let ed =
            ElaborativeDescription::from_definition(3, "clean and jerk", "a two - movement weightlifting exercise .")
                .unwrap();
        assert_eq!(ed.token_count, ed.tokens().len());
        assert_eq!(ed.body, "clean and jerk : a two - movement weightlifting exercise .");
    }

    #[test]
    fn repeated_tokens_share_hidden_vectors() {
        let enc = toy(16);
        let ed = ElaborativeDescription::new(0, "t", "a b a").unwrap();
        let out = encode_tokens(&ed, &enc).unwrap();
        assert_eq!(out.hidden.len(), 3);
        assert_eq!(out.hidden[0], out.hidden[2]);
        assert_ne!(out.hidden[0], out.hidden[1]);
    }

    #[test]
    fn table_one_definition_encodes_to_reference_width() {
        let enc = ToyEncoder::new(768, 0);
        let ed = ElaborativeDescription::from_definition(
            0,
            "clean and jerk",
            "a two - movement weightlifting exercise in which a weight is raised above the head \
             following an initial lift to shoulder level .",
        )
        .unwrap();
        let out = encode_tokens(&ed, &enc).unwrap();
        assert_eq!(out.hidden.len(), ed.token_count);
        assert!(out.hidden.iter().all(|h| h.len() == 768));
        assert!(!out.truncated);
    }

    #[test]
    fn long_input_is_truncated_from_tail() {
        let enc = ToyEncoder::new(8, 1).with_max_len(4);
        let ed = ElaborativeDescription::new(0, "t", "a b c d e f").unwrap();
        let out = encode_tokens(&ed, &enc).unwrap();
        assert!(out.truncated);
        assert_eq!(out.hidden.len(), 4);
        let head = encode_tokens(&ElaborativeDescription::new(0, "t", "a b c d").unwrap(), &enc).unwrap();
        assert_eq!(out.hidden, head.hidden);
    }

    #[test]
    fn toy_encoder_golden_vector() {
        // Generated once with ToyEncoder::new(8, 42) for the single token "x".
        let enc = ToyEncoder::new(8, 42);
        let ed = ElaborativeDescription::new(0, "x", "x").unwrap();
        let h = &encode_tokens(&ed, &enc).unwrap().hidden[0];
        let golden = GOLDEN_X;
        for (a, b) in h.iter().zip(golden.iter()) {
            assert_eq!(a, b);
        }
    }
    const GOLDEN_X: [f64; 8] = [
        -0.32943561379563346,
        -0.4927376655980037,
        -0.2724190285826066,
        -0.941732951917448,
        -0.38030368253860425,
        -0.48598158993393425,
        -0.3003838238450499,
        -0.0025537982364449707,
    ];

    #[test]
    fn pool_examples() {
        let pooled = sentence_pool(&[DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])]).unwrap();
        assert_eq!(pooled.as_slice(), &[0.5, 0.5]);
        let v = DVector::from_vec(vec![0.3, -2.0, 7.5]);
        assert_eq!(sentence_pool(std::slice::from_ref(&v)).unwrap(), v);
        assert!(matches!(sentence_pool(&[]), Err(TextError::MalformedInput(_))));
        assert!(matches!(
            sentence_pool(&[DVector::zeros(2), DVector::zeros(3)]),
            Err(TextError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn pool_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hidden: Vec<_> = (0..5).map(|_| linalg::uniform_vector(6, 3.0, &mut rng)).collect();
        let pooled = sentence_pool(&hidden).unwrap();
        for j in 0..6 {
            let mut s = 0.0;
            for h in &hidden {
                s += h[j];
            }
            assert_abs_diff_eq!(pooled[j], s / 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pool_is_linear_in_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hidden: Vec<_> = (0..4).map(|_| linalg::uniform_vector(5, 1.0, &mut rng)).collect();
        let base = sentence_pool(&hidden).unwrap();
        for alpha in [0.0, 1.0, -2.0] {
            let scaled: Vec<_> = hidden.iter().map(|h| h * alpha).collect();
            let pooled = sentence_pool(&scaled).unwrap();
            for j in 0..5 {
                assert_abs_diff_eq!(pooled[j], alpha * base[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn embed_class_normalizes_known_vector() {
        let params = identity_padded(4, 4);
        let z = params
            .embed_pooled(&DVector::from_vec(vec![3.0, 4.0, 0.0, 0.0]))
            .unwrap();
        assert_abs_diff_eq!(z[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(z[1], 0.8, epsilon = 1e-15);
        assert_eq!(z[2], 0.0);
    }

    #[test]
    fn zero_projection_is_degenerate() {
        let params = ClassEmbedderParams::new(DMatrix::zeros(4, 8), DVector::zeros(4)).unwrap();
        let ed = ElaborativeDescription::new(0, "t", "anything").unwrap();
        assert_eq!(embed_class(&ed, &toy(8), &params), Err(TextError::DegenerateEmbedding));
    }

    #[test]
    fn duplicate_descriptions_embed_identically() {
        let enc = toy(12);
        let params = ClassEmbedderParams::init(6, 12, 3);
        let a = ElaborativeDescription::from_definition(1, "archery", "shooting arrows with a bow").unwrap();
        let b = ElaborativeDescription::from_definition(2, "archery", "shooting arrows with a bow").unwrap();
        assert_eq!(
            embed_class(&a, &enc, &params).unwrap(),
            embed_class(&b, &enc, &params).unwrap()
        );
    }

    #[test]
    fn single_concept_sequence_equals_class_embedding() {
        let enc = toy(12);
        let params = ClassEmbedderParams::init(6, 12, 3);
        let c = ElaborativeDescription::from_definition(0, "chipboard", "a cheap hard material made from wood chips")
            .unwrap();
        assert_eq!(
            embed_concept_sequence(&[&c], &enc, &params).unwrap(),
            embed_class(&c, &enc, &params).unwrap()
        );
        assert!(matches!(
            embed_concept_sequence(&[], &enc, &params),
            Err(TextError::MalformedInput(_))
        ));
    }

    #[test]
    fn concept_order_keeps_unit_norm() {
        let enc = toy(12);
        let params = ClassEmbedderParams::init(6, 12, 3);
        let c1 = ElaborativeDescription::from_definition(0, "ball", "a round object").unwrap();
        let c2 = ElaborativeDescription::from_definition(1, "bat", "a club used to hit").unwrap();
        for seq in [[&c1, &c2], [&c2, &c1]] {
            let z = embed_concept_sequence(&seq, &enc, &params).unwrap();
            assert_abs_diff_eq!(z.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn concept_sequence_golden() {
        let enc = ToyEncoder::new(8, 42);
        let params = ClassEmbedderParams::init(4, 8, 42);
        let c1 = ElaborativeDescription::from_definition(0, "ball", "a round object").unwrap();
        let c2 = ElaborativeDescription::from_definition(1, "bat", "a club used to hit").unwrap();
        let z = embed_concept_sequence(&[&c1, &c2], &enc, &params).unwrap();
        for (a, b) in z.iter().zip(GOLDEN_SEQ.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
    const GOLDEN_SEQ: [f64; 4] = [
        -0.48084408529647227,
        -0.7205806034088702,
        0.4579516754526558,
        0.1995816188340321,
    ];

    #[test]
    fn shared_params_drive_both_embeddings() {
        let enc = toy(12);
        let mut params = ClassEmbedderParams::init(6, 12, 3);
        let c = ElaborativeDescription::from_definition(0, "ball", "a round object").unwrap();
        let d = ElaborativeDescription::from_definition(1, "bat", "a club used to hit").unwrap();
        let class_before = embed_class(&c, &enc, &params).unwrap();
        let seq_before = embed_concept_sequence(&[&c, &d], &enc, &params).unwrap();
        params.projection_weight[(2, 5)] += 0.5;
        assert_ne!(embed_class(&c, &enc, &params).unwrap(), class_before);
        assert_ne!(embed_concept_sequence(&[&c, &d], &enc, &params).unwrap(), seq_before);
    }

    proptest! {
        #[test]
        fn embeddings_are_unit_norm_and_deterministic(words in proptest::collection::vec("[a-z]{1,8}", 1..20), seed in 0u64..1000) {
            let enc = ToyEncoder::new(16, seed);
            let params = ClassEmbedderParams::init(8, 16, seed);
            let ed = ElaborativeDescription::new(0, "p", &words.join(" ")).unwrap();
            let z1 = embed_class(&ed, &enc, &params).unwrap();
            let z2 = embed_class(&ed, &enc, &params).unwrap();
            prop_assert!((z1.norm() - 1.0).abs() <= 1e-6);
            prop_assert_eq!(z1, z2);
        }
    }
}
