use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DEFAULT_MAX_TOKENS;

/// Identity and shape of a token encoder.
///
/// `trainable_depth` counts the top encoder layers that an adapter fine-tunes;
/// encoders without trainable layers report 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEncoderHandle {
    pub encoder_id: String,
    pub hidden_dim: usize,
    pub trainable_depth: usize,
}

/// Maps a token sequence to one hidden vector per token.
pub trait TokenEncoder: Send + Sync {
    fn handle(&self) -> &TokenEncoderHandle;

    fn max_len(&self) -> usize {
        DEFAULT_MAX_TOKENS
    }

    /// Hidden states for `tokens`; callers guarantee `tokens.len() <= max_len()`.
    fn encode(&self, tokens: &[String]) -> Vec<DVector<f64>>;
}

/// Frozen hashed-vocabulary encoder.
///
/// Each token owns a fixed vector with entries uniform on `[-1, 1]`, drawn
/// from a generator seeded by SHA-256 of the encoder seed and the token text.
/// There is no context mixing, so identical tokens always map to identical
/// vectors.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    handle: TokenEncoderHandle,
    seed: u64,
    max_len: usize,
}

impl ToyEncoder {
    pub fn new(hidden_dim: usize, seed: u64) -> Self {
        assert!(hidden_dim > 0, "hidden_dim must be positive");
        Self {
            handle: TokenEncoderHandle {
                encoder_id: format!("toy-hash-{hidden_dim}-{seed}"),
                hidden_dim,
                trainable_depth: 0,
            },
            seed,
            max_len: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        assert!(max_len > 0, "max_len must be positive");
        self.max_len = max_len;
        self
    }

    pub fn token_vector(&self, token: &str) -> DVector<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        DVector::from_fn(self.handle.hidden_dim, |_, _| rng.gen_range(-1.0..=1.0))
    }
}

impl TokenEncoder for ToyEncoder {
    fn handle(&self) -> &TokenEncoderHandle {
        &self.handle
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn encode(&self, tokens: &[String]) -> Vec<DVector<f64>> {
        tokens.iter().map(|t| self.token_vector(t)).collect()
    }
}
