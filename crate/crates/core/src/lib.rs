//! Zero-shot action recognition in a joint text/video embedding space.
//!
//! Action classes and object concepts are represented by Elaborative
//! Descriptions (a name followed by a sentence definition) and embedded with
//! a shared text function. Videos are embedded from precomputed
//! spatio-temporal features plus the descriptions of their top detected
//! objects, fused with a multimodal channel gate. Training combines a
//! contrastive action-recognition loss with an auxiliary rehearsal loss over
//! detected concepts.

pub mod baselines;
pub mod data;
pub mod ed;
pub mod evaluation;
pub mod linalg;
pub mod synth;
pub mod text;
pub mod training;
pub mod video;

pub use text::{ClassEmbedderParams, ElaborativeDescription, TokenEncoder, ToyEncoder};
pub use training::{JointModel, TrainConfig};
pub use video::{ConceptVocabulary, FeatureRecord, VideoEmbedderParams};

/// Dense identifier of an action class.
pub type ClassId = u32;
/// Dense identifier of an object concept in the detector vocabulary.
pub type ConceptId = u32;
