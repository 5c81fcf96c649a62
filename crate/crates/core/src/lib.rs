//! Character-graph knowledge pipeline and knowledge-enhanced spatial
//! attention guidance for multi-character story visualization.
//!
//! The crate is organised bottom-up:
//!
//! - [`parser`]: deterministic lexicon + pattern scene-graph parser.
//! - [`graph`]: the character graph (characters, attributes, events, style)
//!   and its JSON persistence.
//! - [`composer`]: character matching and enhanced scene-caption assembly
//!   with per-token character ownership.
//! - [`guidance`]: Gaussian position priors, the knowledge encoder MLP,
//!   time-aware guidance scale, cross-attention editing and a toy
//!   cross-attention layer.
//! - [`metrics`]: Character-F1, Frame-Accuracy and the thresholded
//!   embedding classifier.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiations.

pub mod composer;
pub mod graph;
pub mod guidance;
pub mod metrics;
pub mod parser;
mod scalar;

pub use scalar::Scalar;

pub use composer::{
    compose_character_description, compose_event_description, compose_scene_caption,
    match_character, CaptionComposer, ComposeError, EmbeddingSimilarity, LexicalSimilarity,
    Participant, SceneCaption, SimilarityProvider,
};
pub use graph::{CharacterGraph, CharacterNode, EventEdge, GraphError, VocabularyEntry};
pub use guidance::{
    AttentionKind, AttentionTensor, CoordinateBox, EncoderOutput, EncoderWeights,
    GuidanceConfig, GuidanceError, GuidanceMode, Mask, PositionPrior,
};
pub use metrics::{ClassifierProvider, CosineClassifier, FrameResult, MetricsError};
pub use parser::{Entity, Lexicon, Relation, SceneGraph, SceneParser, Token, TokenKind};

pub type PositionPrior64 = PositionPrior<f64>;
pub type PositionPrior32 = PositionPrior<f32>;
pub type EncoderWeights64 = EncoderWeights<f64>;
pub type EncoderWeights32 = EncoderWeights<f32>;
pub type AttentionTensor64 = AttentionTensor<f64>;
pub type AttentionTensor32 = AttentionTensor<f32>;
pub type GuidanceConfig64 = GuidanceConfig<f64>;
pub type Mask64 = Mask<f64>;
pub type CosineClassifier64 = CosineClassifier<f64>;
