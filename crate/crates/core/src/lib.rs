//! Optimal-transport pseudo-labeling for molecule-protein link prediction.
//!
//! The crate covers the full workflow: normalized entity embeddings and
//! cosine similarity ([`embeddings`]), an entropic OT solver ([`ot`]), a
//! trainable pairwise score model with an inverse-OT objective ([`score`]),
//! similarity-constrained pseudo-label generation ([`pseudo`]), a triple
//! store with pseudo-edge injection ([`kg`]), five knowledge-graph embedding
//! families under a multi-objective loss ([`kge`]), ranking and screening
//! metrics ([`metrics`]), seeded synthetic data ([`synth`]), and pipeline
//! orchestration ([`pipeline`]).
//!
//! All numeric modules are generic over [`scalar::Real`] (`f32` or `f64`);
//! the `*64` aliases below pin the `f64` instantiations used by the CLI.

pub mod embeddings;
pub mod error;
pub mod kg;
pub mod kge;
pub mod linalg;
pub mod metrics;
pub mod opt;
pub mod ot;
pub mod pipeline;
pub mod pseudo;
pub mod rng;
pub mod scalar;
pub mod score;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mat64 = linalg::Mat<f64>;
pub type EmbeddingMatrix64 = embeddings::EmbeddingMatrix<f64>;
pub type SimilarityMatrix64 = embeddings::SimilarityMatrix<f64>;
pub type MarginalPair64 = ot::MarginalPair<f64>;
pub type CostMatrix64 = ot::CostMatrix<f64>;
pub type TransportPlan64 = ot::TransportPlan<f64>;
pub type OtConfig64 = ot::OtConfig<f64>;
pub type ScoreModelParams64 = score::ScoreModelParams<f64>;
pub type ScoreMatrix64 = score::ScoreMatrix<f64>;
pub type ScoreTrainConfig64 = score::ScoreTrainConfig<f64>;
pub type PseudoConfig64 = pseudo::PseudoConfig<f64>;
pub type PseudoLabelSet64 = pseudo::PseudoLabelSet<f64>;
pub type KnowledgeGraph64 = kg::KnowledgeGraph<f64>;
pub type Split64 = kg::Split<f64>;
pub type KgModelParams64 = kge::KgModelParams<f64>;
pub type KgTrainConfig64 = kge::KgTrainConfig<f64>;
