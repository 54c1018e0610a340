//! FineEHR-style clinical-note representation refinement.
//!
//! The pipeline goes raw note text → word embeddings → note-level embeddings
//! → (optional) per-category Siamese refinement → (optional) learned
//! category-weight pooling → admission-level embeddings → mortality
//! classifiers → AUC / AUC-PR reports. Every stage is deterministic under a
//! seed; an ablation harness runs the 2×2 grid of refinement stages.

pub mod classify;
pub mod corpus;
pub mod embed;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod siamese;
pub mod textprep;
pub mod weighting;

pub use corpus::{AdmissionRecord, NoteRecord, SplitAssignment, SyntheticConfig};
pub use embed::{EmbeddingMatrix, NoteEmbedding, Word2VecParams};
pub use pipeline::{AblationReport, PipelineConfig, Setting};
pub use siamese::{RefinerBundle, SiameseNetwork, SiameseTrainParams};
pub use textprep::{TokenizedNote, Vocabulary};
pub use weighting::{CategoryEmbeddingSet, CategoryWeights};
