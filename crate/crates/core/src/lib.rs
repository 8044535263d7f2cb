//! False-negative-aware in-batch negative sampling.
//!
//! The crate covers the full pipeline of the sampler study:
//!
//! * [`store`]: frozen query/product embeddings and cosine similarity.
//! * [`corpus`]: annotated relevance data, soft labels, random-pair augmentation.
//! * [`batch`] and [`fne`]: in-batch context and false-negative estimation.
//! * [`sampler`]: vanilla, hard and bias-mitigating hard negative sampling.
//! * [`scorer`]: a small cross-feature relevance model and its trainer.
//! * [`metrics`]: Pearson, Spearman, AUROC, NDCG@M and MRR.
//! * [`synthbench`]: synthetic corpora with planted false negatives.

pub mod batch;
pub mod corpus;
pub mod error;
pub mod fne;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod scorer;
pub mod store;
pub mod synthbench;

pub use batch::BatchContext;
pub use corpus::{augment_random_pairs, AnnotatedPair, Category, Corpus, LabelMode, Provenance};
pub use error::{Error, Result};
pub use fne::FneEstimate;
pub use sampler::{build_batches, SampledNegative, SamplerConfig, SamplerKind, TrainBatch};
pub use scorer::{Checkpoint, ScorerParams, TrainHyper, TrainReport};
pub use store::EmbeddingStore;
pub use synthbench::{BenchConfig, BenchReport, SynthSpec};
