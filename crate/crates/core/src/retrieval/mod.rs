//! Index, ranking, re-ranking, query expansion and evaluation.

mod index;
mod metrics;
mod pipeline;
mod rank;
pub mod synth;

pub use index::{AuxVectors, Index, IndexEntry, Quant};
pub use metrics::{
    average_precision, evaluate_map, evaluate_p_at, precision_at, GroundTruth, Relevance,
    RunResults, P_AT,
};
pub use pipeline::{run_pipeline, PipelineConfig, RankMethod};
pub use rank::{
    average_qe, discriminative_axis, rank_discriminative_first, rank_full, rank_projections,
    rerank, GridFamily, RankedResult, RerankMethod, ScaleGrids, Stage,
};
