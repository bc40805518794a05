//! Gradient-based attribution for discrete word-embedding spaces.
//!
//! The crate owns the whole pipeline at desk scale: a tokenizer and
//! embedding table, exact nearest-neighbor lists over the vocabulary, a
//! small differentiable text classifier behind a gradient-oracle contract,
//! straight-line and discretized interpolation paths, Riemann-sum
//! attribution with completeness and word-approximation diagnostics, and the
//! masking/deletion faithfulness metrics used to compare methods.

pub mod attribution;
pub mod dataset;
pub mod eval;
pub mod knn;
pub mod model;
pub mod paths;
pub mod seed;
pub mod testing;
pub mod vocab;

pub use attribution::{
    attribute_sentence, delta_percent, riemann_attribution, wae, AttributionError,
    AttributionOptions, AttributionReport, Method, ReportRecord,
};
pub use eval::{
    comprehensiveness, evaluate_dataset, log_odds, select_topk, sufficiency, write_metrics_csv,
    EvalError, EvalOptions, EvalOutput, MetricRow, MetricSelection, TopKSelection,
};
pub use knn::{build_knn_index, DistanceMetric, KnnError, NeighborIndex};
pub use model::{
    load_checkpoint, save_checkpoint, train, train_with_vocab, ClassId, Classifier, GradientOracle,
    GradientRequest, GradientResponse, ModelError, OutputHead, TrainConfig, TrainOutcome,
    TrainReport,
};
pub use paths::{
    build_path, monotonic_dims, monotonize, upsample, validate_path, InterpolationPath, PathConfig,
    PathError, PathStrategy,
};
pub use vocab::{
    build_vocab, load_embeddings, overlay_embeddings, EmbeddingTable, Token, TokenId, Vocab,
    VocabError, PAD_ID,
    PAD_TOKEN, UNK_ID, UNK_TOKEN,
};
