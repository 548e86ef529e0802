//! Tail-ranking metrics and the classification probes.

mod classifier;
mod ranking;

pub use classifier::{
    train_classifier_head, ClassificationTask, ClassifierConfig, ClassifierHead, ClassifierOutcome,
    EmbeddingSource, HEAD_B1, HEAD_B2, HEAD_W1, HEAD_W2,
};
pub use ranking::{
    candidates, kg_completion_eval, metrics, rank_diff, rank_diff_table, rank_of_gold, thread_cap,
    EvalConfig, FrozenScorer, Metrics, ProtocolKind, QueryRank, RankDiffRow, RankingReport,
};
