//! Shared fixtures for the benchmarks.

use dpsgd::problems::SigmoidLoss;
use dpsgd::svi_lda::{Corpus, SyntheticCorpus};

/// The non-convex problem used by the convergence experiments.
pub fn sigmoid(n: usize, dim: usize) -> SigmoidLoss {
    SigmoidLoss::synthetic(n, dim, 0.05, 0.0, 1).expect("valid sizes")
}

/// A small topic-model corpus.
pub fn corpus(docs: usize, vocab: usize, topics: usize) -> Corpus {
    SyntheticCorpus {
        docs,
        vocab,
        topics,
        doc_len: 80,
        topic_concentration: 0.05,
        doc_concentration: 0.2,
        seed: 1,
    }
    .generate()
    .expect("valid corpus spec")
    .0
}

/// `n` deterministic pseudo-random values in `[-1, 1)`.
pub fn values(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 7919 % 1000) as f64) / 500.0 - 1.0).collect()
}
