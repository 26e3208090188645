//! Distributed stochastic variational inference for LDA.
//!
//! The engine treats the flattened topic-word parameter lambda as its
//! iterate. A local "gradient" on a batch of `G` documents is
//! `lambda - lambda_hat`, so a local step `u - eta * g` is the SVI update
//! `(1 - eta) lambda + eta lambda_hat`.

mod corpus;
mod digamma;
mod model;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use corpus::{format_uci_bow, load_uci_bow, parse_uci_bow, write_uci_bow, Corpus, Doc, SyntheticCorpus};
pub use digamma::{digamma, dirichlet_expectation};
pub use model::{
    doc_elbo, init_lambda, lambda_hat, local_estep, natural_gradient, perplexity, topic_recovery, DocState,
    EStepOptions, LdaModel,
};

use crate::engine::config::RunConfig;
use crate::engine::master::Observation;
use crate::engine::transport::TransportKind;
use crate::engine::worker::run_worker;
use crate::engine::{launch, RunOutcome};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::params::ParamVector;
use crate::problems::GradOracle;
use model::{estep_with, TopicTerms};

/// The LDA objective as a gradient source for the engine. Sample `i` is
/// training document `i`.
pub struct LdaOracle<'a> {
    pub docs: &'a [Doc],
    pub k: usize,
    pub v: usize,
    pub zeta: f64,
    pub alpha_doc: f64,
    pub estep: EStepOptions,
}

impl LdaOracle<'_> {
    fn model_at(&self, x: &[f64]) -> LdaModel {
        LdaModel {
            k: self.k,
            v: self.v,
            lambda: x.to_vec(),
            zeta: self.zeta,
            alpha_doc: self.alpha_doc,
            n_docs: self.docs.len(),
        }
    }
}

impl GradOracle for LdaOracle<'_> {
    fn n(&self) -> usize {
        self.docs.len()
    }

    fn dim(&self) -> usize {
        self.k * self.v
    }

    /// Negative document bound at the document's optimal local parameters.
    fn loss_i(&self, i: usize, x: &[f64]) -> f64 {
        let m = self.model_at(x);
        let st = local_estep(&m, &self.docs[i], self.estep.tol, self.estep.max_iters)
            .expect("document words within vocabulary");
        -doc_elbo(&m, &self.docs[i], &st).expect("valid state")
    }

    fn add_grad_i(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let mut g = vec![0.0; out.len()];
        self.batch_grad(&[i], x, &mut g);
        out.iter_mut().zip(g).for_each(|(o, g)| *o += g);
    }

    fn batch_grad(&self, idx: &[usize], x: &[f64], out: &mut [f64]) {
        let terms = TopicTerms::new(x, self.k, self.v);
        let scale = self.docs.len() as f64 / idx.len() as f64;
        let mut stats = vec![0.0; x.len()];
        for &i in idx {
            let doc = &self.docs[i];
            let st = estep_with(&terms, self.alpha_doc, doc, self.estep);
            for (row, &(w, c)) in st.phi.iter().zip(&doc.words) {
                for (k, p) in row.iter().enumerate() {
                    stats[k * self.v + w as usize] += c as f64 * p;
                }
            }
        }
        for ((o, l), s) in out.iter_mut().zip(x).zip(stats) {
            *o = l - (self.zeta + scale * s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    #[serde(default = "default_topics", rename = "K")]
    pub topics: usize,
    /// Documents per local step (`G`).
    #[serde(default = "default_batch", rename = "G")]
    pub batch: usize,
    /// Document-topic prior; `1 / K` when absent.
    #[serde(default)]
    pub alpha_doc: Option<f64>,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default)]
    pub estep: EStepOptions,
}

fn default_topics() -> usize {
    50
}

fn default_batch() -> usize {
    64
}

fn default_zeta() -> f64 {
    0.01
}

impl Default for LdaParams {
    fn default() -> Self {
        Self {
            topics: default_topics(),
            batch: default_batch(),
            alpha_doc: None,
            zeta: default_zeta(),
            estep: EStepOptions::default(),
        }
    }
}

impl LdaParams {
    pub fn alpha(&self) -> f64 {
        self.alpha_doc.unwrap_or(1.0 / self.topics as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    Synthetic(SyntheticCorpus),
    Uci {
        docword: PathBuf,
        #[serde(default)]
        vocab: Option<PathBuf>,
    },
}

/// An SVI run: engine settings plus the model and data. The engine's
/// `batch` is replaced by `lda.G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SviConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    #[serde(default)]
    pub lda: LdaParams,
    pub corpus: CorpusSource,
    #[serde(default = "default_heldout")]
    pub heldout_docs: usize,
}

fn default_heldout() -> usize {
    50
}

/// One row of an SVI metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SviRow {
    pub wall_clock_s: f64,
    pub effective_docs_seen: u64,
    pub heldout_perplexity: f64,
}

#[derive(Debug)]
pub struct SviOutcome {
    pub model: LdaModel,
    pub rows: Vec<SviRow>,
    pub metrics: Metrics,
    pub run: RunOutcome,
}

/// Rejects rate settings under which lambda can leave the positive orthant.
fn check_rates(run: &RunConfig) -> Result<()> {
    let eta = run.effective_eta()?;
    if eta > 1.0 {
        return Err(Error::config(format!("SVI needs eta <= 1, got {eta}")));
    }
    let rho = run.rho_at(0)?;
    if rho * run.master_batch as f64 > 1.0 {
        return Err(Error::config(format!(
            "SVI needs rho * M <= 1 so the global step stays a convex combination, got {}",
            rho * run.master_batch as f64
        )));
    }
    Ok(())
}

/// Runs SVI on prepared training and held-out corpora.
pub fn run_svi_on(
    run: &RunConfig,
    lda: &LdaParams,
    train: &Corpus,
    heldout: &Corpus,
    transport: TransportKind,
) -> Result<SviOutcome> {
    let mut run = run.clone();
    run.batch = lda.batch;
    run.validate()?;
    check_rates(&run)?;
    if train.docs.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let oracle = LdaOracle {
        docs: &train.docs,
        k: lda.topics,
        v: train.v,
        zeta: lda.zeta,
        alpha_doc: lda.alpha(),
        estep: lda.estep,
    };
    let template = LdaModel::init(lda.topics, train.v, lda.zeta, lda.alpha(), train.docs.len(), run.seed)?;
    let v0 = match &run.init {
        Some(init) => ParamVector::new(init.clone())?,
        None => ParamVector::new(template.lambda.clone())?,
    };
    let mut observer = |_t: u64, v: &ParamVector| -> Result<Observation> {
        if let Some(d) = v.as_slice().iter().position(|&x| !(x > 0.0)) {
            return Err(Error::Domain(format!("lambda left the positive orthant in dimension {d}")));
        }
        let m = LdaModel {
            lambda: v.as_slice().to_vec(),
            ..template.clone()
        };
        Ok(Observation {
            grad_norm_sq: f64::NAN,
            loss: perplexity(&m, heldout, lda.estep)?,
        })
    };
    let out = launch(&run, v0, &mut observer, transport, |id, link| {
        run_worker(&run, &oracle, id, link)
    })?;
    let rows = out
        .metrics
        .rows
        .iter()
        .map(|r| SviRow {
            wall_clock_s: r.wall_clock_s,
            effective_docs_seen: r.effective_gradients,
            heldout_perplexity: r.loss,
        })
        .collect();
    let model = LdaModel {
        lambda: out.v.as_slice().to_vec(),
        ..template
    };
    Ok(SviOutcome {
        model,
        rows,
        metrics: out.metrics.clone(),
        run: out,
    })
}

/// Loads or generates the corpus named by the config, splits off the
/// held-out set and runs SVI. Returns the outcome together with the true
/// topics when the corpus was synthetic.
pub fn run_svi(cfg: &SviConfig, transport: TransportKind) -> Result<(SviOutcome, Option<Vec<Vec<f64>>>)> {
    let (corpus, truth) = match &cfg.corpus {
        CorpusSource::Synthetic(spec) => {
            let (c, t) = spec.generate()?;
            (c, Some(t))
        }
        CorpusSource::Uci { docword, vocab } => (load_uci_bow(docword, vocab.as_deref())?, None),
    };
    let (train, heldout) = corpus.split(cfg.heldout_docs, cfg.run.seed)?;
    let out = run_svi_on(&cfg.run, &cfg.lda, &train, &heldout, transport)?;
    Ok((out, truth))
}
