//! Mean-field LDA: the per-document E-step, the stochastic natural
//! gradient of the topic-word parameter and held-out perplexity.

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::corpus::{Corpus, Doc};
use super::digamma::{digamma, dirichlet_expectation};
use crate::engine::rng::{Domain, StreamKey};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub k: usize,
    pub v: usize,
    /// Topic-word variational parameter, `k x v` row-major, all > 0.
    pub lambda: Vec<f64>,
    /// Symmetric Dirichlet prior on topics.
    pub zeta: f64,
    /// Symmetric Dirichlet prior on document mixtures.
    pub alpha_doc: f64,
    pub n_docs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EStepOptions {
    /// Stop once the mean absolute change of gamma drops below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EStepOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocState {
    pub gamma: Vec<f64>,
    /// One K-simplex row per distinct word, aligned with `Doc::words`.
    pub phi: Vec<Vec<f64>>,
    pub iters: usize,
}

impl LdaModel {
    pub fn new(k: usize, v: usize, lambda: Vec<f64>, zeta: f64, alpha_doc: f64, n_docs: usize) -> Result<Self> {
        if k == 0 || v == 0 || n_docs == 0 {
            return Err(Error::config("LDA needs K, V and n >= 1"));
        }
        check_dim(k * v, lambda.len())?;
        if !(zeta > 0.0 && alpha_doc > 0.0) {
            return Err(Error::Domain("LDA priors must be > 0".into()));
        }
        if let Some(bad) = lambda.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Domain(format!("lambda entries must be > 0, got {bad}")));
        }
        Ok(Self {
            k,
            v,
            lambda,
            zeta,
            alpha_doc,
            n_docs,
        })
    }

    /// Lambda drawn from Gamma(100, 0.01), seeded.
    pub fn init(k: usize, v: usize, zeta: f64, alpha_doc: f64, n_docs: usize, seed: u64) -> Result<Self> {
        Self::new(k, v, init_lambda(k, v, seed), zeta, alpha_doc, n_docs)
    }

    /// Topic-word distributions (rows of lambda normalised).
    pub fn topics(&self) -> Vec<Vec<f64>> {
        self.lambda
            .chunks(self.v)
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.iter().map(|x| x / s).collect()
            })
            .collect()
    }
}

pub fn init_lambda(k: usize, v: usize, seed: u64) -> Vec<f64> {
    let mut rng = StreamKey::new(seed).stream(Domain::Init, 0, 0, 0);
    let g = Gamma::new(100.0, 0.01).expect("valid gamma");
    (0..k * v).map(|_| g.sample(&mut rng)).collect()
}

/// `E[log beta_kw] = psi(lambda_kw) - psi(sum_w lambda_kw)` restricted to
/// the words that are asked for.
pub(crate) struct TopicTerms<'a> {
    lambda: &'a [f64],
    k: usize,
    v: usize,
    row_psi: Vec<f64>,
}

impl<'a> TopicTerms<'a> {
    pub(crate) fn new(lambda: &'a [f64], k: usize, v: usize) -> Self {
        let row_psi = lambda
            .chunks(v)
            .map(|row| digamma(row.iter().map(|&x| x.max(f64::MIN_POSITIVE)).sum()))
            .collect();
        Self { lambda, k, v, row_psi }
    }

    fn elog(&self, word: u32) -> Vec<f64> {
        (0..self.k)
            .map(|k| digamma(self.lambda[k * self.v + word as usize].max(f64::MIN_POSITIVE)) - self.row_psi[k])
            .collect()
    }
}

fn check_doc(doc: &Doc, v: usize) -> Result<()> {
    match doc.words.iter().find(|&&(w, _)| w as usize >= v) {
        Some(&(w, _)) => Err(Error::IndexOutOfRange { index: w as usize, n: v }),
        None => Ok(()),
    }
}

fn normalize_log(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}

pub(crate) fn estep_with(
    terms: &TopicTerms<'_>,
    alpha: f64,
    doc: &Doc,
    opts: EStepOptions,
) -> DocState {
    let k = terms.k;
    let elogb: Vec<Vec<f64>> = doc.words.iter().map(|&(w, _)| terms.elog(w)).collect();
    let mut gamma = vec![alpha + doc.len() as f64 / k as f64; k];
    let mut phi = vec![vec![1.0 / k as f64; k]; doc.words.len()];
    let mut iters = 0;
    while iters < opts.max_iters {
        let psi_sum = digamma(gamma.iter().sum());
        let elogtheta: Vec<f64> = gamma.iter().map(|&g| digamma(g) - psi_sum).collect();
        let mut next = vec![alpha; k];
        for ((row, eb), &(_, c)) in phi.iter_mut().zip(&elogb).zip(&doc.words) {
            for ((p, et), b) in row.iter_mut().zip(&elogtheta).zip(eb) {
                *p = et + b;
            }
            normalize_log(row);
            for (g, p) in next.iter_mut().zip(row.iter()) {
                *g += c as f64 * p;
            }
        }
        let change = gamma.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64;
        gamma = next;
        iters += 1;
        if change < opts.tol {
            break;
        }
    }
    DocState { gamma, phi, iters }
}

/// Coordinate ascent on `(gamma, phi)` for one document with lambda held
/// fixed.
pub fn local_estep(model: &LdaModel, doc: &Doc, tol: f64, max_iters: usize) -> Result<DocState> {
    check_doc(doc, model.v)?;
    let terms = TopicTerms::new(&model.lambda, model.k, model.v);
    Ok(estep_with(&terms, model.alpha_doc, doc, EStepOptions { tol, max_iters }))
}

/// The document's evidence lower bound with lambda held fixed (the terms
/// of the bound that involve `gamma` and `phi`).
pub fn doc_elbo(model: &LdaModel, doc: &Doc, state: &DocState) -> Result<f64> {
    check_doc(doc, model.v)?;
    let terms = TopicTerms::new(&model.lambda, model.k, model.v);
    let elogtheta = dirichlet_expectation(&state.gamma)?;
    let k = model.k as f64;
    let a = model.alpha_doc;
    let mut bound = ln_gamma(k * a) - k * ln_gamma(a);
    for (g, et) in state.gamma.iter().zip(&elogtheta) {
        bound += (a - g) * et + ln_gamma(*g);
    }
    bound -= ln_gamma(state.gamma.iter().sum());
    for (row, &(w, c)) in state.phi.iter().zip(&doc.words) {
        let eb = terms.elog(w);
        for ((p, et), b) in row.iter().zip(&elogtheta).zip(&eb) {
            if *p > 0.0 {
                bound += c as f64 * p * (et + b - p.ln());
            }
        }
    }
    Ok(bound)
}

/// `zeta + (n / G) * sum_j E[topic-word counts of doc j]`.
pub fn lambda_hat(model: &LdaModel, batch: &[&Doc], states: &[DocState]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty("document batch"));
    }
    check_dim(batch.len(), states.len())?;
    let scale = model.n_docs as f64 / batch.len() as f64;
    let mut stats = vec![0.0; model.k * model.v];
    for (doc, st) in batch.iter().zip(states) {
        check_dim(doc.words.len(), st.phi.len())?;
        for (row, &(w, c)) in st.phi.iter().zip(&doc.words) {
            check_dim(model.k, row.len())?;
            for (k, p) in row.iter().enumerate() {
                stats[k * model.v + w as usize] += c as f64 * p;
            }
        }
    }
    Ok(stats.into_iter().map(|s| model.zeta + scale * s).collect())
}

/// Returns `-(lambda_hat - lambda)`, the negative natural gradient: a
/// descent step `lambda - rho * g` moves lambda toward `lambda_hat`.
pub fn natural_gradient(model: &LdaModel, batch: &[&Doc], states: &[DocState]) -> Result<Vec<f64>> {
    let hat = lambda_hat(model, batch, states)?;
    Ok(model.lambda.iter().zip(&hat).map(|(l, h)| l - h).collect())
}

/// `exp(-sum_d log p(doc_d) / sum_d N_d)` with the plug-in estimate
/// `log p(doc) = sum_w c_w log sum_k theta_k beta_kw`, where theta is the
/// normalised gamma of a fresh E-step on the whole document and beta the
/// normalised rows of lambda.
pub fn perplexity(model: &LdaModel, held_out: &Corpus, opts: EStepOptions) -> Result<f64> {
    let words = held_out.total_words();
    if words == 0 {
        return Err(Error::Empty("held-out corpus"));
    }
    let terms = TopicTerms::new(&model.lambda, model.k, model.v);
    let row_sums: Vec<f64> = model.lambda.chunks(model.v).map(|r| r.iter().sum()).collect();
    let mut loglik = 0.0;
    for doc in &held_out.docs {
        check_doc(doc, model.v)?;
        if doc.is_empty() {
            continue;
        }
        let st = estep_with(&terms, model.alpha_doc, doc, opts);
        let gsum: f64 = st.gamma.iter().sum();
        for &(w, c) in &doc.words {
            let p: f64 = (0..model.k)
                .map(|k| st.gamma[k] / gsum * model.lambda[k * model.v + w as usize] / row_sums[k])
                .sum();
            loglik += c as f64 * p.ln();
        }
    }
    Ok((-loglik / words as f64).exp())
}

/// Mean cosine similarity between learned and true topics after greedily
/// pairing the most similar rows first.
pub fn topic_recovery(learned: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut pairs: Vec<(f64, usize, usize)> = learned
        .iter()
        .enumerate()
        .flat_map(|(i, a)| truth.iter().enumerate().map(move |(j, b)| (cos(a, b), i, j)))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut used_l, mut used_t) = (vec![false; learned.len()], vec![false; truth.len()]);
    let mut total = 0.0;
    let mut matched = 0;
    for (c, i, j) in pairs {
        if !used_l[i] && !used_t[j] {
            used_l[i] = true;
            used_t[j] = true;
            total += c;
            matched += 1;
        }
    }
    if matched == 0 {
        0.0
    } else {
        total / matched as f64
    }
}
