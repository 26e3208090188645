//! Bag-of-words corpora in the UCI `docword` / `vocab` layout.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::engine::rng::{Domain, StreamKey};
use crate::error::{Error, Result};

/// Sparse word counts of one document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Doc {
    /// `(word_id, count)` with 0-based ids and counts >= 1.
    pub words: Vec<(u32, u32)>,
}

impl Doc {
    pub fn len(&self) -> u64 {
        self.words.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub docs: Vec<Doc>,
    pub vocab: Vec<String>,
    /// Vocabulary size; equals `vocab.len()` when terms are known.
    pub v: usize,
}

impl Corpus {
    pub fn new(docs: Vec<Doc>, v: usize) -> Result<Self> {
        for d in &docs {
            for &(w, c) in &d.words {
                if w as usize >= v || c == 0 {
                    return Err(Error::Domain(format!("word {w} x {c} invalid for V = {v}")));
                }
            }
        }
        Ok(Self {
            docs,
            vocab: Vec::new(),
            v,
        })
    }

    pub fn total_words(&self) -> u64 {
        self.docs.iter().map(Doc::len).sum()
    }

    /// Moves `heldout` documents, chosen by a seeded shuffle, into a
    /// second corpus.
    pub fn split(mut self, heldout: usize, seed: u64) -> Result<(Corpus, Corpus)> {
        if heldout == 0 || heldout >= self.docs.len() {
            return Err(Error::config(format!(
                "held-out size {heldout} must be in [1, {})",
                self.docs.len()
            )));
        }
        let mut rng = StreamKey::new(seed).stream(Domain::Init, 0, 1, 0);
        self.docs.shuffle(&mut rng);
        let test = self.docs.split_off(self.docs.len() - heldout);
        let held = Corpus {
            docs: test,
            vocab: self.vocab.clone(),
            v: self.v,
        };
        Ok((self, held))
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn header_value(lines: &mut std::iter::Enumerate<std::str::Lines<'_>>, what: &str) -> Result<usize> {
    let (i, text) = lines
        .next()
        .ok_or_else(|| parse_err(0, format!("missing header line for {what}")))?;
    text.trim()
        .parse()
        .map_err(|_| parse_err(i + 1, format!("expected {what}, got {text:?}")))
}

/// Parses a UCI `docword` file (`D`, `W`, `NNZ` header lines followed by
/// `docID wordID count` triples with 1-based ids) and an optional
/// one-term-per-line vocabulary.
pub fn load_uci_bow(docword_path: &Path, vocab_path: Option<&Path>) -> Result<Corpus> {
    let text = std::fs::read_to_string(docword_path)?;
    let mut corpus = parse_uci_bow(&text)?;
    if let Some(p) = vocab_path {
        let vocab: Vec<String> = std::fs::read_to_string(p)?
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        if vocab.len() != corpus.v {
            return Err(parse_err(
                vocab.len(),
                format!("vocabulary has {} terms, header says {}", vocab.len(), corpus.v),
            ));
        }
        corpus.vocab = vocab;
    }
    Ok(corpus)
}

pub fn parse_uci_bow(text: &str) -> Result<Corpus> {
    let mut lines = text.lines().enumerate();
    let n_docs = header_value(&mut lines, "document count")?;
    let v = header_value(&mut lines, "vocabulary size")?;
    let nnz = header_value(&mut lines, "NNZ")?;
    let mut docs = vec![Doc::default(); n_docs];
    let mut seen = 0usize;
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(line_no, format!("expected 3 fields, got {}", fields.len())));
        }
        let mut nums = [0u64; 3];
        for (slot, f) in nums.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|_| parse_err(line_no, format!("not a non-negative integer: {f:?}")))?;
        }
        let [d, w, c] = nums;
        if d == 0 || d as usize > n_docs {
            return Err(parse_err(line_no, format!("document id {d} outside 1..={n_docs}")));
        }
        if w == 0 || w as usize > v {
            return Err(parse_err(line_no, format!("word id {w} outside 1..={v}")));
        }
        if c == 0 || c > u32::MAX as u64 {
            return Err(parse_err(line_no, format!("count {c} out of range")));
        }
        docs[d as usize - 1].words.push((w as u32 - 1, c as u32));
        seen += 1;
    }
    if seen != nnz {
        return Err(parse_err(3, format!("header NNZ {nnz} but {seen} entries")));
    }
    Ok(Corpus {
        docs,
        vocab: Vec::new(),
        v,
    })
}

pub fn format_uci_bow(corpus: &Corpus) -> String {
    let nnz: usize = corpus.docs.iter().map(|d| d.words.len()).sum();
    let mut out = format!("{}\n{}\n{}\n", corpus.docs.len(), corpus.v, nnz);
    for (d, doc) in corpus.docs.iter().enumerate() {
        for &(w, c) in &doc.words {
            let _ = writeln!(out, "{} {} {}", d + 1, w + 1, c);
        }
    }
    out
}

pub fn write_uci_bow(corpus: &Corpus, docword_path: &Path, vocab_path: Option<&Path>) -> Result<()> {
    std::fs::write(docword_path, format_uci_bow(corpus))?;
    if let Some(p) = vocab_path {
        let mut text = corpus.vocab.join("\n");
        text.push('\n');
        std::fs::write(p, text)?;
    }
    Ok(())
}

/// Parameters of a corpus drawn from the LDA generative process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub docs: usize,
    pub vocab: usize,
    pub topics: usize,
    /// Mean words per document; lengths are uniform in `[len/2, 3len/2]`.
    pub doc_len: usize,
    /// Dirichlet concentration of the topic-word distributions.
    #[serde(default = "default_topic_conc")]
    pub topic_concentration: f64,
    /// Dirichlet concentration of the document-topic mixtures.
    #[serde(default = "default_doc_conc")]
    pub doc_concentration: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_topic_conc() -> f64 {
    0.05
}

fn default_doc_conc() -> f64 {
    0.2
}

fn sample_dirichlet(conc: f64, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let g = Gamma::new(conc, 1.0).expect("positive concentration");
    loop {
        let mut v: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            v.iter_mut().for_each(|x| *x /= s);
            return v;
        }
    }
}

fn sample_categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

impl SyntheticCorpus {
    /// Draws the corpus and returns it with the true topic-word matrix
    /// (`topics x vocab`, rows summing to one).
    pub fn generate(&self) -> Result<(Corpus, Vec<Vec<f64>>)> {
        if self.docs == 0 || self.vocab == 0 || self.topics == 0 || self.doc_len == 0 {
            return Err(Error::config("synthetic corpus needs docs, vocab, topics, doc_len >= 1"));
        }
        if !(self.topic_concentration > 0.0 && self.doc_concentration > 0.0) {
            return Err(Error::config("concentrations must be > 0"));
        }
        let key = StreamKey::new(self.seed);
        let mut rng = key.stream(Domain::Init, 0, 2, 0);
        let topics: Vec<Vec<f64>> = (0..self.topics)
            .map(|_| sample_dirichlet(self.topic_concentration, self.vocab, &mut rng))
            .collect();
        let mut docs = Vec::with_capacity(self.docs);
        let (lo, hi) = ((self.doc_len / 2).max(1), self.doc_len * 3 / 2);
        for _ in 0..self.docs {
            let theta = sample_dirichlet(self.doc_concentration, self.topics, &mut rng);
            let len = rng.random_range(lo..=hi.max(lo));
            let mut counts = vec![0u32; self.vocab];
            for _ in 0..len {
                let z = sample_categorical(&theta, &mut rng);
                counts[sample_categorical(&topics[z], &mut rng)] += 1;
            }
            let words = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(w, &c)| (w as u32, c))
                .collect();
            docs.push(Doc { words });
        }
        let mut corpus = Corpus::new(docs, self.vocab)?;
        corpus.vocab = (0..self.vocab).map(|w| format!("w{w}")).collect();
        Ok((corpus, topics))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry_file() {
        let c = parse_uci_bow("1\n1\n1\n1 1 2\n").unwrap();
        assert_eq!(c.docs.len(), 1);
        assert_eq!(c.docs[0].len(), 2);
        assert_eq!(c.docs[0].words, vec![(0, 2)]);
    }

    #[test]
    fn round_trip_through_files() {
        let text = "3\n4\n4\n1 1 2\n1 4 1\n2 2 5\n3 3 1\n";
        let dir = tempfile::tempdir().unwrap();
        let (dw, vp) = (dir.path().join("docword.txt"), dir.path().join("vocab.txt"));
        std::fs::write(&dw, text).unwrap();
        std::fs::write(&vp, "a\nb\nc\nd\n").unwrap();
        let c = load_uci_bow(&dw, Some(&vp)).unwrap();
        assert_eq!(c.vocab, vec!["a", "b", "c", "d"]);
        let (dw2, vp2) = (dir.path().join("out.txt"), dir.path().join("vocab2.txt"));
        write_uci_bow(&c, &dw2, Some(&vp2)).unwrap();
        assert_eq!(std::fs::read_to_string(&dw2).unwrap(), text);
        assert_eq!(load_uci_bow(&dw2, Some(&vp2)).unwrap(), c);
    }

    #[test]
    fn nnz_mismatch_is_an_error() {
        assert!(matches!(parse_uci_bow("1\n2\n2\n1 1 1\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let Err(Error::Parse { line, .. }) = parse_uci_bow("1\n2\n2\n1 1 1\n1 x 1\n") else { panic!() };
        assert_eq!(line, 5);
        let Err(Error::Parse { line, .. }) = parse_uci_bow("1\n2\n1\n1 3 1\n") else { panic!() };
        assert_eq!(line, 4);
        let Err(Error::Parse { line, .. }) = parse_uci_bow("1\n2\n1\n2 1 1\n") else { panic!() };
        assert_eq!(line, 4);
        assert!(parse_uci_bow("1\n2\n").is_err());
    }

    #[test]
    fn synthetic_corpus_is_seeded() {
        let spec = SyntheticCorpus {
            docs: 20,
            vocab: 30,
            topics: 3,
            doc_len: 40,
            topic_concentration: 0.1,
            doc_concentration: 0.5,
            seed: 9,
        };
        let (a, ta) = spec.generate().unwrap();
        let (b, tb) = spec.generate().unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(a.docs.iter().all(|d| (20..=60).contains(&d.len())));
        for t in &ta {
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_partitions_documents() {
        let spec = SyntheticCorpus {
            docs: 10,
            vocab: 5,
            topics: 2,
            doc_len: 8,
            topic_concentration: 0.5,
            doc_concentration: 0.5,
            seed: 1,
        };
        let (c, _) = spec.generate().unwrap();
        let total = c.total_words();
        let (train, test) = c.split(3, 4).unwrap();
        assert_eq!((train.docs.len(), test.docs.len()), (7, 3));
        assert_eq!(train.total_words() + test.total_words(), total);
    }
}
