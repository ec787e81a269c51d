//! Corpus ingestion: tokenization, vocabulary construction, negative
//! sampling, labeled TSV loading, and synthetic shifted-domain corpora.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Exponent applied to counts for the negative-sampling distribution.
pub const SAMPLING_POWER: f64 = 0.75;

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// Tokenizer switches. Lemmatization defaults to off; when on, a
/// deterministic English suffix stripper is applied (see [`lemmatize`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizeOptions {
    pub lowercase: bool,
    pub lemmatize: bool,
}

impl Default for TokenizeOptions {
    fn default() -> Self {
        TokenizeOptions {
            lowercase: true,
            lemmatize: false,
        }
    }
}

impl fmt::Display for TokenizeOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lowercase={} lemmatize={}",
            self.lowercase, self.lemmatize
        )
    }
}

/// Splits on Unicode whitespace, strips leading/trailing non-alphanumerics,
/// drops empty tokens. Empty input yields an empty sequence.
pub fn tokenize(raw_text: &str, opts: TokenizeOptions) -> Vec<String> {
    raw_text
        .split_whitespace()
        .filter_map(|piece| {
            let trimmed = piece.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                return None;
            }
            let mut tok = if opts.lowercase {
                trimmed.to_lowercase()
            } else {
                trimmed.to_string()
            };
            if opts.lemmatize {
                tok = lemmatize(&tok);
            }
            Some(tok)
        })
        .collect()
}

/// Deterministic suffix stripper: removes the first of `ing`, `ed`, `es`,
/// `s` that matches and leaves a stem of at least 3 characters. Applied
/// once, never recursively.
pub fn lemmatize(token: &str) -> String {
    const SUFFIXES: [&str; 4] = ["ing", "ed", "es", "s"];
    for suf in SUFFIXES {
        if let Some(stem) = token.strip_suffix(suf) {
            if stem.chars().count() >= 3 {
                return stem.to_string();
            }
        }
    }
    token.to_string()
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Token/id bijection with counts and a `count^0.75` sampling table.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    counts: Vec<u64>,
    total_tokens: u64,
    /// Cumulative `count^0.75` weights for binary-search sampling.
    cumulative_weights: Vec<f64>,
}

impl Vocabulary {
    /// Builds a vocabulary from token streams. Tokens with fewer than
    /// `min_count` occurrences are dropped; ids are assigned in descending
    /// count order, ties broken lexicographically.
    pub fn build<'a, I, S>(token_streams: I, min_count: u64) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for stream in token_streams {
            for tok in stream {
                *counts.entry(tok.to_string()).or_insert(0) += 1;
            }
        }
        Self::from_counts(counts.into_iter(), min_count)
    }

    pub fn from_counts(
        counts: impl Iterator<Item = (String, u64)>,
        min_count: u64,
    ) -> Result<Vocabulary> {
        let mut kept: Vec<(String, u64)> = counts.filter(|(_, c)| *c >= min_count).collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab = Vocabulary {
            tokens: Vec::with_capacity(kept.len()),
            ids: HashMap::with_capacity(kept.len()),
            counts: Vec::with_capacity(kept.len()),
            total_tokens: 0,
            cumulative_weights: Vec::new(),
        };
        for (tok, count) in kept {
            vocab.ids.insert(tok.clone(), vocab.tokens.len());
            vocab.tokens.push(tok);
            vocab.counts.push(count);
            vocab.total_tokens += count;
        }
        vocab.rebuild_sampling_weights();
        Ok(vocab)
    }

    /// Rebuilds a vocabulary with an explicit id order (bundle loading).
    pub(crate) fn from_ordered(tokens: Vec<String>, counts: Vec<u64>) -> Result<Vocabulary> {
        if tokens.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        debug_assert_eq!(tokens.len(), counts.len());
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            ids.insert(t.clone(), i);
        }
        let total_tokens = counts.iter().sum();
        let mut vocab = Vocabulary {
            tokens,
            ids,
            counts,
            total_tokens,
            cumulative_weights: Vec::new(),
        };
        vocab.rebuild_sampling_weights();
        Ok(vocab)
    }

    pub(crate) fn rebuild_sampling_weights(&mut self) {
        self.cumulative_weights.clear();
        let mut acc = 0.0;
        for &c in &self.counts {
            acc += (c as f64).powf(SAMPLING_POWER);
            self.cumulative_weights.push(acc);
        }
    }

    /// Appends a token with the given count, returning its fresh id.
    /// Existing ids are unaffected.
    pub(crate) fn push_token(&mut self, token: String, count: u64) -> usize {
        let id = self.tokens.len();
        self.ids.insert(token.clone(), id);
        self.tokens.push(token);
        self.counts.push(count);
        self.total_tokens += count;
        id
    }

    /// Adds occurrences to an existing token's count.
    pub(crate) fn bump_count(&mut self, id: usize, extra: u64) {
        self.counts[id] += extra;
        self.total_tokens += extra;
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Relative corpus frequency of a token.
    pub fn frequency(&self, id: usize) -> f64 {
        self.counts[id] as f64 / self.total_tokens.max(1) as f64
    }

    /// Draws a token id with probability proportional to `count^0.75`.
    pub fn sample_negative(&self, rng: &mut Rng) -> Result<usize> {
        let total = *self
            .cumulative_weights
            .last()
            .ok_or(Error::EmptyVocabulary)?;
        let x = rng.next_f64() * total;
        Ok(self.cumulative_weights.partition_point(|&w| w <= x).min(self.tokens.len() - 1))
    }

    /// TSV dump `token<TAB>count`, descending count order (ties by token).
    pub fn dump_tsv(&self) -> String {
        let mut order: Vec<usize> = (0..self.tokens.len()).collect();
        order.sort_by(|&a, &b| {
            self.counts[b]
                .cmp(&self.counts[a])
                .then_with(|| self.tokens[a].cmp(&self.tokens[b]))
        });
        let mut out = String::new();
        for i in order {
            out.push_str(&self.tokens[i]);
            out.push('\t');
            out.push_str(&self.counts[i].to_string());
            out.push('\n');
        }
        out
    }
}

/// Standalone form of [`Vocabulary::sample_negative`].
pub fn sample_negative(vocab: &Vocabulary, rng: &mut Rng) -> Result<usize> {
    vocab.sample_negative(rng)
}

// ---------------------------------------------------------------------------
// Corpora
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Update,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Update => write!(f, "update"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// A document as token strings, before vocabulary encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDocument {
    pub doc_id: usize,
    pub tokens: Vec<String>,
    pub label: Option<String>,
}

/// A corpus of string-token documents. Encoding against a vocabulary
/// produces a [`LabeledCorpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawCorpus {
    pub documents: Vec<RawDocument>,
    pub split: Split,
}

impl RawCorpus {
    pub fn token_streams(&self) -> impl Iterator<Item = impl Iterator<Item = &str>> {
        self.documents
            .iter()
            .map(|d| d.tokens.iter().map(|t| t.as_str()))
    }

    pub fn label_set(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .documents
            .iter()
            .filter_map(|d| d.label.clone())
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }

    /// Concatenates two corpora, reassigning doc ids sequentially.
    pub fn concat(&self, other: &RawCorpus, split: Split) -> RawCorpus {
        let mut documents = Vec::with_capacity(self.documents.len() + other.documents.len());
        for d in self.documents.iter().chain(other.documents.iter()) {
            documents.push(RawDocument {
                doc_id: documents.len(),
                tokens: d.tokens.clone(),
                label: d.label.clone(),
            });
        }
        RawCorpus { documents, split }
    }
}

/// A document encoded to vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedDocument {
    pub doc_id: usize,
    pub token_ids: Vec<usize>,
    pub label: Option<String>,
}

/// An encoded corpus bound to a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub documents: Vec<TokenizedDocument>,
    pub split: Split,
    pub label_set: Vec<String>,
}

impl LabeledCorpus {
    /// Encodes a raw corpus, dropping out-of-vocabulary tokens. Documents
    /// keep their position; ids are assigned sequentially from
    /// `first_doc_id`.
    pub fn encode(raw: &RawCorpus, vocab: &Vocabulary, first_doc_id: usize) -> LabeledCorpus {
        let documents = raw
            .documents
            .iter()
            .enumerate()
            .map(|(i, d)| TokenizedDocument {
                doc_id: first_doc_id + i,
                token_ids: d
                    .tokens
                    .iter()
                    .filter_map(|t| vocab.id(t))
                    .collect(),
                label: d.label.clone(),
            })
            .collect();
        LabeledCorpus {
            documents,
            split: raw.split,
            label_set: raw.label_set(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(|d| d.token_ids.len()).sum()
    }
}

/// Loads a labeled corpus from a TSV file: one document per line,
/// `label<TAB>text`, UTF-8, LF endings. Documents are tokenized with
/// `opts`; doc ids are assigned sequentially from 0 in file order.
pub fn load_labeled_corpus(
    path: impl AsRef<Path>,
    opts: TokenizeOptions,
    split: Split,
) -> Result<RawCorpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut documents = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or_else(|| Error::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
        })?;
        documents.push(RawDocument {
            doc_id: documents.len(),
            tokens: tokenize(text, opts),
            label: Some(label.to_string()),
        });
    }
    Ok(RawCorpus { documents, split })
}

/// Writes a raw corpus back out as `label<TAB>text` TSV.
pub fn write_labeled_corpus(path: impl AsRef<Path>, corpus: &RawCorpus) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for d in &corpus.documents {
        out.push_str(d.label.as_deref().unwrap_or(""));
        out.push('\t');
        out.push_str(&d.tokens.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Frequent-word subsampling
// ---------------------------------------------------------------------------

/// Keeps each occurrence of token `id` with probability
/// `min(1, sqrt(t / f))` where `f` is the token's relative frequency.
/// `threshold <= 0` disables subsampling.
pub fn subsample_tokens(
    token_ids: &[usize],
    vocab: &Vocabulary,
    threshold: f64,
    rng: &mut Rng,
    out: &mut Vec<usize>,
) {
    out.clear();
    if threshold <= 0.0 {
        out.extend_from_slice(token_ids);
        return;
    }
    for &id in token_ids {
        let f = vocab.frequency(id);
        let keep = if f <= threshold {
            1.0
        } else {
            (threshold / f).sqrt()
        };
        if keep >= 1.0 || rng.next_f64() < keep {
            out.push(id);
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

/// Parameters for [`synth_corpus`].
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub num_topics: usize,
    pub docs_per_topic: usize,
    pub words_per_topic: usize,
    pub doc_len: usize,
    /// Fraction of tokens drawn from the shared (cross-topic) block.
    pub overlap: f64,
    pub seed: u64,
}

/// Generates a deterministic labeled corpus triple (train/update/test).
///
/// Each topic owns a disjoint word block; a document samples `1 - overlap`
/// of its tokens from the topic block and `overlap` from a shared block.
/// Train and test documents draw from the full topic block. Update
/// documents simulate domain shift with a shifted block: the second half of
/// the topic block plus an equally sized set of fresh domain-only tokens.
pub fn synth_corpus(params: &SynthParams) -> Result<(RawCorpus, RawCorpus, RawCorpus)> {
    let SynthParams {
        num_topics,
        docs_per_topic,
        words_per_topic,
        doc_len,
        overlap,
        seed,
    } = *params;
    if num_topics == 0 || docs_per_topic == 0 || words_per_topic == 0 || doc_len == 0 {
        return Err(Error::InvalidConfig(
            "synthetic corpus requires all counts >= 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidConfig(
            "overlap must lie in [0, 1)".into(),
        ));
    }

    let topic_blocks: Vec<Vec<String>> = (0..num_topics)
        .map(|t| (0..words_per_topic).map(|i| format!("t{t}w{i}")).collect())
        .collect();
    let shared_block: Vec<String> = (0..words_per_topic).map(|i| format!("shw{i}")).collect();
    // Domain shift: topic keeps the second half of its block and gains
    // fresh jargon tokens, so the update vocabulary both overlaps the
    // generic one and extends it.
    let shifted_blocks: Vec<Vec<String>> = (0..num_topics)
        .map(|t| {
            let keep = &topic_blocks[t][words_per_topic / 2..];
            let fresh = (0..words_per_topic.div_ceil(2)).map(|i| format!("t{t}d{i}"));
            keep.iter().cloned().chain(fresh).collect()
        })
        .collect();

    let make_split = |split: Split, shifted: bool, stream_tag: u64| -> RawCorpus {
        let mut rng = Rng::derive(seed, &[0x5e_c0, stream_tag]);
        let mut documents = Vec::with_capacity(num_topics * docs_per_topic);
        for t in 0..num_topics {
            let block: &[String] = if shifted {
                &shifted_blocks[t]
            } else {
                &topic_blocks[t]
            };
            for _ in 0..docs_per_topic {
                let tokens = (0..doc_len)
                    .map(|_| {
                        if overlap > 0.0 && rng.next_f64() < overlap {
                            shared_block[rng.below(shared_block.len())].clone()
                        } else {
                            block[rng.below(block.len())].clone()
                        }
                    })
                    .collect();
                documents.push(RawDocument {
                    doc_id: documents.len(),
                    tokens,
                    label: Some(format!("topic{t}")),
                });
            }
        }
        RawCorpus { documents, split }
    };

    let train = make_split(Split::Train, false, 1);
    let update = make_split(Split::Update, true, 2);
    let test = make_split(Split::Test, false, 3);
    Ok((train, update, test))
}
