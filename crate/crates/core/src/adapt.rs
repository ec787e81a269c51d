//! Domain adaptation of a trained model on an update corpus.
//!
//! Three strategies:
//! - naive: plain continued training; generic document vectors never move
//!   and drift out of alignment with the word space.
//! - compression: each generic document is tied to its top-n keywords; when
//!   an update-corpus center word is one of those keywords, an extra
//!   alpha-weighted hinge term pulls the linked document vectors along.
//! - construction: document vectors are replaced by the normalized mean of
//!   their word vectors, recomputed on demand and never persisted.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::corpus::{LabeledCorpus, RawCorpus, TokenizeOptions};
use crate::error::{Error, Result};
use crate::geometry::{self, epoch_drift, random_unit_vector, EmbeddingSet};
use crate::jose::{
    apply_compression_event, apply_event, stream, DocSide, EmbViews, EpochDriver, ModelState,
    TrainConfig,
};
use crate::rng::{mix_seed, Rng};

// ---------------------------------------------------------------------------
// Keyword linkage
// ---------------------------------------------------------------------------

/// Bidirectional word-document keyword linkage: `per_doc[d]` lists the n
/// word ids most cosine-similar to document d, and `per_word[u]` lists the
/// documents whose keyword list contains u.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordLinkage {
    per_word: Vec<Vec<usize>>,
    per_doc: Vec<Vec<usize>>,
    n: usize,
}

impl KeywordLinkage {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_words(&self) -> usize {
        self.per_word.len()
    }

    pub fn num_docs(&self) -> usize {
        self.per_doc.len()
    }

    /// Documents linked to word `u` (empty when u carries no links or lies
    /// outside the generic vocabulary).
    pub fn docs_for_word(&self, u: usize) -> &[usize] {
        self.per_word.get(u).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Ordered keyword ids of document `d`.
    pub fn keywords_for_doc(&self, d: usize) -> &[usize] {
        &self.per_doc[d]
    }

    /// TSV dump `doc_id<TAB>w1,w2,...,wn`.
    pub fn dump_tsv(&self) -> String {
        let mut out = String::new();
        for (d, kws) in self.per_doc.iter().enumerate() {
            out.push_str(&d.to_string());
            out.push('\t');
            let joined: Vec<String> = kws.iter().map(|k| k.to_string()).collect();
            out.push_str(&joined.join(","));
            out.push('\n');
        }
        out
    }
}

/// Min-heap key ordered worst-first: lower cosine, then higher word id.
#[derive(PartialEq)]
struct Cand {
    cos: f64,
    id: usize,
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.cos
            .total_cmp(&other.cos)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// For every document of the trained state, selects the `n` words with the
/// highest cosine to the document vector (ties broken by ascending word id)
/// and inverts the mapping.
pub fn extract_keywords(state: &ModelState, n: usize) -> Result<KeywordLinkage> {
    if state.trained_epochs == 0 {
        return Err(Error::UntrainedState);
    }
    if n == 0 {
        return Err(Error::InvalidConfig("keyword count must be >= 1".into()));
    }
    let emb = &state.embeddings;
    let num_words = emb.num_words();
    let num_docs = emb.num_docs();
    let mut per_doc = Vec::with_capacity(num_docs);
    let mut per_word: Vec<Vec<usize>> = vec![Vec::new(); num_words];

    for d in 0..num_docs {
        let doc_row = emb.doc(d);
        // Bounded min-heap: the root is the worst candidate kept so far.
        let mut heap: BinaryHeap<Reverse<Cand>> = BinaryHeap::with_capacity(n + 1);
        for w in 0..num_words {
            let cos = geometry::dot(emb.word(w), doc_row).clamp(-1.0, 1.0);
            let cand = Cand { cos, id: w };
            if heap.len() < n {
                heap.push(Reverse(cand));
            } else if let Some(worst) = heap.peek() {
                if cand > worst.0 {
                    heap.pop();
                    heap.push(Reverse(cand));
                }
            }
        }
        let mut kept: Vec<Cand> = heap.into_iter().map(|r| r.0).collect();
        kept.sort_by(|a, b| b.cmp(a));
        let ids: Vec<usize> = kept.iter().map(|c| c.id).collect();
        for &w in &ids {
            per_word[w].push(d);
        }
        per_doc.push(ids);
    }
    Ok(KeywordLinkage {
        per_word,
        per_doc,
        n,
    })
}

// ---------------------------------------------------------------------------
// Vocabulary merge
// ---------------------------------------------------------------------------

/// Outcome of merging an update corpus into a trained model's vocabulary.
#[derive(Debug, Clone)]
pub struct VocabMerge {
    /// Fresh tokens with their domain counts, in id order.
    pub added_tokens: Vec<(String, u64)>,
    pub added_ids: Vec<usize>,
    /// Generic ids of tokens present in both corpora, sorted.
    pub overlap_ids: Vec<usize>,
    pub generic_vocab_len: usize,
    pub generic_doc_count: usize,
    pub domain_doc_count: usize,
}

/// Extends the model with the update corpus: domain-only tokens meeting
/// `min_count` get fresh ids and fresh uniform-sphere vectors, update
/// documents get fresh doc ids (continuing after the generic ones) and
/// fresh vectors. Generic ids and vectors are untouched. Returns the merged
/// state, the merge summary, and the update corpus encoded against the
/// merged vocabulary.
pub fn merge_vocab(
    mut state: ModelState,
    domain: &RawCorpus,
    opts: TokenizeOptions,
) -> Result<(ModelState, VocabMerge, LabeledCorpus)> {
    if opts != state.config.tokenizer {
        return Err(Error::TokenizerMismatch {
            expected: state.config.tokenizer.to_string(),
            got: opts.to_string(),
        });
    }
    let generic_vocab_len = state.vocab.len();
    let generic_doc_count = state.embeddings.num_docs();

    let mut domain_counts: std::collections::HashMap<&str, u64> = std::collections::HashMap::new();
    for d in &domain.documents {
        for t in &d.tokens {
            *domain_counts.entry(t.as_str()).or_insert(0) += 1;
        }
    }

    let mut overlap_ids = Vec::new();
    let mut additions: Vec<(&str, u64)> = Vec::new();
    for (&tok, &count) in &domain_counts {
        match state.vocab.id(tok) {
            Some(id) => overlap_ids.push(id),
            None if count >= state.config.min_count => additions.push((tok, count)),
            None => {}
        }
    }
    overlap_ids.sort_unstable();
    additions.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    // Cumulative counts: overlap tokens absorb their domain occurrences so
    // the sampler reflects everything seen so far.
    let overlap_bumps: Vec<(usize, u64)> = overlap_ids
        .iter()
        .map(|&id| (id, domain_counts[state.vocab.token(id)]))
        .collect();
    for (id, extra) in overlap_bumps {
        state.vocab.bump_count(id, extra);
    }

    let mut word_rng = Rng::derive(state.config.seed, &[stream::MERGE, 0]);
    let mut added_ids = Vec::with_capacity(additions.len());
    let mut added_tokens = Vec::with_capacity(additions.len());
    let dim = state.embeddings.dim();
    for (tok, count) in additions {
        let id = state.vocab.push_token(tok.to_string(), count);
        added_ids.push(id);
        added_tokens.push((tok.to_string(), count));
        let row = random_unit_vector(&mut word_rng, dim);
        state.embeddings.push_word_row(&row);
    }
    state.vocab.rebuild_sampling_weights();

    let mut doc_rng = Rng::derive(state.config.seed, &[stream::MERGE, 1]);
    for _ in 0..domain.documents.len() {
        let row = random_unit_vector(&mut doc_rng, dim);
        state.embeddings.push_doc_row(&row);
    }

    let encoded = LabeledCorpus::encode(domain, &state.vocab, generic_doc_count);
    let merge = VocabMerge {
        added_tokens,
        added_ids,
        overlap_ids,
        generic_vocab_len,
        generic_doc_count,
        domain_doc_count: domain.documents.len(),
    };
    Ok((state, merge, encoded))
}

// ---------------------------------------------------------------------------
// Adaptation strategies
// ---------------------------------------------------------------------------

/// Per-strategy counters for an adaptation run.
#[derive(Debug, Clone, Default)]
pub struct AdaptStats {
    pub strategy: String,
    pub epochs_run: usize,
    pub pairs_seen: u64,
    pub active_terms: u64,
    /// Compression terms evaluated (guard passed, negative drawn).
    pub compression_terms: u64,
    pub compression_active: u64,
    pub refresh_terms: u64,
    /// Documents with no usable tokens, skipped entirely.
    pub docs_skipped: u64,
    /// Transient degenerate constructions skipped at event level.
    pub degenerate_events: u64,
    /// Generic document rows displaced by more than 1e-9.
    pub generic_docs_moved: usize,
    pub mean_loss_per_epoch: Vec<f64>,
    pub warnings: Vec<String>,
}

impl fmt::Display for AdaptStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "strategy: {}", self.strategy)?;
        writeln!(f, "epochs_run: {}", self.epochs_run)?;
        writeln!(f, "pairs_seen: {}", self.pairs_seen)?;
        writeln!(f, "active_terms: {}", self.active_terms)?;
        writeln!(f, "compression_terms: {}", self.compression_terms)?;
        writeln!(f, "compression_active: {}", self.compression_active)?;
        writeln!(f, "refresh_terms: {}", self.refresh_terms)?;
        writeln!(f, "docs_skipped: {}", self.docs_skipped)?;
        writeln!(f, "degenerate_events: {}", self.degenerate_events)?;
        writeln!(f, "generic_docs_moved: {}", self.generic_docs_moved)?;
        for (i, l) in self.mean_loss_per_epoch.iter().enumerate() {
            writeln!(f, "epoch_{}_mean_loss: {}", i + 1, l)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

fn validate_update_corpus(state: &ModelState, corpus: &LabeledCorpus) -> Result<()> {
    for d in &corpus.documents {
        if d.doc_id >= state.embeddings.num_docs() {
            return Err(Error::InvalidId {
                id: d.doc_id,
                limit: state.embeddings.num_docs(),
            });
        }
        for &t in &d.token_ids {
            if t >= state.vocab.len() {
                return Err(Error::InvalidId {
                    id: t,
                    limit: state.vocab.len(),
                });
            }
        }
    }
    Ok(())
}

/// Rows of the document table that the update corpus does not own, i.e. the
/// generic documents frozen by the naive strategy.
fn frozen_doc_rows(state: &ModelState, corpus: &LabeledCorpus) -> Vec<usize> {
    let update_ids: HashSet<usize> = corpus.documents.iter().map(|d| d.doc_id).collect();
    (0..state.embeddings.num_docs())
        .filter(|i| !update_ids.contains(i))
        .collect()
}

fn count_moved_rows(before: &EmbeddingSet, after: &EmbeddingSet, rows: &[usize]) -> usize {
    rows.iter()
        .filter(|&&i| {
            let a = before.doc(i);
            let b = after.doc(i);
            let mut d = 0.0;
            for k in 0..a.len() {
                let diff = a[k] - b[k];
                d += diff * diff;
            }
            d.sqrt() > 1e-9
        })
        .count()
}

enum Strategy<'a> {
    Naive,
    Compression(&'a KeywordLinkage),
    Construction,
}

impl Strategy<'_> {
    fn name(&self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Compression(_) => "compression",
            Strategy::Construction => "construction",
        }
    }
}

/// Continues plain joint training on the update corpus. Fresh domain
/// document vectors train normally; generic document vectors are never
/// touched and fall out of alignment as the word space keeps moving.
pub fn adapt_naive(
    state: ModelState,
    update: &LabeledCorpus,
    config: &TrainConfig,
) -> Result<(ModelState, AdaptStats)> {
    run_adaptation(state, update, config, Strategy::Naive)
}

/// Continued training plus the keyword-compression loss: for every center
/// word `u` in the generic-domain overlap, each linked generic document
/// `d` in `P_u` (capped at `max_links` sampled without replacement) adds an
/// alpha-weighted hinge `alpha * max(0, m - cos(d,u) + cos(d,n'))` against a
/// fresh negative `n'`, updating `u`, `d`, and `n'` - so generic document
/// vectors move during adaptation.
pub fn adapt_compression(
    state: ModelState,
    linkage: &KeywordLinkage,
    update: &LabeledCorpus,
    config: &TrainConfig,
) -> Result<(ModelState, AdaptStats)> {
    if linkage.num_words() > state.vocab.len()
        || linkage.num_docs() > state.embeddings.num_docs()
    {
        return Err(Error::LinkageMismatch(format!(
            "linkage covers {} words / {} docs, state has {} / {}",
            linkage.num_words(),
            linkage.num_docs(),
            state.vocab.len(),
            state.embeddings.num_docs()
        )));
    }
    run_adaptation(state, update, config, Strategy::Compression(linkage))
}

/// Continued training where every word-document term uses the normalized
/// mean of the document's word vectors, recomputed at each encounter. The
/// constructed vector is a constant anchor within a step: gradients flow to
/// the center word and negatives only, and no document table is persisted
/// for this strategy.
pub fn adapt_construction(
    state: ModelState,
    update: &LabeledCorpus,
    config: &TrainConfig,
) -> Result<(ModelState, AdaptStats)> {
    run_adaptation(state, update, config, Strategy::Construction)
}

fn run_adaptation(
    mut state: ModelState,
    update: &LabeledCorpus,
    config: &TrainConfig,
    strategy: Strategy<'_>,
) -> Result<(ModelState, AdaptStats)> {
    config.validate()?;
    let mut stats = AdaptStats {
        strategy: strategy.name().to_string(),
        ..AdaptStats::default()
    };
    if update.is_empty() {
        stats
            .warnings
            .push("empty update corpus: state returned unchanged".into());
        return Ok((state, stats));
    }
    validate_update_corpus(&state, update)?;

    let frozen_rows = frozen_doc_rows(&state, update);
    let before = state.embeddings.clone();
    stats.docs_skipped = update
        .documents
        .iter()
        .filter(|d| d.token_ids.is_empty())
        .count() as u64;

    let run_seed = mix_seed(config.seed, &[stream::ADAPT]);
    let compression_terms = AtomicU64::new(0);
    let compression_active = AtomicU64::new(0);
    let refresh_terms = AtomicU64::new(0);
    let degenerate_events = AtomicU64::new(0);

    let mut prev = state.embeddings.clone();
    for epoch_index in 0..config.epochs {
        let epoch_stats = {
            let views = EmbViews::new(&mut state.embeddings);
            let vocab = &state.vocab;
            let driver = EpochDriver {
                docs: &update.documents,
                vocab,
                config,
                epoch_index,
                run_epochs: config.epochs,
                run_seed,
            };
            let margin = config.margin;
            let negatives = config.negatives;
            let alpha = config.alpha;

            match &strategy {
                Strategy::Naive => driver.run(&|scratch, lr, center, context, doc| {
                    scratch.draw_negatives(vocab, negatives)?;
                    apply_event(
                        &views,
                        scratch,
                        center,
                        context,
                        DocSide::Stored(doc.doc_id),
                        margin,
                        lr,
                    )
                })?,
                Strategy::Compression(linkage) => {
                    driver.run(&|scratch, lr, center, context, doc| {
                        scratch.draw_negatives(vocab, negatives)?;
                        let (mut loss, mut active) = apply_event(
                            &views,
                            scratch,
                            center,
                            context,
                            DocSide::Stored(doc.doc_id),
                            margin,
                            lr,
                        )?;
                        // Compression terms fire only for center words in
                        // the generic-domain overlap; anything with a fresh
                        // id lies outside the generic vocabulary.
                        let links = linkage.docs_for_word(center);
                        if alpha > 0.0 && !links.is_empty() {
                            sample_links(scratch, links, config.max_links);
                            for li in 0..scratch.links.len() {
                                let d = scratch.links[li];
                                let neg = vocab.sample_negative(&mut scratch.rng)?;
                                let (l, act) = apply_compression_event(
                                    &views, scratch, center, d, neg, alpha, margin, lr,
                                )?;
                                compression_terms.fetch_add(1, Ordering::Relaxed);
                                if act {
                                    compression_active.fetch_add(1, Ordering::Relaxed);
                                }
                                loss += l;
                                active += act as u64;
                                if config.keyword_refresh {
                                    let kws = linkage.keywords_for_doc(d);
                                    if !kws.is_empty() {
                                        let kw = kws[scratch.rng.below(kws.len())];
                                        let neg2 = vocab.sample_negative(&mut scratch.rng)?;
                                        let (l2, act2) = apply_compression_event(
                                            &views, scratch, kw, d, neg2, alpha, margin, lr,
                                        )?;
                                        refresh_terms.fetch_add(1, Ordering::Relaxed);
                                        loss += l2;
                                        active += act2 as u64;
                                    }
                                }
                            }
                        }
                        Ok((loss, active))
                    })?
                }
                Strategy::Construction => driver.run(&|scratch, lr, center, context, doc| {
                    scratch.draw_negatives(vocab, negatives)?;
                    if construct_from_views(&views, &doc.token_ids, &mut scratch.dhat).is_err() {
                        degenerate_events.fetch_add(1, Ordering::Relaxed);
                        return Ok((0.0, 0));
                    }
                    let dhat = std::mem::take(&mut scratch.dhat);
                    let out = apply_event(
                        &views,
                        scratch,
                        center,
                        context,
                        DocSide::Anchor(&dhat),
                        margin,
                        lr,
                    );
                    scratch.dhat = dhat;
                    out
                })?,
            }
        };

        if config.effective_workers() > 1 {
            state.embeddings.renormalize()?;
        }
        let prev_trained = state.trained_epochs;
        state.trained_epochs += 1;
        let report = epoch_drift(
            &prev,
            &state.embeddings,
            (prev_trained, state.trained_epochs),
            true,
        )?;
        state.drift_log.push(report);
        prev = state.embeddings.clone();
        if config.keep_snapshots && state.trained_epochs.is_multiple_of(config.snapshot_stride) {
            state
                .epoch_snapshots
                .push((state.trained_epochs, state.embeddings.clone()));
        }
        stats.pairs_seen += epoch_stats.pairs_seen;
        stats.active_terms += epoch_stats.active_terms;
        stats
            .mean_loss_per_epoch
            .push(epoch_stats.mean_loss());
        let mut epoch_stats = epoch_stats;
        epoch_stats.epoch = state.trained_epochs;
        state.epoch_stats.push(epoch_stats);
        stats.epochs_run += 1;
    }

    stats.compression_terms = compression_terms.into_inner();
    stats.compression_active = compression_active.into_inner();
    stats.refresh_terms = refresh_terms.into_inner();
    stats.degenerate_events = degenerate_events.into_inner();
    stats.generic_docs_moved = count_moved_rows(&before, &state.embeddings, &frozen_rows);
    debug_assert!(state.embeddings.max_norm_deviation() <= 1e-6);
    Ok((state, stats))
}

/// Samples up to `max_links` distinct entries from `links` into
/// `scratch.links`, preserving first-draw order.
fn sample_links(scratch: &mut crate::jose::WorkerScratch, links: &[usize], max_links: usize) {
    scratch.links.clear();
    if links.len() <= max_links {
        scratch.links.extend_from_slice(links);
        return;
    }
    while scratch.links.len() < max_links {
        let cand = links[scratch.rng.below(links.len())];
        if !scratch.links.contains(&cand) {
            scratch.links.push(cand);
        }
    }
}

/// Builds the normalized word-mean for a document from live table views.
fn construct_from_views(
    views: &EmbViews<'_>,
    token_ids: &[usize],
    out: &mut Vec<f64>,
) -> Result<()> {
    let dim = views.dim();
    out.clear();
    out.resize(dim, 0.0);
    let mut row = vec![0.0; dim];
    let mut used = 0usize;
    for &t in token_ids {
        views.words.load_row(t, &mut row);
        for i in 0..dim {
            out[i] += row[i];
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateDocument);
    }
    for x in out.iter_mut() {
        *x /= used as f64;
    }
    if geometry::norm(out) < 1e-9 {
        return Err(Error::DegenerateDocument);
    }
    geometry::normalize(out)?;
    Ok(())
}

/// Normalized mean of the in-vocabulary word vectors of `token_ids`.
/// Out-of-vocabulary ids are skipped; an all-OOV or cancelling document is
/// an error.
pub fn construct_doc_vector(emb: &EmbeddingSet, token_ids: &[usize]) -> Result<Vec<f64>> {
    let dim = emb.dim();
    let mut sum = vec![0.0; dim];
    let mut used = 0usize;
    for &t in token_ids {
        if t >= emb.num_words() {
            continue;
        }
        let row = emb.word(t);
        for i in 0..dim {
            sum[i] += row[i];
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateDocument);
    }
    for x in sum.iter_mut() {
        *x /= used as f64;
    }
    if geometry::norm(&sum) < 1e-9 {
        return Err(Error::DegenerateDocument);
    }
    geometry::normalize(&mut sum)?;
    Ok(sum)
}
