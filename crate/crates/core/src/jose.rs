//! Joint spherical training of word and document vectors with max-margin
//! negative-sampling losses, per-epoch drift reporting, and counter-rotation
//! against a reference epoch.
//!
//! Per (center, context) event two hinge terms fire for every negative draw
//! `n`: a word-context term `max(0, m - cos(u, v) + cos(n, v))` and a
//! word-document term `max(0, m - cos(u, d) + cos(n, d))`, sharing the
//! negative draws. Active terms update every participating vector by a
//! tangent-projected gradient step followed by add-and-normalize retraction;
//! the retraction applies no scalar adjustment factor.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::corpus::{subsample_tokens, LabeledCorpus, TokenizeOptions, TokenizedDocument, Vocabulary};
use crate::error::{Error, Result};
use crate::geometry::{
    self, apply_rotation, epoch_drift, procrustes_rotation_pairs, random_unit_vector, DcosMode,
    DriftReport, EmbeddingSet, Table,
};
use crate::hogwild::AtomicTableView;
use crate::rng::Rng;

// ---------------------------------------------------------------------------
// Configuration and state
// ---------------------------------------------------------------------------

/// All training and adaptation hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    /// Hinge margin m.
    pub margin: f64,
    /// Initial learning rate, decayed linearly to `lr_min`.
    pub lr: f64,
    pub lr_min: f64,
    /// Weight of the keyword-compression term during adaptation.
    pub alpha: f64,
    /// Keywords per document for the compression linkage.
    pub keywords_n: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dcos_mode: DcosMode,
    /// Epoch whose snapshot becomes the counter-rotation reference.
    pub reference_epoch: usize,
    pub align_each_epoch: bool,
    pub workers: usize,
    pub min_count: u64,
    /// Frequent-word subsampling threshold; 0 disables.
    pub subsample: f64,
    /// Cap on compression links traversed per event.
    pub max_links: usize,
    pub keyword_refresh: bool,
    pub keep_snapshots: bool,
    pub snapshot_stride: usize,
    pub tokenizer: TokenizeOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            margin: 0.15,
            lr: 0.025,
            lr_min: 1e-4,
            alpha: 1.0,
            keywords_n: 10,
            window: 5,
            negatives: 2,
            epochs: 10,
            seed: 1,
            dcos_mode: DcosMode::None,
            reference_epoch: 5,
            align_each_epoch: true,
            workers: 1,
            min_count: 5,
            subsample: 1e-5,
            max_links: 8,
            keyword_refresh: false,
            keep_snapshots: false,
            snapshot_stride: 1,
            tokenizer: TokenizeOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.dim < 2 {
            return bad("dim must be >= 2");
        }
        if self.margin <= 0.0 {
            return bad("margin must be > 0");
        }
        if self.lr <= 0.0 || self.lr_min <= 0.0 {
            return bad("learning rates must be > 0");
        }
        if self.alpha < 0.0 {
            return bad("alpha must be >= 0");
        }
        if self.keywords_n < 1 {
            return bad("keywords_n must be >= 1");
        }
        if self.window < 1 {
            return bad("window must be >= 1");
        }
        if self.negatives < 1 {
            return bad("negatives must be >= 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.min_count < 1 {
            return bad("min_count must be >= 1");
        }
        if self.max_links < 1 {
            return bad("max_links must be >= 1");
        }
        if self.snapshot_stride < 1 {
            return bad("snapshot_stride must be >= 1");
        }
        Ok(())
    }

    pub(crate) fn effective_workers(&self) -> usize {
        self.workers.max(1)
    }
}

/// A trained (or in-training) joint spherical model.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingSet,
    pub config: TrainConfig,
    /// `(epoch, snapshot)` copies, kept when `keep_snapshots` is set.
    pub epoch_snapshots: Vec<(usize, EmbeddingSet)>,
    pub drift_log: Vec<DriftReport>,
    pub epoch_stats: Vec<EpochStats>,
    pub trained_epochs: usize,
}

impl ModelState {
    pub fn num_generic_docs(&self) -> usize {
        self.embeddings.num_docs()
    }
}

/// Per-epoch aggregate statistics.
#[derive(Debug, Clone, Default)]
pub struct EpochStats {
    pub epoch: usize,
    pub docs_seen: u64,
    pub pairs_seen: u64,
    pub active_terms: u64,
    pub loss_sum: f64,
}

impl EpochStats {
    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.pairs_seen.max(1) as f64
    }
}

// ---------------------------------------------------------------------------
// Primitive pieces
// ---------------------------------------------------------------------------

/// Hinge loss `max(0, m - pos_cos + neg_cos)`; the flag reports whether the
/// term is active (gradients flow).
pub fn margin_loss(pos_cos: f64, neg_cos: f64, m: f64) -> (f64, bool) {
    let raw = m - pos_cos + neg_cos;
    if raw > 0.0 {
        (raw, true)
    } else {
        (0.0, false)
    }
}

/// Initializes word and document tables with rows drawn uniformly from the
/// unit sphere (normalized Gaussians); deterministic given the seed.
pub fn init_embeddings(vocab: &Vocabulary, num_docs: usize, dim: usize, seed: u64) -> EmbeddingSet {
    let mut rng = Rng::derive(seed, &[stream::INIT]);
    let mut words = Table::with_capacity(vocab.len(), dim);
    for _ in 0..vocab.len() {
        words.push_row(&random_unit_vector(&mut rng, dim));
    }
    let mut docs = Table::with_capacity(num_docs, dim);
    for _ in 0..num_docs {
        docs.push_row(&random_unit_vector(&mut rng, dim));
    }
    EmbeddingSet::new(words, docs).expect("tables share dim by construction")
}

/// RNG stream tags, so independent draws never share a stream.
pub(crate) mod stream {
    pub const INIT: u64 = 1;
    pub const EPOCH: u64 = 2;
    pub const MERGE: u64 = 3;
    pub const ADAPT: u64 = 4;
    pub const BASELINE: u64 = 5;
    pub const BASELINE_INIT: u64 = 6;
    pub const BASELINE_MERGE: u64 = 7;
}

/// Identifies one embedding row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Word(usize),
    Doc(usize),
}

/// The document side of a global term: a stored row that receives updates,
/// or a constructed anchor treated as a constant.
pub(crate) enum DocSide<'a> {
    Stored(usize),
    Anchor(&'a [f64]),
}

// ---------------------------------------------------------------------------
// Shared-table views and per-worker scratch
// ---------------------------------------------------------------------------

pub(crate) struct EmbViews<'a> {
    pub words: AtomicTableView<'a>,
    pub docs: AtomicTableView<'a>,
}

impl<'a> EmbViews<'a> {
    pub fn new(emb: &'a mut EmbeddingSet) -> Self {
        let (words, docs) = emb.split_tables_mut();
        EmbViews {
            words: AtomicTableView::new(words),
            docs: AtomicTableView::new(docs),
        }
    }

    pub fn dim(&self) -> usize {
        self.words.dim()
    }

    fn load(&self, t: Target, buf: &mut [f64]) {
        match t {
            Target::Word(i) => self.words.load_row(i, buf),
            Target::Doc(i) => self.docs.load_row(i, buf),
        }
    }

    fn store(&self, t: Target, buf: &[f64]) {
        match t {
            Target::Word(i) => self.words.store_row(i, buf),
            Target::Doc(i) => self.docs.store_row(i, buf),
        }
    }
}

/// Euclidean-gradient accumulator keyed by target row. Events touch at most
/// a handful of rows, so linear scans beat hashing here.
#[derive(Default)]
pub(crate) struct GradAcc {
    targets: Vec<Target>,
    grads: Vec<f64>,
    dim: usize,
}

impl GradAcc {
    pub(crate) fn reset(&mut self, dim: usize) {
        self.targets.clear();
        self.grads.clear();
        self.dim = dim;
    }

    pub(crate) fn add(&mut self, t: Target, src: &[f64], scale: f64) {
        let slot = match self.targets.iter().position(|&x| x == t) {
            Some(s) => s,
            None => {
                self.targets.push(t);
                self.grads.resize(self.grads.len() + self.dim, 0.0);
                self.targets.len() - 1
            }
        };
        let g = &mut self.grads[slot * self.dim..(slot + 1) * self.dim];
        for i in 0..self.dim {
            g[i] += scale * src[i];
        }
    }

    pub(crate) fn entries(&self) -> impl Iterator<Item = (Target, &[f64])> {
        self.targets
            .iter()
            .copied()
            .zip(self.grads.chunks_exact(self.dim))
    }
}

pub(crate) struct WorkerScratch {
    pub rng: Rng,
    pub sent: Vec<usize>,
    pub negs: Vec<usize>,
    pub links: Vec<usize>,
    pub dhat: Vec<f64>,
    pub(crate) rows: Vec<f64>,
    pub(crate) tmp: Vec<f64>,
    pub(crate) step: Vec<f64>,
    pub(crate) acc: GradAcc,
}

impl WorkerScratch {
    pub fn new(rng: Rng, dim: usize) -> Self {
        WorkerScratch {
            rng,
            sent: Vec::new(),
            negs: Vec::new(),
            links: Vec::new(),
            dhat: vec![0.0; dim],
            rows: Vec::new(),
            tmp: vec![0.0; dim],
            step: vec![0.0; dim],
            acc: GradAcc::default(),
        }
    }

    pub fn draw_negatives(&mut self, vocab: &Vocabulary, count: usize) -> Result<()> {
        self.negs.clear();
        for _ in 0..count {
            self.negs.push(vocab.sample_negative(&mut self.rng)?);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Event application
// ---------------------------------------------------------------------------

/// Accumulates the Euclidean gradients of one (center, context) event over
/// the negatives in `negs`, given pre-loaded rows. Row layout in `rows`:
/// `[u, v, d, n_0, ..]`. Returns `(loss, active_terms)`.
#[allow(clippy::too_many_arguments)]
fn accumulate_pair_terms(
    acc: &mut GradAcc,
    rows: &[f64],
    dim: usize,
    center: usize,
    context: usize,
    doc: Option<usize>,
    negs: &[usize],
    margin: f64,
) -> (f64, u64) {
    let u = &rows[0..dim];
    let v = &rows[dim..2 * dim];
    let d = &rows[2 * dim..3 * dim];
    let pos_local = geometry::dot(u, v);
    let pos_global = geometry::dot(u, d);

    let mut loss = 0.0;
    let mut active = 0u64;
    for (j, &neg_id) in negs.iter().enumerate() {
        let n = &rows[(3 + j) * dim..(4 + j) * dim];
        let (l_loc, act_loc) = margin_loss(pos_local, geometry::dot(n, v), margin);
        if act_loc {
            acc.add(Target::Word(center), v, -1.0);
            acc.add(Target::Word(context), u, -1.0);
            acc.add(Target::Word(context), n, 1.0);
            acc.add(Target::Word(neg_id), v, 1.0);
            active += 1;
        }
        let (l_glob, act_glob) = margin_loss(pos_global, geometry::dot(n, d), margin);
        if act_glob {
            acc.add(Target::Word(center), d, -1.0);
            if let Some(doc_id) = doc {
                acc.add(Target::Doc(doc_id), u, -1.0);
                acc.add(Target::Doc(doc_id), n, 1.0);
            }
            acc.add(Target::Word(neg_id), d, 1.0);
            active += 1;
        }
        loss += l_loc + l_glob;
    }
    (loss, active)
}

/// Gradient of the compression term `alpha * max(0, m - cos(d,u) + cos(d,n))`.
/// Row layout: `[u, d, n]`.
#[allow(clippy::too_many_arguments)]
fn accumulate_compression_term(
    acc: &mut GradAcc,
    rows: &[f64],
    dim: usize,
    word: usize,
    doc_id: usize,
    neg_id: usize,
    alpha: f64,
    margin: f64,
) -> (f64, bool) {
    let u = &rows[0..dim];
    let d = &rows[dim..2 * dim];
    let n = &rows[2 * dim..3 * dim];
    let (l, act) = margin_loss(geometry::dot(d, u), geometry::dot(d, n), margin);
    if act {
        acc.add(Target::Word(word), d, -alpha);
        acc.add(Target::Doc(doc_id), u, -alpha);
        acc.add(Target::Doc(doc_id), n, alpha);
        acc.add(Target::Word(neg_id), d, alpha);
    }
    (alpha * l, act)
}

/// Projects each accumulated gradient into the tangent space at its current
/// row, takes a `-lr` step, retracts, and stores the row back. Rows whose
/// step is exactly zero are left untouched bit-for-bit.
fn apply_accumulated(views: &EmbViews, scratch: &mut WorkerScratch, lr: f64) -> Result<()> {
    let dim = views.dim();
    let tmp = &mut scratch.tmp;
    let step = &mut scratch.step;
    for (target, grad) in scratch.acc.entries() {
        if grad.iter().all(|&x| x == 0.0) {
            continue;
        }
        views.load(target, tmp);
        let ug = geometry::dot(tmp, grad);
        let mut any_nonzero = false;
        for i in 0..dim {
            step[i] = -lr * (grad[i] - ug * tmp[i]);
            any_nonzero |= step[i] != 0.0;
        }
        if !any_nonzero {
            continue;
        }
        // Tangency of the applied update direction at its base point.
        debug_assert!(
            geometry::dot(tmp, step).abs() <= 1e-9 * (1.0 + geometry::norm(step)),
            "update direction must be tangent at the base vector"
        );
        geometry::retract_in_place(tmp, step)?;
        debug_assert!((geometry::norm(tmp) - 1.0).abs() <= 1e-12);
        views.store(target, tmp);
    }
    Ok(())
}

/// Applies one (center, context, doc) event with the negatives already in
/// `scratch.negs`. Returns `(loss, active_terms)`.
pub(crate) fn apply_event(
    views: &EmbViews,
    scratch: &mut WorkerScratch,
    center: usize,
    context: usize,
    doc: DocSide<'_>,
    margin: f64,
    lr: f64,
) -> Result<(f64, u64)> {
    let dim = views.dim();
    let n_rows = 3 + scratch.negs.len();
    scratch.rows.resize(n_rows * dim, 0.0);

    views.words.load_row(center, &mut scratch.rows[0..dim]);
    views.words.load_row(context, &mut scratch.rows[dim..2 * dim]);
    let doc_id = match doc {
        DocSide::Stored(id) => {
            views.docs.load_row(id, &mut scratch.rows[2 * dim..3 * dim]);
            Some(id)
        }
        DocSide::Anchor(vec) => {
            scratch.rows[2 * dim..3 * dim].copy_from_slice(vec);
            None
        }
    };
    for (j, &n) in scratch.negs.iter().enumerate() {
        views
            .words
            .load_row(n, &mut scratch.rows[(3 + j) * dim..(4 + j) * dim]);
    }

    scratch.acc.reset(dim);
    let (loss, active) = accumulate_pair_terms(
        &mut scratch.acc,
        &scratch.rows,
        dim,
        center,
        context,
        doc_id,
        &scratch.negs,
        margin,
    );
    if active > 0 {
        apply_accumulated(views, scratch, lr)?;
    }
    Ok((loss, active))
}

/// Applies one compression term (word `u`, linked generic doc `d`, negative
/// `n`). Returns `(alpha-weighted loss, active)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn apply_compression_event(
    views: &EmbViews,
    scratch: &mut WorkerScratch,
    word: usize,
    doc_id: usize,
    neg_id: usize,
    alpha: f64,
    margin: f64,
    lr: f64,
) -> Result<(f64, bool)> {
    let dim = views.dim();
    scratch.rows.resize(3 * dim, 0.0);
    views.words.load_row(word, &mut scratch.rows[0..dim]);
    views.docs.load_row(doc_id, &mut scratch.rows[dim..2 * dim]);
    views.words.load_row(neg_id, &mut scratch.rows[2 * dim..3 * dim]);

    scratch.acc.reset(dim);
    let (loss, active) = accumulate_compression_term(
        &mut scratch.acc,
        &scratch.rows,
        dim,
        word,
        doc_id,
        neg_id,
        alpha,
        margin,
    );
    if active {
        apply_accumulated(views, scratch, lr)?;
    }
    Ok((loss, active))
}

// ---------------------------------------------------------------------------
// Gradient inspection (used by finite-difference checks)
// ---------------------------------------------------------------------------

fn load_event_rows(
    emb: &EmbeddingSet,
    center: usize,
    context: usize,
    doc: Option<usize>,
    anchor: Option<&[f64]>,
    negs: &[usize],
) -> Result<Vec<f64>> {
    let dim = emb.dim();
    check_word(emb, center)?;
    check_word(emb, context)?;
    let mut rows = Vec::with_capacity((3 + negs.len()) * dim);
    rows.extend_from_slice(emb.word(center));
    rows.extend_from_slice(emb.word(context));
    match (doc, anchor) {
        (Some(id), None) => {
            check_doc(emb, id)?;
            rows.extend_from_slice(emb.doc(id));
        }
        (None, Some(a)) => rows.extend_from_slice(a),
        _ => unreachable!("exactly one document side"),
    }
    for &n in negs {
        check_word(emb, n)?;
        rows.extend_from_slice(emb.word(n));
    }
    Ok(rows)
}

fn check_word(emb: &EmbeddingSet, id: usize) -> Result<()> {
    if id >= emb.num_words() {
        return Err(Error::InvalidId {
            id,
            limit: emb.num_words(),
        });
    }
    Ok(())
}

fn check_doc(emb: &EmbeddingSet, id: usize) -> Result<()> {
    if id >= emb.num_docs() {
        return Err(Error::InvalidId {
            id,
            limit: emb.num_docs(),
        });
    }
    Ok(())
}

fn projected_entries(acc: &GradAcc, emb: &EmbeddingSet) -> Vec<(Target, Vec<f64>)> {
    acc.entries()
        .map(|(t, g)| {
            let base = match t {
                Target::Word(i) => emb.word(i),
                Target::Doc(i) => emb.doc(i),
            };
            let ug = geometry::dot(base, g);
            let proj: Vec<f64> = (0..g.len()).map(|i| g[i] - ug * base[i]).collect();
            (t, proj)
        })
        .collect()
}

/// Tangent-projected gradients of the total event loss with respect to each
/// touched row, for explicit negatives. Rows absent from the result have
/// zero gradient.
pub fn pair_event_gradients(
    emb: &EmbeddingSet,
    center: usize,
    context: usize,
    doc: usize,
    negatives: &[usize],
    margin: f64,
) -> Result<Vec<(Target, Vec<f64>)>> {
    let dim = emb.dim();
    let rows = load_event_rows(emb, center, context, Some(doc), None, negatives)?;
    let mut acc = GradAcc::default();
    acc.reset(dim);
    accumulate_pair_terms(
        &mut acc,
        &rows,
        dim,
        center,
        context,
        Some(doc),
        negatives,
        margin,
    );
    Ok(projected_entries(&acc, emb))
}

/// Tangent-projected gradients of the alpha-weighted compression term.
pub fn compression_event_gradients(
    emb: &EmbeddingSet,
    word: usize,
    doc: usize,
    negative: usize,
    alpha: f64,
    margin: f64,
) -> Result<Vec<(Target, Vec<f64>)>> {
    let dim = emb.dim();
    check_word(emb, word)?;
    check_word(emb, negative)?;
    check_doc(emb, doc)?;
    let mut rows = Vec::with_capacity(3 * dim);
    rows.extend_from_slice(emb.word(word));
    rows.extend_from_slice(emb.doc(doc));
    rows.extend_from_slice(emb.word(negative));
    let mut acc = GradAcc::default();
    acc.reset(dim);
    accumulate_compression_term(&mut acc, &rows, dim, word, doc, negative, alpha, margin);
    Ok(projected_entries(&acc, emb))
}

/// Applies one event with explicit negatives on a single-threaded state.
pub fn apply_pair_event(
    emb: &mut EmbeddingSet,
    center: usize,
    context: usize,
    doc: usize,
    negatives: &[usize],
    margin: f64,
    lr: f64,
) -> Result<(f64, u64)> {
    check_word(emb, center)?;
    check_word(emb, context)?;
    check_doc(emb, doc)?;
    for &n in negatives {
        check_word(emb, n)?;
    }
    let dim = emb.dim();
    let views = EmbViews::new(emb);
    let mut scratch = WorkerScratch::new(Rng::new(0), dim);
    scratch.negs = negatives.to_vec();
    apply_event(
        &views,
        &mut scratch,
        center,
        context,
        DocSide::Stored(doc),
        margin,
        lr,
    )
}

/// One training step for a (center, context, document) triple: draws
/// `config.negatives` negatives and applies the event. Returns the loss.
pub fn train_pair_step(
    state: &mut ModelState,
    center: usize,
    context: usize,
    doc: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let negatives = state.config.negatives;
    let mut negs = Vec::with_capacity(negatives);
    for _ in 0..negatives {
        negs.push(state.vocab.sample_negative(rng)?);
    }
    let (loss, _) = apply_pair_event(
        &mut state.embeddings,
        center,
        context,
        doc,
        &negs,
        state.config.margin,
        lr,
    )?;
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Epoch driver
// ---------------------------------------------------------------------------

/// Sampling-window pair enumeration and the learning-rate schedule shared by
/// every trainer in the crate. For each center position a window size is
/// drawn uniformly from `1..=window`; each in-range position on either side
/// yields one `(center, context)` event.
pub(crate) struct EpochDriver<'a> {
    pub docs: &'a [TokenizedDocument],
    pub vocab: &'a Vocabulary,
    pub config: &'a TrainConfig,
    /// 0-based epoch within the run, for seeding and the lr schedule.
    pub epoch_index: usize,
    /// Total epochs in the run, for the lr schedule.
    pub run_epochs: usize,
    /// Base seed of the run.
    pub run_seed: u64,
}

impl EpochDriver<'_> {
    fn lr_at(&self, docs_done: u64) -> f64 {
        let total = (self.run_epochs * self.docs.len()) as f64;
        let done = (self.epoch_index * self.docs.len()) as f64 + docs_done as f64;
        let progress = if total > 0.0 { (done / total).min(1.0) } else { 0.0 };
        self.config.lr + (self.config.lr_min - self.config.lr) * progress
    }

    /// Runs one epoch, invoking `handler(scratch, lr, center, context, doc)`
    /// for every sampled pair. With one worker the run is sequential and
    /// bit-deterministic; with more, document shards race benignly and the
    /// caller must renormalize afterwards.
    pub fn run<H>(&self, handler: &H) -> Result<EpochStats>
    where
        H: Fn(&mut WorkerScratch, f64, usize, usize, &TokenizedDocument) -> Result<(f64, u64)>
            + Sync,
    {
        if self.docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let workers = self.config.effective_workers();
        let docs_done = AtomicU64::new(0);
        let mut stats = EpochStats {
            epoch: self.epoch_index,
            ..EpochStats::default()
        };

        if workers == 1 {
            let (loss, pairs, active, docs) = self.worker_loop(0, self.docs, &docs_done, handler)?;
            stats.loss_sum = loss;
            stats.pairs_seen = pairs;
            stats.active_terms = active;
            stats.docs_seen = docs;
            return Ok(stats);
        }

        let shard = self.docs.len().div_ceil(workers);
        let results: Vec<Result<(f64, u64, u64, u64)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let docs_done = &docs_done;
                    let lo = (w * shard).min(self.docs.len());
                    let hi = ((w + 1) * shard).min(self.docs.len());
                    let slice = &self.docs[lo..hi];
                    s.spawn(move || self.worker_loop(w, slice, docs_done, handler))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for r in results {
            let (loss, pairs, active, docs) = r?;
            stats.loss_sum += loss;
            stats.pairs_seen += pairs;
            stats.active_terms += active;
            stats.docs_seen += docs;
        }
        Ok(stats)
    }

    fn worker_loop<H>(
        &self,
        worker_id: usize,
        docs: &[TokenizedDocument],
        docs_done: &AtomicU64,
        handler: &H,
    ) -> Result<(f64, u64, u64, u64)>
    where
        H: Fn(&mut WorkerScratch, f64, usize, usize, &TokenizedDocument) -> Result<(f64, u64)>,
    {
        let rng = Rng::derive(
            self.run_seed,
            &[stream::EPOCH, self.epoch_index as u64, worker_id as u64],
        );
        let mut scratch = WorkerScratch::new(rng, self.config.dim);
        let mut loss_sum = 0.0;
        let mut pairs = 0u64;
        let mut active = 0u64;
        let mut docs_seen = 0u64;

        for doc in docs {
            let done_before = docs_done.fetch_add(1, Ordering::Relaxed);
            let lr = self.lr_at(done_before);
            docs_seen += 1;

            let mut sent = std::mem::take(&mut scratch.sent);
            subsample_tokens(
                &doc.token_ids,
                self.vocab,
                self.config.subsample,
                &mut scratch.rng,
                &mut sent,
            );
            for i in 0..sent.len() {
                let b = scratch.rng.range_inclusive(1, self.config.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(sent.len().saturating_sub(1));
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let (l, a) = handler(&mut scratch, lr, sent[i], sent[j], doc)?;
                    loss_sum += l;
                    active += a;
                    pairs += 1;
                }
            }
            scratch.sent = sent;
        }
        Ok((loss_sum, pairs, active, docs_seen))
    }
}

// ---------------------------------------------------------------------------
// Public training operations
// ---------------------------------------------------------------------------

fn validate_corpus_ids(corpus: &LabeledCorpus, num_words: usize, num_docs: usize) -> Result<()> {
    for d in &corpus.documents {
        if d.doc_id >= num_docs {
            return Err(Error::InvalidId {
                id: d.doc_id,
                limit: num_docs,
            });
        }
        for &t in &d.token_ids {
            if t >= num_words {
                return Err(Error::InvalidId {
                    id: t,
                    limit: num_words,
                });
            }
        }
    }
    Ok(())
}

/// Runs one epoch of joint word-document training over the corpus and
/// records a snapshot when enabled. `epoch_index` is 0-based within the run.
pub fn train_epoch(
    state: &mut ModelState,
    corpus: &LabeledCorpus,
    epoch_index: usize,
    config: &TrainConfig,
) -> Result<EpochStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    validate_corpus_ids(corpus, state.embeddings.num_words(), state.embeddings.num_docs())?;

    let stats = {
        let views = EmbViews::new(&mut state.embeddings);
        let vocab = &state.vocab;
        let driver = EpochDriver {
            docs: &corpus.documents,
            vocab,
            config,
            epoch_index,
            run_epochs: config.epochs,
            run_seed: config.seed,
        };
        let margin = config.margin;
        let negatives = config.negatives;
        driver.run(&|scratch, lr, center, context, doc| {
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
        })?
    };

    if config.effective_workers() > 1 {
        state.embeddings.renormalize()?;
    }
    state.trained_epochs += 1;
    if config.keep_snapshots
        && (state.trained_epochs.is_multiple_of(config.snapshot_stride)
            || state.trained_epochs == config.epochs)
    {
        state
            .epoch_snapshots
            .push((state.trained_epochs, state.embeddings.clone()));
    }
    let mut stats = stats;
    stats.epoch = state.trained_epochs;
    state.epoch_stats.push(stats.clone());
    Ok(stats)
}

/// Trains a joint spherical model from a raw corpus: builds the vocabulary,
/// encodes, initializes, and runs the full epoch schedule with drift
/// reporting and optional counter-rotation onto the reference epoch.
pub fn train(raw: &crate::corpus::RawCorpus, config: &TrainConfig) -> Result<ModelState> {
    config.validate()?;
    let vocab = Vocabulary::build(raw.token_streams(), config.min_count)?;
    let corpus = LabeledCorpus::encode(raw, &vocab, 0);
    train_encoded(&corpus, vocab, config)
}

/// As [`train`], over an already-encoded corpus bound to `vocab`.
pub fn train_encoded(
    corpus: &LabeledCorpus,
    vocab: Vocabulary,
    config: &TrainConfig,
) -> Result<ModelState> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let embeddings = init_embeddings(&vocab, corpus.documents.len(), config.dim, config.seed);
    let mut state = ModelState {
        vocab,
        embeddings,
        config: config.clone(),
        epoch_snapshots: Vec::new(),
        drift_log: Vec::new(),
        epoch_stats: Vec::new(),
        trained_epochs: 0,
    };

    let mut prev: Option<EmbeddingSet> = None;
    let mut reference: Option<EmbeddingSet> = None;
    if config.reference_epoch == 0 {
        reference = Some(state.embeddings.clone());
    }

    for epoch in 1..=config.epochs {
        train_epoch(&mut state, corpus, epoch - 1, config)?;

        if let Some(prev_emb) = &prev {
            let report = epoch_drift(prev_emb, &state.embeddings, (epoch - 1, epoch), true)?;
            state.drift_log.push(report);
        }

        if epoch == config.reference_epoch {
            reference = Some(state.embeddings.clone());
        } else if config.align_each_epoch && epoch > config.reference_epoch {
            if let Some(reference) = &reference {
                let rot = procrustes_rotation_pairs(
                    state
                        .embeddings
                        .iter_all_rows()
                        .zip(reference.iter_all_rows()),
                    config.dim,
                    false,
                )?;
                apply_rotation(&mut state.embeddings, &rot)?;
            }
        }

        prev = Some(state.embeddings.clone());
    }
    debug_assert!(state.embeddings.max_norm_deviation() <= 1e-6);
    Ok(state)
}
