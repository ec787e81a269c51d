//! kNN document classification over document vectors, macro-F1 scoring,
//! and the train/update/test experiment harness.
//!
//! The harness compares joint training on train+update (the reference)
//! against retraining approaches that train on the train split and then
//! update on the update split, reporting mean macro-F1 per approach in the
//! two-block layout (training approaches, retraining approaches).

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::adapt::{
    adapt_compression, adapt_construction, adapt_naive, construct_doc_vector, extract_keywords,
    merge_vocab,
};
use crate::baseline::{baseline_doc_vector, continue_sgns, train_sgns, BaselineModel};
use crate::corpus::{RawCorpus, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::jose::{train, ModelState, TrainConfig};

// ---------------------------------------------------------------------------
// kNN
// ---------------------------------------------------------------------------

/// Predicts the label of `query` from its `k` nearest training vectors by
/// cosine similarity. Ties on similarity break toward the lower index;
/// ties on vote count break toward the higher summed similarity, then the
/// lexicographically smaller label.
pub fn knn_predict(
    train_vectors: &[Vec<f64>],
    train_labels: &[String],
    query: &[f64],
    k: usize,
) -> Result<String> {
    if train_vectors.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if train_vectors.len() != train_labels.len() {
        return Err(Error::LengthMismatch {
            expected: train_vectors.len(),
            got: train_labels.len(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let mut scored: Vec<(f64, usize)> = train_vectors
        .iter()
        .enumerate()
        .map(|(i, v)| Ok((crate::geometry::cosine(v, query)?, i)))
        .collect::<Result<_>>()?;
    let k = k.min(scored.len());
    // Quickselect the top k, then order that prefix exactly.
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
    }
    scored.truncate(k);
    scored.sort_unstable_by(cmp);

    let mut votes: HashMap<&str, (usize, f64)> = HashMap::new();
    for &(sim, idx) in &scored {
        let e = votes.entry(train_labels[idx].as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += sim;
    }
    let mut best: Option<(&str, usize, f64)> = None;
    for (label, (count, sum)) in votes {
        let better = match best {
            None => true,
            Some((bl, bc, bs)) => {
                count > bc
                    || (count == bc && sum > bs)
                    || (count == bc && sum == bs && label < bl)
            }
        };
        if better {
            best = Some((label, count, sum));
        }
    }
    Ok(best.expect("k >= 1").0.to_string())
}

// ---------------------------------------------------------------------------
// Macro F1
// ---------------------------------------------------------------------------

/// Unweighted mean over the distinct labels of `y_true` of the per-label
/// F1 = 2PR/(P+R); a label with no true positives and no predicted
/// positives contributes 0.
pub fn macro_f1(y_true: &[String], y_pred: &[String]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::LengthMismatch {
            expected: 1,
            got: 0,
        });
    }
    let mut labels: Vec<&String> = y_true.iter().collect();
    labels.sort();
    labels.dedup();

    let mut total = 0.0;
    for label in &labels {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (t, p) in y_true.iter().zip(y_pred) {
            let is_t = &t == label;
            let is_p = &p == label;
            match (is_t, is_p) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += f1;
    }
    Ok(total / labels.len() as f64)
}

// ---------------------------------------------------------------------------
// Document embedding per approach
// ---------------------------------------------------------------------------

/// Model artifacts a document vector can be read from.
pub enum ModelArtifacts<'a> {
    Spherical(&'a ModelState),
    Baseline(&'a BaselineModel),
}

impl ModelArtifacts<'_> {
    fn vocab(&self) -> &Vocabulary {
        match self {
            ModelArtifacts::Spherical(s) => &s.vocab,
            ModelArtifacts::Baseline(b) => &b.vocab,
        }
    }

    fn doc_vector(&self, token_ids: &[usize]) -> Result<Vec<f64>> {
        match self {
            ModelArtifacts::Spherical(s) => construct_doc_vector(&s.embeddings, token_ids),
            ModelArtifacts::Baseline(b) => baseline_doc_vector(b, token_ids),
        }
    }
}

/// Embeds every test document by averaged-word construction against the
/// model's vocabulary, uniformly across approaches. Degenerate documents
/// (no in-vocabulary tokens) yield `None`; more than 10% of them is an
/// error (dataset/preprocessing mismatch).
pub fn embed_test_docs(
    artifacts: &ModelArtifacts<'_>,
    test: &RawCorpus,
) -> Result<(Vec<Option<Vec<f64>>>, usize)> {
    let vocab = artifacts.vocab();
    let mut out = Vec::with_capacity(test.documents.len());
    let mut excluded = 0usize;
    for d in &test.documents {
        let ids: Vec<usize> = d.tokens.iter().filter_map(|t| vocab.id(t)).collect();
        match artifacts.doc_vector(&ids) {
            Ok(v) => out.push(Some(v)),
            Err(Error::DegenerateDocument) => {
                excluded += 1;
                out.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let total = test.documents.len();
    if total > 0 && excluded * 10 > total {
        return Err(Error::TooManyDegenerate {
            degenerate: excluded,
            total,
        });
    }
    Ok((out, excluded))
}

// ---------------------------------------------------------------------------
// Experiment protocol
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Approach {
    /// Joint spherical training on train + update (the reference).
    ReferenceJoint,
    /// Plain continued training on the update split.
    Naive,
    /// Keyword-compression update training.
    Compression,
    /// Constructed-document update training.
    Construction,
    /// Skip-gram trained jointly on train + update.
    Baseline,
    /// Skip-gram trained on train, continued on update.
    BaselineRetrain,
}

impl Approach {
    pub const ALL: [Approach; 6] = [
        Approach::Baseline,
        Approach::ReferenceJoint,
        Approach::BaselineRetrain,
        Approach::Naive,
        Approach::Compression,
        Approach::Construction,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Approach::ReferenceJoint => "jose-joint",
            Approach::Naive => "jose-naive",
            Approach::Compression => "jose-compression",
            Approach::Construction => "jose-construction",
            Approach::Baseline => "word2vec-joint",
            Approach::BaselineRetrain => "word2vec-retrain",
        }
    }

    pub fn parse(s: &str) -> Result<Approach> {
        match s {
            "reference-joint" | "jose-joint" => Ok(Approach::ReferenceJoint),
            "naive" | "jose-naive" => Ok(Approach::Naive),
            "compression" | "jose-compression" => Ok(Approach::Compression),
            "construction" | "jose-construction" => Ok(Approach::Construction),
            "baseline" | "word2vec-joint" => Ok(Approach::Baseline),
            "baseline-retrain" | "word2vec-retrain" => Ok(Approach::BaselineRetrain),
            other => Err(Error::InvalidConfig(format!("unknown approach `{other}`"))),
        }
    }

    /// Whether the approach belongs to the retraining block of the layout.
    pub fn is_retraining(&self) -> bool {
        matches!(
            self,
            Approach::Naive
                | Approach::Compression
                | Approach::Construction
                | Approach::BaselineRetrain
        )
    }
}

/// A full experiment: dataset triple, approaches, kNN k, seeds, and the
/// training configuration (the per-run seed overrides `config.seed`).
pub struct ExperimentProtocol {
    pub dataset: String,
    pub train: RawCorpus,
    pub update: RawCorpus,
    pub test: RawCorpus,
    pub approaches: Vec<Approach>,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
    /// Epochs for the update phase; defaults to `config.epochs` when zero.
    pub update_epochs: usize,
}

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub approach: Approach,
    pub dataset: String,
    /// Per-seed macro-F1 scores.
    pub scores: Vec<(u64, f64)>,
    pub failure: Option<String>,
}

impl ResultRow {
    pub fn mean(&self) -> Option<f64> {
        if self.scores.is_empty() {
            None
        } else {
            Some(self.scores.iter().map(|(_, f)| f).sum::<f64>() / self.scores.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub metadata: Vec<(String, String)>,
}

impl ResultsTable {
    pub fn row(&self, approach: Approach) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.approach == approach)
    }

    pub fn mean(&self, approach: Approach) -> Option<f64> {
        self.row(approach).and_then(|r| r.mean())
    }

    /// Two-block plain-text layout: training approaches, then retraining.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let dataset = self
            .rows
            .first()
            .map(|r| r.dataset.as_str())
            .unwrap_or("-");
        let block = |title: &str, retraining: bool, out: &mut String| {
            let rows: Vec<&ResultRow> = self
                .rows
                .iter()
                .filter(|r| r.approach.is_retraining() == retraining)
                .collect();
            if rows.is_empty() {
                return;
            }
            let _ = writeln!(out, "{title:<22} {dataset}");
            let _ = writeln!(out, "{}", "-".repeat(40));
            for r in rows {
                match (r.mean(), &r.failure) {
                    (Some(m), _) => {
                        let _ = writeln!(out, "{:<22} {:.4}", r.approach.name(), m);
                    }
                    (None, Some(err)) => {
                        let _ = writeln!(out, "{:<22} FAILED: {err}", r.approach.name());
                    }
                    (None, None) => {
                        let _ = writeln!(out, "{:<22} -", r.approach.name());
                    }
                }
            }
            let _ = writeln!(out, "{}", "-".repeat(40));
        };
        block("Training Approach", false, &mut out);
        block("Retraining Approach", true, &mut out);
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out
    }

    /// CSV rows `approach,dataset,seed,macro_f1`, header included.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("approach,dataset,seed,macro_f1\n");
        for r in &self.rows {
            for (seed, f1) in &r.scores {
                let _ = writeln!(out, "{},{},{},{:.6}", r.approach.name(), r.dataset, seed, f1);
            }
        }
        out
    }
}

/// Labeled kNN training vectors of one trained approach.
struct FittedApproach {
    train_vectors: Vec<Vec<f64>>,
    train_labels: Vec<String>,
    test_vectors: Vec<Option<Vec<f64>>>,
    excluded_test: usize,
}

fn labels_of(corpora: &[&RawCorpus]) -> Vec<Option<String>> {
    corpora
        .iter()
        .flat_map(|c| c.documents.iter().map(|d| d.label.clone()))
        .collect()
}

/// Collects (vector, label) pairs for kNN fitting, skipping unlabeled or
/// missing entries.
fn gather_labeled(
    vectors: Vec<Option<Vec<f64>>>,
    labels: &[Option<String>],
) -> (Vec<Vec<f64>>, Vec<String>) {
    let mut vs = Vec::new();
    let mut ls = Vec::new();
    for (v, l) in vectors.into_iter().zip(labels) {
        if let (Some(v), Some(l)) = (v, l.as_ref()) {
            vs.push(v);
            ls.push(l.clone());
        }
    }
    (vs, ls)
}

fn constructed_vectors(state: &ModelState, corpora: &[&RawCorpus]) -> Vec<Option<Vec<f64>>> {
    corpora
        .iter()
        .flat_map(|c| c.documents.iter())
        .map(|d| {
            let ids: Vec<usize> = d.tokens.iter().filter_map(|t| state.vocab.id(t)).collect();
            construct_doc_vector(&state.embeddings, &ids).ok()
        })
        .collect()
}

fn averaged_vectors(model: &BaselineModel, corpora: &[&RawCorpus]) -> Vec<Option<Vec<f64>>> {
    corpora
        .iter()
        .flat_map(|c| c.documents.iter())
        .map(|d| {
            let ids: Vec<usize> = d.tokens.iter().filter_map(|t| model.vocab.id(t)).collect();
            baseline_doc_vector(model, &ids).ok()
        })
        .collect()
}

fn stored_doc_vectors(state: &ModelState) -> Vec<Option<Vec<f64>>> {
    (0..state.embeddings.num_docs())
        .map(|i| Some(state.embeddings.doc(i).to_vec()))
        .collect()
}

fn fit_approach(
    approach: Approach,
    protocol: &ExperimentProtocol,
    seed: u64,
) -> Result<FittedApproach> {
    let mut config = protocol.config.clone();
    config.seed = seed;
    let mut update_config = config.clone();
    if protocol.update_epochs > 0 {
        update_config.epochs = protocol.update_epochs;
    }

    let combined = protocol.train.concat(&protocol.update, Split::Train);
    let both = [&protocol.train, &protocol.update];
    let train_update_labels = labels_of(&both);

    let (train_vectors, train_labels, test_raw_vectors, excluded) = match approach {
        Approach::ReferenceJoint => {
            let state = train(&combined, &config)?;
            let (tv, ex) = embed_test_docs(&ModelArtifacts::Spherical(&state), &protocol.test)?;
            let (vs, ls) = gather_labeled(stored_doc_vectors(&state), &labels_of(&[&combined]));
            (vs, ls, tv, ex)
        }
        Approach::Naive | Approach::Compression | Approach::Construction => {
            let state = train(&protocol.train, &config)?;
            let linkage = if approach == Approach::Compression {
                Some(extract_keywords(&state, config.keywords_n)?)
            } else {
                None
            };
            let (merged, _merge, encoded) =
                merge_vocab(state, &protocol.update, config.tokenizer)?;
            let (adapted, _stats) = match approach {
                Approach::Naive => adapt_naive(merged, &encoded, &update_config)?,
                Approach::Compression => {
                    adapt_compression(merged, &linkage.unwrap(), &encoded, &update_config)?
                }
                Approach::Construction => adapt_construction(merged, &encoded, &update_config)?,
                _ => unreachable!(),
            };
            let (tv, ex) = embed_test_docs(&ModelArtifacts::Spherical(&adapted), &protocol.test)?;
            let fit_vectors = if approach == Approach::Construction {
                constructed_vectors(&adapted, &both)
            } else {
                stored_doc_vectors(&adapted)
            };
            let (vs, ls) = gather_labeled(fit_vectors, &train_update_labels);
            (vs, ls, tv, ex)
        }
        Approach::Baseline => {
            let model = train_sgns(&combined, &config)?;
            let (tv, ex) = embed_test_docs(&ModelArtifacts::Baseline(&model), &protocol.test)?;
            let (vs, ls) =
                gather_labeled(averaged_vectors(&model, &[&combined]), &labels_of(&[&combined]));
            (vs, ls, tv, ex)
        }
        Approach::BaselineRetrain => {
            let model = train_sgns(&protocol.train, &config)?;
            let model = continue_sgns(model, &protocol.update, config.tokenizer, &update_config)?;
            let (tv, ex) = embed_test_docs(&ModelArtifacts::Baseline(&model), &protocol.test)?;
            let (vs, ls) = gather_labeled(averaged_vectors(&model, &both), &train_update_labels);
            (vs, ls, tv, ex)
        }
    };

    Ok(FittedApproach {
        train_vectors,
        train_labels,
        test_vectors: test_raw_vectors,
        excluded_test: excluded,
    })
}

/// Runs every approach of the protocol across its seeds and reports mean
/// macro-F1 per approach. Test documents that are degenerate for any
/// approach are excluded for all of them, keeping scores comparable. An
/// approach failure annotates its row; the rest of the table still fills.
pub fn run_experiment(protocol: &ExperimentProtocol) -> Result<ResultsTable> {
    if protocol.approaches.is_empty() || protocol.seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "protocol needs at least one approach and one seed".into(),
        ));
    }
    let mut table = ResultsTable::default();
    for &a in &protocol.approaches {
        table.rows.push(ResultRow {
            approach: a,
            dataset: protocol.dataset.clone(),
            scores: Vec::new(),
            failure: None,
        });
    }

    let test_labels: Vec<Option<String>> = protocol
        .test
        .documents
        .iter()
        .map(|d| d.label.clone())
        .collect();
    let mut excluded_union_per_seed = Vec::new();

    for &seed in &protocol.seeds {
        let mut fitted: Vec<(usize, FittedApproach)> = Vec::new();
        for (row_idx, &approach) in protocol.approaches.iter().enumerate() {
            match fit_approach(approach, protocol, seed) {
                Ok(f) => fitted.push((row_idx, f)),
                Err(e) => {
                    let row = &mut table.rows[row_idx];
                    if row.failure.is_none() {
                        row.failure = Some(e.to_string());
                    }
                }
            }
        }

        // Symmetric exclusion: drop any test doc degenerate for at least
        // one approach (or unlabeled) everywhere.
        let n_test = protocol.test.documents.len();
        let mut keep = vec![true; n_test];
        for (i, l) in test_labels.iter().enumerate() {
            if l.is_none() {
                keep[i] = false;
            }
        }
        for (_, f) in &fitted {
            for (i, v) in f.test_vectors.iter().enumerate() {
                if v.is_none() {
                    keep[i] = false;
                }
            }
        }
        excluded_union_per_seed.push(keep.iter().filter(|&&x| !x).count());

        let y_true: Vec<String> = (0..n_test)
            .filter(|&i| keep[i])
            .map(|i| test_labels[i].clone().unwrap())
            .collect();
        if y_true.is_empty() {
            return Err(Error::TooManyDegenerate {
                degenerate: n_test,
                total: n_test,
            });
        }

        for (row_idx, f) in fitted {
            let mut y_pred = Vec::with_capacity(y_true.len());
            let mut failed = None;
            for (i, kept) in keep.iter().enumerate() {
                if !kept {
                    continue;
                }
                let q = f.test_vectors[i].as_ref().expect("kept implies present");
                match knn_predict(&f.train_vectors, &f.train_labels, q, protocol.k) {
                    Ok(l) => y_pred.push(l),
                    Err(e) => {
                        failed = Some(e.to_string());
                        break;
                    }
                }
            }
            let row = &mut table.rows[row_idx];
            match failed {
                Some(e) => {
                    if row.failure.is_none() {
                        row.failure = Some(e);
                    }
                }
                None => {
                    let f1 = macro_f1(&y_true, &y_pred)?;
                    row.scores.push((seed, f1));
                }
            }
            let _ = f.excluded_test;
        }
    }

    table.metadata.push((
        "test_embedding".into(),
        "constructed-average (uniform across approaches)".into(),
    ));
    table.metadata.push((
        "excluded_test_docs_per_seed".into(),
        format!("{excluded_union_per_seed:?}"),
    ));
    table
        .metadata
        .push(("k".into(), protocol.k.to_string()));
    table.metadata.push((
        "seeds".into(),
        format!("{:?}", protocol.seeds),
    ));
    let config_line = crate::bundle::config_echo(&protocol.config)
        .lines()
        .collect::<Vec<_>>()
        .join("; ");
    table.metadata.push(("config".into(), config_line));
    table.metadata.push((
        "update_epochs".into(),
        if protocol.update_epochs > 0 {
            protocol.update_epochs.to_string()
        } else {
            protocol.config.epochs.to_string()
        },
    ));
    Ok(table)
}
