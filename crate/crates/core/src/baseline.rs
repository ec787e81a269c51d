//! Skip-gram negative-sampling word embeddings, the Word2Vec benchmark.
//! Document vectors are the normalized mean of the document's word vectors.
//!
//! Unlike the spherical model the tables are Euclidean: input (word) and
//! output (context) vectors are unconstrained, trained with the sigmoid
//! dot-product objective.

use crate::corpus::{LabeledCorpus, RawCorpus, TokenizeOptions, Vocabulary};
use crate::error::{Error, Result};
use crate::geometry::{self, Table};
use crate::hogwild::AtomicTableView;
use crate::jose::{stream, EpochDriver, EpochStats, GradAcc, Target, TrainConfig, WorkerScratch};
use crate::rng::{mix_seed, Rng};

/// Word2Vec-style skip-gram model with negative sampling.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub vocab: Vocabulary,
    /// Input vectors, one row per word; not norm-constrained.
    pub word_vectors: Table,
    /// Output vectors, same shape.
    pub context_vectors: Table,
    pub config: TrainConfig,
    pub epoch_stats: Vec<EpochStats>,
    pub trained_epochs: usize,
}

impl TrainConfig {
    /// Conventional skip-gram defaults; only the negative count differs
    /// from the spherical model's defaults.
    pub fn baseline_defaults() -> TrainConfig {
        TrainConfig {
            negatives: 5,
            ..TrainConfig::default()
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Loss of one skip-gram event:
/// `-ln s(w.o_ctx) - sum_j ln s(-w.o_nj)`.
pub fn sgns_event_loss(
    model: &BaselineModel,
    center: usize,
    context: usize,
    negatives: &[usize],
) -> Result<f64> {
    check_id(model, center)?;
    check_id(model, context)?;
    let w = model.word_vectors.row(center);
    let mut loss = -sigmoid(geometry::dot(w, model.context_vectors.row(context))).ln();
    for &n in negatives {
        check_id(model, n)?;
        loss -= sigmoid(-geometry::dot(w, model.context_vectors.row(n))).ln();
    }
    Ok(loss)
}

/// Euclidean gradients of one event with respect to each touched row.
/// `Target::Word` indexes the input table, `Target::Doc` the output table.
pub fn sgns_event_gradients(
    model: &BaselineModel,
    center: usize,
    context: usize,
    negatives: &[usize],
) -> Result<Vec<(Target, Vec<f64>)>> {
    check_id(model, center)?;
    check_id(model, context)?;
    for &n in negatives {
        check_id(model, n)?;
    }
    let dim = model.word_vectors.dim();
    let mut acc = GradAcc::default();
    acc.reset(dim);
    accumulate_sgns_terms(
        &mut acc,
        model.word_vectors.row(center),
        |id| model.context_vectors.row(id).to_vec(),
        center,
        context,
        negatives,
    );
    Ok(acc.entries().map(|(t, g)| (t, g.to_vec())).collect())
}

fn check_id(model: &BaselineModel, id: usize) -> Result<()> {
    if id >= model.vocab.len() {
        return Err(Error::InvalidId {
            id,
            limit: model.vocab.len(),
        });
    }
    Ok(())
}

/// Shared gradient core. `Target::Word` = input row, `Target::Doc` = output
/// row (the tables are disjoint, so the tag reuse is unambiguous here).
fn accumulate_sgns_terms(
    acc: &mut GradAcc,
    w: &[f64],
    ctx_row: impl Fn(usize) -> Vec<f64>,
    center: usize,
    context: usize,
    negatives: &[usize],
) -> f64 {
    let o_pos = ctx_row(context);
    let f = sigmoid(geometry::dot(w, &o_pos));
    let mut loss = -f.ln();
    acc.add(Target::Word(center), &o_pos, -(1.0 - f));
    acc.add(Target::Doc(context), w, -(1.0 - f));
    for &n in negatives {
        let o_neg = ctx_row(n);
        let g = sigmoid(geometry::dot(w, &o_neg));
        loss -= (1.0 - g).ln();
        acc.add(Target::Word(center), &o_neg, g);
        acc.add(Target::Doc(n), w, g);
    }
    loss
}

struct BaselineViews<'a> {
    words: AtomicTableView<'a>,
    contexts: AtomicTableView<'a>,
}

fn apply_sgns_event(
    views: &BaselineViews<'_>,
    scratch: &mut WorkerScratch,
    center: usize,
    context: usize,
    lr: f64,
) -> Result<(f64, u64)> {
    let dim = views.words.dim();
    scratch.rows.resize(dim, 0.0);
    views.words.load_row(center, &mut scratch.rows);

    scratch.acc.reset(dim);
    let negs = std::mem::take(&mut scratch.negs);
    let loss = accumulate_sgns_terms(
        &mut scratch.acc,
        &scratch.rows,
        |id| {
            let mut buf = vec![0.0; dim];
            views.contexts.load_row(id, &mut buf);
            buf
        },
        center,
        context,
        &negs,
    );
    let terms = 1 + negs.len() as u64;
    scratch.negs = negs;

    let tmp = &mut scratch.tmp;
    for (target, grad) in scratch.acc.entries() {
        if grad.iter().all(|&x| x == 0.0) {
            continue;
        }
        match target {
            Target::Word(i) => {
                views.words.load_row(i, tmp);
                for k in 0..dim {
                    tmp[k] -= lr * grad[k];
                }
                views.words.store_row(i, tmp);
            }
            Target::Doc(i) => {
                views.contexts.load_row(i, tmp);
                for k in 0..dim {
                    tmp[k] -= lr * grad[k];
                }
                views.contexts.store_row(i, tmp);
            }
        }
    }
    Ok((loss, terms))
}

/// Classic small-range input initialization, `[-0.5, 0.5) / dim`.
fn init_input_row(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| (rng.next_f64() - 0.5) / dim as f64)
        .collect()
}

/// Trains a fresh skip-gram model on the corpus.
pub fn train_sgns(raw: &RawCorpus, config: &TrainConfig) -> Result<BaselineModel> {
    config.validate()?;
    let vocab = Vocabulary::build(raw.token_streams(), config.min_count)?;
    let corpus = LabeledCorpus::encode(raw, &vocab, 0);
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dim = config.dim;
    let mut rng = Rng::derive(config.seed, &[stream::BASELINE_INIT]);
    let mut word_vectors = Table::with_capacity(vocab.len(), dim);
    for _ in 0..vocab.len() {
        word_vectors.push_row(&init_input_row(&mut rng, dim));
    }
    let context_vectors = Table::zeros(vocab.len(), dim);
    let mut model = BaselineModel {
        vocab,
        word_vectors,
        context_vectors,
        config: config.clone(),
        epoch_stats: Vec::new(),
        trained_epochs: 0,
    };
    run_sgns_epochs(&mut model, &corpus, config)?;
    Ok(model)
}

/// Continues training an existing model on an update corpus (the plain
/// retraining protocol for the benchmark). New tokens meeting `min_count`
/// get small-random input rows and zero output rows. An empty update corpus
/// is the identity.
pub fn continue_sgns(
    mut model: BaselineModel,
    raw: &RawCorpus,
    opts: TokenizeOptions,
    config: &TrainConfig,
) -> Result<BaselineModel> {
    config.validate()?;
    if opts != model.config.tokenizer {
        return Err(Error::TokenizerMismatch {
            expected: model.config.tokenizer.to_string(),
            got: opts.to_string(),
        });
    }
    if raw.documents.is_empty() {
        return Ok(model);
    }

    let mut counts: std::collections::HashMap<&str, u64> = std::collections::HashMap::new();
    for d in &raw.documents {
        for t in &d.tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut additions: Vec<(&str, u64)> = Vec::new();
    let mut bumps: Vec<(usize, u64)> = Vec::new();
    for (&tok, &c) in &counts {
        match model.vocab.id(tok) {
            Some(id) => bumps.push((id, c)),
            None if c >= config.min_count => additions.push((tok, c)),
            None => {}
        }
    }
    additions.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    for (id, c) in bumps {
        model.vocab.bump_count(id, c);
    }
    let dim = model.word_vectors.dim();
    let mut rng = Rng::derive(config.seed, &[stream::BASELINE_MERGE]);
    for (tok, c) in additions {
        model.vocab.push_token(tok.to_string(), c);
        model.word_vectors.push_row(&init_input_row(&mut rng, dim));
        model.context_vectors.push_row(&vec![0.0; dim]);
    }
    model.vocab.rebuild_sampling_weights();

    let corpus = LabeledCorpus::encode(raw, &model.vocab, 0);
    run_sgns_epochs(&mut model, &corpus, config)?;
    Ok(model)
}

fn run_sgns_epochs(
    model: &mut BaselineModel,
    corpus: &LabeledCorpus,
    config: &TrainConfig,
) -> Result<()> {
    let run_seed = mix_seed(config.seed, &[stream::BASELINE, model.trained_epochs as u64]);
    for epoch_index in 0..config.epochs {
        let stats = {
            let views = BaselineViews {
                words: AtomicTableView::new(&mut model.word_vectors),
                contexts: AtomicTableView::new(&mut model.context_vectors),
            };
            let vocab = &model.vocab;
            let driver = EpochDriver {
                docs: &corpus.documents,
                vocab,
                config,
                epoch_index,
                run_epochs: config.epochs,
                run_seed,
            };
            let negatives = config.negatives;
            driver.run(&|scratch, lr, center, context, _doc| {
                scratch.draw_negatives(vocab, negatives)?;
                apply_sgns_event(&views, scratch, center, context, lr)
            })?
        };
        model.trained_epochs += 1;
        let mut stats = stats;
        stats.epoch = model.trained_epochs;
        model.epoch_stats.push(stats);
    }
    Ok(())
}

/// Normalized mean of the in-vocabulary input vectors; out-of-vocabulary
/// ids are skipped.
pub fn baseline_doc_vector(model: &BaselineModel, token_ids: &[usize]) -> Result<Vec<f64>> {
    let dim = model.word_vectors.dim();
    let mut sum = vec![0.0; dim];
    let mut used = 0usize;
    for &t in token_ids {
        if t >= model.vocab.len() {
            continue;
        }
        let row = model.word_vectors.row(t);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, Split, SynthParams};

    fn synth(seed: u64) -> RawCorpus {
        let (train, _, _) = synth_corpus(&SynthParams {
            num_topics: 2,
            docs_per_topic: 20,
            words_per_topic: 8,
            doc_len: 20,
            overlap: 0.1,
            seed,
        })
        .unwrap();
        train
    }

    fn test_config(seed: u64) -> TrainConfig {
        TrainConfig {
            dim: 8,
            epochs: 2,
            min_count: 1,
            subsample: 0.0,
            seed,
            ..TrainConfig::baseline_defaults()
        }
    }

    fn model_bits(m: &BaselineModel) -> Vec<u64> {
        m.word_vectors
            .as_slice()
            .iter()
            .chain(m.context_vectors.as_slice())
            .map(|x| x.to_bits())
            .collect()
    }

    #[test]
    fn deterministic_given_seed() {
        let raw = synth(3);
        let a = train_sgns(&raw, &test_config(5)).unwrap();
        let b = train_sgns(&raw, &test_config(5)).unwrap();
        assert_eq!(model_bits(&a), model_bits(&b));
        let c = train_sgns(&raw, &test_config(6)).unwrap();
        assert_ne!(model_bits(&a), model_bits(&c));
    }

    #[test]
    fn empty_corpus_rejected() {
        let raw = RawCorpus {
            documents: Vec::new(),
            split: Split::Train,
        };
        assert!(train_sgns(&raw, &test_config(1)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let raw = synth(7);
        let mut config = test_config(7);
        config.dim = 4;
        config.epochs = 1;
        let model = train_sgns(&raw, &config).unwrap();
        let mut rng = Rng::new(9);
        let h = 1e-5;
        let v = model.vocab.len();

        for _case in 0..30 {
            let center = rng.below(v);
            let context = rng.below(v);
            let negs = [rng.below(v), rng.below(v)];
            let grads = sgns_event_gradients(&model, center, context, &negs).unwrap();
            for (t, analytic) in grads {
                let mut fd = vec![0.0; 4];
                for k in 0..4 {
                    let perturb = |sign: f64| {
                        let mut m2 = model.clone();
                        let row = match t {
                            Target::Word(i) => m2.word_vectors.row_mut(i),
                            Target::Doc(i) => m2.context_vectors.row_mut(i),
                        };
                        row[k] += sign * h;
                        sgns_event_loss(&m2, center, context, &negs).unwrap()
                    };
                    fd[k] = (perturb(1.0) - perturb(-1.0)) / (2.0 * h);
                }
                let diff: f64 = fd
                    .iter()
                    .zip(&analytic)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    diff <= 1e-4 * geometry::norm(&analytic) + 1e-8,
                    "target {t:?}: fd {fd:?} vs {analytic:?}"
                );
            }
        }
    }

    #[test]
    fn topic_separation_after_training() {
        let mut wins = 0;
        for seed in [1u64, 2, 3] {
            let raw = synth(seed);
            let mut config = test_config(seed);
            config.dim = 16;
            config.epochs = 5;
            let model = train_sgns(&raw, &config).unwrap();

            let ids_for = |prefix: &str| -> Vec<usize> {
                (0..model.vocab.len())
                    .filter(|&i| model.vocab.token(i).starts_with(prefix))
                    .collect()
            };
            let t0 = ids_for("t0w");
            let t1 = ids_for("t1w");
            let cos = |a: usize, b: usize| {
                geometry::cosine(model.word_vectors.row(a), model.word_vectors.row(b)).unwrap()
            };
            let mut intra = 0.0;
            let mut intra_n = 0;
            for set in [&t0, &t1] {
                for i in 0..set.len() {
                    for j in (i + 1)..set.len() {
                        intra += cos(set[i], set[j]);
                        intra_n += 1;
                    }
                }
            }
            let mut inter = 0.0;
            let mut inter_n = 0;
            for &a in &t0 {
                for &b in &t1 {
                    inter += cos(a, b);
                    inter_n += 1;
                }
            }
            if intra / intra_n as f64 > inter / inter_n as f64 {
                wins += 1;
            }
        }
        assert!(wins >= 2, "topics should separate on a 3-seed majority");
    }

    #[test]
    fn doc_vector_cases_and_oracle() {
        let raw = synth(11);
        let model = train_sgns(&raw, &test_config(11)).unwrap();
        let dim = model.word_vectors.dim();

        // Single word: that word's normalized vector.
        let v = baseline_doc_vector(&model, &[2]).unwrap();
        let mut expect = model.word_vectors.row(2).to_vec();
        geometry::normalize(&mut expect).unwrap();
        for i in 0..dim {
            assert!((v[i] - expect[i]).abs() < 1e-15);
        }

        // Permutation invariance.
        let ids = vec![0, 3, 5, 1, 3];
        let mut rev = ids.clone();
        rev.reverse();
        let a = baseline_doc_vector(&model, &ids).unwrap();
        let b = baseline_doc_vector(&model, &rev).unwrap();
        for i in 0..dim {
            assert!((a[i] - b[i]).abs() <= 1e-12);
        }

        // Naive mean oracle.
        let mut sum = vec![0.0; dim];
        for &t in &ids {
            for i in 0..dim {
                sum[i] += model.word_vectors.row(t)[i];
            }
        }
        let n: f64 = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..dim {
            assert!((a[i] - sum[i] / n).abs() <= 1e-12);
        }

        // All out-of-vocabulary ids: degenerate.
        assert!(matches!(
            baseline_doc_vector(&model, &[9999]),
            Err(Error::DegenerateDocument)
        ));
    }

    #[test]
    fn continue_on_empty_corpus_is_identity() {
        let raw = synth(13);
        let model = train_sgns(&raw, &test_config(13)).unwrap();
        let before = model_bits(&model);
        let empty = RawCorpus {
            documents: Vec::new(),
            split: Split::Update,
        };
        let after = continue_sgns(model, &empty, TokenizeOptions::default(), &test_config(13)).unwrap();
        assert_eq!(model_bits(&after), before);
    }

    #[test]
    fn continue_extends_vocabulary_and_trains() {
        let (train_raw, update_raw, _) = synth_corpus(&SynthParams {
            num_topics: 2,
            docs_per_topic: 20,
            words_per_topic: 8,
            doc_len: 20,
            overlap: 0.1,
            seed: 17,
        })
        .unwrap();
        let model = train_sgns(&train_raw, &test_config(17)).unwrap();
        let v_before = model.vocab.len();
        let after =
            continue_sgns(model, &update_raw, TokenizeOptions::default(), &test_config(17))
                .unwrap();
        assert!(after.vocab.len() > v_before, "domain tokens must be added");
        assert!(after
            .word_vectors
            .as_slice()
            .iter()
            .all(|x| x.is_finite()));
        assert_eq!(after.trained_epochs, 4);
    }

    #[test]
    fn multi_worker_runs_and_stays_finite() {
        let raw = synth(19);
        let mut config = test_config(19);
        config.workers = 3;
        let model = train_sgns(&raw, &config).unwrap();
        assert!(model.word_vectors.as_slice().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn agrees_with_spherical_construction_on_identical_tables() {
        // Copy a spherical word table into a baseline model: the two
        // averaged-document routines must agree on every input.
        let raw = synth(23);
        let mut model = train_sgns(&raw, &test_config(23)).unwrap();
        let spherical = {
            let config = TrainConfig {
                dim: model.word_vectors.dim(),
                epochs: 1,
                min_count: 1,
                subsample: 0.0,
                seed: 23,
                ..TrainConfig::default()
            };
            crate::jose::train(&raw, &config).unwrap()
        };
        for i in 0..model.vocab.len() {
            let token = model.vocab.token(i).to_string();
            let src = spherical.vocab.id(&token).unwrap();
            model
                .word_vectors
                .row_mut(i)
                .copy_from_slice(spherical.embeddings.word(src));
        }
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let ids: Vec<usize> = (0..10).map(|_| rng.below(model.vocab.len())).collect();
            let spherical_ids: Vec<usize> = ids
                .iter()
                .map(|&i| spherical.vocab.id(model.vocab.token(i)).unwrap())
                .collect();
            let a = baseline_doc_vector(&model, &ids).unwrap();
            let b = crate::adapt::construct_doc_vector(&spherical.embeddings, &spherical_ids)
                .unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-15);
            }
        }
    }
}
