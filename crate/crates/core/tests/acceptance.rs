#![allow(clippy::needless_range_loop)]
//! Acceptance suite: one test per criterion, each printing a PASS line
//! (visible with `--nocapture`) and asserting every threshold in code.
//!
//! Criteria 7b (20news subset) and 8 (reuters8) need real corpora that this
//! build environment cannot fetch; those tests run the full protocol when
//! the TSV files exist under `data/` (see the README) and print an
//! explicit SKIP line otherwise.

use std::time::Instant;

use sphere_adapt::adapt::{
    adapt_compression, adapt_construction, adapt_naive, construct_doc_vector, extract_keywords,
    merge_vocab,
};
use sphere_adapt::baseline::{baseline_doc_vector, train_sgns};
use sphere_adapt::corpus::{
    load_labeled_corpus, synth_corpus, RawCorpus, Split, SynthParams, TokenizeOptions,
};
use sphere_adapt::bundle::{load_model, save_model, ModelBundle};
use sphere_adapt::error::Error;
use sphere_adapt::eval::{
    knn_predict, run_experiment, Approach, ExperimentProtocol, ResultsTable,
};
use sphere_adapt::geometry::{
    self, procrustes_rotation, random_unit_vector, DcosMode, EmbeddingSet, Rotation, SquareMat,
    Table,
};
use sphere_adapt::jose::{
    compression_event_gradients, init_embeddings, pair_event_gradients, train, ModelState, Target,
    TrainConfig,
};
use sphere_adapt::rng::Rng;

fn report(criterion: &str, status: &str, elapsed: std::time::Duration) {
    println!("ACCEPTANCE {criterion}: {status} ({elapsed:.2?})");
}

fn synth_triple(topics: usize, docs: usize, seed: u64) -> (RawCorpus, RawCorpus, RawCorpus) {
    synth_corpus(&SynthParams {
        num_topics: topics,
        docs_per_topic: docs,
        words_per_topic: 30,
        doc_len: 30,
        overlap: 0.2,
        seed,
    })
    .unwrap()
}

fn toy_config(dim: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        dim,
        epochs: 3,
        min_count: 1,
        subsample: 0.0,
        window: 4,
        seed,
        ..TrainConfig::default()
    }
}

// ---------------------------------------------------------------------------
// 1. Invariant suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_invariants() {
    let t0 = Instant::now();
    let mut rng = Rng::new(0xC1);
    for &dim in &[4usize, 16, 100] {
        let seed = 100 + dim as u64;
        let (train_raw, update_raw, _) = synth_triple(3, 20, seed);
        let config = toy_config(dim, seed);

        let state = train(&train_raw, &config).unwrap();
        assert!(
            state.embeddings.max_norm_deviation() <= 1e-6,
            "dim {dim}: post-train norm deviation"
        );

        let linkage = extract_keywords(&state, 4).unwrap();
        let (merged, _, encoded) =
            merge_vocab(state, &update_raw, config.tokenizer).unwrap();
        let mut update_config = config.clone();
        update_config.epochs = 2;

        let (s_naive, _) = adapt_naive(merged.clone(), &encoded, &update_config).unwrap();
        assert!(s_naive.embeddings.max_norm_deviation() <= 1e-6, "dim {dim}: naive");
        let (s_comp, _) =
            adapt_compression(merged.clone(), &linkage, &encoded, &update_config).unwrap();
        assert!(s_comp.embeddings.max_norm_deviation() <= 1e-6, "dim {dim}: compression");
        let (s_cons, _) = adapt_construction(merged, &encoded, &update_config).unwrap();
        assert!(s_cons.embeddings.max_norm_deviation() <= 1e-6, "dim {dim}: construction");

        // Tangent projections orthogonal to their base points.
        for _ in 0..200 {
            let u = random_unit_vector(&mut rng, dim);
            let g: Vec<f64> = (0..dim).map(|_| rng.gauss() * 2.0).collect();
            let p = geometry::project_tangent(&u, &g).unwrap();
            assert!(
                geometry::dot(&u, &p).abs() <= 1e-9,
                "dim {dim}: tangent projection not orthogonal"
            );
        }
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 60, "criterion 1 must finish within 1 min");
    report("1 (invariant suite)", "PASS", elapsed);
}

// ---------------------------------------------------------------------------
// 2. Gradient suite
// ---------------------------------------------------------------------------

/// Test-side oracle: total event loss from naive cosine arithmetic.
fn naive_pair_loss(
    emb: &EmbeddingSet,
    center: usize,
    context: usize,
    doc: usize,
    negs: &[usize],
    margin: f64,
) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let num: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        num / (na * nb)
    };
    let mut loss = 0.0;
    for &n in negs {
        loss += (margin - cos(emb.word(center), emb.word(context))
            + cos(emb.word(n), emb.word(context)))
        .max(0.0);
        loss += (margin - cos(emb.word(center), emb.doc(doc)) + cos(emb.word(n), emb.doc(doc)))
            .max(0.0);
    }
    loss
}

fn naive_compression_loss(
    emb: &EmbeddingSet,
    word: usize,
    doc: usize,
    neg: usize,
    alpha: f64,
    margin: f64,
) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let num: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        num / (na * nb)
    };
    alpha
        * (margin - cos(emb.doc(doc), emb.word(word)) + cos(emb.doc(doc), emb.word(neg))).max(0.0)
}

fn random_embedding(rng: &mut Rng, words: usize, docs: usize, dim: usize) -> EmbeddingSet {
    let mut wt = Table::with_capacity(words, dim);
    for _ in 0..words {
        wt.push_row(&random_unit_vector(rng, dim));
    }
    let mut dt = Table::with_capacity(docs, dim);
    for _ in 0..docs {
        dt.push_row(&random_unit_vector(rng, dim));
    }
    EmbeddingSet::new(wt, dt).unwrap()
}

/// Central finite differences of `loss` along an orthonormal tangent basis
/// at the target row, compared against the analytic projected gradient.
/// Returns the worst relative error across basis-assembled vectors.
fn fd_relative_error(
    emb: &EmbeddingSet,
    target: Target,
    analytic: &[f64],
    loss: &dyn Fn(&EmbeddingSet) -> f64,
    h: f64,
) -> f64 {
    let dim = emb.dim();
    let base = match target {
        Target::Word(i) => emb.word(i).to_vec(),
        Target::Doc(i) => emb.doc(i).to_vec(),
    };
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut fd = vec![0.0; dim];
    let mut along = vec![0.0; dim];
    for k in 0..dim {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        let mut xi = geometry::project_tangent(&base, &e).unwrap();
        for b in &basis {
            let p = geometry::dot(&xi, b);
            for i in 0..dim {
                xi[i] -= p * b[i];
            }
        }
        if geometry::norm(&xi) < 1e-8 {
            continue;
        }
        geometry::normalize(&mut xi).unwrap();

        let eval_at = |sign: f64| {
            let mut e2 = emb.clone();
            let row = match target {
                Target::Word(i) => e2.word_mut(i),
                Target::Doc(i) => e2.doc_mut(i),
            };
            let step: Vec<f64> = xi.iter().map(|x| x * h * sign).collect();
            let moved = geometry::retract(row, &step, DcosMode::None).unwrap();
            row.copy_from_slice(&moved);
            loss(&e2)
        };
        let deriv = (eval_at(1.0) - eval_at(-1.0)) / (2.0 * h);
        for i in 0..dim {
            fd[i] += deriv * xi[i];
            along[i] += geometry::dot(analytic, &xi) * xi[i];
        }
        basis.push(xi);
    }
    let diff: f64 = fd
        .iter()
        .zip(&along)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = geometry::norm(&along).max(geometry::norm(&fd));
    if scale <= 1e-7 {
        0.0 // both gradients vanish; FD is pure rounding noise
    } else {
        diff / scale
    }
}

#[test]
fn criterion_2_gradients() {
    let t0 = Instant::now();
    let mut rng = Rng::new(0xC2);
    let dim = 4;
    let h = 1e-5;
    let margin = 0.35;
    let alpha = 0.8;

    let mut pair_cases = 0;
    while pair_cases < 100 {
        let emb = random_embedding(&mut rng, 6, 2, dim);
        let (c, x, d) = (rng.below(6), rng.below(6), rng.below(2));
        let negs = [rng.below(6), rng.below(6)];
        let pos_local = geometry::dot(emb.word(c), emb.word(x));
        let pos_global = geometry::dot(emb.word(c), emb.doc(d));
        let near_hinge = negs.iter().any(|&n| {
            let local = margin - pos_local + geometry::dot(emb.word(n), emb.word(x));
            let global = margin - pos_global + geometry::dot(emb.word(n), emb.doc(d));
            local.abs() < 1e-3 || global.abs() < 1e-3
        });
        if near_hinge {
            continue;
        }
        pair_cases += 1;
        let grads = pair_event_gradients(&emb, c, x, d, &negs, margin).unwrap();
        for (t, g) in grads {
            let loss =
                move |e: &EmbeddingSet| naive_pair_loss(e, c, x, d, &negs, margin);
            let rel = fd_relative_error(&emb, t, &g, &loss, h);
            assert!(rel <= 1e-4, "pair case {pair_cases} target {t:?}: rel err {rel}");
        }
    }

    let mut comp_cases = 0;
    while comp_cases < 100 {
        let emb = random_embedding(&mut rng, 5, 3, dim);
        let (u, d, n) = (rng.below(5), rng.below(3), rng.below(5));
        let m = margin - geometry::dot(emb.doc(d), emb.word(u))
            + geometry::dot(emb.doc(d), emb.word(n));
        if m.abs() < 1e-3 {
            continue;
        }
        comp_cases += 1;
        let grads = compression_event_gradients(&emb, u, d, n, alpha, margin).unwrap();
        for (t, g) in grads {
            let loss = move |e: &EmbeddingSet| naive_compression_loss(e, u, d, n, alpha, margin);
            let rel = fd_relative_error(&emb, t, &g, &loss, h);
            assert!(rel <= 1e-4, "compression case {comp_cases} target {t:?}: rel err {rel}");
        }
    }

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 60, "criterion 2 must finish within 1 min");
    report("2 (gradient suite)", "PASS", elapsed);
}

// ---------------------------------------------------------------------------
// 3. Procrustes suite
// ---------------------------------------------------------------------------

fn random_givens(rng: &mut Rng, dim: usize, sweeps: usize) -> Rotation {
    let mut m = SquareMat::identity(dim);
    for _ in 0..sweeps {
        let i = rng.below(dim);
        let mut j = rng.below(dim);
        while j == i {
            j = rng.below(dim);
        }
        let theta = (rng.next_f64() - 0.5) * 2.0 * std::f64::consts::PI;
        let (s, c) = theta.sin_cos();
        for r in 0..dim {
            let mi = m.at(r, i);
            let mj = m.at(r, j);
            *m.at_mut(r, i) = c * mi - s * mj;
            *m.at_mut(r, j) = s * mi + c * mj;
        }
    }
    Rotation::from_matrix(m).unwrap()
}

fn frob_residual(x: &Table, y: &Table, rot: &Rotation) -> f64 {
    let dim = x.dim();
    let mut tmp = vec![0.0; dim];
    let mut acc = 0.0;
    for (xr, yr) in x.iter_rows().zip(y.iter_rows()) {
        rot.apply_to_row(xr, &mut tmp);
        for i in 0..dim {
            let d = tmp[i] - yr[i];
            acc += d * d;
        }
    }
    acc.sqrt()
}

#[test]
fn criterion_3_procrustes() {
    let t0 = Instant::now();
    let mut rng = Rng::new(0xC3);
    let dim = 100;
    let rows = 500;

    for case in 0..50 {
        let mut y = Table::with_capacity(rows, dim);
        for _ in 0..rows {
            y.push_row(&random_unit_vector(&mut rng, dim));
        }
        let r_true = random_givens(&mut rng, dim, 400);
        let mut x = Table::with_capacity(rows, dim);
        let mut tmp = vec![0.0; dim];
        for row in y.iter_rows() {
            r_true.apply_to_row(row, &mut tmp);
            x.push_row(&tmp);
        }

        let r = procrustes_rotation(&x, &y).unwrap();
        let resid = frob_residual(&x, &y, &r);
        assert!(resid <= 1e-8, "case {case}: synthetic-rotation residual {resid}");

        // Minimizer property against random orthogonal competitors.
        for q_idx in 0..100 {
            let q = random_givens(&mut rng, dim, 150);
            let rq = frob_residual(&x, &y, &q);
            assert!(
                resid <= rq,
                "case {case}: competitor {q_idx} beat the minimizer ({rq} < {resid})"
            );
        }

        // Identity case, checked on a fresh table each tenth case.
        if case % 10 == 0 {
            let r_id = procrustes_rotation(&y, &y).unwrap();
            for i in 0..dim {
                for j in 0..dim {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (r_id.matrix().at(i, j) - expect).abs() <= 1e-8,
                        "identity case entry ({i},{j})"
                    );
                }
            }
        }
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 120, "criterion 3 must finish within 2 min");
    report("3 (procrustes suite)", "PASS", elapsed);
}

// ---------------------------------------------------------------------------
// 4. Tumbling signature
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_tumbling_signature() {
    let t0 = Instant::now();
    let mut seed_wins = 0;
    for seed in [1u64, 2, 3] {
        let (train_raw, _, _) = synth_corpus(&SynthParams {
            num_topics: 4,
            docs_per_topic: 500,
            words_per_topic: 50,
            doc_len: 30,
            overlap: 0.2,
            seed,
        })
        .unwrap();
        let config = TrainConfig {
            dim: 32,
            epochs: 10,
            min_count: 1,
            subsample: 0.0,
            window: 5,
            seed,
            reference_epoch: 5,
            ..TrainConfig::default()
        };
        let state = train(&train_raw, &config).unwrap();
        assert_eq!(state.drift_log.len(), 9);
        let last3 = &state.drift_log[6..];
        let strict = last3
            .iter()
            .all(|r| r.mean_displacement_aligned < r.mean_displacement_raw);
        if strict {
            seed_wins += 1;
        }
    }
    assert!(
        seed_wins >= 2,
        "tumbling signature must hold on a 3-seed majority, got {seed_wins}/3"
    );
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 300, "criterion 4 must finish within 5 min");
    report("4 (tumbling signature)", "PASS", elapsed);
}

// ---------------------------------------------------------------------------
// 5. Oracle equivalences
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_oracle_equivalences() {
    let t0 = Instant::now();
    let mut rng = Rng::new(0xC5);

    // knn_predict vs exhaustive max-extraction scan, all tested k.
    let dim = 8;
    let labels_pool = ["a", "b", "c", "d"];
    let train_vecs: Vec<Vec<f64>> = (0..200).map(|_| random_unit_vector(&mut rng, dim)).collect();
    let labels: Vec<String> = (0..200)
        .map(|_| labels_pool[rng.below(4)].to_string())
        .collect();
    for k in [1usize, 2, 5, 7, 33, 200] {
        for _ in 0..50 {
            let q = random_unit_vector(&mut rng, dim);
            // Oracle: repeated scan-extract of the maximum.
            let mut sims: Vec<(f64, usize)> = train_vecs
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let dot: f64 = v.iter().zip(&q).map(|(a, b)| a * b).sum();
                    (dot.clamp(-1.0, 1.0), i)
                })
                .collect();
            let mut top = Vec::new();
            for _ in 0..k.min(sims.len()) {
                let mut best = 0;
                for j in 1..sims.len() {
                    if sims[j].0 > sims[best].0
                        || (sims[j].0 == sims[best].0 && sims[j].1 < sims[best].1)
                    {
                        best = j;
                    }
                }
                top.push(sims.remove(best));
            }
            let mut votes: Vec<(String, usize, f64)> = Vec::new();
            for (s, i) in top {
                match votes.iter_mut().find(|(l, _, _)| *l == labels[i]) {
                    Some(v) => {
                        v.1 += 1;
                        v.2 += s;
                    }
                    None => votes.push((labels[i].clone(), 1, s)),
                }
            }
            votes.sort_by(|a, b| {
                b.1.cmp(&a.1)
                    .then_with(|| b.2.total_cmp(&a.2))
                    .then_with(|| a.0.cmp(&b.0))
            });
            let oracle = votes[0].0.clone();
            assert_eq!(
                knn_predict(&train_vecs, &labels, &q, k).unwrap(),
                oracle,
                "k = {k}"
            );
        }
    }

    // extract_keywords vs full sort.
    let (train_raw, _, _) = synth_triple(3, 15, 51);
    let state = train(&train_raw, &toy_config(16, 51)).unwrap();
    let n = 5;
    let linkage = extract_keywords(&state, n).unwrap();
    for d in 0..state.embeddings.num_docs() {
        let mut all: Vec<(f64, usize)> = (0..state.vocab.len())
            .map(|w| (geometry::dot(state.embeddings.word(w), state.embeddings.doc(d)), w))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let expect: Vec<usize> = all[..n].iter().map(|&(_, w)| w).collect();
        assert_eq!(linkage.keywords_for_doc(d), expect.as_slice());
    }

    // construct_doc_vector / baseline_doc_vector vs naive mean, <= 1e-12.
    let ids: Vec<usize> = (0..25).map(|_| rng.below(state.vocab.len())).collect();
    let got = construct_doc_vector(&state.embeddings, &ids).unwrap();
    let mut sum = vec![0.0; state.embeddings.dim()];
    for &t in &ids {
        for i in 0..sum.len() {
            sum[i] += state.embeddings.word(t)[i];
        }
    }
    let nrm: f64 = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    for i in 0..sum.len() {
        assert!((got[i] - sum[i] / nrm).abs() <= 1e-12);
    }

    let bl_config = TrainConfig {
        dim: 16,
        epochs: 2,
        min_count: 1,
        subsample: 0.0,
        seed: 51,
        ..TrainConfig::baseline_defaults()
    };
    let bl = train_sgns(&train_raw, &bl_config).unwrap();
    let ids: Vec<usize> = (0..25).map(|_| rng.below(bl.vocab.len())).collect();
    let got = baseline_doc_vector(&bl, &ids).unwrap();
    let mut sum = [0.0; 16];
    for &t in &ids {
        for i in 0..16 {
            sum[i] += bl.word_vectors.row(t)[i];
        }
    }
    let nrm: f64 = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    for i in 0..16 {
        assert!((got[i] - sum[i] / nrm).abs() <= 1e-12);
    }

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 60, "criterion 5 must finish within 1 min");
    report("5 (oracle equivalences)", "PASS", elapsed);
}

// ---------------------------------------------------------------------------
// 6. alpha = 0 reduction
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_alpha_zero_reduction() {
    let t0 = Instant::now();
    let seed = 0xC6;
    let (train_raw, update_raw, _) = synth_triple(3, 25, seed);
    let config = toy_config(16, seed);

    let run = |compression: bool| -> ModelState {
        let state = train(&train_raw, &config).unwrap();
        let linkage = extract_keywords(&state, 5).unwrap();
        let (merged, _, encoded) =
            merge_vocab(state, &update_raw, config.tokenizer).unwrap();
        let update_config = TrainConfig {
            alpha: 0.0,
            epochs: 2,
            ..config.clone()
        };
        if compression {
            adapt_compression(merged, &linkage, &encoded, &update_config)
                .unwrap()
                .0
        } else {
            adapt_naive(merged, &encoded, &update_config).unwrap().0
        }
    };
    let a = run(true);
    let b = run(false);
    let bits = |e: &EmbeddingSet| -> Vec<u64> {
        e.words()
            .as_slice()
            .iter()
            .chain(e.docs().as_slice())
            .map(|x| x.to_bits())
            .collect()
    };
    assert_eq!(bits(&a.embeddings), bits(&b.embeddings), "alpha=0 must equal naive bit-for-bit");
    report("6 (alpha=0 reduction)", "PASS", t0.elapsed());
}

// ---------------------------------------------------------------------------
// 7. Desk-scale Table-1 trend
// ---------------------------------------------------------------------------

struct Degradations {
    per_seed: Vec<(f64, f64, f64)>, // (naive, compression, construction)
}

fn degradations(table: &ResultsTable, seeds: &[u64]) -> Degradations {
    let mut per_seed = Vec::new();
    for i in 0..seeds.len() {
        let score = |a: Approach| table.row(a).unwrap().scores[i].1;
        let r = score(Approach::ReferenceJoint);
        per_seed.push((
            r - score(Approach::Naive),
            r - score(Approach::Compression),
            r - score(Approach::Construction),
        ));
    }
    Degradations { per_seed }
}

fn majority(flags: impl Iterator<Item = bool>) -> bool {
    let v: Vec<bool> = flags.collect();
    v.iter().filter(|&&x| x).count() * 2 > v.len()
}

fn trend_protocol(train_raw: RawCorpus, update_raw: RawCorpus, test_raw: RawCorpus, dataset: &str, config: TrainConfig, update_epochs: usize) -> ExperimentProtocol {
    ExperimentProtocol {
        dataset: dataset.into(),
        train: train_raw,
        update: update_raw,
        test: test_raw,
        approaches: vec![
            Approach::ReferenceJoint,
            Approach::Naive,
            Approach::Compression,
            Approach::Construction,
        ],
        k: 5,
        seeds: vec![1, 2, 3],
        config,
        update_epochs,
    }
}

#[test]
fn criterion_7_trend_synthetic() {
    let t0 = Instant::now();
    let (train_raw, update_raw, test_raw) = synth_corpus(&SynthParams {
        num_topics: 4,
        docs_per_topic: 120,
        words_per_topic: 30,
        doc_len: 30,
        overlap: 0.2,
        seed: 99,
    })
    .unwrap();
    let config = TrainConfig {
        dim: 24,
        epochs: 6,
        min_count: 1,
        subsample: 0.0,
        window: 5,
        ..TrainConfig::default()
    };
    let protocol = trend_protocol(train_raw, update_raw, test_raw, "synth-shift", config, 6);
    let table = run_experiment(&protocol).unwrap();
    println!("{}", table.render_text());
    let deg = degradations(&table, &protocol.seeds);

    assert!(
        majority(deg.per_seed.iter().map(|d| d.2 <= d.0)),
        "construction degradation must not exceed naive (3-seed majority): {:?}",
        deg.per_seed
    );
    assert!(
        majority(deg.per_seed.iter().map(|d| d.1 <= d.0)),
        "compression degradation must not exceed naive (3-seed majority): {:?}",
        deg.per_seed
    );
    assert!(
        majority(deg.per_seed.iter().map(|d| d.2 <= d.0 / 2.0 + 1e-12)),
        "construction degradation must be at most half of naive (3-seed majority): {:?}",
        deg.per_seed
    );

    // Naive adaptation also scores below the *pre-adaptation* generic model
    // on the generic-topic test docs (its frozen document vectors fall out
    // of alignment as the word space keeps moving).
    let mut drops = Vec::new();
    for (i, &seed) in protocol.seeds.iter().enumerate() {
        let mut config = protocol.config.clone();
        config.seed = seed;
        let generic = train(&protocol.train, &config).unwrap();
        let train_labels: Vec<String> = protocol
            .train
            .documents
            .iter()
            .map(|d| d.label.clone().unwrap())
            .collect();
        let train_vecs: Vec<Vec<f64>> = (0..generic.embeddings.num_docs())
            .map(|d| generic.embeddings.doc(d).to_vec())
            .collect();
        let mut y_true = Vec::new();
        let mut y_pred = Vec::new();
        for d in &protocol.test.documents {
            let ids: Vec<usize> = d.tokens.iter().filter_map(|t| generic.vocab.id(t)).collect();
            if let Ok(q) = construct_doc_vector(&generic.embeddings, &ids) {
                y_true.push(d.label.clone().unwrap());
                y_pred.push(knn_predict(&train_vecs, &train_labels, &q, protocol.k).unwrap());
            }
        }
        let pre = sphere_adapt::eval::macro_f1(&y_true, &y_pred).unwrap();
        let naive = table.row(Approach::Naive).unwrap().scores[i].1;
        drops.push(naive < pre);
        println!("seed {seed}: pre-adaptation {pre:.4} vs naive {naive:.4}");
    }
    assert!(
        majority(drops.into_iter()),
        "naive adaptation must drop below the pre-adaptation score (3-seed majority)"
    );

    let elapsed = t0.elapsed();
    report("7a (trend, synthetic shifted-domain)", "PASS", elapsed);
}

fn data_dir() -> std::path::PathBuf {
    std::env::var("SPHERE_ADAPT_DATA")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|_| {
            std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
                .join("../../data")
                .to_path_buf()
        })
}

/// Per-label deterministic split into train/update/test fractions.
fn split_corpus(raw: &RawCorpus, seed: u64) -> (RawCorpus, RawCorpus, RawCorpus) {
    use std::collections::HashMap;
    let mut by_label: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, d) in raw.documents.iter().enumerate() {
        by_label
            .entry(d.label.as_deref().unwrap_or(""))
            .or_default()
            .push(i);
    }
    let mut labels: Vec<&str> = by_label.keys().copied().collect();
    labels.sort();
    let mut rng = Rng::derive(seed, &[0xDA7A]);
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for l in labels {
        let mut idx = by_label[l].clone();
        rng.shuffle(&mut idx);
        let n = idx.len();
        let cut1 = n * 2 / 5;
        let cut2 = n * 7 / 10;
        parts[0].extend(&idx[..cut1]);
        parts[1].extend(&idx[cut1..cut2]);
        parts[2].extend(&idx[cut2..]);
    }
    let build = |ids: &[usize], split: Split| RawCorpus {
        documents: ids
            .iter()
            .enumerate()
            .map(|(new_id, &i)| sphere_adapt::corpus::RawDocument {
                doc_id: new_id,
                tokens: raw.documents[i].tokens.clone(),
                label: raw.documents[i].label.clone(),
            })
            .collect(),
        split,
    };
    (
        build(&parts[0], Split::Train),
        build(&parts[1], Split::Update),
        build(&parts[2], Split::Test),
    )
}

#[test]
fn criterion_7_trend_20news_subset() {
    let t0 = Instant::now();
    let path = data_dir().join("20news4.tsv");
    if !path.exists() {
        report(
            "7b (trend, 20news subset)",
            "SKIP - data/20news4.tsv not present in this environment (no network); \
             run scripts/convert_20news.py to produce it",
            t0.elapsed(),
        );
        return;
    }
    let raw = load_labeled_corpus(&path, TokenizeOptions::default(), Split::Train).unwrap();
    let (train_raw, update_raw, test_raw) = split_corpus(&raw, 20);
    let config = TrainConfig {
        dim: 64,
        epochs: 6,
        min_count: 5,
        window: 5,
        ..TrainConfig::default()
    };
    let protocol = trend_protocol(train_raw, update_raw, test_raw, "20news4", config, 6);
    let table = run_experiment(&protocol).unwrap();
    println!("{}", table.render_text());
    let deg = degradations(&table, &protocol.seeds);
    assert!(
        majority(deg.per_seed.iter().map(|d| d.2 <= d.0)),
        "construction <= naive degradation (3-seed majority): {:?}",
        deg.per_seed
    );
    assert!(
        majority(deg.per_seed.iter().map(|d| d.1 <= d.0)),
        "compression <= naive degradation (3-seed majority): {:?}",
        deg.per_seed
    );
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 900, "criterion 7 must finish within 15 min");
    report("7b (trend, 20news subset)", "PASS", elapsed);
}

// ---------------------------------------------------------------------------
// 8. Small real-corpus reproduction (best-effort, non-blocking)
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_reuters8_reproduction() {
    let t0 = Instant::now();
    let train_path = data_dir().join("reuters8-train.tsv");
    let test_path = data_dir().join("reuters8-test.tsv");
    if !train_path.exists() || !test_path.exists() {
        report(
            "8 (reuters8 reproduction)",
            "SKIP - data/reuters8-{train,test}.tsv not present in this environment \
             (no network); run scripts/convert_reuters8.py to produce them",
            t0.elapsed(),
        );
        return;
    }
    let opts = TokenizeOptions::default();
    let full_train = load_labeled_corpus(&train_path, opts, Split::Train).unwrap();
    let test_raw = load_labeled_corpus(&test_path, opts, Split::Test).unwrap();
    // Carve the update split out of the canonical training set per label.
    let (train_raw, update_raw, rest) = split_corpus(&full_train, 8);
    // Merge the residual third back into train so the split is 70/30.
    let train_raw = train_raw.concat(&rest, Split::Train);

    let config = TrainConfig::default(); // the defaults are the contract here
    let protocol = ExperimentProtocol {
        dataset: "reuters8".into(),
        train: train_raw,
        update: update_raw,
        test: test_raw,
        approaches: vec![
            Approach::ReferenceJoint,
            Approach::Naive,
            Approach::Construction,
        ],
        k: 5,
        seeds: vec![1, 2, 3],
        config,
        update_epochs: 0,
    };
    let table = run_experiment(&protocol).unwrap();
    println!("{}", table.render_text());

    let joint = table.mean(Approach::ReferenceJoint).unwrap();
    assert!(
        (joint - 0.88).abs() <= 0.08,
        "jointly trained macro-F1 {joint} outside 0.88 +- 0.08"
    );
    let naive = table.mean(Approach::Naive).unwrap();
    let construction = table.mean(Approach::Construction).unwrap();
    assert!(
        naive < construction,
        "naive retraining ({naive}) must score strictly below construction ({construction})"
    );
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 1800, "criterion 8 must finish within 30 min");
    report("8 (reuters8 reproduction)", "PASS", elapsed);
}

// ---------------------------------------------------------------------------
// 9. Persistence
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_persistence() {
    let t0 = Instant::now();

    // 10k-word model: byte-identical round trip.
    let vocab = sphere_adapt::corpus::Vocabulary::from_counts(
        (0..10_000u64).map(|i| (format!("w{i:05}"), 10_000 - i)),
        1,
    )
    .unwrap();
    let embeddings = init_embeddings(&vocab, 200, 16, 0xC9);
    let state = ModelState {
        vocab,
        embeddings,
        config: TrainConfig {
            dim: 16,
            ..TrainConfig::default()
        },
        epoch_snapshots: Vec::new(),
        drift_log: Vec::new(),
        epoch_stats: Vec::new(),
        trained_epochs: 1,
    };
    let tmp = tempfile::tempdir().unwrap();
    let d1 = tmp.path().join("m1");
    let d2 = tmp.path().join("m2");
    save_model(&ModelBundle::Spherical(state), &d1).unwrap();
    let loaded = load_model(&d1).unwrap();
    save_model(&loaded, &d2).unwrap();
    for f in ["words.vec", "docs.vec", "vocab.tsv", "meta.txt", "drift.log"] {
        let a = std::fs::read(d1.join(f)).unwrap();
        let b = std::fs::read(d2.join(f)).unwrap();
        assert_eq!(a, b, "{f} must round-trip byte-identically");
    }

    // Corrupt-norm detection at 1e-4: scale one row by (1 + 2e-4).
    let words_path = d1.join("words.vec");
    let text = std::fs::read_to_string(&words_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[1].split(' ').map(String::from).collect();
    for f in fields.iter_mut().skip(1) {
        let v: f64 = f.parse().unwrap();
        *f = format!("{:.16e}", v * (1.0 + 2e-4));
    }
    lines[1] = fields.join(" ");
    std::fs::write(&words_path, lines.join("\n") + "\n").unwrap();
    match load_model(&d1) {
        Err(Error::CorruptBundle(msg)) => {
            assert!(msg.contains("norm"), "diagnostic should mention the norm: {msg}");
        }
        other => panic!("expected corrupt-bundle error, got {:?}", other.err()),
    }

    report("9 (persistence)", "PASS", t0.elapsed());
}
