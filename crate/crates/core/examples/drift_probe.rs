//! Scratch probe for drift statistics and the shifted-domain protocol.
//! Run: cargo run -p sphere-adapt --example drift_probe --release [tumble|trend]

use sphere_adapt::corpus::{synth_corpus, SynthParams};
use sphere_adapt::eval::{run_experiment, Approach, ExperimentProtocol};
use sphere_adapt::jose::{train, TrainConfig};

fn tumble() {
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
        let t0 = std::time::Instant::now();
        let state = train(&train_raw, &config).unwrap();
        println!("seed {seed} ({:?}):", t0.elapsed());
        for r in &state.drift_log {
            println!(
                "  pair {:?} raw {:.6e} aligned {:.6e} strict_less={}",
                r.epoch_pair,
                r.mean_displacement_raw,
                r.mean_displacement_aligned,
                r.mean_displacement_aligned < r.mean_displacement_raw
            );
        }
    }
}

fn trend() {
    let (train_raw, update_raw, test_raw) = synth_corpus(&SynthParams {
        num_topics: 4,
        docs_per_topic: 120,
        words_per_topic: 30,
        doc_len: 30,
        overlap: 0.2,
        seed: 99,
    })
    .unwrap();
    let seeds = vec![1u64, 2, 3];
    let protocol = ExperimentProtocol {
        dataset: "synth-shift".into(),
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
        seeds: seeds.clone(),
        config: TrainConfig {
            dim: 24,
            epochs: 6,
            min_count: 1,
            subsample: 0.0,
            window: 5,
            seed: 0,
            ..TrainConfig::default()
        },
        update_epochs: 6,
    };
    let t0 = std::time::Instant::now();
    let table = run_experiment(&protocol).unwrap();
    println!("{}", table.render_text());
    println!("elapsed {:?}", t0.elapsed());
    let reference = table.mean(Approach::ReferenceJoint).unwrap();
    for a in [Approach::Naive, Approach::Compression, Approach::Construction] {
        let m = table.mean(a).unwrap();
        println!("{}: f1 {:.4} degradation {:.4}", a.name(), m, reference - m);
    }
    for (i, &seed) in seeds.iter().enumerate() {
        let f = |a: Approach| table.row(a).unwrap().scores[i].1;
        let r = f(Approach::ReferenceJoint);
        println!(
            "seed {seed}: deg naive {:.4} comp {:.4} cons {:.4}",
            r - f(Approach::Naive),
            r - f(Approach::Compression),
            r - f(Approach::Construction)
        );
    }
}

fn main() {
    match std::env::args().nth(1).as_deref() {
        Some("tumble") => tumble(),
        Some("trend") => trend(),
        _ => {
            tumble();
            trend();
        }
    }
}
