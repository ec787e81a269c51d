//! Command-line interface: spherical embedding training, domain adaptation,
//! drift diagnostics, counter-rotation, and evaluation. Every subcommand is
//! a thin shell over one library operation.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sphere_adapt::adapt::{adapt_compression, adapt_construction, adapt_naive, extract_keywords, merge_vocab};
use sphere_adapt::baseline::train_sgns;
use sphere_adapt::bundle::{load_model, parse_kv_text, save_model, save_rotation, ModelBundle};
use sphere_adapt::corpus::{
    load_labeled_corpus, synth_corpus, write_labeled_corpus, Split, SynthParams, TokenizeOptions,
    Vocabulary,
};
use sphere_adapt::eval::{run_experiment, Approach, ExperimentProtocol};
use sphere_adapt::geometry::{apply_rotation, epoch_drift, procrustes_rotation_pairs, Table};
use sphere_adapt::jose::{train, TrainConfig};

const SEED_ENV: &str = "SPHERE_ADAPT_SEED";

#[derive(Parser)]
#[command(
    name = "sphere-adapt",
    version,
    about = "Spherical text embeddings with update training and drift control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a labeled TSV corpus and write its vocabulary dump
    Preprocess(PreprocessArgs),
    /// Generate a synthetic shifted-domain corpus triple
    Synth(SynthArgs),
    /// Train a joint spherical word/document model
    Train(TrainArgs),
    /// Train the skip-gram (Word2Vec) baseline
    TrainBaseline(TrainArgs),
    /// Continue training a model on an update corpus
    Adapt(AdaptArgs),
    /// Counter-rotate a bundle onto a reference bundle
    Align(AlignArgs),
    /// Report embedding drift (stored log, or against a reference bundle)
    Diagnose(DiagnoseArgs),
    /// Build the keyword linkage of a trained model
    Keywords(KeywordsArgs),
    /// Run a full experiment protocol and report macro-F1 scores
    Evaluate(EvaluateArgs),
}

/// Hyperparameter flags shared by training-like commands. Precedence:
/// defaults < --config file < command-line flags; the seed additionally
/// falls back to $SPHERE_ADAPT_SEED.
#[derive(Args, Clone, Default)]
struct ConfigFlags {
    /// Flat `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    keywords_n: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Retraction adjustment mode (only `none` exists)
    #[arg(long)]
    dcos_mode: Option<String>,
    #[arg(long)]
    reference_epoch: Option<usize>,
    #[arg(long)]
    align_each_epoch: Option<bool>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    max_links: Option<usize>,
    #[arg(long)]
    keyword_refresh: Option<bool>,
    #[arg(long)]
    keep_snapshots: Option<bool>,
    #[arg(long)]
    snapshot_stride: Option<usize>,
    #[arg(long)]
    lowercase: Option<bool>,
    #[arg(long)]
    lemmatize: Option<bool>,
}

fn apply_config_pair(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| anyhow!("bad value for `{key}`: {v}"))
    }
    match key {
        "dim" => config.dim = p(key, value)?,
        "margin" => config.margin = p(key, value)?,
        "lr" => config.lr = p(key, value)?,
        "lr_min" => config.lr_min = p(key, value)?,
        "alpha" => config.alpha = p(key, value)?,
        "keywords_n" => config.keywords_n = p(key, value)?,
        "window" => config.window = p(key, value)?,
        "negatives" => config.negatives = p(key, value)?,
        "epochs" => config.epochs = p(key, value)?,
        "seed" => config.seed = p(key, value)?,
        "dcos_mode" => config.dcos_mode = value.parse()?,
        "reference_epoch" => config.reference_epoch = p(key, value)?,
        "align_each_epoch" => config.align_each_epoch = p(key, value)?,
        "workers" => config.workers = p(key, value)?,
        "min_count" => config.min_count = p(key, value)?,
        "subsample" => config.subsample = p(key, value)?,
        "max_links" => config.max_links = p(key, value)?,
        "keyword_refresh" => config.keyword_refresh = p(key, value)?,
        "keep_snapshots" => config.keep_snapshots = p(key, value)?,
        "snapshot_stride" => config.snapshot_stride = p(key, value)?,
        "lowercase" => config.tokenizer.lowercase = p(key, value)?,
        "lemmatize" => config.tokenizer.lemmatize = p(key, value)?,
        other => bail!("unknown config key `{other}`"),
    }
    Ok(())
}

impl ConfigFlags {
    fn build(&self, mut config: TrainConfig) -> Result<TrainConfig> {
        let mut seed_set = false;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            for (k, v) in parse_kv_text(&text) {
                if k == "seed" {
                    seed_set = true;
                }
                apply_config_pair(&mut config, &k, &v)
                    .with_context(|| format!("{}", path.display()))?;
            }
        }
        macro_rules! over {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    config.$field = v;
                }
            };
        }
        over!(dim);
        over!(margin);
        over!(lr);
        over!(lr_min);
        over!(alpha);
        over!(keywords_n);
        over!(window);
        over!(negatives);
        over!(epochs);
        over!(reference_epoch);
        over!(align_each_epoch);
        over!(workers);
        over!(min_count);
        over!(subsample);
        over!(max_links);
        over!(keyword_refresh);
        over!(keep_snapshots);
        over!(snapshot_stride);
        if let Some(m) = &self.dcos_mode {
            config.dcos_mode = m.parse()?;
        }
        if let Some(v) = self.lowercase {
            config.tokenizer.lowercase = v;
        }
        if let Some(v) = self.lemmatize {
            config.tokenizer.lemmatize = v;
        }
        if let Some(s) = self.seed {
            config.seed = s;
            seed_set = true;
        }
        if !seed_set {
            if let Ok(s) = std::env::var(SEED_ENV) {
                config.seed = s
                    .parse()
                    .with_context(|| format!("bad {SEED_ENV} value: {s}"))?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct PreprocessArgs {
    /// Labeled corpus, one `label<TAB>text` document per line
    #[arg(long)]
    corpus: PathBuf,
    /// Output vocabulary dump (`token<TAB>count`, descending count)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    #[arg(long, default_value_t = true)]
    lowercase: bool,
    #[arg(long, default_value_t = false)]
    lemmatize: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for train.tsv, update.tsv, test.tsv
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    topics: usize,
    #[arg(long, default_value_t = 100)]
    docs_per_topic: usize,
    #[arg(long, default_value_t = 30)]
    words_per_topic: usize,
    #[arg(long, default_value_t = 30)]
    doc_len: usize,
    #[arg(long, default_value_t = 0.2)]
    overlap: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output bundle directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct AdaptArgs {
    /// Trained spherical model bundle
    #[arg(long)]
    model: PathBuf,
    /// Update (domain) corpus TSV
    #[arg(long)]
    update: PathBuf,
    #[arg(long, value_parser = ["naive", "compression", "construction"])]
    strategy: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write the adaptation stats report to this file
    #[arg(long)]
    stats: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct AlignArgs {
    /// Bundle to rotate
    #[arg(long)]
    model: PathBuf,
    /// Reference bundle the model is rotated onto
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also dump the rotation matrix to this file
    #[arg(long)]
    rotation: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    model: PathBuf,
    /// Compare against this bundle instead of printing the stored log
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Write the report here as well as to stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KeywordsArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output TSV `doc_id<TAB>w1,w2,...`
    #[arg(long)]
    out: PathBuf,
    /// Keywords per document (defaults to the bundle's keywords_n)
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Protocol file (flat `key = value`; see README)
    #[arg(long)]
    protocol: PathBuf,
    /// Write per-seed scores as CSV here (overrides the protocol file)
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let opts = TokenizeOptions {
        lowercase: args.lowercase,
        lemmatize: args.lemmatize,
    };
    let raw = load_labeled_corpus(&args.corpus, opts, Split::Train)?;
    let vocab = Vocabulary::build(raw.token_streams(), args.min_count)?;
    std::fs::write(&args.out, vocab.dump_tsv())
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "documents: {}  vocabulary: {}  tokens: {}",
        raw.documents.len(),
        vocab.len(),
        vocab.total_tokens()
    );
    Ok(())
}

fn resolve_seed(seed: Option<u64>) -> Result<u64> {
    match seed {
        Some(s) => Ok(s),
        None => match std::env::var(SEED_ENV) {
            Ok(s) => s.parse().with_context(|| format!("bad {SEED_ENV} value: {s}")),
            Err(_) => Ok(1),
        },
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let params = SynthParams {
        num_topics: args.topics,
        docs_per_topic: args.docs_per_topic,
        words_per_topic: args.words_per_topic,
        doc_len: args.doc_len,
        overlap: args.overlap,
        seed: resolve_seed(args.seed)?,
    };
    let (train_c, update_c, test_c) = synth_corpus(&params)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_labeled_corpus(args.out.join("train.tsv"), &train_c)?;
    write_labeled_corpus(args.out.join("update.tsv"), &update_c)?;
    write_labeled_corpus(args.out.join("test.tsv"), &test_c)?;
    println!(
        "wrote {} train / {} update / {} test documents to {}",
        train_c.documents.len(),
        update_c.documents.len(),
        test_c.documents.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = args.flags.build(TrainConfig::default())?;
    let raw = load_labeled_corpus(&args.corpus, config.tokenizer, Split::Train)?;
    let state = train(&raw, &config)?;
    if let Some(last) = state.drift_log.last() {
        println!("final drift: {}", last.log_line());
    }
    println!(
        "trained {} epochs, vocab {}, docs {}",
        state.trained_epochs,
        state.vocab.len(),
        state.embeddings.num_docs()
    );
    save_model(&ModelBundle::Spherical(state), &args.out)?;
    println!("bundle written to {}", args.out.display());
    Ok(())
}

fn cmd_train_baseline(args: TrainArgs) -> Result<()> {
    let config = args.flags.build(TrainConfig::baseline_defaults())?;
    let raw = load_labeled_corpus(&args.corpus, config.tokenizer, Split::Train)?;
    let model = train_sgns(&raw, &config)?;
    println!(
        "trained {} epochs, vocab {}",
        model.trained_epochs,
        model.vocab.len()
    );
    save_model(&ModelBundle::Baseline(model), &args.out)?;
    println!("bundle written to {}", args.out.display());
    Ok(())
}

fn cmd_adapt(args: AdaptArgs) -> Result<()> {
    let state = load_model(&args.model)?.into_spherical()?;
    let config = args.flags.build(state.config.clone())?;
    let raw = load_labeled_corpus(&args.update, config.tokenizer, Split::Update)?;

    let linkage = if args.strategy == "compression" {
        Some(extract_keywords(&state, config.keywords_n)?)
    } else {
        None
    };
    let (merged, _merge, encoded) = merge_vocab(state, &raw, config.tokenizer)?;
    let (adapted, stats) = match args.strategy.as_str() {
        "naive" => adapt_naive(merged, &encoded, &config)?,
        "compression" => adapt_compression(merged, &linkage.unwrap(), &encoded, &config)?,
        "construction" => adapt_construction(merged, &encoded, &config)?,
        other => bail!("unknown strategy `{other}`"),
    };
    print!("{stats}");
    if let Some(path) = args.stats {
        std::fs::write(&path, stats.to_string())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    save_model(&ModelBundle::Spherical(adapted), &args.out)?;
    println!("adapted bundle written to {}", args.out.display());
    Ok(())
}

/// Paired rows shared by two spherical bundles: word rows joined on token,
/// doc rows joined on id.
fn paired_tables(
    a: &sphere_adapt::jose::ModelState,
    b: &sphere_adapt::jose::ModelState,
) -> Result<(Table, Table)> {
    let dim = a.embeddings.dim();
    if dim != b.embeddings.dim() {
        bail!("bundle dims differ: {} vs {}", dim, b.embeddings.dim());
    }
    let mut xa = Table::with_capacity(0, dim);
    let mut xb = Table::with_capacity(0, dim);
    for (id_a, token) in a.vocab.tokens().iter().enumerate() {
        if let Some(id_b) = b.vocab.id(token) {
            xa.push_row(a.embeddings.word(id_a));
            xb.push_row(b.embeddings.word(id_b));
        }
    }
    let shared_docs = a.embeddings.num_docs().min(b.embeddings.num_docs());
    for i in 0..shared_docs {
        xa.push_row(a.embeddings.doc(i));
        xb.push_row(b.embeddings.doc(i));
    }
    if xa.rows() == 0 {
        bail!("the bundles share no word tokens or document ids");
    }
    Ok((xa, xb))
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    let mut model = load_model(&args.model)?.into_spherical()?;
    let reference = load_model(&args.reference)?.into_spherical()?;
    let (xa, xb) = paired_tables(&model, &reference)?;
    let rot = procrustes_rotation_pairs(xa.iter_rows().zip(xb.iter_rows()), xa.dim(), false)?;
    apply_rotation(&mut model.embeddings, &rot)?;
    println!(
        "aligned {} shared rows; rotation orthogonality error {:.3e}",
        xa.rows(),
        rot.orthogonality_error()
    );
    if let Some(path) = &args.rotation {
        save_rotation(path, &rot)?;
        println!("rotation dumped to {}", path.display());
    }
    save_model(&ModelBundle::Spherical(model), &args.out)?;
    println!("aligned bundle written to {}", args.out.display());
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let model = load_model(&args.model)?.into_spherical()?;
    let mut lines = String::new();
    match args.reference {
        Some(ref_path) => {
            let reference = load_model(&ref_path)?.into_spherical()?;
            // Bundles may differ in vocabulary and document count (an
            // adapted model grows both); drift is measured over the rows
            // they share.
            let (xa, xb) = paired_tables(&model, &reference)?;
            let dim = xa.dim();
            let empty = || Table::with_capacity(0, dim);
            let curr = sphere_adapt::geometry::EmbeddingSet::new(xa, empty())?;
            let prev = sphere_adapt::geometry::EmbeddingSet::new(xb, empty())?;
            let report = epoch_drift(
                &prev,
                &curr,
                (reference.trained_epochs, model.trained_epochs),
                true,
            )?;
            lines.push_str(&report.log_line());
            lines.push('\n');
        }
        None => {
            for rep in &model.drift_log {
                lines.push_str(&rep.log_line());
                lines.push('\n');
            }
        }
    }
    print!("{lines}");
    if let Some(path) = args.out {
        std::fs::write(&path, lines).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_keywords(args: KeywordsArgs) -> Result<()> {
    let state = load_model(&args.model)?.into_spherical()?;
    let n = args.n.unwrap_or(state.config.keywords_n);
    let linkage = extract_keywords(&state, n)?;
    std::fs::write(&args.out, linkage.dump_tsv())
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "linkage for {} documents ({} keywords each) written to {}",
        linkage.num_docs(),
        n,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.protocol)
        .with_context(|| format!("reading {}", args.protocol.display()))?;
    let base = args
        .protocol
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();

    let mut config = TrainConfig::default();
    let mut dataset = String::from("dataset");
    let mut paths: [Option<PathBuf>; 3] = [None, None, None];
    let mut approaches = Vec::new();
    let mut k = 5usize;
    let mut seeds = Vec::new();
    let mut update_epochs = 0usize;
    let mut out_csv: Option<PathBuf> = None;

    for (key, value) in parse_kv_text(&text) {
        match key.as_str() {
            "dataset" => dataset = value,
            "train" => paths[0] = Some(base.join(value)),
            "update" => paths[1] = Some(base.join(value)),
            "test" => paths[2] = Some(base.join(value)),
            "approaches" => {
                for a in value.split(',') {
                    approaches.push(Approach::parse(a.trim())?);
                }
            }
            "k" => k = value.parse().context("bad k")?,
            "seeds" => {
                for s in value.split(',') {
                    seeds.push(s.trim().parse::<u64>().context("bad seed list")?);
                }
            }
            "update_epochs" => update_epochs = value.parse().context("bad update_epochs")?,
            "out_csv" => out_csv = Some(base.join(value)),
            other => {
                apply_config_pair(&mut config, other, &value)
                    .with_context(|| format!("{}", args.protocol.display()))?;
            }
        }
    }
    config.validate()?;
    let [train_p, update_p, test_p] = paths;
    let train_p = train_p.ok_or_else(|| anyhow!("protocol missing `train`"))?;
    let update_p = update_p.ok_or_else(|| anyhow!("protocol missing `update`"))?;
    let test_p = test_p.ok_or_else(|| anyhow!("protocol missing `test`"))?;
    if approaches.is_empty() {
        approaches = Approach::ALL.to_vec();
    }
    if seeds.is_empty() {
        seeds.push(resolve_seed(None)?);
    }

    let protocol = ExperimentProtocol {
        dataset,
        train: load_labeled_corpus(&train_p, config.tokenizer, Split::Train)?,
        update: load_labeled_corpus(&update_p, config.tokenizer, Split::Update)?,
        test: load_labeled_corpus(&test_p, config.tokenizer, Split::Test)?,
        approaches,
        k,
        seeds,
        config,
        update_epochs,
    };
    let table = run_experiment(&protocol)?;
    print!("{}", table.render_text());
    let csv = table.render_csv();
    if let Some(path) = args.out_csv.or(out_csv) {
        std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
        println!("# csv written to {}", path.display());
    } else {
        print!("{csv}");
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::TrainBaseline(a) => cmd_train_baseline(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::Align(a) => cmd_align(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Keywords(a) => cmd_keywords(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
