//! Bit-exact model persistence.
//!
//! A model bundle is a directory:
//! - `words.vec`  - header `count dim`, then `token v1 .. v_dim` per line
//! - `docs.vec`   - same, keys `doc_<id>` (spherical models only)
//! - `context.vec` - output vectors (baseline models only)
//! - `vocab.tsv`  - `token<TAB>count`, descending count order
//! - `meta.txt`   - flat `key = value` config echo plus trained_epochs
//! - `drift.log`  - `epoch_from epoch_to raw aligned` per line (optional)
//!
//! All reals are written with 17 significant digits, so a save/load/save
//! cycle is byte-identical.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use crate::baseline::BaselineModel;
use crate::corpus::{TokenizeOptions, Vocabulary};
use crate::error::{Error, Result};
use crate::geometry::{
    rotation_from_text, rotation_to_text, DcosMode, DriftReport, EmbeddingSet, Rotation, Table,
};
use crate::jose::{ModelState, TrainConfig};
use crate::textfmt::f64_17;

/// Norm deviation beyond which a loaded spherical table is rejected.
const CORRUPT_NORM_TOL: f64 = 1e-4;

/// Either kind of persistable model.
pub enum ModelBundle {
    Spherical(ModelState),
    Baseline(BaselineModel),
}

impl ModelBundle {
    pub fn config(&self) -> &TrainConfig {
        match self {
            ModelBundle::Spherical(s) => &s.config,
            ModelBundle::Baseline(b) => &b.config,
        }
    }

    pub fn into_spherical(self) -> Result<ModelState> {
        match self {
            ModelBundle::Spherical(s) => Ok(s),
            ModelBundle::Baseline(_) => Err(Error::CorruptBundle(
                "expected a spherical model bundle, found a baseline bundle".into(),
            )),
        }
    }

    pub fn into_baseline(self) -> Result<BaselineModel> {
        match self {
            ModelBundle::Baseline(b) => Ok(b),
            ModelBundle::Spherical(_) => Err(Error::CorruptBundle(
                "expected a baseline bundle, found a spherical model bundle".into(),
            )),
        }
    }
}

fn write_synced(path: &Path, contents: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn vec_table_text(keys: impl Iterator<Item = String>, table: &Table) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", table.rows(), table.dim());
    for (key, row) in keys.zip(table.iter_rows()) {
        out.push_str(&key);
        for v in row {
            out.push(' ');
            out.push_str(&f64_17(*v));
        }
        out.push('\n');
    }
    out
}

fn config_meta(config: &TrainConfig, model_type: &str, trained_epochs: usize) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("model_type", model_type.into());
    kv("trained_epochs", trained_epochs.to_string());
    out.push_str(&config_echo(config));
    out
}

/// Flat `key = value` echo of every hyperparameter.
pub fn config_echo(config: &TrainConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("dim", config.dim.to_string());
    kv("margin", f64_17(config.margin));
    kv("lr", f64_17(config.lr));
    kv("lr_min", f64_17(config.lr_min));
    kv("alpha", f64_17(config.alpha));
    kv("keywords_n", config.keywords_n.to_string());
    kv("window", config.window.to_string());
    kv("negatives", config.negatives.to_string());
    kv("epochs", config.epochs.to_string());
    kv("seed", config.seed.to_string());
    kv("dcos_mode", config.dcos_mode.to_string());
    kv("reference_epoch", config.reference_epoch.to_string());
    kv("align_each_epoch", config.align_each_epoch.to_string());
    kv("workers", config.workers.to_string());
    kv("min_count", config.min_count.to_string());
    kv("subsample", f64_17(config.subsample));
    kv("max_links", config.max_links.to_string());
    kv("keyword_refresh", config.keyword_refresh.to_string());
    kv("keep_snapshots", config.keep_snapshots.to_string());
    kv("snapshot_stride", config.snapshot_stride.to_string());
    kv("lowercase", config.tokenizer.lowercase.to_string());
    kv("lemmatize", config.tokenizer.lemmatize.to_string());
    out
}

/// Parses flat `key = value` text into pairs; blank lines and `#` comments
/// are skipped.
pub fn parse_kv_text(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

struct Meta {
    model_type: String,
    trained_epochs: usize,
    config: TrainConfig,
}

fn parse_meta(text: &str, path: &Path) -> Result<Meta> {
    let pairs = parse_kv_text(text);
    let get = |key: &str| -> Result<&str> {
        pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| {
                Error::CorruptBundle(format!("{}: missing key `{key}`", path.display()))
            })
    };
    fn val<T: std::str::FromStr>(raw: &str, key: &str, path: &Path) -> Result<T> {
        raw.parse().map_err(|_| {
            Error::CorruptBundle(format!("{}: bad value for `{key}`: {raw}", path.display()))
        })
    }

    let config = TrainConfig {
        dim: val(get("dim")?, "dim", path)?,
        margin: val(get("margin")?, "margin", path)?,
        lr: val(get("lr")?, "lr", path)?,
        lr_min: val(get("lr_min")?, "lr_min", path)?,
        alpha: val(get("alpha")?, "alpha", path)?,
        keywords_n: val(get("keywords_n")?, "keywords_n", path)?,
        window: val(get("window")?, "window", path)?,
        negatives: val(get("negatives")?, "negatives", path)?,
        epochs: val(get("epochs")?, "epochs", path)?,
        seed: val(get("seed")?, "seed", path)?,
        dcos_mode: get("dcos_mode")?.parse::<DcosMode>()?,
        reference_epoch: val(get("reference_epoch")?, "reference_epoch", path)?,
        align_each_epoch: val(get("align_each_epoch")?, "align_each_epoch", path)?,
        workers: val(get("workers")?, "workers", path)?,
        min_count: val(get("min_count")?, "min_count", path)?,
        subsample: val(get("subsample")?, "subsample", path)?,
        max_links: val(get("max_links")?, "max_links", path)?,
        keyword_refresh: val(get("keyword_refresh")?, "keyword_refresh", path)?,
        keep_snapshots: val(get("keep_snapshots")?, "keep_snapshots", path)?,
        snapshot_stride: val(get("snapshot_stride")?, "snapshot_stride", path)?,
        tokenizer: TokenizeOptions {
            lowercase: val(get("lowercase")?, "lowercase", path)?,
            lemmatize: val(get("lemmatize")?, "lemmatize", path)?,
        },
    };
    Ok(Meta {
        model_type: get("model_type")?.to_string(),
        trained_epochs: val(get("trained_epochs")?, "trained_epochs", path)?,
        config,
    })
}

fn drift_log_text(log: &[DriftReport]) -> String {
    let mut out = String::new();
    for rep in log {
        out.push_str(&rep.log_line());
        out.push('\n');
    }
    out
}

fn parse_drift_log(text: &str, dim: usize, path: &Path) -> Result<Vec<DriftReport>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::CorruptBundle(format!(
                "{}:{}: drift line needs 4 fields",
                path.display(),
                i + 1
            )));
        }
        let bad = |f: &str| {
            Error::CorruptBundle(format!("{}:{}: bad drift field {f}", path.display(), i + 1))
        };
        out.push(DriftReport {
            epoch_pair: (
                fields[0].parse().map_err(|_| bad(fields[0]))?,
                fields[1].parse().map_err(|_| bad(fields[1]))?,
            ),
            mean_displacement_raw: fields[2].parse().map_err(|_| bad(fields[2]))?,
            mean_displacement_aligned: fields[3].parse().map_err(|_| bad(fields[3]))?,
            per_vector_displacements: None,
            rotation: Rotation::identity(dim),
        });
    }
    Ok(out)
}

/// Writes a complete bundle into `dir` (created if missing); every file is
/// fsynced before return.
pub fn save_model(bundle: &ModelBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match bundle {
        ModelBundle::Spherical(state) => {
            write_synced(
                &dir.join("words.vec"),
                &vec_table_text(
                    state.vocab.tokens().iter().cloned(),
                    state.embeddings.words(),
                ),
            )?;
            write_synced(
                &dir.join("docs.vec"),
                &vec_table_text(
                    (0..state.embeddings.num_docs()).map(|i| format!("doc_{i}")),
                    state.embeddings.docs(),
                ),
            )?;
            write_synced(&dir.join("vocab.tsv"), &state.vocab.dump_tsv())?;
            write_synced(
                &dir.join("meta.txt"),
                &config_meta(&state.config, "spherical", state.trained_epochs),
            )?;
            write_synced(&dir.join("drift.log"), &drift_log_text(&state.drift_log))?;
        }
        ModelBundle::Baseline(model) => {
            write_synced(
                &dir.join("words.vec"),
                &vec_table_text(model.vocab.tokens().iter().cloned(), &model.word_vectors),
            )?;
            write_synced(
                &dir.join("context.vec"),
                &vec_table_text(
                    model.vocab.tokens().iter().cloned(),
                    &model.context_vectors,
                ),
            )?;
            write_synced(&dir.join("vocab.tsv"), &model.vocab.dump_tsv())?;
            write_synced(
                &dir.join("meta.txt"),
                &config_meta(&model.config, "baseline", model.trained_epochs),
            )?;
        }
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_vec_table(path: &Path) -> Result<(Vec<String>, Table)> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingFile(path.to_path_buf());
        }
        Error::io(path, e)
    })?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| Error::io(path, e))?;
    let mut hdr = header.split_whitespace();
    let corrupt = |msg: String| Error::CorruptBundle(format!("{}: {msg}", path.display()));
    let rows: usize = hdr
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| corrupt("bad header".into()))?;
    let dim: usize = hdr
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| corrupt("bad header".into()))?;

    let mut keys = Vec::with_capacity(rows);
    let mut table = Table::with_capacity(rows, dim);
    let mut row = vec![0.0; dim];
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let key = fields
            .next()
            .ok_or_else(|| corrupt(format!("row {i}: missing key")))?;
        for (j, slot) in row.iter_mut().enumerate() {
            let tok = fields
                .next()
                .ok_or_else(|| corrupt(format!("row {i}: expected {dim} values")))?;
            let v: f64 = tok
                .parse()
                .map_err(|_| corrupt(format!("row {i} col {j}: bad number {tok}")))?;
            if !v.is_finite() {
                return Err(corrupt(format!("row {i} col {j}: non-finite value")));
            }
            *slot = v;
        }
        if fields.next().is_some() {
            return Err(corrupt(format!("row {i}: too many values")));
        }
        keys.push(key.to_string());
        table.push_row(&row);
    }
    if keys.len() != rows {
        return Err(corrupt(format!("expected {rows} rows, found {}", keys.len())));
    }
    Ok((keys, table))
}

fn parse_vocab_tsv(path: &Path) -> Result<std::collections::HashMap<String, u64>> {
    let text = read_file(path)?;
    let mut out = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (tok, count) = line.split_once('\t').ok_or_else(|| {
            Error::CorruptBundle(format!("{}:{}: expected token<TAB>count", path.display(), i + 1))
        })?;
        let count: u64 = count.parse().map_err(|_| {
            Error::CorruptBundle(format!("{}:{}: bad count {count}", path.display(), i + 1))
        })?;
        out.insert(tok.to_string(), count);
    }
    Ok(out)
}

fn vocab_from_parts(
    word_keys: Vec<String>,
    counts: &std::collections::HashMap<String, u64>,
    path: &Path,
) -> Result<Vocabulary> {
    let mut ordered_counts = Vec::with_capacity(word_keys.len());
    for k in &word_keys {
        let c = counts.get(k).ok_or_else(|| {
            Error::CorruptBundle(format!("{}: token `{k}` missing from vocab.tsv", path.display()))
        })?;
        ordered_counts.push(*c);
    }
    Vocabulary::from_ordered(word_keys, ordered_counts)
}

fn check_unit_rows(table: &Table, what: &str) -> Result<()> {
    for (i, row) in table.iter_rows().enumerate() {
        let n = crate::geometry::norm(row);
        if (n - 1.0).abs() > CORRUPT_NORM_TOL {
            return Err(Error::CorruptBundle(format!(
                "{what} row {i} has norm {n}, beyond {CORRUPT_NORM_TOL}"
            )));
        }
    }
    Ok(())
}

/// Loads a bundle, re-verifying table invariants: a spherical bundle whose
/// rows deviate from unit norm by more than 1e-4 is rejected, never
/// silently renormalized.
pub fn load_model(dir: impl AsRef<Path>) -> Result<ModelBundle> {
    let dir = dir.as_ref();
    let meta = parse_meta(&read_file(&dir.join("meta.txt"))?, &dir.join("meta.txt"))?;
    let (word_keys, words) = parse_vec_table(&dir.join("words.vec"))?;
    let counts = parse_vocab_tsv(&dir.join("vocab.tsv"))?;
    let vocab = vocab_from_parts(word_keys, &counts, &dir.join("vocab.tsv"))?;
    if words.rows() != vocab.len() {
        return Err(Error::CorruptBundle(format!(
            "words.vec has {} rows for {} vocabulary entries",
            words.rows(),
            vocab.len()
        )));
    }

    match meta.model_type.as_str() {
        "spherical" => {
            let docs_path = dir.join("docs.vec");
            let (doc_keys, docs) = parse_vec_table(&docs_path)?;
            for (i, k) in doc_keys.iter().enumerate() {
                let expect = format!("doc_{i}");
                if k != &expect {
                    return Err(Error::CorruptBundle(format!(
                        "{}: row {i} keyed `{k}`, expected `{expect}`",
                        docs_path.display()
                    )));
                }
            }
            check_unit_rows(&words, "word")?;
            check_unit_rows(&docs, "doc")?;
            let dim = meta.config.dim;
            let drift_path = dir.join("drift.log");
            let drift_log = if drift_path.exists() {
                parse_drift_log(&read_file(&drift_path)?, dim, &drift_path)?
            } else {
                Vec::new()
            };
            let embeddings = EmbeddingSet::new(words, docs)?;
            if embeddings.dim() != dim {
                return Err(Error::CorruptBundle(format!(
                    "table dim {} disagrees with meta dim {dim}",
                    embeddings.dim()
                )));
            }
            Ok(ModelBundle::Spherical(ModelState {
                vocab,
                embeddings,
                config: meta.config,
                epoch_snapshots: Vec::new(),
                drift_log,
                epoch_stats: Vec::new(),
                trained_epochs: meta.trained_epochs,
            }))
        }
        "baseline" => {
            let (ctx_keys, context_vectors) = parse_vec_table(&dir.join("context.vec"))?;
            if ctx_keys.len() != vocab.len() {
                return Err(Error::CorruptBundle(
                    "context.vec row count disagrees with vocabulary".into(),
                ));
            }
            Ok(ModelBundle::Baseline(BaselineModel {
                vocab,
                word_vectors: words,
                context_vectors,
                config: meta.config,
                epoch_stats: Vec::new(),
                trained_epochs: meta.trained_epochs,
            }))
        }
        other => Err(Error::CorruptBundle(format!("unknown model_type `{other}`"))),
    }
}

/// Writes a rotation dump (`dim`, then dim x dim row-major values).
pub fn save_rotation(path: impl AsRef<Path>, rot: &Rotation) -> Result<()> {
    write_synced(path.as_ref(), &rotation_to_text(rot))
}

pub fn load_rotation(path: impl AsRef<Path>) -> Result<Rotation> {
    rotation_from_text(&read_file(path.as_ref())?)
}

/// Convenience: where a bundle keeps each of its parts.
pub fn bundle_files(dir: &Path) -> Vec<PathBuf> {
    ["words.vec", "docs.vec", "context.vec", "vocab.tsv", "meta.txt", "drift.log"]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.exists())
        .collect()
}
