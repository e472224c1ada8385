//! The `graphens` command-line driver.

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use graphens::diversity::{correlation_matrix, Measure};
use graphens::embed::{load_embedding_with_meta, EmbeddingMatrix, MethodParams};
use graphens::ensemble::{
    grid_search, split_subset, EmbeddingStore, Evaluator, Experiment, RunResults,
};
use graphens::graph::{write_edge_list, write_labels};

use config::{Dataset, DatasetConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "graphens",
    version,
    about = "Graph embedding ensembles for node classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads; 1 gives the sequential reference path.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Overrides the base seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides the output directory of the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Write the synthetic graph and its degree and closeness label files.
    Generate,
    /// Search hyperparameters and cache the winning embeddings.
    Embed,
    /// Pairwise dependence between cached embeddings, as CSV.
    Diversity,
    /// Run the multi-round ensemble evaluation.
    Ensemble,
    /// Print the table of a finished ensemble run.
    Report,
}

/// What a command produced, for callers that want more than the printout.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Generated(Vec<PathBuf>),
    Embedded(EmbedSummary),
    Diversity(Vec<PathBuf>),
    Ensemble { results: PathBuf, table: String },
    Report(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmbedSummary {
    pub cache_hit: bool,
    pub fits: usize,
    pub cached: usize,
}

pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .context("--config <path> is required")?;
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command inside a worker pool of `--jobs` threads.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            bail!("--jobs must be >= 1");
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    pool.install(|| run_command(cli.command, &cfg))
}

pub fn run_command(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    match command {
        Command::Generate => cmd_generate(cfg).map(Outcome::Generated),
        Command::Embed => cmd_embed(cfg).map(Outcome::Embedded),
        Command::Diversity => cmd_diversity(cfg).map(Outcome::Diversity),
        Command::Ensemble => cmd_ensemble(cfg),
        Command::Report => cmd_report(cfg).map(Outcome::Report),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let DatasetConfig::Synthetic(s) = &cfg.dataset else {
        bail!("generate needs a synthetic dataset in the config");
    };
    let data = s.build(cfg.seed)?;
    create_dir(&cfg.out_dir)?;
    let graph = cfg.out_dir.join("graph.edgelist");
    let degree = cfg.out_dir.join("labels_degree.txt");
    let closeness = cfg.out_dir.join("labels_closeness.txt");
    write_edge_list(&data.graph, &graph)?;
    write_labels(&data.degree, &degree)?;
    write_labels(&data.closeness, &closeness)?;
    println!(
        "wrote {} nodes, {} edges to {}",
        data.graph.node_count(),
        data.graph.edge_count(),
        cfg.out_dir.display()
    );
    Ok(vec![graph, degree, closeness])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub params: MethodParams,
    pub val_macro_f1: f64,
}

/// Index of the cached grid winners, per method id and dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheManifest {
    pub key: String,
    pub entries: BTreeMap<String, BTreeMap<usize, ManifestEntry>>,
}

const MANIFEST: &str = "manifest.json";

/// Everything the cached winners depend on.
fn cache_key(cfg: &RunConfig, data: &Dataset) -> Result<String> {
    let mut h = Sha256::new();
    h.update(data.graph.fingerprint());
    for i in 0..data.labels.node_count() {
        h.update(format!("{:?};", data.labels.labels(i)));
    }
    h.update(serde_json::to_string(&cfg.method_specs()?)?);
    h.update(serde_json::to_string(&(
        &cfg.dims,
        cfg.fractions,
        cfg.seed,
        cfg.classifier,
    ))?);
    Ok(h.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn read_manifest(dir: &Path) -> Option<CacheManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<EmbedSummary> {
    let data = cfg.load_dataset()?;
    let dir = cfg.cache_dir();
    let key = cache_key(cfg, &data)?;
    if let Some(m) = read_manifest(&dir) {
        let complete = m
            .entries
            .values()
            .flat_map(|d| d.values())
            .all(|e| dir.join(&e.file).exists());
        if m.key == key && complete {
            let cached = m.entries.values().map(BTreeMap::len).sum();
            println!(
                "cache hit: {cached} embeddings in {}, 0 fits",
                dir.display()
            );
            return Ok(EmbedSummary {
                cache_hit: true,
                fits: 0,
                cached,
            });
        }
    }

    let store = EmbeddingStore::new(&data.graph, Some(dir.clone()));
    let split = split_subset(&data.labels.labeled_nodes(), cfg.fractions, cfg.seed)?;
    let eval = Evaluator::new(&data.labels, &split, cfg.classifier, 0);
    let mut entries = BTreeMap::new();
    for spec in cfg.method_specs()? {
        let cand = grid_search(&data.graph, &store, &spec, &cfg.dims, cfg.seed, &eval)?;
        let mut per_dim = BTreeMap::new();
        for r in &cand.per_dim {
            let path = store.persist(&data.graph, &spec.id, &r.params, r.dim, r.seed)?;
            per_dim.insert(
                r.dim,
                ManifestEntry {
                    file: path.file_name().unwrap().to_string_lossy().into_owned(),
                    params: r.params.clone(),
                    val_macro_f1: r.val_macro_f1,
                },
            );
        }
        entries.insert(spec.id.clone(), per_dim);
    }
    let cached = entries.values().map(BTreeMap::len).sum();
    let manifest = CacheManifest { key, entries };
    write(
        &dir.join(MANIFEST),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    println!(
        "cached {cached} embeddings in {} ({} fits)",
        dir.display(),
        store.fits()
    );
    Ok(EmbedSummary {
        cache_hit: false,
        fits: store.fits(),
        cached,
    })
}

pub fn cmd_diversity(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = cfg.load_dataset()?;
    let dir = cfg.cache_dir();
    let manifest = read_manifest(&dir);
    let dim = cfg.diversity.dim;
    let mut missing = Vec::new();
    let mut embs: Vec<EmbeddingMatrix> = Vec::new();
    for spec in cfg.method_specs()? {
        let entry = manifest
            .as_ref()
            .and_then(|m| m.entries.get(&spec.id))
            .and_then(|d| d.get(&dim));
        match entry {
            Some(e) if dir.join(&e.file).exists() => {
                let mut emb = load_embedding_with_meta(dir.join(&e.file), data.graph.node_count())?;
                emb.method_id = spec.id.clone();
                embs.push(emb);
            }
            _ => missing.push(format!("{}@{dim}", spec.id)),
        }
    }
    if !missing.is_empty() {
        return Err(graphens::Error::MissingCache(missing)).context("run `graphens embed` first");
    }
    create_dir(&cfg.out_dir)?;
    let refs: Vec<&EmbeddingMatrix> = embs.iter().collect();
    let mut written = Vec::new();
    for &measure in &cfg.diversity.measures {
        let report = correlation_matrix(&refs, measure)?;
        let name = match measure {
            Measure::Dcor => "diversity_dcor.csv",
            Measure::Rv => "diversity_rv.csv",
        };
        let path = cfg.out_dir.join(name);
        let csv = report.to_csv();
        write(&path, &csv)?;
        print!("{csv}");
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_ensemble(cfg: &RunConfig) -> Result<Outcome> {
    let data = cfg.load_dataset()?;
    let specs = cfg.method_specs()?;
    let store = EmbeddingStore::new(&data.graph, Some(cfg.cache_dir()));
    let exp = Experiment {
        graph: &data.graph,
        labels: &data.labels,
        methods: &specs,
        dims: &cfg.dims,
        fractions: cfg.fractions,
        base_seed: cfg.seed,
        classifier: cfg.classifier,
        store: &store,
    };
    let results = exp.run_rounds(cfg.rounds)?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("results.json");
    write(&path, &results.to_json()?)?;
    let table = render_table(&results);
    write(&cfg.out_dir.join("table.txt"), &table)?;
    print!("{table}");
    Ok(Outcome::Ensemble {
        results: path,
        table,
    })
}

pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let path = cfg.out_dir.join("results.json");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run `graphens ensemble` first)", path.display()))?;
    let results: RunResults = serde_json::from_str(&text)?;
    let table = render_table(&results);
    print!("{table}");
    Ok(table)
}

fn most_common(xs: &[Vec<usize>]) -> &[usize] {
    let mut best = &xs[0];
    let mut count = 0;
    for x in xs {
        let c = xs.iter().filter(|y| *y == x).count();
        if c > count {
            best = x;
            count = c;
        }
    }
    best
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Method, dimensions, mean test macro-F1 and gain over the best single
/// method. Single methods show their most frequent best dimension.
pub fn render_table(r: &RunResults) -> String {
    let best = r
        .methods
        .get(&r.best_single)
        .map_or(0.0, |s| s.macro_f1_mean);
    let gain = |v: f64| {
        if best > 0.0 {
            (v - best) / best * 100.0
        } else {
            0.0
        }
    };
    let mut rows: Vec<[String; 4]> = Vec::new();
    for (id, s) in &r.methods {
        rows.push([
            id.clone(),
            join(most_common(&s.dims)),
            format!("{:.3} ± {:.3}", s.macro_f1_mean, s.macro_f1_std),
            format!("{:+.1}%", gain(s.macro_f1_mean)),
        ]);
    }
    if r.methods.len() > 1 {
        let sel = r.typical_selection();
        let ids: Vec<&str> = sel.iter().map(|m| m.method_id.as_str()).collect();
        let dims: Vec<usize> = sel.iter().map(|m| m.dim).collect();
        rows.push([
            format!("ensemble({})", ids.join(",")),
            join(&dims),
            format!(
                "{:.3} ± {:.3}",
                r.ensemble.macro_f1_mean, r.ensemble.macro_f1_std
            ),
            format!("{:+.1}%", r.gain_percent),
        ]);
    }
    let header = ["method", "dimensions", "macro-F1", "gain"];
    let widths: Vec<usize> = (0..4)
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].len()])
                .max()
                .unwrap()
        })
        .collect();
    let mut out = String::new();
    let mut line = |cells: [&str; 4]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header);
    for r in &rows {
        line([&r[0], &r[1], &r[2], &r[3]]);
    }
    let _ = writeln!(out, "({} rounds)", r.rounds.len());
    out
}

/// Machine-readable form of a failure, printed to stderr by the binary.
pub fn error_json(err: &anyhow::Error) -> String {
    let chain: Vec<String> = err.chain().map(ToString::to_string).collect();
    serde_json::json!({ "error": err.to_string(), "causes": chain }).to_string()
}
