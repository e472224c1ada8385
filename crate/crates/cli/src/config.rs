//! JSON run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use graphens::diversity::Measure;
use graphens::embed::DEFAULT_DIMS;
use graphens::ensemble::{ClassifierOptions, MethodSpec, DEFAULT_FRACTIONS};
use graphens::graph::{
    largest_wcc, load_edge_list, load_labels, Graph, LabelMatrix, NodeMap, UnknownNodePolicy,
};
use graphens::synthgen::{
    closeness_labels, default_specs, degree_labels, generate, merge_with_random_edges, SynthSpec,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub methods: Vec<MethodEntry>,
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub classifier: ClassifierOptions,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub diversity: DiversityConfig,
}

fn default_dims() -> Vec<usize> {
    DEFAULT_DIMS.to_vec()
}

fn default_fractions() -> [f64; 3] {
    DEFAULT_FRACTIONS
}

fn default_rounds() -> usize {
    5
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Files {
        edges: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        directed: bool,
        #[serde(default)]
        unknown_nodes: UnknownNodePolicy,
        /// Restrict to the largest weakly connected component.
        #[serde(default = "yes")]
        largest_component: bool,
    },
    Synthetic(SyntheticConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Degree,
    Closeness,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Defaults to the four standard 100-node graphs.
    #[serde(default)]
    pub graphs: Option<Vec<SynthSpec>>,
    #[serde(default = "default_pair_fraction")]
    pub pair_fraction: f64,
    #[serde(default = "default_accept_prob")]
    pub accept_prob: f64,
    #[serde(default = "default_label_kind")]
    pub labels: LabelKind,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Seed for graph generation; the run seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_pair_fraction() -> f64 {
    0.4
}

fn default_accept_prob() -> f64 {
    0.3
}

fn default_label_kind() -> LabelKind {
    LabelKind::Degree
}

fn default_bins() -> usize {
    8
}

/// Either a built-in method name (default grid) or a full specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodEntry {
    Name(String),
    Spec(MethodSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiversityConfig {
    #[serde(default = "default_diversity_dim")]
    pub dim: usize,
    #[serde(default = "default_measures")]
    pub measures: Vec<Measure>,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            dim: default_diversity_dim(),
            measures: default_measures(),
        }
    }
}

fn default_diversity_dim() -> usize {
    128
}

fn default_measures() -> Vec<Measure> {
    vec![Measure::Dcor]
}

/// The graph, its labels and the names of its nodes.
pub struct Dataset {
    pub graph: Graph,
    pub labels: LabelMatrix,
    pub node_map: NodeMap,
}

/// A synthetic graph with both label sets.
pub struct SyntheticData {
    pub graph: Graph,
    pub degree: LabelMatrix,
    pub closeness: LabelMatrix,
}

impl SyntheticConfig {
    pub fn build(&self, run_seed: u64) -> Result<SyntheticData> {
        let seed = self.seed.unwrap_or(run_seed);
        let specs = self.graphs.clone().unwrap_or_else(|| default_specs(seed));
        let graphs = specs
            .iter()
            .map(generate)
            .collect::<graphens::Result<Vec<_>>>()
            .context("generating synthetic graphs")?;
        let merge_seed = seed.wrapping_add(specs.len() as u64);
        let merged =
            merge_with_random_edges(&graphs, self.pair_fraction, self.accept_prob, merge_seed)?;
        let (graph, _) = largest_wcc(&merged);
        if graph.node_count() < merged.node_count() {
            log::warn!(
                "merged graph is disconnected; keeping the largest component ({} of {} nodes)",
                graph.node_count(),
                merged.node_count()
            );
        }
        Ok(SyntheticData {
            degree: degree_labels(&graph, self.bins)?,
            closeness: closeness_labels(&graph, self.bins)?,
            graph,
        })
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg =
            Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetConfig::Files { edges, labels, .. } = &mut self.dataset {
            fix(edges);
            fix(labels);
        }
        fix(&mut self.out_dir);
        if let Some(c) = &mut self.cache_dir {
            fix(c);
        }
        for m in &mut self.methods {
            if let MethodEntry::Spec(MethodSpec {
                params: graphens::embed::MethodParams::External { paths },
                ..
            }) = m
            {
                paths.values_mut().for_each(fix);
            }
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.methods.is_empty(), "config lists no methods");
        ensure!(!self.dims.is_empty(), "config lists no dimensions");
        ensure!(self.rounds >= 1, "rounds must be >= 1");
        ensure!(
            (self.fractions.iter().sum::<f64>() - 1.0).abs() <= 1e-9
                && self.fractions.iter().all(|f| *f >= 0.0),
            "split fractions {:?} must be non-negative and sum to 1",
            self.fractions
        );
        if let DatasetConfig::Files { edges, labels, .. } = &self.dataset {
            for p in [edges, labels] {
                ensure!(p.exists(), "{} does not exist", p.display());
            }
        }
        let specs = self.method_specs()?;
        let mut ids: Vec<&str> = specs.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            bail!("method id {:?} appears twice", w[0]);
        }
        Ok(())
    }

    pub fn method_specs(&self) -> Result<Vec<MethodSpec>> {
        self.methods
            .iter()
            .map(|m| match m {
                MethodEntry::Name(n) => Ok(MethodSpec::builtin(n)?),
                MethodEntry::Spec(s) => Ok(s.clone()),
            })
            .collect()
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetConfig::Files {
                edges,
                labels,
                directed,
                unknown_nodes,
                largest_component,
            } => {
                let loaded = load_edge_list(edges, *directed)?;
                let labels_full = load_labels(labels, &loaded.node_map, *unknown_nodes)?;
                let (graph, node_map, labels) = if *largest_component {
                    let (g, kept) = largest_wcc(&loaded.graph);
                    (
                        g,
                        loaded.node_map.restrict(&kept),
                        labels_full.select_rows(&kept),
                    )
                } else {
                    (loaded.graph, loaded.node_map, labels_full)
                };
                Ok(Dataset {
                    labels: labels.compact(),
                    graph,
                    node_map,
                })
            }
            DatasetConfig::Synthetic(s) => {
                let data = s.build(self.seed)?;
                let labels = match s.labels {
                    LabelKind::Degree => data.degree,
                    LabelKind::Closeness => data.closeness,
                };
                let node_map = NodeMap::identity(data.graph.node_count());
                Ok(Dataset {
                    graph: data.graph,
                    labels,
                    node_map,
                })
            }
        }
    }
}
