//! Node embedding methods behind a common interface.
//!
//! Four methods are built in (graph factorization, Laplacian eigenmaps,
//! HOPE and node2vec). Anything else can take part in an ensemble by writing
//! its embedding to the plain-text matrix format read by [`load_embedding`].

mod gf;
mod hope;
mod lap;
mod node2vec;

pub use gf::{embed_gf, embed_gf_from, gf_gradient, gf_objective, GfFit, GfParams};
pub use hope::{embed_hope, similarity_operator, HopeParams, Similarity};
pub use lap::embed_lap;
pub use node2vec::{embed_node2vec, generate_walks, Node2vecParams, Walker};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Embedding dimensions searched by default.
pub const DEFAULT_DIMS: [usize; 3] = [32, 64, 128];

/// An `n x d` embedding, one row per node, tagged with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: DMatrix<f64>,
    pub method_id: String,
    pub hyperparams: BTreeMap<String, String>,
    pub seed: u64,
}

impl EmbeddingMatrix {
    pub fn new(values: DMatrix<f64>, method_id: impl Into<String>) -> Result<Self> {
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::InvalidParam("embedding must be at least 1x1".into()));
        }
        if let Some(row) =
            (0..values.nrows()).find(|&i| values.row(i).iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite {
                what: "embedding".into(),
                row,
            });
        }
        Ok(Self {
            values,
            method_id: method_id.into(),
            hyperparams: BTreeMap::new(),
            seed: 0,
        })
    }

    pub fn with_hyperparams(mut self, hyperparams: BTreeMap<String, String>) -> Self {
        self.hyperparams = hyperparams;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn node_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Writes the matrix (`n d` header, then rows) and a JSON sidecar with
    /// the method id and hyperparameters next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(self.node_count() * self.dim() * 12);
        let _ = writeln!(out, "{} {}", self.node_count(), self.dim());
        for row in self.values.row_iter() {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let meta = EmbeddingMeta {
            method_id: self.method_id.clone(),
            n: self.node_count(),
            dim: self.dim(),
            hyperparams: self.hyperparams.clone(),
            seed: self.seed,
        };
        let meta_path = sidecar_path(path);
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
            .map_err(|e| Error::io(&meta_path, e))
    }
}

/// Sidecar metadata stored as `<file>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub method_id: String,
    pub n: usize,
    pub dim: usize,
    pub hyperparams: BTreeMap<String, String>,
    pub seed: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Reads an `n d` header followed by `n` rows of `d` reals.
pub fn load_embedding(path: impl AsRef<Path>, expected_n: usize) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines
        .next()
        .ok_or_else(|| Error::EmptyInput(format!("embedding file {}", path.display())))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(hl + 1, format!("bad header {header:?}")))?;
    let [n, d] = dims[..] else {
        return Err(parse_err(hl + 1, "header must be `n d`".into()));
    };
    if n != expected_n {
        return Err(Error::ShapeMismatch(format!(
            "embedding has {n} rows but the graph has {expected_n} nodes"
        )));
    }
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (lineno, line) in lines {
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(lineno + 1, format!("invalid number {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: path.display().to_string(),
                    row: rows,
                });
            }
            data.push(v);
        }
        if data.len() - before != d {
            return Err(parse_err(
                lineno + 1,
                format!("expected {d} values, got {}", data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::RowCountMismatch {
            expected: n,
            found: rows,
        });
    }
    let name = path
        .file_name()
        .map_or_else(String::new, |f| f.to_string_lossy().into_owned());
    EmbeddingMatrix::new(
        DMatrix::from_row_slice(n, d, &data),
        format!("external:{name}"),
    )
}

/// Like [`load_embedding`], but restores the provenance from the JSON
/// sidecar when one exists.
pub fn load_embedding_with_meta(
    path: impl AsRef<Path>,
    expected_n: usize,
) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let mut e = load_embedding(path, expected_n)?;
    let meta_path = sidecar_path(path);
    if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|err| Error::io(&meta_path, err))?;
        let meta: EmbeddingMeta = serde_json::from_str(&text)?;
        e.method_id = meta.method_id;
        e.hyperparams = meta.hyperparams;
        e.seed = meta.seed;
    }
    Ok(e)
}

/// Anything that maps a graph to an `n x dim` embedding.
pub trait Embedder {
    fn method_id(&self) -> &str;
    fn embed(&self, g: &Graph, dim: usize, seed: u64) -> Result<EmbeddingMatrix>;
}

/// A concrete, serializable method configuration: one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodParams {
    Gf(GfParams),
    Lap,
    Hope(HopeParams),
    Node2vec(Node2vecParams),
    /// Pre-computed embeddings, one file per dimension.
    External {
        #[serde(deserialize_with = "dim_keyed")]
        paths: BTreeMap<usize, PathBuf>,
    },
}

/// JSON object keys are strings, and serde does not convert them to integers
/// once a tagged enum has buffered them.
fn dim_keyed<'de, D>(d: D) -> std::result::Result<BTreeMap<usize, PathBuf>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    use serde::de::Error as _;
    BTreeMap::<String, PathBuf>::deserialize(d)?
        .into_iter()
        .map(|(k, v)| match k.parse() {
            Ok(dim) => Ok((dim, v)),
            Err(_) => Err(D::Error::custom(format!(
                "dimension key {k:?} is not an integer"
            ))),
        })
        .collect()
}

impl MethodParams {
    pub fn kind(&self) -> &'static str {
        match self {
            MethodParams::Gf(_) => "gf",
            MethodParams::Lap => "lap",
            MethodParams::Hope(_) => "hope",
            MethodParams::Node2vec(_) => "node2vec",
            MethodParams::External { .. } => "external",
        }
    }

    pub fn default_for(kind: &str) -> Result<Self> {
        Ok(match kind {
            "gf" => MethodParams::Gf(GfParams::default()),
            "lap" => MethodParams::Lap,
            "hope" => MethodParams::Hope(HopeParams::default()),
            "node2vec" => MethodParams::Node2vec(Node2vecParams::default()),
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown method kind {other:?}"
                )))
            }
        })
    }

    /// Hyperparameters as display strings, for metadata and reports.
    pub fn describe(&self) -> BTreeMap<String, String> {
        let value = serde_json::to_value(self).expect("params serialize");
        value
            .as_object()
            .map(|o| {
                o.iter()
                    .filter(|(k, _)| k.as_str() != "method")
                    .map(|(k, v)| (k.clone(), v.to_string().trim_matches('"').to_string()))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Sets one grid axis.
    pub fn set(&mut self, name: &str, value: &HyperValue) -> Result<()> {
        let kind = self.kind();
        let bad = || {
            Error::InvalidParam(format!(
                "{kind} has no hyperparameter {name:?} taking {value:?}"
            ))
        };
        match (self, name, value) {
            (MethodParams::Gf(p), "lr", HyperValue::Num(v)) => p.lr = *v,
            (MethodParams::Gf(p), "reg", HyperValue::Num(v)) => p.reg = *v,
            (MethodParams::Gf(p), "epochs", HyperValue::Num(v)) => p.epochs = *v as usize,
            (MethodParams::Hope(p), "beta", HyperValue::Num(v)) => p.beta = *v,
            (MethodParams::Hope(p), "similarity", HyperValue::Text(s)) => {
                p.similarity = s.parse()?
            }
            (MethodParams::Node2vec(p), "p", HyperValue::Num(v)) => p.p = *v,
            (MethodParams::Node2vec(p), "q", HyperValue::Num(v)) => p.q = *v,
            (MethodParams::Node2vec(p), "walk_length", HyperValue::Num(v)) => {
                p.walk_length = *v as usize
            }
            (MethodParams::Node2vec(p), "walks_per_node", HyperValue::Num(v)) => {
                p.walks_per_node = *v as usize
            }
            (MethodParams::Node2vec(p), "window", HyperValue::Num(v)) => p.window = *v as usize,
            (MethodParams::Node2vec(p), "epochs", HyperValue::Num(v)) => p.epochs = *v as usize,
            _ => return Err(bad()),
        }
        Ok(())
    }

    pub fn fit(&self, g: &Graph, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
        let emb = match self {
            MethodParams::Gf(p) => embed_gf(g, dim, p, seed)?,
            MethodParams::Lap => embed_lap(g, dim)?,
            MethodParams::Hope(p) => embed_hope(g, dim, p)?,
            MethodParams::Node2vec(p) => embed_node2vec(g, dim, p, seed)?,
            MethodParams::External { paths } => {
                let path = paths.get(&dim).ok_or_else(|| {
                    Error::InvalidParam(format!("no external embedding file for dimension {dim}"))
                })?;
                let e = load_embedding(path, g.node_count())?;
                if e.dim() != dim {
                    return Err(Error::ShapeMismatch(format!(
                        "{} has dimension {}, expected {dim}",
                        path.display(),
                        e.dim()
                    )));
                }
                e
            }
        };
        Ok(emb.with_hyperparams(self.describe()).with_seed(seed))
    }
}

impl Embedder for MethodParams {
    fn method_id(&self) -> &str {
        self.kind()
    }

    fn embed(&self, g: &Graph, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
        self.fit(g, dim, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Num(f64),
    Text(String),
}

impl From<f64> for HyperValue {
    fn from(v: f64) -> Self {
        HyperValue::Num(v)
    }
}

impl From<&str> for HyperValue {
    fn from(v: &str) -> Self {
        HyperValue::Text(v.to_string())
    }
}

/// Candidate values per hyperparameter. Axes are enumerated in key order,
/// the last key varying fastest.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HyperGrid {
    pub axes: BTreeMap<String, Vec<HyperValue>>,
}

impl HyperGrid {
    pub fn new<I, K, V>(axes: I) -> Self
    where
        I: IntoIterator<Item = (K, Vec<V>)>,
        K: Into<String>,
        V: Into<HyperValue>,
    {
        Self {
            axes: axes
                .into_iter()
                .map(|(k, vs)| (k.into(), vs.into_iter().map(Into::into).collect()))
                .collect(),
        }
    }

    /// Default search grid for a built-in method.
    pub fn default_for(kind: &str) -> Self {
        match kind {
            "gf" => Self::new([
                ("lr", vec![1e-3, 1e-2, 1e-1]),
                ("reg", vec![1e-1, 1.0, 10.0]),
            ]),
            "hope" => {
                let mut g = Self::new([("beta", vec![1e-4, 1e-3, 1e-2, 1e-1])]);
                g.axes.insert(
                    "similarity".into(),
                    ["katz", "ppr", "common_neighbors", "adamic_adar"]
                        .into_iter()
                        .map(HyperValue::from)
                        .collect(),
                );
                g
            }
            "node2vec" => {
                let v = vec![0.25, 0.5, 1.0, 2.0, 4.0];
                Self::new([("p", v.clone()), ("q", v)])
            }
            _ => Self::default(),
        }
    }

    pub fn size(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }

    /// Every grid point applied on top of `base`.
    pub fn expand(&self, base: &MethodParams) -> Result<Vec<MethodParams>> {
        if self.axes.values().any(Vec::is_empty) {
            return Err(Error::InvalidParam("grid axis without values".into()));
        }
        let mut points = vec![base.clone()];
        for (name, values) in &self.axes {
            let mut next = Vec::with_capacity(points.len() * values.len());
            for p in &points {
                for v in values {
                    let mut q = p.clone();
                    q.set(name, v)?;
                    next.push(q);
                }
            }
            points = next;
        }
        Ok(points)
    }
}
