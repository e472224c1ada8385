//! Graph data model, text ingestion and connectivity preprocessing.
//!
//! Node ids are always dense integers `0..n`. Loaders re-index whatever ids
//! the input file uses and hand back a [`NodeMap`] so label files and output
//! artifacts can be aligned with the original names.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Compressed sparse row adjacency. For undirected graphs every edge is
/// stored in both endpoint rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyView {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl AdjacencyView {
    fn from_pairs(n: usize, mut pairs: Vec<(usize, usize, f64)>) -> Self {
        pairs.sort_by_key(|a| (a.0, a.1));
        let mut offsets = vec![0usize; n + 1];
        for &(s, _, _) in &pairs {
            offsets[s + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = pairs.iter().map(|p| p.1).collect();
        let weights = pairs.iter().map(|p| p.2).collect();
        Self {
            offsets,
            targets,
            weights,
        }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    /// Out-neighbors of `i`, sorted ascending.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.neighbors(i)
            .iter()
            .copied()
            .zip(self.weights(i).iter().copied())
    }

    /// Weight of `i -> j`, or 0 when absent.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        match self.neighbors(i).binary_search(&j) {
            Ok(k) => self.weights(i)[k],
            Err(_) => 0.0,
        }
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.node_count()).all(|i| self.row(i).all(|(j, w)| self.weight(j, i) == w))
    }

    pub fn transpose(&self) -> AdjacencyView {
        let n = self.node_count();
        let pairs = (0..n)
            .flat_map(|i| self.row(i).map(move |(j, w)| (j, i, w)))
            .collect();
        AdjacencyView::from_pairs(n, pairs)
    }
}

/// A simple weighted graph on dense node ids.
#[derive(Debug, Clone)]
pub struct Graph {
    node_count: usize,
    directed: bool,
    /// Sorted by `(src, dst)`; undirected edges stored once with `src < dst`.
    edges: Vec<Edge>,
    adjacency: AdjacencyView,
    dropped_self_loops: usize,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.node_count == other.node_count
            && self.directed == other.directed
            && self.edges == other.edges
    }
}

impl Graph {
    /// Builds a graph, dropping self-loops and summing the weights of
    /// duplicate pairs (for undirected graphs `(u, v)` and `(v, u)` are the
    /// same pair).
    pub fn new<I>(node_count: usize, directed: bool, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if node_count == 0 {
            return Err(Error::InvalidParam(
                "graph must have at least one node".into(),
            ));
        }
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut dropped = 0;
        for (s, d, w) in edges {
            if s >= node_count || d >= node_count {
                return Err(Error::InvalidParam(format!(
                    "edge ({s}, {d}) has an endpoint >= node count {node_count}"
                )));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "edge ({s}, {d}) has non-positive weight {w}"
                )));
            }
            if s == d {
                dropped += 1;
                continue;
            }
            let key = if directed {
                (s, d)
            } else {
                (s.min(d), s.max(d))
            };
            *merged.entry(key).or_insert(0.0) += w;
        }
        if dropped > 0 {
            warn!("dropped {dropped} self-loop(s)");
        }
        let edges: Vec<Edge> = merged
            .into_iter()
            .map(|((src, dst), weight)| Edge { src, dst, weight })
            .collect();
        let mut pairs = Vec::with_capacity(edges.len() * if directed { 1 } else { 2 });
        for e in &edges {
            pairs.push((e.src, e.dst, e.weight));
            if !directed {
                pairs.push((e.dst, e.src, e.weight));
            }
        }
        Ok(Self {
            node_count,
            directed,
            adjacency: AdjacencyView::from_pairs(node_count, pairs),
            edges,
            dropped_self_loops: dropped,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn adjacency(&self) -> &AdjacencyView {
        &self.adjacency
    }

    pub fn dropped_self_loops(&self) -> usize {
        self.dropped_self_loops
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency.has_edge(u, v)
    }

    /// Undirected view: directed graphs get `W = (A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> Graph {
        if !self.directed {
            return self.clone();
        }
        let edges = self.edges.iter().map(|e| (e.src, e.dst, e.weight / 2.0));
        Graph::new(self.node_count, false, edges).expect("edges already validated")
    }

    /// Number of distinct neighbors with edge direction ignored.
    pub fn undirected_degrees(&self) -> Vec<usize> {
        if !self.directed {
            return (0..self.node_count)
                .map(|i| self.adjacency.out_degree(i))
                .collect();
        }
        let sym = self.symmetrized();
        (0..self.node_count)
            .map(|i| sym.adjacency.out_degree(i))
            .collect()
    }

    fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.node_count];
        for e in &self.edges {
            nb[e.src].push(e.dst);
            nb[e.dst].push(e.src);
        }
        for list in &mut nb {
            list.sort_unstable();
            list.dedup();
        }
        nb
    }

    /// Hop distances from `source` ignoring direction; `None` if unreachable.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        bfs(&self.undirected_neighbors(), source)
    }

    /// Weakly connected components, each sorted ascending, ordered by their
    /// smallest member.
    pub fn weak_components(&self) -> Vec<Vec<usize>> {
        let nb = self.undirected_neighbors();
        let mut seen = vec![false; self.node_count];
        let mut comps = Vec::new();
        for start in 0..self.node_count {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &nb[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_distances(0).iter().all(Option::is_some)
    }

    /// Subgraph induced on `nodes` (old ids), re-indexed in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Graph {
        let mut new_id = vec![usize::MAX; self.node_count];
        for (k, &v) in nodes.iter().enumerate() {
            new_id[v] = k;
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| new_id[e.src] != usize::MAX && new_id[e.dst] != usize::MAX)
            .map(|e| (new_id[e.src], new_id[e.dst], e.weight));
        Graph::new(nodes.len().max(1), self.directed, edges).expect("edges already validated")
    }

    /// Stable content hash used to key embedding caches.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "n={} directed={}\n",
            self.node_count, self.directed
        ));
        for e in &self.edges {
            h.update(format!("{} {} {}\n", e.src, e.dst, e.weight));
        }
        let digest = h.finalize();
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn bfs(nb: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; nb.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in &nb[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Subgraph on the largest weakly connected component plus the
/// new-id → old-id mapping. Ties go to the component holding the smallest
/// original id.
pub fn largest_wcc(g: &Graph) -> (Graph, Vec<usize>) {
    let comps = g.weak_components();
    // components are ordered by smallest member, so the first maximum wins ties
    let best = comps.iter().enumerate().fold(
        0,
        |best, (i, c)| if c.len() > comps[best].len() { i } else { best },
    );
    let nodes = comps[best].clone();
    if nodes.len() == g.node_count() {
        return (g.clone(), nodes);
    }
    (g.induced_subgraph(&nodes), nodes)
}

/// Bidirectional mapping between external node names and dense ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl NodeMap {
    /// Dense ids follow numeric order when every name is an unsigned
    /// integer, lexicographic order otherwise.
    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> Self {
        let mut names: Vec<String> = names.into_iter().collect();
        sort_ids(&mut names);
        names.dedup();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self { names, index }
    }

    /// Identity map `"0".."n-1"`.
    pub fn identity(n: usize) -> Self {
        Self::from_names((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    /// Keeps only `new_to_old` ids, in that order.
    pub fn restrict(&self, new_to_old: &[usize]) -> NodeMap {
        let names: Vec<String> = new_to_old.iter().map(|&o| self.names[o].clone()).collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        NodeMap { names, index }
    }
}

fn sort_ids(names: &mut [String]) {
    if names.iter().all(|n| n.parse::<u64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<u64>().unwrap());
    } else {
        names.sort();
    }
}

#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: Graph,
    pub node_map: NodeMap,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads `src dst [weight]` lines; blank lines and `#` comments are skipped.
pub fn load_edge_list(path: impl AsRef<Path>, directed: bool) -> Result<LoadedGraph> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let weight = match toks.len() {
            2 => 1.0,
            3 => toks[2]
                .parse::<f64>()
                .map_err(|_| parse_err(format!("invalid weight {:?}", toks[2])))?,
            k => {
                return Err(parse_err(format!(
                    "expected `src dst [weight]`, got {k} fields"
                )))
            }
        };
        if !(weight.is_finite() && weight > 0.0) {
            return Err(parse_err(format!("weight must be positive, got {weight}")));
        }
        raw.push((toks[0].to_string(), toks[1].to_string(), weight));
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput(format!("edge list {}", path.display())));
    }
    let node_map = NodeMap::from_names(raw.iter().flat_map(|(s, d, _)| [s.clone(), d.clone()]));
    let edges = raw
        .iter()
        .map(|(s, d, w)| (node_map.get(s).unwrap(), node_map.get(d).unwrap(), *w));
    let graph = Graph::new(node_map.len(), directed, edges)?;
    Ok(LoadedGraph { graph, node_map })
}

/// Writes one `src dst [weight]` line per stored edge using dense ids;
/// unit weights are omitted.
pub fn write_edge_list(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for e in g.edges() {
        if e.weight == 1.0 {
            let _ = writeln!(out, "{} {}", e.src, e.dst);
        } else {
            let _ = writeln!(out, "{} {} {}", e.src, e.dst, e.weight);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Binary multi-label assignment, stored sparsely as sorted label lists.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    label_names: Vec<String>,
    rows: Vec<Vec<usize>>,
    partial: bool,
}

impl LabelMatrix {
    pub fn new(label_names: Vec<String>, rows: Vec<Vec<usize>>) -> Result<Self> {
        let l = label_names.len();
        let mut rows = rows;
        for (i, r) in rows.iter_mut().enumerate() {
            r.sort_unstable();
            r.dedup();
            if let Some(&bad) = r.iter().find(|&&c| c >= l) {
                return Err(Error::InvalidParam(format!(
                    "node {i} has label index {bad} >= label count {l}"
                )));
            }
        }
        let partial = rows.iter().any(Vec::is_empty);
        Ok(Self {
            label_names,
            rows,
            partial,
        })
    }

    /// One label per node, label names `"0".."L-1"`.
    pub fn from_classes(classes: &[usize]) -> Self {
        let l = classes.iter().copied().max().map_or(0, |m| m + 1);
        Self {
            label_names: (0..l).map(|c| c.to_string()).collect(),
            rows: classes.iter().map(|&c| vec![c]).collect(),
            partial: false,
        }
    }

    pub fn from_dense(assignment: &[Vec<bool>]) -> Result<Self> {
        let l = assignment.first().map_or(0, Vec::len);
        let rows = assignment
            .iter()
            .map(|r| {
                if r.len() != l {
                    return Err(Error::ShapeMismatch("ragged label matrix".into()));
                }
                Ok(r.iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(c, _)| c)
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new((0..l).map(|c| c.to_string()).collect(), rows)
    }

    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    pub fn label_count(&self) -> usize {
        self.label_names.len()
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn is_partial(&self) -> bool {
        self.partial
    }

    pub fn labels(&self, node: usize) -> &[usize] {
        &self.rows[node]
    }

    pub fn get(&self, node: usize, label: usize) -> bool {
        self.rows[node].binary_search(&label).is_ok()
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        self.rows
            .iter()
            .map(|r| {
                (0..self.label_count())
                    .map(|c| r.binary_search(&c).is_ok())
                    .collect()
            })
            .collect()
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&i| !self.rows[i].is_empty())
            .collect()
    }

    /// Positive count per class.
    pub fn support(&self) -> Vec<usize> {
        let mut s = vec![0; self.label_count()];
        for r in &self.rows {
            for &c in r {
                s[c] += 1;
            }
        }
        s
    }

    /// Number of labels per node; the known-label-count prediction protocol
    /// uses this as `k`.
    pub fn counts(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    /// Rows `idx` in order; the label space is unchanged.
    pub fn select_rows(&self, idx: &[usize]) -> LabelMatrix {
        let rows: Vec<Vec<usize>> = idx.iter().map(|&i| self.rows[i].clone()).collect();
        LabelMatrix {
            label_names: self.label_names.clone(),
            partial: rows.iter().any(Vec::is_empty),
            rows,
        }
    }

    /// Dataset-level invariants: every class has a positive node and, unless
    /// the matrix is partially labeled, every node has a label.
    pub fn validate(&self, allow_partial: bool) -> Result<()> {
        if let Some(c) = self.support().iter().position(|&s| s == 0) {
            return Err(Error::InvalidParam(format!(
                "class {:?} has no positive node",
                self.label_names[c]
            )));
        }
        if self.partial && !allow_partial {
            let i = self.rows.iter().position(Vec::is_empty).unwrap();
            return Err(Error::InvalidParam(format!("node {i} has no label")));
        }
        Ok(())
    }

    /// Drops classes without any positive node and re-indexes the rest.
    pub fn compact(&self) -> LabelMatrix {
        let support = self.support();
        let mut remap = vec![usize::MAX; self.label_count()];
        let mut names = Vec::new();
        for (c, &s) in support.iter().enumerate() {
            if s > 0 {
                remap[c] = names.len();
                names.push(self.label_names[c].clone());
            }
        }
        LabelMatrix {
            label_names: names,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&c| remap[c]).collect())
                .collect(),
            partial: self.partial,
        }
    }
}

/// What to do with label lines naming nodes the graph does not contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownNodePolicy {
    #[default]
    Error,
    Skip,
}

/// Reads `node label1 label2 ...` lines aligned to `node_map`. Nodes not
/// mentioned stay unlabeled.
pub fn load_labels(
    path: impl AsRef<Path>,
    node_map: &NodeMap,
    policy: UnknownNodePolicy,
) -> Result<LabelMatrix> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut per_node: Vec<Vec<String>> = vec![Vec::new(); node_map.len()];
    let mut unknown = Vec::new();
    let mut any = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        any = true;
        let mut toks = line.split_whitespace();
        let node = toks.next().unwrap();
        match node_map.get(node) {
            Some(id) => per_node[id].extend(toks.map(str::to_string)),
            None => unknown.push(node.to_string()),
        }
    }
    if !any {
        return Err(Error::EmptyInput(format!("label file {}", path.display())));
    }
    if !unknown.is_empty() {
        match policy {
            UnknownNodePolicy::Error => return Err(Error::UnknownNodes(unknown)),
            UnknownNodePolicy::Skip => {
                warn!("skipped {} label lines for unknown nodes", unknown.len())
            }
        }
    }
    let mut names: Vec<String> = per_node.iter().flatten().cloned().collect();
    sort_ids(&mut names);
    names.dedup();
    let index: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let rows = per_node
        .iter()
        .map(|ls| ls.iter().map(|l| index[l.as_str()]).collect())
        .collect();
    LabelMatrix::new(names, rows)
}

/// Writes `node label...` lines with dense node ids; unlabeled nodes are
/// omitted.
pub fn write_labels(labels: &LabelMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for i in 0..labels.node_count() {
        if labels.labels(i).is_empty() {
            continue;
        }
        let _ = write!(out, "{i}");
        for &c in labels.labels(i) {
            let _ = write!(out, " {}", labels.label_names[c]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
