//! Classical random-graph generators, random cross-edge merging and
//! centrality-derived node labels for the synthetic ensemble experiment.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, LabelMatrix};

const RGG_MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    BarabasiAlbert {
        m: usize,
    },
    WattsStrogatz {
        k: usize,
        p: f64,
    },
    StochasticBlockModel {
        block_sizes: Vec<usize>,
        p_in: f64,
        p_out: f64,
    },
    RandomGeometric {
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub kind: SynthKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn barabasi_albert(n: usize, m: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::BarabasiAlbert { m },
            n,
            seed,
        }
    }

    pub fn watts_strogatz(n: usize, k: usize, p: f64, seed: u64) -> Self {
        Self {
            kind: SynthKind::WattsStrogatz { k, p },
            n,
            seed,
        }
    }

    pub fn stochastic_block_model(
        block_sizes: Vec<usize>,
        p_in: f64,
        p_out: f64,
        seed: u64,
    ) -> Self {
        let n = block_sizes.iter().sum();
        Self {
            kind: SynthKind::StochasticBlockModel {
                block_sizes,
                p_in,
                p_out,
            },
            n,
            seed,
        }
    }

    pub fn random_geometric(n: usize, radius: f64, seed: u64) -> Self {
        Self {
            kind: SynthKind::RandomGeometric { radius },
            n,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!(
                    "{name} = {p} is not a probability"
                )))
            }
        };
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        match &self.kind {
            SynthKind::BarabasiAlbert { m } => {
                if *m == 0 || *m >= self.n {
                    return bad(format!(
                        "Barabasi-Albert needs 1 <= m < n, got m={m} n={}",
                        self.n
                    ));
                }
            }
            SynthKind::WattsStrogatz { k, p } => {
                if k % 2 != 0 || *k >= self.n {
                    return bad(format!(
                        "Watts-Strogatz needs even k < n, got k={k} n={}",
                        self.n
                    ));
                }
                prob("p", *p)?;
            }
            SynthKind::StochasticBlockModel {
                block_sizes,
                p_in,
                p_out,
            } => {
                if block_sizes.iter().sum::<usize>() != self.n || block_sizes.contains(&0) {
                    return bad(format!(
                        "block sizes {block_sizes:?} must be positive and sum to n={}",
                        self.n
                    ));
                }
                prob("p_in", *p_in)?;
                prob("p_out", *p_out)?;
            }
            SynthKind::RandomGeometric { radius } => {
                if !(radius.is_finite() && *radius >= 0.0) {
                    return bad(format!("radius must be non-negative, got {radius}"));
                }
            }
        }
        Ok(())
    }
}

/// The four 100-node graphs of the motivating experiment with their default
/// parameters; graph `i` is seeded with `seed + i`.
pub fn default_specs(seed: u64) -> Vec<SynthSpec> {
    vec![
        SynthSpec::barabasi_albert(100, 2, seed),
        SynthSpec::random_geometric(100, 0.2, seed + 1),
        SynthSpec::stochastic_block_model(vec![25; 4], 0.3, 0.01, seed + 2),
        SynthSpec::watts_strogatz(100, 4, 0.1, seed + 3),
    ]
}

pub fn generate(spec: &SynthSpec) -> Result<Graph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let edges = match &spec.kind {
        SynthKind::BarabasiAlbert { m } => barabasi_albert(n, *m, &mut rng),
        SynthKind::WattsStrogatz { k, p } => watts_strogatz(n, *k, *p, &mut rng),
        SynthKind::StochasticBlockModel {
            block_sizes,
            p_in,
            p_out,
        } => stochastic_block_model(block_sizes, *p_in, *p_out, &mut rng),
        SynthKind::RandomGeometric { radius } => random_geometric(n, *radius, &mut rng)?,
    };
    Graph::new(n, false, edges.into_iter().map(|(u, v)| (u, v, 1.0)))
}

/// Preferential attachment starting from `m` isolated nodes; node `m`
/// attaches to all of them, later nodes to `m` distinct degree-weighted
/// targets. Produces exactly `(n - m) * m` edges.
fn barabasi_albert(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity((n - m) * m);
    let mut repeated: Vec<usize> = Vec::with_capacity(2 * (n - m) * m);
    let mut targets: Vec<usize> = (0..m).collect();
    for source in m..n {
        for &t in &targets {
            edges.push((t, source));
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(std::iter::repeat_n(source, m));
        let mut next: Vec<usize> = Vec::with_capacity(m);
        while next.len() < m {
            let t = repeated[rng.gen_range(0..repeated.len())];
            if !next.contains(&t) {
                next.push(t);
            }
        }
        targets = next;
    }
    edges
}

fn watts_strogatz(n: usize, k: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for u in 0..n {
        for j in 1..=k / 2 {
            let v = (u + j) % n;
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            if rng.gen::<f64>() >= p || !adj[u].contains(&v) || adj[u].len() >= n - 1 {
                continue;
            }
            let mut w = rng.gen_range(0..n);
            while w == u || adj[u].contains(&w) {
                w = rng.gen_range(0..n);
            }
            adj[u].remove(&v);
            adj[v].remove(&u);
            adj[u].insert(w);
            adj[w].insert(u);
        }
    }
    adj.iter()
        .enumerate()
        .flat_map(|(u, nb)| nb.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
        .collect()
}

fn stochastic_block_model(
    block_sizes: &[usize],
    p_in: f64,
    p_out: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let block: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = block.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block[u] == block[v] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Points uniform in the unit square joined within `radius`; resampled until
/// the graph is connected.
fn random_geometric(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let r2 = radius * radius;
    for _ in 0..RGG_MAX_ATTEMPTS {
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                let (dx, dy) = (pts[u].0 - pts[v].0, pts[u].1 - pts[v].1);
                if dx * dx + dy * dy <= r2 {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::new(n, false, edges.iter().map(|&(u, v)| (u, v, 1.0)))?;
        if g.is_connected() {
            return Ok(edges);
        }
    }
    Err(Error::InvalidParam(format!(
        "random geometric graph with n={n} r={radius} not connected after {RGG_MAX_ATTEMPTS} attempts"
    )))
}

/// Maps a pair index in `0..n(n-1)/2` to the lexicographically ordered pair
/// `(i, j)`, `i < j`.
fn decode_pair(mut idx: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
        i += 1;
    }
}

/// Disjoint union of `graphs` plus random cross edges: `floor(pair_fraction
/// * N)` distinct unordered node pairs are drawn over the whole union, and
/// each gains an edge with probability `accept_prob` unless already present.
pub fn merge_with_random_edges(
    graphs: &[Graph],
    pair_fraction: f64,
    accept_prob: f64,
    seed: u64,
) -> Result<Graph> {
    if graphs.is_empty() {
        return Err(Error::EmptyInput("graph list".into()));
    }
    for (name, v) in [
        ("pair_fraction", pair_fraction),
        ("accept_prob", accept_prob),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParam(format!(
                "{name} = {v} must lie in [0, 1]"
            )));
        }
    }
    if graphs.iter().any(Graph::is_directed) {
        return Err(Error::InvalidParam(
            "merge expects undirected graphs".into(),
        ));
    }
    let total: usize = graphs.iter().map(Graph::node_count).sum();
    let mut edges = Vec::new();
    let mut offset = 0;
    for g in graphs {
        edges.extend(
            g.edges()
                .iter()
                .map(|e| (e.src + offset, e.dst + offset, e.weight)),
        );
        offset += g.node_count();
    }
    let union = Graph::new(total, false, edges.iter().copied())?;

    let all_pairs = total * (total - 1) / 2;
    let draws = ((pair_fraction * total as f64).floor() as usize).min(all_pairs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled = index::sample(&mut rng, all_pairs, draws);
    for idx in sampled.iter() {
        let (i, j) = decode_pair(idx, total);
        let accept = rng.gen::<f64>() < accept_prob;
        if accept && !union.has_edge(i, j) {
            edges.push((i, j, 1.0));
        }
    }
    Graph::new(total, false, edges)
}

/// Equal-frequency binning. Bin boundaries sit at the empirical quantiles
/// `sorted[ceil(b*n/bins) - 1]`; equal values always share a bin and empty
/// bins are compacted away, so fewer than `bins` classes may result.
pub fn quantile_bins(values: &[f64], bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(Error::InvalidParam("bins must be >= 1".into()));
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let thresholds: Vec<f64> = (1..bins)
        .map(|b| sorted[(b * n).div_ceil(bins) - 1])
        .collect();
    let raw: Vec<usize> = values
        .iter()
        .map(|v| thresholds.iter().filter(|&&t| *v > t).count())
        .collect();
    let used: BTreeSet<usize> = raw.iter().copied().collect();
    let rank: Vec<usize> = {
        let mut r = vec![0; bins];
        for (k, &b) in used.iter().enumerate() {
            r[b] = k;
        }
        r
    };
    Ok(raw.into_iter().map(|b| rank[b]).collect())
}

fn bin_labels(values: &[f64], bins: usize) -> Result<LabelMatrix> {
    Ok(LabelMatrix::from_classes(&quantile_bins(values, bins)?))
}

/// Single-label classes from binned undirected degree.
pub fn degree_labels(g: &Graph, bins: usize) -> Result<LabelMatrix> {
    let deg: Vec<f64> = g
        .undirected_degrees()
        .into_iter()
        .map(|d| d as f64)
        .collect();
    bin_labels(&deg, bins)
}

/// `(n - 1) / sum of hop distances`, edge direction ignored.
pub fn closeness_centrality(g: &Graph) -> Result<Vec<f64>> {
    let n = g.node_count();
    if n == 1 {
        return Ok(vec![0.0]);
    }
    (0..n)
        .map(|v| {
            let total = g
                .bfs_distances(v)
                .into_iter()
                .try_fold(0usize, |acc, d| d.map(|d| acc + d))
                .ok_or(Error::Disconnected)?;
            Ok((n - 1) as f64 / total as f64)
        })
        .collect()
}

/// Single-label classes from binned closeness centrality. The graph must be
/// connected.
pub fn closeness_labels(g: &Graph, bins: usize) -> Result<LabelMatrix> {
    bin_labels(&closeness_centrality(g)?, bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(leaves: usize) -> Graph {
        Graph::new(leaves + 1, false, (1..=leaves).map(|i| (0, i, 1.0))).unwrap()
    }

    #[test]
    fn ba_edge_count() {
        let g = generate(&SynthSpec::barabasi_albert(100, 2, 7)).unwrap();
        assert_eq!(g.edge_count(), 196);
        assert!(g.is_connected());
    }

    #[test]
    fn ws_without_rewiring_is_ring_lattice() {
        let g = generate(&SynthSpec::watts_strogatz(100, 4, 0.0, 1)).unwrap();
        assert_eq!(g.edge_count(), 200);
        assert!(g.undirected_degrees().iter().all(|&d| d == 4));
        assert!(g.has_edge(0, 99) && g.has_edge(0, 98) && !g.has_edge(0, 3));
    }

    #[test]
    fn ws_rewiring_preserves_edge_count() {
        let g = generate(&SynthSpec::watts_strogatz(100, 4, 0.5, 3)).unwrap();
        assert_eq!(g.edge_count(), 200);
    }

    #[test]
    fn sbm_degenerate_probabilities_give_cliques() {
        let g = generate(&SynthSpec::stochastic_block_model(vec![25; 4], 1.0, 0.0, 0)).unwrap();
        assert_eq!(g.edge_count(), 4 * 25 * 24 / 2);
        let comps = g.weak_components();
        assert_eq!(comps.len(), 4);
        assert!(comps.iter().all(|c| c.len() == 25));
    }

    #[test]
    fn rgg_is_connected() {
        let g = generate(&SynthSpec::random_geometric(100, 0.2, 5)).unwrap();
        assert!(g.is_connected());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate(&SynthSpec::barabasi_albert(5, 5, 0)).is_err());
        assert!(generate(&SynthSpec::watts_strogatz(10, 3, 0.1, 0)).is_err());
        assert!(generate(&SynthSpec::watts_strogatz(10, 4, 1.5, 0)).is_err());
        assert!(generate(&SynthSpec::stochastic_block_model(vec![5, 5], 0.5, -0.1, 0)).is_err());
    }

    #[test]
    fn generators_are_seed_deterministic() {
        for spec in default_specs(11) {
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        }
    }

    #[test]
    fn pair_decoding_covers_all_pairs() {
        let n = 7;
        let mut seen = Vec::new();
        for idx in 0..n * (n - 1) / 2 {
            seen.push(decode_pair(idx, n));
        }
        let expected: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn merge_with_zero_acceptance_is_union() {
        let a = star(3);
        let b = star(2);
        let m = merge_with_random_edges(&[a.clone(), b.clone()], 1.0, 0.0, 4).unwrap();
        assert_eq!(m.node_count(), 7);
        assert_eq!(m.edge_count(), a.edge_count() + b.edge_count());
    }

    #[test]
    fn merge_rejects_empty() {
        assert!(matches!(
            merge_with_random_edges(&[], 0.4, 0.3, 0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn star_degree_bins() {
        let l = degree_labels(&star(5), 2).unwrap();
        assert_eq!(l.labels(0), &[1]);
        assert!((1..6).all(|i| l.labels(i) == [0]));
    }

    #[test]
    fn constant_degree_single_bin() {
        let g = generate(&SynthSpec::watts_strogatz(20, 4, 0.0, 0)).unwrap();
        let l = degree_labels(&g, 3).unwrap();
        assert_eq!(l.label_count(), 1);
    }

    #[test]
    fn closeness_small_graphs() {
        let c = closeness_centrality(&star(5)).unwrap();
        assert_eq!(c[0], 1.0);
        let path = Graph::new(3, false, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let c = closeness_centrality(&path).unwrap();
        assert_eq!(c, vec![2.0 / 3.0, 1.0, 2.0 / 3.0]);
        let clique = generate(&SynthSpec::stochastic_block_model(vec![25], 1.0, 0.0, 0)).unwrap();
        assert!(closeness_centrality(&clique)
            .unwrap()
            .iter()
            .all(|&x| x == 1.0));
    }

    #[test]
    fn closeness_rejects_disconnected() {
        let g = Graph::new(4, false, [(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert!(matches!(closeness_labels(&g, 2), Err(Error::Disconnected)));
    }

    #[test]
    fn quantile_bins_equal_frequency() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(quantile_bins(&v, 2).unwrap(), vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(quantile_bins(&v, 4).unwrap(), vec![0, 0, 1, 1, 2, 2, 3, 3]);
        assert!(quantile_bins(&v, 0).is_err());
    }
}
