use std::collections::BTreeSet;

use graphens::graph::{largest_wcc, Graph};
use graphens::synthgen::{
    closeness_centrality, closeness_labels, default_specs, degree_labels, generate,
    merge_with_random_edges, quantile_bins, SynthSpec,
};
use proptest::prelude::*;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn edge_set(g: &Graph) -> BTreeSet<(usize, usize)> {
    g.edges()
        .iter()
        .map(|e| (e.src.min(e.dst), e.src.max(e.dst)))
        .collect()
}

fn triangle() -> Graph {
    Graph::new(3, false, [(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap()
}

/// Same seed discipline as the library: one index sample over the
/// lexicographically enumerated pairs, then one acceptance draw per pair.
fn reference_merge(
    graphs: &[Graph],
    frac: f64,
    accept: f64,
    seed: u64,
) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    let mut offset = 0;
    for g in graphs {
        for (a, b) in edge_set(g) {
            out.insert((a + offset, b + offset));
        }
        offset += g.node_count();
    }
    let n = offset;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let draws = (frac * n as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, pairs.len(), draws);
    for k in picked.iter() {
        if rng.gen::<f64>() < accept {
            out.insert(pairs[k]);
        }
    }
    out
}

fn floyd_warshall_closeness(g: &Graph) -> Vec<f64> {
    let n = g.node_count();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for (a, b) in edge_set(g) {
        d[a][b] = 1;
        d[b][a] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d.iter()
        .map(|row| (n - 1) as f64 / row.iter().sum::<usize>() as f64)
        .collect()
}

/// Sort, cut at `sorted[ceil(b n / bins) - 1]`, count thresholds below each
/// value, then renumber the bins that are actually used.
fn sort_and_split(values: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let cuts: Vec<f64> = (1..bins)
        .map(|b| sorted[(b * n + bins - 1) / bins - 1])
        .collect();
    let raw: Vec<usize> = values
        .iter()
        .map(|v| cuts.iter().filter(|c| v > c).count())
        .collect();
    let used: Vec<usize> = raw
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    raw.iter()
        .map(|r| used.iter().position(|u| u == r).unwrap())
        .collect()
}

fn merged_default(seed: u64) -> Graph {
    let graphs: Vec<Graph> = default_specs(seed)
        .iter()
        .map(|s| generate(s).unwrap())
        .collect();
    merge_with_random_edges(&graphs, 0.4, 0.3, seed + 4).unwrap()
}

#[test]
fn merge_matches_reference_sampler() {
    let graphs = [triangle(), triangle()];
    for seed in 0..20 {
        let merged = merge_with_random_edges(&graphs, 0.5, 1.0, seed).unwrap();
        assert_eq!(edge_set(&merged), reference_merge(&graphs, 0.5, 1.0, seed));
    }
    let specs = default_specs(3);
    let graphs: Vec<Graph> = specs.iter().map(|s| generate(s).unwrap()).collect();
    let merged = merge_with_random_edges(&graphs, 0.4, 0.3, 99).unwrap();
    assert_eq!(edge_set(&merged), reference_merge(&graphs, 0.4, 0.3, 99));
}

#[test]
fn default_merge_adds_about_forty_eight_edges() {
    // 160 sampled pairs at acceptance 0.3; averaged over seeds.
    let mut added = 0usize;
    let seeds = 200u64;
    for seed in 0..seeds {
        let graphs: Vec<Graph> = default_specs(seed)
            .iter()
            .map(|s| generate(s).unwrap())
            .collect();
        let base: usize = graphs.iter().map(Graph::edge_count).sum();
        let merged = merge_with_random_edges(&graphs, 0.4, 0.3, seed).unwrap();
        assert_eq!(merged.node_count(), 400);
        added += merged.edge_count() - base;
    }
    let mean = added as f64 / seeds as f64;
    // sd of a single draw is sqrt(160 * 0.3 * 0.7) ~ 5.8
    assert!((mean - 48.0).abs() < 1.5, "mean added edges {mean}");
}

#[test]
fn merged_degree_labels_match_quantile_oracle() {
    for seed in 0..5 {
        let (g, _) = largest_wcc(&merged_default(seed));
        let deg: Vec<f64> = g.undirected_degrees().iter().map(|&d| d as f64).collect();
        let expected = sort_and_split(&deg, 8);
        let labels = degree_labels(&g, 8).unwrap();
        for (i, &c) in expected.iter().enumerate() {
            assert_eq!(labels.labels(i), &[c], "node {i}");
        }
        assert_eq!(quantile_bins(&deg, 8).unwrap(), expected);
    }
}

#[test]
fn merged_closeness_matches_floyd_warshall() {
    let (g, _) = largest_wcc(&merged_default(1));
    let oracle = floyd_warshall_closeness(&g);
    let got = closeness_centrality(&g).unwrap();
    for (a, b) in got.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
        assert!(*a > 0.0 && *a <= 1.0);
    }
    let labels = closeness_labels(&g, 8).unwrap();
    let expected = sort_and_split(&oracle, 8);
    for (i, &c) in expected.iter().enumerate() {
        assert_eq!(labels.labels(i), &[c]);
    }
}

#[test]
fn clique_closeness_is_one() {
    let g = generate(&SynthSpec::stochastic_block_model(vec![25], 1.0, 0.0, 0)).unwrap();
    assert_eq!(g.edge_count(), 300);
    assert!(closeness_centrality(&g).unwrap().iter().all(|&c| c == 1.0));
}

fn any_spec() -> impl Strategy<Value = SynthSpec> {
    prop_oneof![
        (3usize..60, 1usize..3, any::<u64>())
            .prop_map(|(n, m, s)| SynthSpec::barabasi_albert(n, m, s)),
        (6usize..60, 0.0f64..1.0, any::<u64>())
            .prop_map(|(n, p, s)| SynthSpec::watts_strogatz(n, 4, p, s)),
        (
            1usize..15,
            1usize..4,
            0.0f64..1.0,
            0.0f64..0.3,
            any::<u64>()
        )
            .prop_map(|(b, k, pin, pout, s)| SynthSpec::stochastic_block_model(
                vec![b; k],
                pin,
                pout,
                s
            )),
        (2usize..60, 0.2f64..0.6, any::<u64>())
            .prop_map(|(n, r, s)| SynthSpec::random_geometric(n, r, s)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generators_are_deterministic_and_simple(spec in any_spec()) {
        let Ok(a) = generate(&spec) else { return Ok(()) };
        let b = generate(&spec).unwrap();
        prop_assert_eq!(a.edges(), b.edges());
        prop_assert_eq!(a.node_count(), spec.n);
        prop_assert!(!a.is_directed());
        prop_assert_eq!(a.dropped_self_loops(), 0);
    }

    #[test]
    fn merge_only_adds_edges(
        s1 in any_spec(),
        s2 in any_spec(),
        frac in 0.0f64..1.0,
        accept in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let (Ok(a), Ok(b)) = (generate(&s1), generate(&s2)) else { return Ok(()) };
        let merged = merge_with_random_edges(&[a.clone(), b.clone()], frac, accept, seed).unwrap();
        let mut union = edge_set(&a);
        union.extend(edge_set(&b).into_iter().map(|(x, y)| (x + a.node_count(), y + a.node_count())));
        let got = edge_set(&merged);
        prop_assert!(union.is_subset(&got));
        prop_assert!(merged.edges().iter().all(|e| e.weight == 1.0));
        let draws = (frac * merged.node_count() as f64).floor() as usize;
        prop_assert!(got.len() - union.len() <= draws);
    }

    #[test]
    fn closeness_in_unit_interval(spec in any_spec()) {
        let Ok(g) = generate(&spec) else { return Ok(()) };
        let (g, _) = largest_wcc(&g);
        prop_assume!(g.node_count() > 1);
        for c in closeness_centrality(&g).unwrap() {
            prop_assert!(c > 0.0 && c <= 1.0);
        }
    }

    #[test]
    fn binning_matches_oracle(values in prop::collection::vec(0u8..20, 1..80), bins in 1usize..10) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let got = quantile_bins(&v, bins).unwrap();
        prop_assert_eq!(&got, &sort_and_split(&v, bins));
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] == v[j] {
                    prop_assert_eq!(got[i], got[j]);
                }
                if v[i] < v[j] {
                    prop_assert!(got[i] <= got[j]);
                }
            }
        }
    }
}
