use std::collections::BTreeSet;
use std::sync::Arc;

use graphens::embed::{EmbeddingMatrix, HyperGrid, MethodParams};
use graphens::ensemble::{
    count_candidate_evaluations, exhaustive_search, greedy_ensemble, greedy_evaluation_bound,
    grid_search, split_nodes, split_subset, ClassifierOptions, DimensionResult, EmbeddingStore,
    Evaluator, Experiment, MethodCandidate, MethodSpec, SplitIndices,
};
use graphens::graph::{Graph, LabelMatrix};
use graphens::synthgen::{generate, SynthSpec};
use graphens::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 80;

fn block_graph(seed: u64) -> (Graph, LabelMatrix) {
    let g = generate(&SynthSpec::stochastic_block_model(
        vec![20; 4],
        0.4,
        0.03,
        seed,
    ))
    .unwrap();
    let labels = LabelMatrix::from_classes(&(0..N).map(|i| i / 20).collect::<Vec<_>>());
    (g, labels)
}

/// Block indicator columns scaled by `signal`, plus uniform noise.
fn noisy(signal: f64, dim: usize, id: &str, rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
    let m = DMatrix::from_fn(N, dim, |i, j| {
        let hit = if j % 4 == i / 20 { signal } else { 0.0 };
        hit + rng.gen_range(-1.0..1.0)
    });
    EmbeddingMatrix::new(m, id).unwrap()
}

fn candidate(id: &str, embs: Vec<EmbeddingMatrix>, eval: &Evaluator) -> MethodCandidate {
    let per_dim: Vec<DimensionResult> = embs
        .into_iter()
        .map(|e| {
            let s = eval.validation_macro_f1(&[&e]).unwrap();
            DimensionResult {
                dim: e.dim(),
                params: MethodParams::Lap,
                seed: 0,
                val_macro_f1: s,
                grid_scores: vec![Some(s)],
                embedding: Some(Arc::new(e)),
            }
        })
        .collect();
    let best_dimension = per_dim
        .iter()
        .fold(None::<&DimensionResult>, |b, r| match b {
            Some(b) if b.val_macro_f1 >= r.val_macro_f1 => Some(b),
            _ => Some(r),
        })
        .unwrap()
        .dim;
    MethodCandidate {
        method_id: id.into(),
        per_dim,
        best_dimension,
        failures: vec![],
    }
}

fn split(seed: u64) -> SplitIndices {
    split_nodes(N, [0.5, 0.2, 0.3], seed).unwrap()
}

#[test]
fn greedy_invariants_over_random_candidate_sets() {
    let (_, labels) = block_graph(0);
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = split(seed);
        let eval = Evaluator::new(&labels, &sp, ClassifierOptions::default(), 0);
        let k = rng.gen_range(1..6);
        let cands: Vec<MethodCandidate> = (0..k)
            .map(|m| {
                let id = format!("m{m}");
                let signal = rng.gen_range(0.0..1.5);
                let embs = [4, 8]
                    .iter()
                    .map(|&d| noisy(signal, d, &id, &mut rng))
                    .collect();
                candidate(&id, embs, &eval)
            })
            .collect();
        let sel = greedy_ensemble(&cands, &eval).unwrap();
        let best_single = cands
            .iter()
            .map(|c| c.best_score())
            .fold(f64::MIN, f64::max);
        assert_eq!(sel.best_single_val, best_single);
        assert!(sel.val_macro_f1 >= best_single);
        assert!(sel.trajectory.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(sel.trajectory.len(), k);
        let ids: BTreeSet<&str> = sel.members.iter().map(|m| m.method_id.as_str()).collect();
        assert_eq!(ids.len(), sel.members.len());
        assert!(count_candidate_evaluations(&sel) <= greedy_evaluation_bound(k, 2));
        assert_eq!(eval.test_reads(), 0);
    }
}

#[test]
fn single_candidate_is_its_own_ensemble() {
    let (_, labels) = block_graph(0);
    let sp = split(1);
    let eval = Evaluator::new(&labels, &sp, ClassifierOptions::default(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = candidate("only", vec![noisy(1.0, 4, "only", &mut rng)], &eval);
    let sel = greedy_ensemble(std::slice::from_ref(&c), &eval).unwrap();
    assert_eq!(sel.members.len(), 1);
    assert_eq!(sel.evaluations, 1);
    assert_eq!(sel.val_macro_f1, c.best_score());
    assert_eq!(greedy_evaluation_bound(1, 3), 1);
    assert_eq!(greedy_evaluation_bound(5, 3), 13);
}

#[test]
fn duplicated_embedding_is_rejected() {
    let (_, labels) = block_graph(0);
    let mut rejected = 0;
    for seed in 0..10 {
        let sp = split(seed);
        let eval = Evaluator::new(&labels, &sp, ClassifierOptions::default(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = noisy(0.8, 6, "a", &mut rng);
        let mut twin = e.clone();
        twin.method_id = "b".into();
        let cands = [
            candidate("a", vec![e], &eval),
            candidate("b", vec![twin], &eval),
        ];
        let sel = greedy_ensemble(&cands, &eval).unwrap();
        if sel.members.len() == 1 {
            rejected += 1;
        }
    }
    assert_eq!(rejected, 10);
}

#[test]
fn exhaustive_oracle_on_four_candidates() {
    let (_, labels) = block_graph(0);
    let sp = split(2);
    let eval = Evaluator::new(&labels, &sp, ClassifierOptions::default(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cands: Vec<MethodCandidate> = (0..4)
        .map(|m| {
            let id = format!("m{m}");
            let embs = [2, 4, 8]
                .iter()
                .map(|&d| noisy(0.4 + 0.2 * m as f64, d, &id, &mut rng))
                .collect();
            candidate(&id, embs, &eval)
        })
        .collect();
    let ex = exhaustive_search(&cands, &eval).unwrap();
    assert_eq!(ex.evaluations, 15);
    let sel = greedy_ensemble(&cands, &eval).unwrap();
    assert!(sel.evaluations <= 10);
    assert!(
        ex.val_macro_f1
            >= cands
                .iter()
                .map(|c| c.best_score())
                .fold(f64::MIN, f64::max)
    );
    eprintln!(
        "greedy {:.4} with {} evaluations, exhaustive {:.4} with 15 (gap {:+.4})",
        sel.val_macro_f1,
        sel.evaluations,
        ex.val_macro_f1,
        sel.val_macro_f1 - ex.val_macro_f1
    );
    let mut five = cands.clone();
    five.push(candidate("m4", vec![noisy(0.1, 2, "m4", &mut rng)], &eval));
    assert!(exhaustive_search(&five, &eval).is_err());
}

#[test]
fn test_split_opens_once() {
    let (_, labels) = block_graph(0);
    let sp = split(3);
    let eval = Evaluator::new(&labels, &sp, ClassifierOptions::default(), 7);
    let t = eval.open_test().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = noisy(1.0, 4, "a", &mut rng);
    assert!(t.report(&[&e]).unwrap().macro_f1 > 0.0);
    match eval.open_test() {
        Err(Error::TestLeak { round }) => assert_eq!(round, 7),
        other => panic!("second test access allowed: {:?}", other.is_ok()),
    }
}

#[test]
fn grid_fit_counts_and_cache() {
    let (g, labels) = block_graph(4);
    let sp = split(4);
    let eval = Evaluator::new(&labels, &sp, ClassifierOptions::default(), 0);
    let dir = tempfile::tempdir().unwrap();
    let store = EmbeddingStore::new(&g, Some(dir.path().to_path_buf()));

    let lap = grid_search(
        &g,
        &store,
        &MethodSpec::builtin("lap").unwrap(),
        &[4, 8],
        0,
        &eval,
    )
    .unwrap();
    assert_eq!(store.fits(), 2);
    assert!(lap.per_dim.iter().all(|r| r.grid_scores.len() == 1));

    let gf = grid_search(
        &g,
        &store,
        &MethodSpec::builtin("gf").unwrap(),
        &[4],
        0,
        &eval,
    )
    .unwrap();
    assert_eq!(store.fits(), 2 + 9);
    assert_eq!(gf.per_dim[0].grid_scores.len(), 9);

    let n2v_spec = MethodSpec::builtin("node2vec").unwrap();
    assert_eq!(n2v_spec.grid.size(), 25);
    let mut quick = n2v_spec.clone();
    if let MethodParams::Node2vec(p) = &mut quick.params {
        p.walk_length = 10;
        p.walks_per_node = 2;
    }
    let n2v = grid_search(&g, &store, &quick, &[4], 0, &eval).unwrap();
    assert_eq!(store.fits(), 2 + 9 + 25);
    assert_eq!(n2v.per_dim[0].grid_scores.len(), 25);
    assert_eq!(MethodSpec::builtin("hope").unwrap().grid.size(), 16);

    // Same request again: served from memory.
    grid_search(
        &g,
        &store,
        &MethodSpec::builtin("gf").unwrap(),
        &[4],
        0,
        &eval,
    )
    .unwrap();
    assert_eq!(store.fits(), 36);

    let best = gf.best();
    let path = store
        .persist(&g, "gf", &best.params, best.dim, best.seed)
        .unwrap();
    assert_eq!(store.fits(), 36);
    let name = path.file_name().unwrap().to_str().unwrap().to_string();
    assert!(
        name.starts_with("gf_4_") && name.ends_with(".emb"),
        "{name}"
    );
    let fresh = EmbeddingStore::new(&g, Some(dir.path().to_path_buf()));
    let again = fresh
        .get_or_fit(&g, "gf", &best.params, 4, best.seed)
        .unwrap();
    assert_eq!(fresh.fits(), 0);
    assert_eq!(fresh.disk_hits(), 1);
    assert_eq!(again.values, best.embedding.as_ref().unwrap().values);
}

#[test]
fn failing_grid_reports_all_causes() {
    let (g, labels) = block_graph(5);
    let sp = split(5);
    let eval = Evaluator::new(&labels, &sp, ClassifierOptions::default(), 0);
    let store = EmbeddingStore::new(&g, None);
    let spec = MethodSpec::builtin("hope")
        .unwrap()
        .with_grid(HyperGrid::new([("beta", vec![5.0, 10.0])]));
    let err = grid_search(&g, &store, &spec, &[4], 0, &eval).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("hope"), "{text}");
    assert!(matches!(err, Error::AllFitsFailed { .. }), "{text}");
}

#[test]
fn ties_resolve_to_smallest_dimension() {
    let (_, labels) = block_graph(0);
    let sp = split(6);
    let eval = Evaluator::new(&labels, &sp, ClassifierOptions::default(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let base = noisy(1.0, 4, "t", &mut rng);
    // Extra constant columns are only centered, so the scores tie exactly.
    let wide = EmbeddingMatrix::new(
        DMatrix::from_fn(N, 6, |i, j| if j < 4 { base.values[(i, j)] } else { 2.0 }),
        "t",
    )
    .unwrap();
    let c = candidate("t", vec![wide, base], &eval);
    assert_eq!(c.per_dim[0].val_macro_f1, c.per_dim[1].val_macro_f1);
    let dims = [6, 4];
    let g = Graph::new(N, false, (1..N).map(|i| (i - 1, i, 1.0))).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut paths = std::collections::BTreeMap::new();
    for r in &c.per_dim {
        let p = dir.path().join(format!("t{}.emb", r.dim));
        r.embedding.as_ref().unwrap().save(&p).unwrap();
        paths.insert(r.dim, p);
    }
    let spec = MethodSpec {
        id: "t".into(),
        params: MethodParams::External { paths },
        grid: HyperGrid::default(),
    };
    let store = EmbeddingStore::new(&g, None);
    let found = grid_search(&g, &store, &spec, &dims, 0, &eval).unwrap();
    assert_eq!(found.best_dimension, 4);
}

fn experiment_results(rounds: usize, seed: u64) -> String {
    let (g, labels) = block_graph(8);
    let methods = vec![
        MethodSpec::builtin("lap").unwrap(),
        MethodSpec::builtin("gf")
            .unwrap()
            .with_grid(HyperGrid::new([("lr", vec![0.01, 0.1])])),
    ];
    let store = EmbeddingStore::new(&g, None);
    let exp = Experiment {
        graph: &g,
        labels: &labels,
        methods: &methods,
        dims: &[4, 8],
        fractions: [0.5, 0.2, 0.3],
        base_seed: seed,
        classifier: ClassifierOptions::default(),
        store: &store,
    };
    let res = exp.run_rounds(rounds).unwrap();
    for r in &res.rounds {
        assert_eq!(r.test_reads, 1);
        assert!(r.selection.val_macro_f1 >= r.selection.best_single_val);
        assert_eq!(r.split_sizes, [40, 16, 24]);
    }
    if rounds == 1 {
        let single = exp.run_round(0).unwrap();
        assert_eq!(res.ensemble.macro_f1_mean, single.ensemble_test.macro_f1);
        assert_eq!(res.ensemble.macro_f1_std, 0.0);
    }
    assert!(exp.run_rounds(0).is_err());
    res.to_json().unwrap()
}

#[test]
fn pipeline_is_deterministic() {
    let a = experiment_results(2, 3);
    assert_eq!(a, experiment_results(2, 3));
    assert_ne!(a, experiment_results(2, 4));
    experiment_results(1, 3);
}

#[test]
fn split_rounding_examples() {
    assert_eq!(
        split_nodes(10, [0.5, 0.2, 0.3], 0).unwrap().sizes(),
        [5, 2, 3]
    );
    assert_eq!(
        split_nodes(3312, [0.5, 0.2, 0.3], 0).unwrap().sizes(),
        [1656, 662, 994]
    );
    assert_eq!(
        split_nodes(10, [0.5, 0.2, 0.3], 9).unwrap(),
        split_nodes(10, [0.5, 0.2, 0.3], 9).unwrap()
    );
    assert!(split_nodes(9, [0.5, 0.2, 0.3], 0).is_err());
    assert!(split_nodes(100, [0.5, 0.2, 0.2], 0).is_err());
}

proptest! {
    #[test]
    fn split_is_a_near_exact_partition(
        n in 10usize..3000,
        cuts in (0.0f64..1.0, 0.0f64..1.0),
        seed in any::<u64>(),
    ) {
        let (lo, hi) = (cuts.0.min(cuts.1), cuts.0.max(cuts.1));
        let fr = [lo, hi - lo, 1.0 - hi];
        let s = split_nodes(n, fr, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for (size, f) in s.sizes().iter().zip(fr) {
            prop_assert!((*size as f64 - f * n as f64).abs() <= 1.0);
        }
        prop_assert_eq!(&s, &split_nodes(n, fr, seed).unwrap());
        let labeled: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
        let sub = split_subset(&labeled, fr, seed).unwrap();
        prop_assert!(sub.train.iter().chain(&sub.val).chain(&sub.test).all(|i| i % 3 == 1));
    }
}
