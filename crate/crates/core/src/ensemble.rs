//! Node splits, per-method hyperparameter search, greedy ensemble
//! selection and multi-round evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{
    concat_features, f1_report, predict, train_ovr, DecisionRule, F1Report, Standardizer,
    DEFAULT_REG,
};
use crate::embed::{load_embedding_with_meta, EmbeddingMatrix, HyperGrid, MethodParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, LabelMatrix};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.5, 0.2, 0.3];

/// Minimum validation gain for a candidate to be accepted.
pub const TIE_TOL: f64 = 1e-9;

/// Largest candidate count the exhaustive oracle accepts.
pub const EXHAUSTIVE_MAX: usize = 4;

/// Entry-wise tolerance for treating two standardized columns as equal.
pub const REDUNDANT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitIndices {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

/// Part sizes by largest remainder: floor each share, then hand the leftover
/// nodes to the parts with the largest fractional remainders, ties in
/// train, val, test order.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidParam(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    for i in 0..3 {
        // guard against 662.4 being represented as 662.3999…
        sizes[i] = (exact[i] + 1e-9).floor() as usize;
    }
    let mut left = n - sizes.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - sizes[a] as f64, exact[b] - sizes[b] as f64);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Uniformly random partition of `0..n` into train/val/test.
pub fn split_nodes(n: usize, fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    let nodes: Vec<usize> = (0..n).collect();
    split_subset(&nodes, fractions, seed)
}

/// Random partition of the given node ids (usually the labeled nodes).
pub fn split_subset(nodes: &[usize], fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if nodes.len() < 10 {
        return Err(Error::InvalidParam(format!(
            "need at least 10 nodes to split, got {}",
            nodes.len()
        )));
    }
    let [a, b, _] = split_sizes(nodes.len(), fractions)?;
    let mut order = nodes.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..a].to_vec();
    let mut val = order[a..a + b].to_vec();
    let mut test = order[a + b..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        val,
        test,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierOptions {
    pub reg: f64,
    pub rule: DecisionRule,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        Self {
            reg: DEFAULT_REG,
            rule: DecisionRule::TopK,
        }
    }
}

/// Trains on the training rows and scores on validation rows. Test rows are
/// reachable only through [`Evaluator::open_test`], which succeeds once.
pub struct Evaluator<'a> {
    labels: &'a LabelMatrix,
    split: &'a SplitIndices,
    options: ClassifierOptions,
    round: usize,
    train_truth: LabelMatrix,
    val_truth: LabelMatrix,
    test_reads: AtomicUsize,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        labels: &'a LabelMatrix,
        split: &'a SplitIndices,
        options: ClassifierOptions,
        round: usize,
    ) -> Self {
        Self {
            labels,
            split,
            options,
            round,
            train_truth: labels.select_rows(&split.train),
            val_truth: labels.select_rows(&split.val),
            test_reads: AtomicUsize::new(0),
        }
    }

    fn score(
        &self,
        embs: &[&EmbeddingMatrix],
        rows: &[usize],
        truth: &LabelMatrix,
    ) -> Result<F1Report> {
        let x = concat_features(embs, &self.split.train)?;
        let model = train_ovr(
            &x.select_rows(&self.split.train),
            &self.train_truth,
            self.options.reg,
        )?;
        let pred = predict(&model, &x.select_rows(rows), truth, self.options.rule)?;
        f1_report(&pred, truth)
    }

    pub fn validate(&self, embs: &[&EmbeddingMatrix]) -> Result<F1Report> {
        self.score(embs, &self.split.val, &self.val_truth)
    }

    pub fn validation_macro_f1(&self, embs: &[&EmbeddingMatrix]) -> Result<f64> {
        Ok(self.validate(embs)?.macro_f1)
    }

    /// True when every standardized column of `cand` already appears, up to
    /// sign, among the standardized columns of `features`.
    pub fn is_redundant(
        &self,
        features: &[&EmbeddingMatrix],
        cand: &EmbeddingMatrix,
    ) -> Result<bool> {
        let standardized = |e: &EmbeddingMatrix| -> Result<DMatrix<f64>> {
            Ok(Standardizer::fit(&e.values, &self.split.train)?.transform(&e.values))
        };
        let have = features
            .iter()
            .map(|e| standardized(e))
            .collect::<Result<Vec<_>>>()?;
        let new = standardized(cand)?;
        Ok(new.column_iter().all(|c| {
            have.iter()
                .flat_map(|m| m.column_iter())
                .any(|h| (c - h).amax() <= REDUNDANT_TOL || (c + h).amax() <= REDUNDANT_TOL)
        }))
    }

    pub fn open_test(&self) -> Result<TestSplit<'_, 'a>> {
        if self.test_reads.fetch_add(1, Ordering::SeqCst) > 0 {
            return Err(Error::TestLeak { round: self.round });
        }
        Ok(TestSplit {
            eval: self,
            truth: self.labels.select_rows(&self.split.test),
        })
    }

    pub fn test_reads(&self) -> usize {
        self.test_reads.load(Ordering::SeqCst)
    }
}

/// The single test-set access of a round.
pub struct TestSplit<'e, 'a> {
    eval: &'e Evaluator<'a>,
    truth: LabelMatrix,
}

impl TestSplit<'_, '_> {
    pub fn report(&self, embs: &[&EmbeddingMatrix]) -> Result<F1Report> {
        self.eval.score(embs, &self.eval.split.test, &self.truth)
    }
}

/// A method to search over: base parameters plus a grid applied on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub id: String,
    pub params: MethodParams,
    #[serde(default)]
    pub grid: HyperGrid,
}

impl MethodSpec {
    /// A built-in method with its default grid, named after the method.
    pub fn builtin(kind: &str) -> Result<Self> {
        Ok(Self {
            id: kind.to_string(),
            params: MethodParams::default_for(kind)?,
            grid: HyperGrid::default_for(kind),
        })
    }

    pub fn with_grid(mut self, grid: HyperGrid) -> Self {
        self.grid = grid;
        self
    }
}

fn hex16(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed for one fit, derived from the base seed and what is being fit.
pub fn derive_seed(base_seed: u64, method_id: &str, dim: usize) -> u64 {
    let h = Sha256::digest(format!("{base_seed}/{method_id}/{dim}").as_bytes());
    u64::from_le_bytes(h[..8].try_into().unwrap())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// Embeddings fit on the full graph, memoized in memory and optionally
/// persisted as `<method>_<dim>_<hyperhash>.emb`.
pub struct EmbeddingStore {
    fingerprint: String,
    cache_dir: Option<PathBuf>,
    memory: Mutex<BTreeMap<String, std::result::Result<Arc<EmbeddingMatrix>, String>>>,
    fits: AtomicUsize,
    disk_hits: AtomicUsize,
}

impl EmbeddingStore {
    pub fn new(g: &Graph, cache_dir: Option<PathBuf>) -> Self {
        Self {
            fingerprint: g.fingerprint(),
            cache_dir,
            memory: Mutex::new(BTreeMap::new()),
            fits: AtomicUsize::new(0),
            disk_hits: AtomicUsize::new(0),
        }
    }

    pub fn hyperhash(&self, params: &MethodParams, seed: u64) -> String {
        let desc = serde_json::to_string(params).expect("method params serialize");
        hex16(&Sha256::digest(
            format!("{}|{desc}|{seed}", self.fingerprint).as_bytes(),
        ))
    }

    pub fn file_name(
        &self,
        method_id: &str,
        params: &MethodParams,
        dim: usize,
        seed: u64,
    ) -> String {
        format!(
            "{}_{dim}_{}.emb",
            sanitize(method_id),
            self.hyperhash(params, seed)
        )
    }

    pub fn cache_dir(&self) -> Option<&Path> {
        self.cache_dir.as_deref()
    }

    /// Number of embeddings actually computed.
    pub fn fits(&self) -> usize {
        self.fits.load(Ordering::SeqCst)
    }

    pub fn disk_hits(&self) -> usize {
        self.disk_hits.load(Ordering::SeqCst)
    }

    pub fn get_or_fit(
        &self,
        g: &Graph,
        method_id: &str,
        params: &MethodParams,
        dim: usize,
        seed: u64,
    ) -> Result<Arc<EmbeddingMatrix>> {
        let file = self.file_name(method_id, params, dim, seed);
        if let Some(hit) = self.memory.lock().unwrap().get(&file) {
            return hit.clone().map_err(Error::CachedFailure);
        }
        let result = self.load_or_fit(g, method_id, params, dim, seed, &file);
        let stored = match &result {
            Ok(e) => Ok(e.clone()),
            Err(e) => Err(e.to_string()),
        };
        self.memory.lock().unwrap().insert(file, stored);
        result
    }

    fn load_or_fit(
        &self,
        g: &Graph,
        method_id: &str,
        params: &MethodParams,
        dim: usize,
        seed: u64,
        file: &str,
    ) -> Result<Arc<EmbeddingMatrix>> {
        if let Some(dir) = &self.cache_dir {
            let path = dir.join(file);
            if path.exists() {
                let e = load_embedding_with_meta(&path, g.node_count())?;
                if e.dim() == dim {
                    self.disk_hits.fetch_add(1, Ordering::SeqCst);
                    return Ok(Arc::new(e));
                }
                log::warn!(
                    "ignoring cached {} with dimension {}",
                    path.display(),
                    e.dim()
                );
            }
        }
        self.fits.fetch_add(1, Ordering::SeqCst);
        let mut e = params
            .fit(g, dim, seed)
            .map_err(|e| e.in_method(method_id))?;
        e.method_id = method_id.to_string();
        Ok(Arc::new(e))
    }

    /// Writes an embedding (fitting it if needed) to the cache directory and
    /// returns its path.
    pub fn persist(
        &self,
        g: &Graph,
        method_id: &str,
        params: &MethodParams,
        dim: usize,
        seed: u64,
    ) -> Result<PathBuf> {
        let dir = self
            .cache_dir
            .as_ref()
            .ok_or_else(|| Error::InvalidParam("no cache directory configured".into()))?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(self.file_name(method_id, params, dim, seed));
        if !path.exists() {
            self.get_or_fit(g, method_id, params, dim, seed)?
                .save(&path)?;
        }
        Ok(path)
    }
}

/// Winner of the grid at one dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionResult {
    pub dim: usize,
    pub params: MethodParams,
    pub seed: u64,
    pub val_macro_f1: f64,
    /// Validation macro-F1 of every grid point, in enumeration order; `None`
    /// for failed fits.
    pub grid_scores: Vec<Option<f64>>,
    #[serde(skip)]
    pub embedding: Option<Arc<EmbeddingMatrix>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodCandidate {
    pub method_id: String,
    pub per_dim: Vec<DimensionResult>,
    pub best_dimension: usize,
    pub failures: Vec<String>,
}

impl MethodCandidate {
    pub fn best(&self) -> &DimensionResult {
        self.at(self.best_dimension)
            .expect("best dimension is present")
    }

    pub fn best_score(&self) -> f64 {
        self.best().val_macro_f1
    }

    pub fn at(&self, dim: usize) -> Option<&DimensionResult> {
        self.per_dim.iter().find(|r| r.dim == dim)
    }

    fn embedding_at(&self, dim: usize) -> Result<&EmbeddingMatrix> {
        self.at(dim)
            .and_then(|r| r.embedding.as_deref())
            .ok_or_else(|| {
                Error::InvalidParam(format!(
                    "{} has no embedding at dimension {dim}",
                    self.method_id
                ))
            })
    }
}

/// Fits every grid point at every dimension on the full graph and keeps, per
/// dimension, the point with the highest validation macro-F1 (first in
/// enumeration order on ties). The best dimension ties to the smallest.
pub fn grid_search(
    g: &Graph,
    store: &EmbeddingStore,
    spec: &MethodSpec,
    dims: &[usize],
    base_seed: u64,
    eval: &Evaluator<'_>,
) -> Result<MethodCandidate> {
    let points = spec.grid.expand(&spec.params)?;
    let mut dims = dims.to_vec();
    dims.sort_unstable();
    dims.dedup();
    let mut per_dim = Vec::new();
    let mut failures = Vec::new();
    for &dim in &dims {
        let seed = derive_seed(base_seed, &spec.id, dim);
        let outcomes: Vec<Result<(Arc<EmbeddingMatrix>, f64)>> = points
            .par_iter()
            .map(|p| {
                let e = store.get_or_fit(g, &spec.id, p, dim, seed)?;
                let s = eval.validation_macro_f1(&[&e])?;
                Ok((e, s))
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        let mut grid_scores = Vec::with_capacity(points.len());
        for (i, o) in outcomes.iter().enumerate() {
            match o {
                Ok((_, s)) => {
                    grid_scores.push(Some(*s));
                    if best.is_none_or(|(_, b)| *s > b) {
                        best = Some((i, *s));
                    }
                }
                Err(e) => {
                    grid_scores.push(None);
                    failures.push(format!("dim {dim}, {}: {e}", describe(&points[i])));
                }
            }
        }
        if let Some((i, score)) = best {
            per_dim.push(DimensionResult {
                dim,
                params: points[i].clone(),
                seed,
                val_macro_f1: score,
                grid_scores,
                embedding: Some(outcomes[i].as_ref().unwrap().0.clone()),
            });
        }
    }
    if per_dim.is_empty() {
        return Err(Error::AllFitsFailed {
            method: spec.id.clone(),
            causes: failures,
        });
    }
    for f in &failures {
        log::warn!("{}: {f}", spec.id);
    }
    let mut best_dimension = per_dim[0].dim;
    let mut best_score = per_dim[0].val_macro_f1;
    for r in &per_dim[1..] {
        if r.val_macro_f1 > best_score {
            best_score = r.val_macro_f1;
            best_dimension = r.dim;
        }
    }
    Ok(MethodCandidate {
        method_id: spec.id.clone(),
        per_dim,
        best_dimension,
        failures,
    })
}

fn describe(p: &MethodParams) -> String {
    p.describe()
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub method_id: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub method_id: String,
    pub dim: usize,
    pub val_macro_f1: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSelection {
    pub members: Vec<Member>,
    /// Incumbent validation macro-F1 after the seed and after each candidate.
    pub trajectory: Vec<f64>,
    pub trace: Vec<TraceStep>,
    /// Concatenation trainings performed during the search.
    pub evaluations: usize,
    pub best_single_val: f64,
    pub val_macro_f1: f64,
}

/// Candidates in greedy order: best validation macro-F1 first, ties by id.
pub fn greedy_order(candidates: &[MethodCandidate]) -> Vec<&MethodCandidate> {
    let mut order: Vec<&MethodCandidate> = candidates.iter().collect();
    order.sort_by(|a, b| {
        b.best_score()
            .total_cmp(&a.best_score())
            .then_with(|| a.method_id.cmp(&b.method_id))
    });
    order
}

/// Seeds with the top candidate at its best dimension, then for each
/// remaining candidate tries every dimension appended to the incumbent
/// concatenation and keeps the best one only if it beats the incumbent by
/// more than [`TIE_TOL`]. Trials that add no new standardized column are
/// rejected without training.
pub fn greedy_ensemble(
    candidates: &[MethodCandidate],
    eval: &Evaluator<'_>,
) -> Result<EnsembleSelection> {
    let order = greedy_order(candidates);
    let top = *order
        .first()
        .ok_or_else(|| Error::EmptyInput("candidate list".into()))?;
    let mut members = vec![Member {
        method_id: top.method_id.clone(),
        dim: top.best_dimension,
    }];
    let mut features: Vec<&EmbeddingMatrix> = vec![top.embedding_at(top.best_dimension)?];
    let mut incumbent = eval.validation_macro_f1(&features)?;
    let mut evaluations = 1;
    let mut trajectory = vec![incumbent];
    let mut trace = vec![TraceStep {
        method_id: top.method_id.clone(),
        dim: top.best_dimension,
        val_macro_f1: incumbent,
        accepted: true,
    }];

    for cand in &order[1..] {
        let trials: Vec<Result<(usize, f64, bool)>> = cand
            .per_dim
            .par_iter()
            .map(|r| {
                let e = cand.embedding_at(r.dim)?;
                if eval.is_redundant(&features, e)? {
                    return Ok((r.dim, incumbent, false));
                }
                let mut fs = features.clone();
                fs.push(e);
                Ok((r.dim, eval.validation_macro_f1(&fs)?, true))
            })
            .collect();
        let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;
        evaluations += trials.iter().filter(|t| t.2).count();
        let trials: Vec<(usize, f64)> = trials.into_iter().map(|(d, s, _)| (d, s)).collect();
        let mut best: Option<(usize, f64)> = None;
        for &(dim, s) in &trials {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((dim, s));
            }
        }
        let accepted = best.filter(|&(_, s)| s > incumbent + TIE_TOL);
        for &(dim, s) in &trials {
            trace.push(TraceStep {
                method_id: cand.method_id.clone(),
                dim,
                val_macro_f1: s,
                accepted: accepted.is_some_and(|(d, _)| d == dim),
            });
        }
        if let Some((dim, s)) = accepted {
            members.push(Member {
                method_id: cand.method_id.clone(),
                dim,
            });
            features.push(cand.embedding_at(dim)?);
            incumbent = s;
        }
        trajectory.push(incumbent);
    }
    Ok(EnsembleSelection {
        members,
        trajectory,
        trace,
        evaluations,
        best_single_val: top.best_score(),
        val_macro_f1: incumbent,
    })
}

/// Number of concatenation trainings a completed greedy run performed.
pub fn count_candidate_evaluations(selection: &EnsembleSelection) -> usize {
    selection.evaluations
}

/// Upper bound on greedy evaluations for `k` candidates and `dims` offered
/// dimensions.
pub fn greedy_evaluation_bound(k: usize, dims: usize) -> usize {
    k.saturating_sub(1) * dims + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveResult {
    pub members: Vec<Member>,
    pub val_macro_f1: f64,
    pub evaluations: usize,
}

/// Scores every non-empty subset of candidates, each at its best dimension.
/// Exponential in `k`; only meant as a reference for small `k`.
pub fn exhaustive_search(
    candidates: &[MethodCandidate],
    eval: &Evaluator<'_>,
) -> Result<ExhaustiveResult> {
    let order = greedy_order(candidates);
    let k = order.len();
    if k == 0 || k > EXHAUSTIVE_MAX {
        return Err(Error::InvalidParam(format!(
            "exhaustive search takes 1..={EXHAUSTIVE_MAX} candidates, got {k}"
        )));
    }
    let mut best: Option<(u32, f64)> = None;
    let mut evaluations = 0;
    for mask in 1u32..(1 << k) {
        let mut fs = Vec::new();
        for (i, c) in order.iter().enumerate() {
            if mask & (1 << i) != 0 {
                fs.push(c.embedding_at(c.best_dimension)?);
            }
        }
        let s = eval.validation_macro_f1(&fs)?;
        evaluations += 1;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((mask, s));
        }
    }
    let (mask, score) = best.unwrap();
    let members = order
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, c)| Member {
            method_id: c.method_id.clone(),
            dim: c.best_dimension,
        })
        .collect();
    Ok(ExhaustiveResult {
        members,
        val_macro_f1: score,
        evaluations,
    })
}

/// Everything a pipeline run needs besides the round count.
pub struct Experiment<'a> {
    pub graph: &'a Graph,
    pub labels: &'a LabelMatrix,
    pub methods: &'a [MethodSpec],
    pub dims: &'a [usize],
    pub fractions: [f64; 3],
    pub base_seed: u64,
    pub classifier: ClassifierOptions,
    pub store: &'a EmbeddingStore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub split_seed: u64,
    pub split_sizes: [usize; 3],
    pub candidates: Vec<MethodCandidate>,
    pub selection: EnsembleSelection,
    pub ensemble_test: F1Report,
    /// Each method at its validation-selected best dimension.
    pub single_test: BTreeMap<String, F1Report>,
    pub test_reads: usize,
}

impl Experiment<'_> {
    pub fn run_round(&self, round: usize) -> Result<RoundResult> {
        if self.methods.is_empty() {
            return Err(Error::EmptyInput("method list".into()));
        }
        let split_seed = self.base_seed.wrapping_add(round as u64);
        let split = split_subset(&self.labels.labeled_nodes(), self.fractions, split_seed)?;
        let eval = Evaluator::new(self.labels, &split, self.classifier, round);
        let candidates = self
            .methods
            .iter()
            .map(|m| grid_search(self.graph, self.store, m, self.dims, self.base_seed, &eval))
            .collect::<Result<Vec<_>>>()?;
        let selection = greedy_ensemble(&candidates, &eval)?;

        let test = eval.open_test()?;
        let by_id: BTreeMap<&str, &MethodCandidate> = candidates
            .iter()
            .map(|c| (c.method_id.as_str(), c))
            .collect();
        let ensemble_features = selection
            .members
            .iter()
            .map(|m| by_id[m.method_id.as_str()].embedding_at(m.dim))
            .collect::<Result<Vec<_>>>()?;
        let ensemble_test = test.report(&ensemble_features)?;
        let mut single_test = BTreeMap::new();
        for c in &candidates {
            single_test.insert(
                c.method_id.clone(),
                test.report(&[c.embedding_at(c.best_dimension)?])?,
            );
        }
        Ok(RoundResult {
            round,
            split_seed,
            split_sizes: split.sizes(),
            candidates,
            selection,
            ensemble_test,
            single_test,
            test_reads: eval.test_reads(),
        })
    }

    /// Runs rounds `0..rounds` with split seeds `base_seed + round` and
    /// averages the test scores.
    pub fn run_rounds(&self, rounds: usize) -> Result<RunResults> {
        if rounds == 0 {
            return Err(Error::InvalidParam("rounds must be >= 1".into()));
        }
        let mut results = Vec::with_capacity(rounds);
        for r in 0..rounds {
            let res = self.run_round(r).map_err(|e| Error::Round {
                round: r,
                source: Box::new(e),
            })?;
            log::info!(
                "round {r}: ensemble test macro-F1 {:.4} with {:?}",
                res.ensemble_test.macro_f1,
                res.selection.members
            );
            results.push(res);
        }
        Ok(RunResults::from_rounds(self.base_seed, results))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub micro_f1_mean: f64,
    pub per_class_f1_mean: Vec<f64>,
    /// Dimension per round (for the ensemble: member dimensions per round).
    pub dims: Vec<Vec<usize>>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn summarize(reports: &[&F1Report], dims: Vec<Vec<usize>>) -> ScoreSummary {
    let macros: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    let micros: Vec<f64> = reports.iter().map(|r| r.micro_f1).collect();
    let (macro_f1_mean, macro_f1_std) = mean_std(&macros);
    let l = reports[0].per_class_f1.len();
    let per_class_f1_mean = (0..l)
        .map(|c| reports.iter().map(|r| r.per_class_f1[c]).sum::<f64>() / reports.len() as f64)
        .collect();
    ScoreSummary {
        macro_f1_mean,
        macro_f1_std,
        micro_f1_mean: mean_std(&micros).0,
        per_class_f1_mean,
        dims,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResults {
    pub base_seed: u64,
    pub rounds: Vec<RoundResult>,
    pub methods: BTreeMap<String, ScoreSummary>,
    pub ensemble: ScoreSummary,
    /// Members of each round's ensemble.
    pub selections: Vec<Vec<Member>>,
    pub best_single: String,
    /// Relative gain of the ensemble mean over the best single-method mean.
    pub gain_percent: f64,
}

impl RunResults {
    pub fn from_rounds(base_seed: u64, rounds: Vec<RoundResult>) -> Self {
        let ids: Vec<String> = rounds[0].single_test.keys().cloned().collect();
        let mut methods = BTreeMap::new();
        for id in &ids {
            let reports: Vec<&F1Report> = rounds.iter().map(|r| &r.single_test[id]).collect();
            let dims = rounds
                .iter()
                .map(|r| {
                    let c = r.candidates.iter().find(|c| &c.method_id == id).unwrap();
                    vec![c.best_dimension]
                })
                .collect();
            methods.insert(id.clone(), summarize(&reports, dims));
        }
        let ens_reports: Vec<&F1Report> = rounds.iter().map(|r| &r.ensemble_test).collect();
        let ens_dims = rounds
            .iter()
            .map(|r| r.selection.members.iter().map(|m| m.dim).collect())
            .collect();
        let ensemble = summarize(&ens_reports, ens_dims);
        let (best_single, best_mean) = methods
            .iter()
            .map(|(k, s)| (k.clone(), s.macro_f1_mean))
            .fold((String::new(), f64::NEG_INFINITY), |acc, (k, m)| {
                if m > acc.1 {
                    (k, m)
                } else {
                    acc
                }
            });
        let gain_percent = if best_mean > 0.0 {
            (ensemble.macro_f1_mean - best_mean) / best_mean * 100.0
        } else {
            0.0
        };
        let selections = rounds.iter().map(|r| r.selection.members.clone()).collect();
        Self {
            base_seed,
            rounds,
            methods,
            ensemble,
            selections,
            best_single,
            gain_percent,
        }
    }

    /// Pretty JSON; a pure function of the run's inputs.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The ensemble selected most often across rounds (earliest on ties).
    pub fn typical_selection(&self) -> &[Member] {
        let mut best = 0;
        let mut best_count = 0;
        for (i, s) in self.selections.iter().enumerate() {
            let count = self.selections.iter().filter(|t| *t == s).count();
            if count > best_count {
                best = i;
                best_count = count;
            }
        }
        &self.selections[best]
    }
}
