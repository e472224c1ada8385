//! node2vec: second-order biased random walks fed to a skip-gram model
//! trained with negative sampling.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{AdjacencyView, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Node2vecParams {
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
}

impl Default for Node2vecParams {
    fn default() -> Self {
        Self {
            p: 1.0,
            q: 1.0,
            walk_length: 80,
            walks_per_node: 10,
            window: 10,
            negatives: 5,
            epochs: 1,
            initial_lr: 0.025,
        }
    }
}

/// Second-order walker. From `cur`, having arrived from `prev`, neighbor `x`
/// gets unnormalized weight `w/p` if `x == prev`, `w` if `x` is adjacent to
/// `prev`, and `w/q` otherwise.
pub struct Walker<'a> {
    adj: &'a AdjacencyView,
    p: f64,
    q: f64,
}

impl<'a> Walker<'a> {
    pub fn new(adj: &'a AdjacencyView, p: f64, q: f64) -> Self {
        Self { adj, p, q }
    }

    /// `None` when `cur` has no out-neighbors.
    pub fn next_step<R: Rng>(&self, prev: Option<usize>, cur: usize, rng: &mut R) -> Option<usize> {
        let nbrs = self.adj.neighbors(cur);
        if nbrs.is_empty() {
            return None;
        }
        let weights = self.adj.weights(cur);
        let bias = |x: usize, w: f64| match prev {
            None => w,
            Some(t) if x == t => w / self.p,
            Some(t) if self.adj.has_edge(x, t) => w,
            Some(_) => w / self.q,
        };
        let total: f64 = nbrs.iter().zip(weights).map(|(&x, &w)| bias(x, w)).sum();
        let mut u = rng.gen::<f64>() * total;
        for (&x, &w) in nbrs.iter().zip(weights) {
            u -= bias(x, w);
            if u < 0.0 {
                return Some(x);
            }
        }
        nbrs.last().copied()
    }

    pub fn walk<R: Rng>(&self, start: usize, length: usize, rng: &mut R) -> Vec<usize> {
        let mut walk = Vec::with_capacity(length);
        walk.push(start);
        let mut prev = None;
        while walk.len() < length {
            let cur = *walk.last().unwrap();
            match self.next_step(prev, cur, rng) {
                Some(next) => {
                    prev = Some(cur);
                    walk.push(next);
                }
                None => break,
            }
        }
        walk
    }
}

/// `walks_per_node` passes over the nodes in a per-pass shuffled order. Each
/// walk draws from its own ChaCha stream, so the corpus does not depend on
/// how the walks are scheduled across threads.
pub fn generate_walks(g: &Graph, params: &Node2vecParams, seed: u64) -> Vec<Vec<usize>> {
    let n = g.node_count();
    let walker = Walker::new(g.adjacency(), params.p, params.q);
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::with_capacity(n * params.walks_per_node);
    for _ in 0..params.walks_per_node {
        let mut nodes: Vec<usize> = (0..n).collect();
        nodes.shuffle(&mut order_rng);
        jobs.extend(nodes);
    }
    jobs.par_iter()
        .enumerate()
        .map(|(k, &start)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            walker.walk(start, params.walk_length, &mut rng)
        })
        .collect()
}

#[inline(always)]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline(always)]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline(always)]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

const UNIGRAM_TABLE: usize = 1 << 20;

/// Node ids laid out with multiplicity proportional to `count^0.75`, so a
/// uniform index draws from the noise distribution.
fn unigram_table(counts: &[f64]) -> Vec<u32> {
    let pow: Vec<f64> = counts.iter().map(|c| c.powf(0.75)).collect();
    let total: f64 = pow.iter().sum();
    let mut table = Vec::with_capacity(UNIGRAM_TABLE);
    let mut node = 0;
    let mut cum = pow[0] / total;
    for i in 0..UNIGRAM_TABLE {
        while (i as f64 + 0.5) / UNIGRAM_TABLE as f64 > cum && node + 1 < pow.len() {
            node += 1;
            cum += pow[node] / total;
        }
        table.push(node as u32);
    }
    table
}

/// Skip-gram with negative sampling over `walks`; returns the input vectors.
/// The context window is shrunk uniformly at random per position, the
/// learning rate decays linearly and negatives follow `count^0.75`.
fn train_skipgram(
    walks: &[Vec<usize>],
    n: usize,
    dim: usize,
    params: &Node2vecParams,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let syn0 = skipgram_vectors(walks, n, dim, params, seed, true)?;
    Ok(DMatrix::from_row_iterator(
        n,
        dim,
        syn0.into_iter().map(f64::from),
    ))
}

fn skipgram_vectors(
    walks: &[Vec<usize>],
    n: usize,
    dim: usize,
    params: &Node2vecParams,
    seed: u64,
    allow_simd: bool,
) -> Result<Vec<f32>> {
    if walks.iter().all(|w| w.len() < 2) {
        return Err(Error::EmptyInput("node2vec walk corpus".into()));
    }
    let mut counts = vec![0.0f64; n];
    for w in walks {
        for &v in w {
            counts[v] += 1.0;
        }
    }
    let noise = unigram_table(&counts);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e32_76);
    let half = 0.5 / dim as f32;
    let mut syn0: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-half..half)).collect();
    let mut syn1 = vec![0.0f32; n * dim];
    let mut sgd = Sgns {
        walks,
        dim,
        params,
        noise: &noise,
        syn0: &mut syn0,
        syn1: &mut syn1,
        rng: &mut rng,
    };
    #[cfg(target_arch = "x86_64")]
    if allow_simd && is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime
        unsafe { sgd.run_avx2() };
        return Ok(syn0);
    }
    let _ = allow_simd;
    sgd.run();
    Ok(syn0)
}

/// Skip-gram SGD state. Lanes are combined in a fixed order, so the AVX2
/// build produces the same bits as the baseline one.
struct Sgns<'a> {
    walks: &'a [Vec<usize>],
    dim: usize,
    params: &'a Node2vecParams,
    noise: &'a [u32],
    syn0: &'a mut [f32],
    syn1: &'a mut [f32],
    rng: &'a mut ChaCha8Rng,
}

impl Sgns<'_> {
    #[inline(always)]
    fn run(&mut self) {
        let tokens: usize = self.walks.iter().map(Vec::len).sum();
        let mut grad = vec![0.0f32; self.dim];

        let total = (tokens * self.params.epochs).max(1) as f64;
        let mut processed = 0usize;
        let window = self.params.window.max(1);
        for _ in 0..self.params.epochs {
            for walk in self.walks {
                for (i, &center) in walk.iter().enumerate() {
                    let lr = (self.params.initial_lr * (1.0 - processed as f64 / total))
                        .max(self.params.initial_lr * 1e-4) as f32;
                    processed += 1;
                    let reach = window - self.rng.gen_range(0..window);
                    let lo = i.saturating_sub(reach);
                    let hi = (i + reach).min(walk.len() - 1);
                    for (j, &context) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                        if j == i {
                            continue;
                        }
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        let input = context * self.dim;
                        for k in 0..=self.params.negatives {
                            let (target, label) = if k == 0 {
                                (center, 1.0f32)
                            } else {
                                let t = self.noise[((self.rng.next_u32() as u64
                                    * self.noise.len() as u64)
                                    >> 32)
                                    as usize] as usize;
                                if t == center {
                                    continue;
                                }
                                (t, 0.0)
                            };
                            let out = target * self.dim;
                            let f = dot(
                                &self.syn0[input..input + self.dim],
                                &self.syn1[out..out + self.dim],
                            );
                            let g = (label - sigmoid(f)) * lr;
                            axpy(g, &self.syn1[out..out + self.dim], &mut grad);
                            let (src, dst) = (
                                &self.syn0[input..input + self.dim],
                                &mut self.syn1[out..out + self.dim],
                            );
                            axpy(g, src, dst);
                        }
                        axpy(1.0, &grad, &mut self.syn0[input..input + self.dim]);
                    }
                }
            }
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn run_avx2(&mut self) {
        self.run()
    }
}

pub fn embed_node2vec(
    g: &Graph,
    dim: usize,
    params: &Node2vecParams,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    if !(params.p > 0.0 && params.q > 0.0) {
        return Err(Error::InvalidParam(format!(
            "node2vec needs p, q > 0, got p={} q={}",
            params.p, params.q
        )));
    }
    if dim == 0 || params.walk_length == 0 || params.walks_per_node == 0 {
        return Err(Error::InvalidParam(
            "node2vec dimension, walk length and walk count must be >= 1".into(),
        ));
    }
    let walks = generate_walks(g, params, seed);
    let values = train_skipgram(&walks, g.node_count(), dim, params, seed)?;
    EmbeddingMatrix::new(values, "node2vec")
}
