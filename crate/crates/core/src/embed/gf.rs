use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GfParams {
    pub lr: f64,
    pub reg: f64,
    pub epochs: usize,
    /// Early stop once the relative objective change drops below this.
    pub tol: f64,
}

impl Default for GfParams {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            reg: 1.0,
            epochs: 100,
            tol: 1e-4,
        }
    }
}

/// `½ Σ_(i,j)∈E (A_ij − ⟨x_i, x_j⟩)² + (reg/2) Σ_i ‖x_i‖²`
pub fn gf_objective(g: &Graph, x: &DMatrix<f64>, reg: f64) -> f64 {
    let fit: f64 = g
        .edges()
        .iter()
        .map(|e| {
            let r = e.weight - x.row(e.src).dot(&x.row(e.dst));
            0.5 * r * r
        })
        .sum();
    fit + 0.5 * reg * x.norm_squared()
}

/// Full-batch gradient of [`gf_objective`].
pub fn gf_gradient(g: &Graph, x: &DMatrix<f64>, reg: f64) -> DMatrix<f64> {
    let mut grad = x * reg;
    for e in g.edges() {
        let r = e.weight - x.row(e.src).dot(&x.row(e.dst));
        let (xs, xd) = (x.row(e.src).into_owned(), x.row(e.dst).into_owned());
        let mut gs = grad.row_mut(e.src);
        gs -= xd * r;
        let mut gd = grad.row_mut(e.dst);
        gd -= xs * r;
    }
    grad
}

#[derive(Debug, Clone)]
pub struct GfFit {
    pub values: DMatrix<f64>,
    /// Objective after each completed epoch.
    pub objective_trace: Vec<f64>,
}

/// SGD over shuffled edges from a given starting point. Each edge step
/// carries `reg / deg` of the penalty for both endpoints, so one epoch
/// applies the full gradient once in expectation.
pub fn embed_gf_from(g: &Graph, init: DMatrix<f64>, params: &GfParams, seed: u64) -> Result<GfFit> {
    let mut x = init;
    let d = x.ncols();
    let mut deg = vec![0usize; g.node_count()];
    for e in g.edges() {
        deg[e.src] += 1;
        deg[e.dst] += 1;
    }
    let mut order: Vec<usize> = (0..g.edge_count()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6766_5f73_6764);
    let mut trace = Vec::with_capacity(params.epochs);
    let mut prev = gf_objective(g, &x, params.reg);
    let (mut gs, mut gd) = (vec![0.0; d], vec![0.0; d]);
    let diverged = || Error::Diverged {
        method: "gf".into(),
        lr: params.lr,
    };
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            let e = g.edges()[k];
            let (s, t) = (e.src, e.dst);
            let r = e.weight - x.row(s).dot(&x.row(t));
            let (rs, rt) = (params.reg / deg[s] as f64, params.reg / deg[t] as f64);
            for c in 0..d {
                gs[c] = -r * x[(t, c)] + rs * x[(s, c)];
                gd[c] = -r * x[(s, c)] + rt * x[(t, c)];
            }
            for c in 0..d {
                x[(s, c)] -= params.lr * gs[c];
                x[(t, c)] -= params.lr * gd[c];
            }
        }
        let obj = gf_objective(g, &x, params.reg);
        if !obj.is_finite() {
            return Err(diverged());
        }
        trace.push(obj);
        let rel = (prev - obj).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = obj;
        if rel < params.tol {
            break;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(diverged());
    }
    Ok(GfFit {
        values: x,
        objective_trace: trace,
    })
}

pub fn embed_gf(g: &Graph, dim: usize, params: &GfParams, seed: u64) -> Result<EmbeddingMatrix> {
    if dim == 0 {
        return Err(Error::InvalidParam("dimension must be >= 1".into()));
    }
    if !(params.lr > 0.0 && params.reg >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "gf needs lr > 0 and reg >= 0, got {params:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (3.0 / dim as f64).sqrt();
    let init = DMatrix::from_fn(g.node_count(), dim, |_, _| rng.gen_range(-a..a));
    let fit = embed_gf_from(g, init, params, seed)?;
    EmbeddingMatrix::new(fit.values, "gf")
}
