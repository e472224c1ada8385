use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{AdjacencyView, Graph};
use crate::linalg::{truncated_svd, LinearOperator};

const NEUMANN_TOL: f64 = 1e-14;
const NEUMANN_MAX_ITERS: usize = 20_000;
const POWER_ITERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Katz,
    /// Rooted PageRank; `beta` is the continuation probability.
    Ppr,
    CommonNeighbors,
    AdamicAdar,
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "katz" => Similarity::Katz,
            "ppr" | "pagerank" => Similarity::Ppr,
            "common_neighbors" | "cn" => Similarity::CommonNeighbors,
            "adamic_adar" | "aa" => Similarity::AdamicAdar,
            other => return Err(Error::InvalidParam(format!("unknown similarity {other:?}"))),
        })
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::Katz => "katz",
            Similarity::Ppr => "ppr",
            Similarity::CommonNeighbors => "common_neighbors",
            Similarity::AdamicAdar => "adamic_adar",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HopeParams {
    pub similarity: Similarity,
    pub beta: f64,
}

impl Default for HopeParams {
    fn default() -> Self {
        Self {
            similarity: Similarity::Katz,
            beta: 1e-2,
        }
    }
}

/// `out = diag(scale) * A * x` (scale optional), column by column.
fn spmm(a: &AdjacencyView, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.node_count();
    let mut out = DMatrix::zeros(n, x.ncols());
    for c in 0..x.ncols() {
        let xc = x.column(c);
        let mut oc = out.column_mut(c);
        for i in 0..n {
            oc[i] = a.row(i).map(|(j, w)| w * xc[j]).sum();
        }
    }
    out
}

fn scale_rows(x: &mut DMatrix<f64>, scale: &[f64]) {
    for mut col in x.column_iter_mut() {
        for (v, s) in col.iter_mut().zip(scale) {
            *v *= s;
        }
    }
}

/// Solves `Z = rhs + beta * M Z` by fixed-point (Neumann) iteration.
fn neumann(m: &AdjacencyView, rhs: &DMatrix<f64>, beta: f64, radius: f64) -> Result<DMatrix<f64>> {
    let mut z = rhs.clone();
    for _ in 0..NEUMANN_MAX_ITERS {
        let mut next = spmm(m, &z);
        next.scale_mut(beta);
        next += rhs;
        let diff = (&next - &z).norm();
        let size = next.norm();
        if !size.is_finite() || size > 1e150 {
            break;
        }
        z = next;
        if diff <= NEUMANN_TOL * size.max(f64::MIN_POSITIVE) {
            return Ok(z);
        }
    }
    Err(Error::KatzDiverges { beta, radius })
}

/// Collatz–Wielandt lower bound on the spectral radius of a non-negative
/// matrix, from power iteration on `A + I`.
fn spectral_radius_lower_bound(a: &AdjacencyView) -> f64 {
    let n = a.node_count();
    let mut x = vec![1.0; n];
    let mut bound = 0.0f64;
    for _ in 0..200 {
        let y: Vec<f64> = (0..n)
            .map(|i| x[i] + a.row(i).map(|(j, w)| w * x[j]).sum::<f64>())
            .collect();
        let lb = (0..n).map(|i| y[i] / x[i]).fold(f64::INFINITY, f64::min) - 1.0;
        bound = bound.max(lb);
        let norm = y.iter().cloned().fold(0.0, f64::max);
        x = y.into_iter().map(|v| v / norm).collect();
    }
    bound
}

struct SimilarityOperator {
    kind: Similarity,
    beta: f64,
    a: AdjacencyView,
    at: AdjacencyView,
    /// Row-stochastic transition matrix and its transpose (PPR only).
    p: Option<(AdjacencyView, AdjacencyView)>,
    /// `1 / (deg_in + deg_out)` (Adamic-Adar only).
    inv_degree: Vec<f64>,
    radius: f64,
}

impl SimilarityOperator {
    fn apply_with(&self, x: &DMatrix<f64>, transpose: bool) -> Result<DMatrix<f64>> {
        let (a, _at) = if transpose {
            (&self.at, &self.a)
        } else {
            (&self.a, &self.at)
        };
        match self.kind {
            Similarity::Katz => {
                // S = (I − βA)^{-1} βA, and S commutes with A
                let mut rhs = spmm(a, x);
                rhs.scale_mut(self.beta);
                neumann(a, &rhs, self.beta, self.radius)
            }
            Similarity::Ppr => {
                let (p, pt) = self.p.as_ref().unwrap();
                let m = if transpose { pt } else { p };
                let mut z = neumann(m, x, self.beta, 1.0)?;
                z.scale_mut(1.0 - self.beta);
                Ok(z)
            }
            Similarity::CommonNeighbors => Ok(spmm(a, &spmm(a, x))),
            Similarity::AdamicAdar => {
                let mut y = spmm(a, x);
                scale_rows(&mut y, &self.inv_degree);
                Ok(spmm(a, &y))
            }
        }
    }
}

impl LinearOperator for SimilarityOperator {
    fn nrows(&self) -> usize {
        self.a.node_count()
    }
    fn ncols(&self) -> usize {
        self.a.node_count()
    }
    fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.apply_with(x, false)
    }
    fn apply_t(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.apply_with(x, true)
    }
}

/// The HOPE similarity matrix as a matrix-free operator:
///
/// - katz: `(I − βA)^{-1} βA`
/// - ppr: `(1 − β)(I − βP)^{-1}`, `P` row-normalized `A`
/// - common_neighbors: `A²`
/// - adamic_adar: `A diag(1 / (deg_in + deg_out)) A`
pub fn similarity_operator(g: &Graph, params: &HopeParams) -> Result<Box<dyn LinearOperator>> {
    let beta = params.beta;
    let a = g.adjacency().clone();
    let at = a.transpose();
    let n = g.node_count();
    let mut op = SimilarityOperator {
        kind: params.similarity,
        beta,
        p: None,
        inv_degree: Vec::new(),
        radius: 0.0,
        a,
        at,
    };
    match params.similarity {
        Similarity::Katz => {
            if !(beta > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "Katz decay must be positive, got {beta}"
                )));
            }
            op.radius = spectral_radius_lower_bound(&op.a);
            if beta * op.radius >= 1.0 {
                return Err(Error::KatzDiverges {
                    beta,
                    radius: op.radius,
                });
            }
        }
        Similarity::Ppr => {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidParam(format!(
                    "PageRank damping must lie in [0, 1), got {beta}"
                )));
            }
            let pairs = (0..n).flat_map(|i| {
                let total: f64 = op.a.weights(i).iter().sum();
                op.a.row(i)
                    .map(move |(j, w)| (i, j, w / total))
                    .collect::<Vec<_>>()
            });
            let p = Graph::new(n, true, pairs)?.adjacency().clone();
            let pt = p.transpose();
            op.p = Some((p, pt));
        }
        Similarity::CommonNeighbors => {}
        Similarity::AdamicAdar => {
            op.inv_degree = (0..n)
                .map(|i| {
                    let d: f64 =
                        op.a.weights(i).iter().sum::<f64>() + op.at.weights(i).iter().sum::<f64>();
                    if d > 0.0 {
                        1.0 / d
                    } else {
                        0.0
                    }
                })
                .collect();
        }
    }
    Ok(Box::new(op))
}

/// Rank-`dim/2` truncated SVD `S ≈ U Σ Vᵀ` of the similarity matrix;
/// returns `[U Σ^{1/2} ‖ V Σ^{1/2}]`.
pub fn embed_hope(g: &Graph, dim: usize, params: &HopeParams) -> Result<EmbeddingMatrix> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidParam(format!(
            "HOPE needs an even dimension, got {dim}"
        )));
    }
    let k = dim / 2;
    let n = g.node_count();
    if k > n {
        return Err(Error::InvalidParam(format!(
            "HOPE rank {k} exceeds node count {n}"
        )));
    }
    let op = similarity_operator(g, params)?;
    let svd = truncated_svd(op.as_ref(), k, POWER_ITERS, 0x686f7065)?;
    if svd.sigma.first().is_none_or(|&s| s <= 0.0) {
        return Err(Error::ZeroSimilarity);
    }
    let mut x = DMatrix::zeros(n, dim);
    for (c, s) in svd.sigma.iter().enumerate() {
        let root = s.max(0.0).sqrt();
        x.column_mut(c).copy_from(&(svd.u.column(c) * root));
        x.column_mut(k + c).copy_from(&(svd.v.column(c) * root));
    }
    EmbeddingMatrix::new(x, "hope")
}
