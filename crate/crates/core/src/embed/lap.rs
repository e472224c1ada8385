use nalgebra::{DMatrix, DVector};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{canonical_signs, dense_top_eigen, lanczos_top_eigen, DENSE_LIMIT};

const LANCZOS_TOL: f64 = 1e-9;

/// Solves `L y = λ D y` (`L = D − W`) through the normalized adjacency
/// `D^{-1/2} W D^{-1/2}`, whose largest eigenvalues are `1 − λ`. The top
/// eigenvector (`λ = 0`, constant `y`) is dropped and the next `dim` are
/// returned as `y = D^{-1/2} u`, so `yᵀ D y = 1`.
pub fn embed_lap(g: &Graph, dim: usize) -> Result<EmbeddingMatrix> {
    let w = g.symmetrized();
    let n = w.node_count();
    if dim == 0 || dim + 1 >= n {
        return Err(Error::InvalidParam(format!(
            "Laplacian eigenmaps needs 1 <= d < n - 1, got d={dim} n={n}"
        )));
    }
    if !w.is_connected() {
        return Err(Error::Disconnected);
    }
    let adj = w.adjacency();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / adj.weights(i).iter().sum::<f64>().sqrt())
        .collect();

    let pairs = if n <= DENSE_LIMIT {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, wij) in adj.row(i) {
                m[(i, j)] = inv_sqrt[i] * wij * inv_sqrt[j];
            }
        }
        dense_top_eigen(&m, dim + 1)
    } else {
        let matvec = |v: &DVector<f64>| {
            DVector::from_fn(n, |i, _| {
                inv_sqrt[i]
                    * adj
                        .row(i)
                        .map(|(j, wij)| wij * inv_sqrt[j] * v[j])
                        .sum::<f64>()
            })
        };
        lanczos_top_eigen(n, dim + 1, matvec, LANCZOS_TOL, 0x6c6170)?
    };

    let mut y = DMatrix::from_fn(n, dim, |i, c| inv_sqrt[i] * pairs.vectors[(i, c + 1)]);
    canonical_signs(&mut y);
    EmbeddingMatrix::new(y, "lap")
}
