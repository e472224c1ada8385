//! Eigen and singular value routines used by the spectral embedders.
//!
//! Small problems (`n <= DENSE_LIMIT`) go straight to nalgebra's dense
//! decompositions. Larger ones use Lanczos with full reorthogonalization
//! (symmetric eigenproblems) or randomized subspace iteration (truncated
//! SVD) against a matrix-free operator.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Problems up to this size are solved densely.
pub const DENSE_LIMIT: usize = 500;

/// A linear map `S: R^cols -> R^rows` applied to dense blocks.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `S * x`
    fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// `Sᵀ * x`
    fn apply_t(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    fn to_dense(&self) -> Result<DMatrix<f64>> {
        self.apply(&DMatrix::identity(self.ncols(), self.ncols()))
    }
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self * x)
    }
    fn apply_t(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.tr_mul(x))
    }
    fn to_dense(&self) -> Result<DMatrix<f64>> {
        Ok(self.clone())
    }
}

/// Flips each column so its largest-magnitude entry is positive.
pub fn canonical_signs(m: &mut DMatrix<f64>) -> Vec<bool> {
    let mut flipped = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let pivot = col.iter().copied().fold(
            0.0f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        let flip = pivot < 0.0;
        if flip {
            col.neg_mut();
        }
        flipped.push(flip);
    }
    flipped
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// One eigenvector per column.
    pub vectors: DMatrix<f64>,
}

fn sorted_symmetric_eigen(m: DMatrix<f64>, k: usize) -> EigenPairs {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(k);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    EigenPairs { values, vectors }
}

/// The `k` algebraically largest eigenpairs of a dense symmetric matrix.
pub fn dense_top_eigen(m: &DMatrix<f64>, k: usize) -> EigenPairs {
    sorted_symmetric_eigen(m.clone(), k)
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
    let norm = v.norm();
    v / norm
}

/// Removes the components of `w` along every basis vector (two passes of
/// classical Gram-Schmidt).
fn orthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(w);
            w.axpy(-c, q, 1.0);
        }
    }
}

/// The `k` algebraically largest eigenpairs of the symmetric operator
/// `matvec` via Lanczos with full reorthogonalization. The Krylov space grows
/// until every wanted Ritz pair has residual `<= tol * max(1, |θ|)`; at
/// `m = n` the decomposition is exact.
pub fn lanczos_top_eigen<F>(
    n: usize,
    k: usize,
    matvec: F,
    tol: f64,
    seed: u64,
) -> Result<EigenPairs>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if k == 0 || k > n {
        return Err(Error::InvalidParam(format!(
            "cannot extract {k} eigenpairs of an order-{n} operator"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<DVector<f64>> = vec![random_unit(n, &mut rng)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut next_check = n.min(2 * k + 20);
    let mut scale = 0.0f64;

    loop {
        let j = basis.len() - 1;
        let mut w = matvec(&basis[j]);
        let a = basis[j].dot(&w);
        alpha.push(a);
        orthogonalize(&mut w, &basis);
        let b = w.norm();
        scale = scale.max(a.abs()).max(b);
        let m = basis.len();

        if m >= next_check || m == n {
            let mut t = DMatrix::zeros(m, m);
            for i in 0..m {
                t[(i, i)] = alpha[i];
                if i + 1 < m {
                    t[(i, i + 1)] = beta[i];
                    t[(i + 1, i)] = beta[i];
                }
            }
            let ritz = sorted_symmetric_eigen(t, k.min(m));
            let converged = m == n
                || (ritz.values.len() == k
                    && (0..k).all(|i| {
                        let resid = (b * ritz.vectors[(m - 1, i)]).abs();
                        resid <= tol * ritz.values[i].abs().max(1.0)
                    }));
            if converged {
                if ritz.values.len() < k {
                    return Err(Error::NoConvergence { iterations: m });
                }
                let q = DMatrix::from_columns(&basis);
                let vectors = q * ritz.vectors;
                return Ok(EigenPairs {
                    values: ritz.values,
                    vectors,
                });
            }
            next_check = n.min(m + (m / 4).max(10));
        }

        let next = if b > 1e-10 * scale.max(1.0) {
            beta.push(b);
            w / b
        } else {
            // invariant subspace found; continue from a fresh direction
            beta.push(0.0);
            let mut v = random_unit(n, &mut rng);
            orthogonalize(&mut v, &basis);
            let norm = v.norm();
            if norm < 1e-12 {
                return Err(Error::NoConvergence {
                    iterations: basis.len(),
                });
            }
            v / norm
        };
        basis.push(next);
    }
}

/// Rank-`k` truncated SVD `S ≈ U diag(σ) Vᵀ`, singular values descending.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    fn canonicalize(mut self) -> Self {
        let flipped = canonical_signs(&mut self.u);
        for (j, f) in flipped.into_iter().enumerate() {
            if f {
                self.v.column_mut(j).neg_mut();
            }
        }
        self
    }
}

fn sorted_svd(m: DMatrix<f64>, k: usize) -> TruncatedSvd {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(k);
    TruncatedSvd {
        u: DMatrix::from_columns(
            &order
                .iter()
                .map(|&i| u.column(i).into_owned())
                .collect::<Vec<_>>(),
        ),
        sigma: order.iter().map(|&i| svd.singular_values[i]).collect(),
        v: DMatrix::from_columns(
            &order
                .iter()
                .map(|&i| vt.row(i).transpose())
                .collect::<Vec<_>>(),
        ),
    }
}

/// Exact truncated SVD of a dense matrix.
pub fn dense_truncated_svd(m: &DMatrix<f64>, k: usize) -> TruncatedSvd {
    sorted_svd(m.clone(), k).canonicalize()
}

fn orthonormal_basis(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Truncated SVD of an operator: dense when small, otherwise randomized
/// range finding with `power_iters` rounds of subspace iteration.
pub fn truncated_svd(
    op: &dyn LinearOperator,
    k: usize,
    power_iters: usize,
    seed: u64,
) -> Result<TruncatedSvd> {
    let (rows, cols) = (op.nrows(), op.ncols());
    let full = rows.min(cols);
    if k == 0 || k > full {
        return Err(Error::InvalidParam(format!(
            "rank {k} SVD of a {rows}x{cols} operator"
        )));
    }
    if rows.max(cols) <= DENSE_LIMIT {
        return Ok(dense_truncated_svd(&op.to_dense()?, k));
    }
    let width = (k + 10).min(full);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(cols, width, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    let mut q = orthonormal_basis(op.apply(&omega)?);
    for _ in 0..power_iters {
        let z = orthonormal_basis(op.apply_t(&q)?);
        q = orthonormal_basis(op.apply(&z)?);
    }
    // B = Qᵀ S, computed as (Sᵀ Q)ᵀ
    let b = op.apply_t(&q)?.transpose();
    let small = sorted_svd(b, k);
    Ok(TruncatedSvd {
        u: q * small.u,
        sigma: small.sigma,
        v: small.v,
    }
    .canonicalize())
}
