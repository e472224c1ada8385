//! Dependence between embeddings: distance covariance / correlation
//! (V-statistic form) and the RV coefficient.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Rows per block in the streaming accumulation. Blocks are reduced in a
/// fixed order, so results do not depend on the thread count.
const ROW_BLOCK: usize = 64;

/// Pairwise Euclidean distances between the rows of an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(pub DMatrix<f64>);

/// `A_jk = a_jk − ā_j· − ā_·k + ā_··`
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredDistanceMatrix(pub DMatrix<f64>);

/// Row-major copy for cache-friendly distance evaluation.
struct Rows {
    data: Vec<f64>,
    dim: usize,
}

impl Rows {
    fn new(x: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(x.len());
        for r in x.row_iter() {
            data.extend(r.iter());
        }
        Self {
            data,
            dim: x.ncols(),
        }
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (
            &self.data[i * self.dim..(i + 1) * self.dim],
            &self.data[j * self.dim..(j + 1) * self.dim],
        );
        a.iter()
            .zip(b)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn pairwise_distances(x: &DMatrix<f64>) -> DistanceMatrix {
    let n = x.nrows();
    let rows = Rows::new(x);
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = rows.dist(i, j);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    DistanceMatrix(d)
}

pub fn double_center(s: &DistanceMatrix) -> CenteredDistanceMatrix {
    let m = &s.0;
    let (r, c) = (m.nrows(), m.ncols());
    let row_means: Vec<f64> = m.row_iter().map(|row| row.mean()).collect();
    let col_means: Vec<f64> = m.column_iter().map(|col| col.mean()).collect();
    let grand = m.mean();
    CenteredDistanceMatrix(DMatrix::from_fn(r, c, |j, k| {
        m[(j, k)] - row_means[j] - col_means[k] + grand
    }))
}

/// The three V-statistics `dCov²(X,Y)`, `dCov²(X,X)` and `dCov²(Y,Y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcovStats {
    pub xy: f64,
    pub xx: f64,
    pub yy: f64,
}

fn row_means(rows: &Rows, n: usize) -> Vec<f64> {
    (0..n)
        .into_par_iter()
        .map(|j| (0..n).map(|k| rows.dist(j, k)).sum::<f64>() / n as f64)
        .collect()
}

/// Streams over rows so only `O(n)` memory is used: one pass for the
/// distance means, one for the centered products.
pub fn dcov_stats(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DcovStats> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} rows vs {} rows",
            y.nrows()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParam(
            "distance covariance needs at least 2 rows".into(),
        ));
    }
    let (rx, ry) = (Rows::new(x), Rows::new(y));
    let (mx, my) = (row_means(&rx, n), row_means(&ry, n));
    let (gx, gy) = (
        mx.iter().sum::<f64>() / n as f64,
        my.iter().sum::<f64>() / n as f64,
    );

    let blocks: Vec<[f64; 3]> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(ROW_BLOCK)
        .map(|block| {
            let mut acc = [0.0f64; 3];
            for &j in block {
                let mut row = [0.0f64; 3];
                for k in 0..n {
                    let a = rx.dist(j, k) - mx[j] - mx[k] + gx;
                    let b = ry.dist(j, k) - my[j] - my[k] + gy;
                    row[0] += a * b;
                    row[1] += a * a;
                    row[2] += b * b;
                }
                for t in 0..3 {
                    acc[t] += row[t];
                }
            }
            acc
        })
        .collect();
    let mut total = [0.0f64; 3];
    for b in &blocks {
        for t in 0..3 {
            total[t] += b[t];
        }
    }
    let n2 = (n * n) as f64;
    Ok(DcovStats {
        xy: (total[0] / n2).max(0.0),
        xx: (total[1] / n2).max(0.0),
        yy: (total[2] / n2).max(0.0),
    })
}

/// `dCov²(X, Y) = (1/n²) Σ_jk A_jk B_jk`, clamped at 0.
pub fn dcov2(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    Ok(dcov_stats(x, y)?.xy)
}

fn dcor_from(stats: DcovStats) -> Result<f64> {
    if stats.xx <= 0.0 || stats.yy <= 0.0 {
        return Err(Error::UndefinedCorrelation(
            "an input has zero distance variance (all rows identical)".into(),
        ));
    }
    Ok((stats.xy / (stats.xx * stats.yy).sqrt())
        .sqrt()
        .clamp(0.0, 1.0))
}

/// `dCor = sqrt(dCov²(X,Y) / sqrt(dCov²(X,X) dCov²(Y,Y)))`, in `[0, 1]`.
pub fn dcor(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    dcor_from(dcov_stats(x, y)?)
}

fn column_centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    c
}

/// `⟨XXᵀ, YYᵀ⟩_F / (‖XXᵀ‖_F ‖YYᵀ‖_F)` on column-centered inputs, computed
/// through the small cross-products `XᵀY`, `XᵀX`, `YᵀY`.
pub fn rv_coefficient(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows vs {} rows",
            x.nrows(),
            y.nrows()
        )));
    }
    let (xc, yc) = (column_centered(x), column_centered(y));
    let xy = xc.tr_mul(&yc).norm_squared();
    let xx = xc.tr_mul(&xc).norm();
    let yy = yc.tr_mul(&yc).norm();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::Degenerate(
            "zero matrix after column centering".into(),
        ));
    }
    Ok((xy / (xx * yy)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Dcor,
    Rv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub method_ids: Vec<String>,
    pub measure: Measure,
    pub values: DMatrix<f64>,
}

impl CorrelationReport {
    /// Header row of method ids, then one row per method, 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = self.method_ids.join(",");
        out.push('\n');
        for row in self.values.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// All-pairs dependence between embeddings sharing a node set.
pub fn correlation_matrix(
    embeddings: &[&EmbeddingMatrix],
    measure: Measure,
) -> Result<CorrelationReport> {
    let k = embeddings.len();
    if let Some(e) = embeddings
        .iter()
        .find(|e| e.node_count() != embeddings[0].node_count())
    {
        return Err(Error::ShapeMismatch(format!(
            "{} has {} rows, expected {}",
            e.method_id,
            e.node_count(),
            embeddings[0].node_count()
        )));
    }
    let mut values = DMatrix::identity(k, k);
    for i in 0..k {
        let ei = embeddings[i];
        for j in i + 1..k {
            let ej = embeddings[j];
            let v = match measure {
                Measure::Dcor => {
                    let stats = dcov_stats(&ei.values, &ej.values)?;
                    if stats.xx <= 0.0 {
                        return Err(dcor_from(stats).unwrap_err().in_method(&ei.method_id));
                    }
                    dcor_from(stats).map_err(|e| e.in_method(&ej.method_id))?
                }
                Measure::Rv => rv_coefficient(&ei.values, &ej.values)
                    .map_err(|e| e.in_method(&format!("{}/{}", ei.method_id, ej.method_id)))?,
            };
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
        // single-method reports still validate the input
        if k == 1 {
            match measure {
                Measure::Dcor => {
                    dcor(&ei.values, &ei.values).map_err(|e| e.in_method(&ei.method_id))?
                }
                Measure::Rv => rv_coefficient(&ei.values, &ei.values)
                    .map_err(|e| e.in_method(&ei.method_id))?,
            };
        }
    }
    Ok(CorrelationReport {
        method_ids: embeddings.iter().map(|e| e.method_id.clone()).collect(),
        measure,
        values,
    })
}

/// `1 − Σ n_i / n` for declared sets of structurally equivalent nodes. The
/// bound only applies to a purely structure-preserving method paired with a
/// structure-and-community method, which none of the built-in embedders is
/// certified to be, so this is reported for information only.
pub fn structural_bound(n: usize, class_sizes: &[usize]) -> f64 {
    1.0 - class_sizes.iter().sum::<usize>() as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralDiagnostic {
    pub method_a: String,
    pub method_b: String,
    pub dcor: f64,
    pub bound: f64,
    pub below_bound: bool,
}

pub fn structural_diagnostic(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    class_sizes: &[usize],
) -> Result<StructuralDiagnostic> {
    let value = dcor(&a.values, &b.values)?;
    let bound = structural_bound(a.node_count(), class_sizes);
    Ok(StructuralDiagnostic {
        method_a: a.method_id.clone(),
        method_b: b.method_id.clone(),
        dcor: value,
        bound,
        below_bound: value < bound,
    })
}
