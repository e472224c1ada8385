//! One-vs-rest L2 logistic regression and F1 metrics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::LabelMatrix;

pub const DEFAULT_REG: f64 = 1.0;
pub const GRAD_TOL: f64 = 1e-6;
pub const MAX_ITER: usize = 1000;

/// Per-column affine map to zero mean and unit variance, fitted on a subset
/// of rows. Constant columns are only centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("standardization row set".into()));
        }
        let m = rows.len() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mu = rows.iter().map(|&r| col[r]).sum::<f64>() / m;
            let var = rows.iter().map(|&r| (col[r] - mu).powi(2)).sum::<f64>() / m;
            mean.push(mu);
            scale.push(if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 });
        }
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) * self.scale[j]
        })
    }
}

/// Standardizes each input on `train_rows` and concatenates the columns in
/// the given order.
pub fn concat_features(xs: &[&EmbeddingMatrix], train_rows: &[usize]) -> Result<DMatrix<f64>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::EmptyInput("feature list".into()))?;
    let n = first.node_count();
    if let Some(bad) = xs.iter().find(|e| e.node_count() != n) {
        return Err(Error::ShapeMismatch(format!(
            "{} has {} rows, expected {n}",
            bad.method_id,
            bad.node_count()
        )));
    }
    let total: usize = xs.iter().map(|e| e.dim()).sum();
    let mut out = DMatrix::zeros(n, total);
    let mut at = 0;
    for e in xs {
        let z = Standardizer::fit(&e.values, train_rows)?.transform(&e.values);
        out.columns_mut(at, e.dim()).copy_from(&z);
        at += e.dim();
    }
    Ok(out)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn margins(x: &DMatrix<f64>, w: &DVector<f64>, b: f64) -> DVector<f64> {
    let mut z = x * w;
    z.add_scalar_mut(b);
    z
}

/// `Σ_i [log(1 + e^{z_i}) − y_i z_i] + (reg/2)‖w‖²` with `z = Xw + b`; the
/// bias is not penalized.
pub fn binary_objective(x: &DMatrix<f64>, y: &[bool], w: &DVector<f64>, b: f64, reg: f64) -> f64 {
    let z = margins(x, w, b);
    let loss: f64 = z
        .iter()
        .zip(y)
        .map(|(&zi, &yi)| softplus(zi) - if yi { zi } else { 0.0 })
        .sum();
    loss + 0.5 * reg * w.norm_squared()
}

/// Gradient of [`binary_objective`] as `(∂w, ∂b)`.
pub fn binary_gradient(
    x: &DMatrix<f64>,
    y: &[bool],
    w: &DVector<f64>,
    b: f64,
    reg: f64,
) -> (DVector<f64>, f64) {
    let z = margins(x, w, b);
    let r = DVector::from_fn(z.len(), |i, _| sigmoid(z[i]) - if y[i] { 1.0 } else { 0.0 });
    (x.tr_mul(&r) + w * reg, r.sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Set when the training rows were all positive or all negative; the
    /// model then predicts this prior for every row.
    pub constant: Option<f64>,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
}

impl BinaryModel {
    pub fn decision(&self, x: &DMatrix<f64>) -> DVector<f64> {
        margins(x, &DVector::from_column_slice(&self.weights), self.bias)
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DVector<f64> {
        match self.constant {
            Some(p) => DVector::from_element(x.nrows(), p),
            None => self.decision(x).map(sigmoid),
        }
    }
}

/// Newton-CG with Armijo backtracking. Stops when the gradient ∞-norm falls
/// below [`GRAD_TOL`] or after [`MAX_ITER`] Newton steps.
pub fn fit_binary(x: &DMatrix<f64>, y: &[bool], reg: f64) -> Result<BinaryModel> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} feature rows vs {} targets",
            y.len()
        )));
    }
    if !(reg > 0.0) {
        return Err(Error::InvalidParam(format!(
            "regularization must be positive, got {reg}"
        )));
    }
    let pos = y.iter().filter(|&&b| b).count();
    if pos == 0 || pos == n {
        let prior = pos as f64 / n.max(1) as f64;
        return Ok(BinaryModel {
            weights: vec![0.0; d],
            bias: 0.0,
            constant: Some(prior),
            iterations: 0,
            objective: 0.0,
            converged: true,
        });
    }

    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    let mut f = binary_objective(x, y, &w, b, reg);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        let (gw, gb) = binary_gradient(x, y, &w, b, reg);
        let gnorm = gw.amax().max(gb.abs());
        if gnorm < GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;

        // Hessian-vector products at the current point
        let z = margins(x, &w, b);
        let s = z.map(|zi| {
            let p = sigmoid(zi);
            p * (1.0 - p)
        });
        let hess = |vw: &DVector<f64>, vb: f64| {
            let mut xv = x * vw;
            xv.add_scalar_mut(vb);
            xv.component_mul_assign(&s);
            (x.tr_mul(&xv) + vw * reg, xv.sum())
        };

        // CG on H p = −g
        let (mut pw, mut pb) = (DVector::zeros(d), 0.0);
        let (mut rw, mut rb) = (-&gw, -gb);
        let (mut dw, mut db) = (rw.clone(), rb);
        let mut rr = rw.norm_squared() + rb * rb;
        let gn = rr.sqrt();
        let cg_tol = (0.5f64).min(gn.sqrt()) * gn;
        for _ in 0..(d + 1).max(10) * 2 {
            if rr.sqrt() <= cg_tol {
                break;
            }
            let (hw, hb) = hess(&dw, db);
            let curv = dw.dot(&hw) + db * hb;
            if curv <= 0.0 {
                break;
            }
            let alpha = rr / curv;
            pw.axpy(alpha, &dw, 1.0);
            pb += alpha * db;
            rw.axpy(-alpha, &hw, 1.0);
            rb -= alpha * hb;
            let rr_new = rw.norm_squared() + rb * rb;
            let beta = rr_new / rr;
            dw = &rw + &dw * beta;
            db = rb + beta * db;
            rr = rr_new;
        }
        if pw.norm_squared() + pb * pb == 0.0 {
            pw = -&gw;
            pb = -gb;
        }

        let slope = gw.dot(&pw) + gb * pb;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let (cw, cb) = (&w + &pw * step, b + pb * step);
            let fc = binary_objective(x, y, &cw, cb, reg);
            if fc <= f + 1e-4 * step * slope {
                w = cw;
                b = cb;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no further decrease representable in floating point
            converged = gnorm < GRAD_TOL * 100.0;
            break;
        }
    }
    Ok(BinaryModel {
        weights: w.iter().copied().collect(),
        bias: b,
        constant: None,
        iterations,
        objective: f,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrModel {
    pub reg: f64,
    pub classes: Vec<BinaryModel>,
}

fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    for (i, row) in x.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature matrix".into(),
                row: i,
            });
        }
    }
    Ok(())
}

/// One independent binary problem per label column. Classes are trained in
/// parallel; each fit is deterministic, so the result does not depend on
/// scheduling.
pub fn train_ovr(x: &DMatrix<f64>, y: &LabelMatrix, reg: f64) -> Result<OvrModel> {
    if x.nrows() != y.node_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows vs {} label rows",
            x.nrows(),
            y.node_count()
        )));
    }
    check_finite(x)?;
    let dense = y.to_dense();
    let classes = (0..y.label_count())
        .into_par_iter()
        .map(|c| {
            let target: Vec<bool> = dense.iter().map(|r| r[c]).collect();
            fit_binary(x, &target, reg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OvrModel { reg, classes })
}

impl OvrModel {
    pub fn label_count(&self) -> usize {
        self.classes.len()
    }

    /// `n × L` matrix of positive-class probabilities.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(x.nrows(), self.classes.len());
        for (c, m) in self.classes.iter().enumerate() {
            p.set_column(c, &m.predict_proba(x));
        }
        p
    }

    /// Sum of the per-class penalized objectives at the fitted weights.
    pub fn training_objective(&self) -> f64 {
        self.classes.iter().map(|m| m.objective).sum()
    }

    pub fn constant_classes(&self) -> Vec<usize> {
        (0..self.classes.len())
            .filter(|&c| self.classes[c].constant.is_some())
            .collect()
    }
}

/// How probabilities become label sets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum DecisionRule {
    /// Each node receives as many labels as it truly has.
    #[default]
    TopK,
    Threshold {
        threshold: f64,
    },
}

/// The `k[i]` highest-probability labels per row; ties go to the lower class
/// index.
pub fn top_k_labels(proba: &DMatrix<f64>, k_per_node: &[usize]) -> Result<LabelMatrix> {
    let l = proba.ncols();
    if k_per_node.len() != proba.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows vs {} label counts",
            proba.nrows(),
            k_per_node.len()
        )));
    }
    let mut rows = Vec::with_capacity(proba.nrows());
    for (i, &k) in k_per_node.iter().enumerate() {
        if k == 0 || k > l {
            return Err(Error::InvalidParam(format!(
                "node {i}: k={k} outside 1..={l}"
            )));
        }
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| proba[(i, b)].total_cmp(&proba[(i, a)]).then(a.cmp(&b)));
        order.truncate(k);
        rows.push(order);
    }
    LabelMatrix::new((0..l).map(|c| c.to_string()).collect(), rows)
}

pub fn predict_multilabel(
    m: &OvrModel,
    x: &DMatrix<f64>,
    k_per_node: &[usize],
) -> Result<LabelMatrix> {
    top_k_labels(&m.predict_proba(x), k_per_node)
}

/// Every label whose probability reaches `threshold`.
pub fn predict_threshold(m: &OvrModel, x: &DMatrix<f64>, threshold: f64) -> Result<LabelMatrix> {
    let p = m.predict_proba(x);
    let rows = p
        .row_iter()
        .map(|r| (0..r.len()).filter(|&c| r[c] >= threshold).collect())
        .collect();
    LabelMatrix::new((0..p.ncols()).map(|c| c.to_string()).collect(), rows)
}

pub fn predict(
    m: &OvrModel,
    x: &DMatrix<f64>,
    truth: &LabelMatrix,
    rule: DecisionRule,
) -> Result<LabelMatrix> {
    match rule {
        DecisionRule::TopK => predict_multilabel(m, x, &truth.counts()),
        DecisionRule::Threshold { threshold } => predict_threshold(m, x, threshold),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<usize>,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Per-class F1 (0 when precision and recall are both 0), macro over classes
/// with ground-truth support, micro from pooled counts.
pub fn f1_report(pred: &LabelMatrix, truth: &LabelMatrix) -> Result<F1Report> {
    if pred.node_count() != truth.node_count() || pred.label_count() != truth.label_count() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.node_count(),
            pred.label_count(),
            truth.node_count(),
            truth.label_count()
        )));
    }
    let l = truth.label_count();
    let (mut tp, mut fp, mut fn_) = (vec![0usize; l], vec![0usize; l], vec![0usize; l]);
    for i in 0..truth.node_count() {
        let (p, t) = (pred.labels(i), truth.labels(i));
        for &c in p {
            if t.binary_search(&c).is_ok() {
                tp[c] += 1;
            } else {
                fp[c] += 1;
            }
        }
        for &c in t {
            if p.binary_search(&c).is_err() {
                fn_[c] += 1;
            }
        }
    }
    let per_class_f1: Vec<f64> = (0..l).map(|c| f1(tp[c], fp[c], fn_[c])).collect();
    let support = truth.support();
    let present: Vec<f64> = (0..l)
        .filter(|&c| support[c] > 0)
        .map(|c| per_class_f1[c])
        .collect();
    let macro_f1 = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    let micro_f1 = f1(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    Ok(F1Report {
        macro_f1,
        micro_f1,
        per_class_f1,
        support,
    })
}
