//! Linear probes: multinomial logistic regression and one-vs-rest linear SVM.
//!
//! Both models store an `L × (d + 1)` weight matrix whose last column is the
//! bias. The L2 penalty never touches the bias column.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("training labels contain a single class")]
    SingleClassInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("label index {0} outside the label order")]
    LabelOutOfRange(usize),
    #[error("empty training set")]
    EmptyInput,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logreg,
    Svm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 200,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(ModelError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(ModelError::InvalidConfig("l2 must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: ModelKind,
    pub weights: Array2<f64>,
    pub label_order: Vec<String>,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.ncols() - 1
    }

    pub fn scores(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let d = self.dim();
        self.weights.slice(s![.., ..d]).dot(&x) + self.weights.column(d)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }
}

fn check_inputs(x: ArrayView2<f64>, y: &[usize], labels: &[String], cfg: &TrainConfig) -> Result<(), ModelError> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(ModelError::DimMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if y.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= labels.len()) {
        return Err(ModelError::LabelOutOfRange(bad));
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(ModelError::SingleClassInput);
    }
    Ok(())
}

fn softmax_in_place(v: &mut Array1<f64>) {
    let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    v.mapv_inplace(|x| (x - max).exp());
    let sum = v.sum();
    *v /= sum;
}

fn class_scores(w: &Array2<f64>, row: ArrayView1<f64>) -> Array1<f64> {
    let d = row.len();
    w.slice(s![.., ..d]).dot(&row) + w.column(d)
}

fn penalty(w: &Array2<f64>) -> f64 {
    let d = w.ncols() - 1;
    w.slice(s![.., ..d]).iter().map(|v| v * v).sum::<f64>()
}

/// Mean softmax cross-entropy plus `(l2 / 2)·‖W‖²` (bias excluded).
pub fn logreg_objective(w: &Array2<f64>, x: ArrayView2<f64>, y: &[usize], l2: f64) -> f64 {
    let n = x.nrows() as f64;
    let mut loss = 0.0;
    for (row, &c) in x.axis_iter(Axis(0)).zip(y) {
        let mut z = class_scores(w, row);
        let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        z.mapv_inplace(|v| v - max);
        let log_norm = z.mapv(f64::exp).sum().ln();
        loss += log_norm - z[c];
    }
    loss / n + 0.5 * l2 * penalty(w)
}

/// Analytic gradient of [`logreg_objective`].
pub fn logreg_gradient(w: &Array2<f64>, x: ArrayView2<f64>, y: &[usize], l2: f64) -> Array2<f64> {
    let d = x.ncols();
    let mut grad = Array2::<f64>::zeros(w.raw_dim());
    for (row, &c) in x.axis_iter(Axis(0)).zip(y) {
        let mut p = class_scores(w, row);
        softmax_in_place(&mut p);
        p[c] -= 1.0;
        for (k, &pk) in p.iter().enumerate() {
            let mut g = grad.row_mut(k);
            g.slice_mut(s![..d]).scaled_add(pk, &row);
            g[d] += pk;
        }
    }
    grad /= x.nrows() as f64;
    grad.slice_mut(s![.., ..d]).scaled_add(l2, &w.slice(s![.., ..d]));
    grad
}

/// Full-batch gradient descent from zero weights.
pub fn train_logreg(
    x: ArrayView2<f64>,
    y: &[usize],
    labels: &[String],
    cfg: &TrainConfig,
) -> Result<LinearModel, ModelError> {
    check_inputs(x, y, labels, cfg)?;
    let mut w = Array2::<f64>::zeros((labels.len(), x.ncols() + 1));
    for _ in 0..cfg.epochs {
        let grad = logreg_gradient(&w, x, y, cfg.l2);
        w.scaled_add(-cfg.learning_rate, &grad);
    }
    Ok(LinearModel {
        kind: ModelKind::Logreg,
        weights: w,
        label_order: labels.to_vec(),
    })
}

fn ovr_sign(y: usize, class: usize) -> f64 {
    if y == class {
        1.0
    } else {
        -1.0
    }
}

/// Sum over classes of mean hinge loss plus `(l2 / 2)·‖w_c‖²`.
pub fn svm_objective(w: &Array2<f64>, x: ArrayView2<f64>, y: &[usize], l2: f64) -> f64 {
    let n = x.nrows() as f64;
    let mut loss = 0.0;
    for (row, &yi) in x.axis_iter(Axis(0)).zip(y) {
        let z = class_scores(w, row);
        for (c, &zc) in z.iter().enumerate() {
            loss += (1.0 - ovr_sign(yi, c) * zc).max(0.0);
        }
    }
    loss / n + 0.5 * l2 * penalty(w)
}

/// Subgradient of [`svm_objective`]; exact wherever no margin equals 1.
pub fn svm_subgradient(w: &Array2<f64>, x: ArrayView2<f64>, y: &[usize], l2: f64) -> Array2<f64> {
    let d = x.ncols();
    let mut grad = Array2::<f64>::zeros(w.raw_dim());
    for (row, &yi) in x.axis_iter(Axis(0)).zip(y) {
        let z = class_scores(w, row);
        for (c, &zc) in z.iter().enumerate() {
            let sign = ovr_sign(yi, c);
            if sign * zc < 1.0 {
                let mut g = grad.row_mut(c);
                g.slice_mut(s![..d]).scaled_add(-sign, &row);
                g[d] -= sign;
            }
        }
    }
    grad /= x.nrows() as f64;
    grad.slice_mut(s![.., ..d]).scaled_add(l2, &w.slice(s![.., ..d]));
    grad
}

/// Per-example subgradient descent over one seed-shuffled order reused
/// every epoch.
pub fn train_svm(
    x: ArrayView2<f64>,
    y: &[usize],
    labels: &[String],
    cfg: &TrainConfig,
) -> Result<LinearModel, ModelError> {
    check_inputs(x, y, labels, cfg)?;
    let d = x.ncols();
    let mut w = Array2::<f64>::zeros((labels.len(), d + 1));
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let lr = cfg.learning_rate;
    for _ in 0..cfg.epochs {
        for &i in &order {
            let row = x.row(i);
            for c in 0..labels.len() {
                let sign = ovr_sign(y[i], c);
                let mut wc = w.row_mut(c);
                let margin = sign * (wc.slice(s![..d]).dot(&row) + wc[d]);
                if cfg.l2 > 0.0 {
                    wc.slice_mut(s![..d]).mapv_inplace(|v| v * (1.0 - lr * cfg.l2));
                }
                if margin < 1.0 {
                    wc.slice_mut(s![..d]).scaled_add(lr * sign, &row);
                    wc[d] += lr * sign;
                }
            }
        }
    }
    Ok(LinearModel {
        kind: ModelKind::Svm,
        weights: w,
        label_order: labels.to_vec(),
    })
}

pub fn train(
    kind: ModelKind,
    x: ArrayView2<f64>,
    y: &[usize],
    labels: &[String],
    cfg: &TrainConfig,
) -> Result<LinearModel, ModelError> {
    match kind {
        ModelKind::Logreg => train_logreg(x, y, labels, cfg),
        ModelKind::Svm => train_svm(x, y, labels, cfg),
    }
}

/// Argmax label indices; ties resolve to the lowest label index.
pub fn predict(m: &LinearModel, x: ArrayView2<f64>) -> Result<Vec<usize>, ModelError> {
    if x.ncols() != m.dim() {
        return Err(ModelError::DimMismatch {
            expected: m.dim(),
            found: x.ncols(),
        });
    }
    Ok(x.axis_iter(Axis(0))
        .map(|row| {
            let z = m.scores(row);
            let mut best = 0;
            for (k, &v) in z.iter().enumerate().skip(1) {
                if v > z[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}
