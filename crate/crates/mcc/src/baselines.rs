//! BR, CC, and ECC reference learners.
//!
//! All three share one regularized logistic-regression binary learner and
//! consume every modality concatenated, so their extraction cost is always
//! the full schema cost.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::sigmoid;
use crate::dataset::MultiModalDataset;
use crate::error::{Error, Result};

/// Full-batch gradient-descent settings for the shared binary learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            l2: 1e-3,
            epochs: 500,
            learning_rate: 0.5,
        }
    }
}

/// One binary logistic model over the concatenated feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBinaryModel {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl LinearBinaryModel {
    pub fn prob(&self, x: ArrayView1<f64>) -> f64 {
        sigmoid(x.dot(&self.weights) + self.bias)
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> i8 {
        if self.prob(x) >= 0.5 {
            1
        } else {
            -1
        }
    }
}

/// Mean log loss plus L2 on the weights (bias unregularized), minimized by
/// full-batch gradient descent from a zero start.
fn train_logistic(x: ArrayView2<f64>, y: &[i8], cfg: &BaselineConfig) -> Result<LinearBinaryModel> {
    let n = x.nrows();
    let d = x.ncols();
    if n == 0 || n != y.len() {
        return Err(Error::Argument("bad training set for logistic learner".into()));
    }
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0f64;
    let inv_n = 1.0 / n as f64;
    for _ in 0..cfg.epochs {
        let mut gw = Array1::<f64>::zeros(d);
        let mut gb = 0.0f64;
        for (row, &label) in x.rows().into_iter().zip(y) {
            let p = sigmoid(row.dot(&w) + b);
            let err = p - f64::from(label + 1) / 2.0;
            gw.scaled_add(err * inv_n, &row);
            gb += err * inv_n;
        }
        gw.scaled_add(2.0 * cfg.l2, &w);
        w.scaled_add(-cfg.learning_rate, &gw);
        b -= cfg.learning_rate * gb;
        if !b.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("logistic learner diverged".into()));
        }
    }
    Ok(LinearBinaryModel { weights: w, bias: b })
}

/// Binary relevance: one independent model per label.
#[derive(Debug, Clone)]
pub struct BrModel {
    pub models: Vec<LinearBinaryModel>,
}

pub fn train_br(data: &MultiModalDataset, cfg: &BaselineConfig) -> Result<BrModel> {
    let mut models = Vec::with_capacity(data.n_labels());
    for j in 0..data.n_labels() {
        let y: Vec<i8> = data.y.column(j).to_vec();
        models.push(train_logistic(data.x.view(), &y, cfg)?);
    }
    Ok(BrModel { models })
}

impl BrModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<i8> {
        let mut z = Array2::<i8>::zeros((x.nrows(), self.models.len()));
        for i in 0..x.nrows() {
            for (j, m) in self.models.iter().enumerate() {
                z[[i, j]] = m.predict(x.row(i));
            }
        }
        z
    }
}

/// Classifier chain over a fixed label order: stage `j` trains on the
/// features plus the true labels of earlier chain positions and predicts
/// with the earlier stages' outputs.
#[derive(Debug, Clone)]
pub struct CcModel {
    pub models: Vec<LinearBinaryModel>,
    pub tau: Vec<usize>,
}

pub fn train_cc(data: &MultiModalDataset, tau: &[usize], cfg: &BaselineConfig) -> Result<CcModel> {
    let l = data.n_labels();
    let mut sorted = tau.to_vec();
    sorted.sort_unstable();
    if sorted != (0..l).collect::<Vec<_>>() {
        return Err(Error::Argument(format!(
            "tau {tau:?} is not a permutation of 0..{l}"
        )));
    }
    let n = data.n_instances();
    let d = data.x.ncols();
    let mut models = Vec::with_capacity(l);
    for (idx, &label) in tau.iter().enumerate() {
        let mut xj = Array2::<f64>::zeros((n, d + idx));
        xj.slice_mut(ndarray::s![.., ..d]).assign(&data.x);
        for (k, &prev) in tau[..idx].iter().enumerate() {
            for i in 0..n {
                xj[[i, d + k]] = f64::from(data.y[[i, prev]]);
            }
        }
        let y: Vec<i8> = data.y.column(label).to_vec();
        models.push(train_logistic(xj.view(), &y, cfg)?);
    }
    Ok(CcModel {
        models,
        tau: tau.to_vec(),
    })
}

impl CcModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<i8> {
        let n = x.nrows();
        let d = x.ncols();
        let l = self.models.len();
        let mut z = Array2::<i8>::zeros((n, l));
        let mut history = Array2::<f64>::zeros((n, l));
        for (idx, model) in self.models.iter().enumerate() {
            let mut xj = Array2::<f64>::zeros((n, d + idx));
            xj.slice_mut(ndarray::s![.., ..d]).assign(&x);
            if idx > 0 {
                xj.slice_mut(ndarray::s![.., d..])
                    .assign(&history.slice(ndarray::s![.., ..idx]));
            }
            for i in 0..n {
                let pred = model.predict(xj.row(i));
                z[[i, self.tau[idx]]] = pred;
                history[[i, idx]] = f64::from(pred);
            }
        }
        z
    }
}

/// Ensemble of chains over random label orders; per-label majority vote
/// with ties resolved to +1.
#[derive(Debug, Clone)]
pub struct EccModel {
    pub members: Vec<CcModel>,
}

pub fn train_ecc(
    data: &MultiModalDataset,
    n_chains: usize,
    seed: u64,
    cfg: &BaselineConfig,
) -> Result<EccModel> {
    if n_chains == 0 {
        return Err(Error::Argument("ensemble needs at least one chain".into()));
    }
    let l = data.n_labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = Vec::with_capacity(n_chains);
    for _ in 0..n_chains {
        let mut tau: Vec<usize> = (0..l).collect();
        tau.shuffle(&mut rng);
        members.push(train_cc(data, &tau, cfg)?);
    }
    Ok(EccModel { members })
}

impl EccModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<i8> {
        let n = x.nrows();
        let l = self.members[0].models.len();
        let mut votes = Array2::<i32>::zeros((n, l));
        for member in &self.members {
            let z = member.predict(x);
            for i in 0..n {
                for j in 0..l {
                    votes[[i, j]] += i32::from(z[[i, j]]);
                }
            }
        }
        votes.mapv(|v| if v >= 0 { 1i8 } else { -1i8 })
    }
}

/// Convenience dispatch used by the experiment driver.
pub fn predict_with(model: &BaselineModel, x: ArrayView2<f64>) -> Array2<i8> {
    match model {
        BaselineModel::Br(m) => m.predict(x),
        BaselineModel::Cc(m) => m.predict(x),
        BaselineModel::Ecc(m) => m.predict(x),
    }
}

#[derive(Debug, Clone)]
pub enum BaselineModel {
    Br(BrModel),
    Cc(CcModel),
    Ecc(EccModel),
}
