//! Gini-ordered classifier chain construction.
//!
//! Labels are predicted in descending order of Gini impurity. Stage `j`
//! (1-based) sees the labels of stages `1..j-1` as one extra "history"
//! modality: true labels while training, predicted labels at test time.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{ModalitySchema, MultiModalDataset};
use crate::error::{Error, Result};

/// Default extraction cost of the label-history modality.
pub const DEFAULT_HISTORY_COST: f64 = 0.1;

/// Label order for a chain, most impure label first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPlan {
    /// Permutation of label indices (0-based); `tau[0]` is predicted first.
    pub tau: Vec<usize>,
    /// Gini impurity of each label, indexed by original label position.
    pub gini: Vec<f64>,
    /// Extraction cost charged for the history modality.
    pub history_cost: f64,
}

impl ChainPlan {
    pub fn n_labels(&self) -> usize {
        self.tau.len()
    }

    /// Inverse permutation: `position_of[l]` is the stage (0-based) at which
    /// original label `l` is predicted.
    pub fn position_of(&self) -> Vec<usize> {
        let mut inv = vec![0usize; self.tau.len()];
        for (stage, &label) in self.tau.iter().enumerate() {
            inv[label] = stage;
        }
        inv
    }
}

/// Gini impurity `1 - sum_k p_k^2` of an empirical label distribution.
/// For binary labels the result lies in [0, 0.5].
pub fn gini_index(labels: &[i8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Argument("gini_index needs a non-empty list".into()));
    }
    let n = labels.len() as f64;
    // BTreeMap fixes the summation order, keeping ties exactly tied.
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let sum_sq: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p
        })
        .sum();
    Ok(1.0 - sum_sq)
}

/// Order labels by descending Gini impurity; ties break toward the lower
/// original label index.
pub fn order_labels(y: ArrayView2<i8>, history_cost: f64) -> Result<ChainPlan> {
    if y.ncols() == 0 {
        return Err(Error::Argument("label matrix has no columns".into()));
    }
    let gini: Vec<f64> = (0..y.ncols())
        .map(|j| gini_index(&y.column(j).to_vec()))
        .collect::<Result<_>>()?;
    let mut tau: Vec<usize> = (0..y.ncols()).collect();
    tau.sort_by(|&a, &b| gini[b].total_cmp(&gini[a]).then(a.cmp(&b)));
    Ok(ChainPlan {
        tau,
        gini,
        history_cost,
    })
}

/// One chain stage's data: the base dataset plus the label-history block.
///
/// `history` holds {-1,+1} values as f64: true labels of earlier chain
/// positions when built for training, predicted labels when built for
/// testing. At stage 1 it is empty and the augmented schema equals the base
/// schema; later stages append one modality of width `j-1` at the history
/// cost.
#[derive(Debug, Clone)]
pub struct StageDataset {
    stage: usize,
    base: Arc<MultiModalDataset>,
    history: Array2<f64>,
    augmented_schema: ModalitySchema,
    target_label: usize,
}

impl StageDataset {
    /// 1-based chain position.
    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn base(&self) -> &MultiModalDataset {
        &self.base
    }

    pub fn history(&self) -> ArrayView2<'_, f64> {
        self.history.view()
    }

    pub fn augmented_schema(&self) -> &ModalitySchema {
        &self.augmented_schema
    }

    /// Original index of the label this stage predicts.
    pub fn target_label(&self) -> usize {
        self.target_label
    }

    pub fn n_instances(&self) -> usize {
        self.base.n_instances()
    }

    pub fn augmented_dim(&self) -> usize {
        self.augmented_schema.total_dim()
    }

    /// Index of the history modality in the augmented schema, if present.
    pub fn history_modality(&self) -> Option<usize> {
        if self.stage > 1 {
            Some(self.augmented_schema.modality_count() - 1)
        } else {
            None
        }
    }

    /// Stage target in {-1,+1} for instance `i`.
    pub fn target(&self, i: usize) -> i8 {
        self.base.y[[i, self.target_label]]
    }

    /// Assembled augmented feature vector `[base features | history]`.
    pub fn instance(&self, i: usize) -> Array1<f64> {
        let d = self.base.schema.total_dim();
        let w = self.history.ncols();
        let mut out = Array1::<f64>::zeros(d + w);
        out.slice_mut(ndarray::s![..d]).assign(&self.base.x.row(i));
        if w > 0 {
            out.slice_mut(ndarray::s![d..]).assign(&self.history.row(i));
        }
        out
    }

    /// All augmented instances as one matrix (used by training and the
    /// KNN teacher).
    pub fn augmented_matrix(&self) -> Array2<f64> {
        let n = self.n_instances();
        let d = self.augmented_dim();
        let mut out = Array2::<f64>::zeros((n, d));
        for i in 0..n {
            out.row_mut(i).assign(&self.instance(i));
        }
        out
    }
}

fn stage_schema(plan: &ChainPlan, base: &MultiModalDataset, j: usize) -> Result<ModalitySchema> {
    if j == 1 {
        Ok(base.schema.clone())
    } else {
        base.schema.with_appended(j - 1, plan.history_cost)
    }
}

fn check_stage_index(plan: &ChainPlan, j: usize) -> Result<()> {
    if j < 1 || j > plan.n_labels() {
        return Err(Error::Argument(format!(
            "stage {j} out of range 1..={}",
            plan.n_labels()
        )));
    }
    Ok(())
}

/// Training stage: history holds the true labels of earlier chain positions.
pub fn build_train_stage(
    plan: &ChainPlan,
    data: &Arc<MultiModalDataset>,
    j: usize,
) -> Result<StageDataset> {
    check_stage_index(plan, j)?;
    let n = data.n_instances();
    let mut history = Array2::<f64>::zeros((n, j - 1));
    for k in 0..j - 1 {
        let label = plan.tau[k];
        for i in 0..n {
            history[[i, k]] = f64::from(data.y[[i, label]]);
        }
    }
    Ok(StageDataset {
        stage: j,
        base: Arc::clone(data),
        history,
        augmented_schema: stage_schema(plan, data, j)?,
        target_label: plan.tau[j - 1],
    })
}

/// Testing stage: history holds the predictions of earlier stages.
/// `predicted` must have one {-1,+1} column per earlier stage, in chain
/// order.
pub fn build_test_stage(
    plan: &ChainPlan,
    data: &Arc<MultiModalDataset>,
    j: usize,
    predicted: ArrayView2<i8>,
) -> Result<StageDataset> {
    check_stage_index(plan, j)?;
    let n = data.n_instances();
    if predicted.nrows() != n || predicted.ncols() != j - 1 {
        return Err(Error::Argument(format!(
            "stage {j} expects a {n}x{} prediction matrix, got {}x{}",
            j - 1,
            predicted.nrows(),
            predicted.ncols()
        )));
    }
    if predicted.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::Argument(
            "predicted history entries must be -1 or +1".into(),
        ));
    }
    let history = predicted.mapv(f64::from);
    Ok(StageDataset {
        stage: j,
        base: Arc::clone(data),
        history,
        augmented_schema: stage_schema(plan, data, j)?,
        target_label: plan.tau[j - 1],
    })
}
