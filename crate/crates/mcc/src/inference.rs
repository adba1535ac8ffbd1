//! Test-time sequential modality extraction and chain propagation.
//!
//! At test time the budget check happens before paying for the next
//! modality, so a trace never exceeds the budget — except for the very
//! first extraction, which always happens because a prediction needs at
//! least one modality. (Training uses the post-extraction check, so the
//! asymmetry is confined to this module.)

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::cell::{
    confidence, forward_step, label_from_prob, mask_input, predict_label, predict_modality,
    CellState, ModalitySet,
};
use crate::chain::{build_test_stage, ChainPlan};
use crate::dataset::MultiModalDataset;
use crate::error::{Error, Result};
use crate::training::StageModel;

/// Stopping thresholds applied at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Cost budget; `None` disables truncation entirely.
    pub cth: Option<f64>,
    /// Stop once the label confidence exceeds this.
    pub ath: f64,
}

impl StopRule {
    pub fn new(cth: Option<f64>, ath: f64) -> Self {
        StopRule { cth, ath }
    }
}

/// Record of one instance's extraction sequence at one chain stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionTrace {
    /// Extracted modality indices, in order, without duplicates.
    pub sequence: Vec<usize>,
    /// Cost paid per extraction, aligned with `sequence`.
    pub step_costs: Vec<f64>,
    /// Label confidence after each extraction.
    pub confidences: Vec<f64>,
    /// Final {-1,+1} decision.
    pub label: i8,
    /// Final label probability.
    pub probability: f64,
    /// Index of the label-history modality in this stage's schema, if any.
    pub history_modality: Option<usize>,
}

impl PredictionTrace {
    /// Total extraction cost paid.
    pub fn cost(&self) -> f64 {
        self.step_costs.iter().sum()
    }

    /// Extraction cost without the label-history modality's share.
    pub fn base_cost(&self) -> f64 {
        match self.history_modality {
            None => self.cost(),
            Some(h) => self
                .sequence
                .iter()
                .zip(&self.step_costs)
                .filter(|(&m, _)| m != h)
                .map(|(_, &c)| c)
                .sum(),
        }
    }
}

/// Extract modalities one by one until the label is confident, the budget
/// would be exceeded, or everything has been extracted. Always extracts at
/// least one modality.
pub fn predict_instance(
    model: &StageModel,
    x: ArrayView1<f64>,
    rule: &StopRule,
    history_modality: Option<usize>,
) -> Result<PredictionTrace> {
    let schema = &model.schema;
    if x.len() != schema.total_dim() {
        return Err(Error::Argument(format!(
            "instance has {} features, stage expects {}",
            x.len(),
            schema.total_dim()
        )));
    }
    let cth = rule.cth.unwrap_or(f64::INFINITY);
    let mut state = CellState::zeros(model.params.dims.hidden);
    let mut extracted = ModalitySet::empty();
    let mut sequence = Vec::new();
    let mut step_costs = Vec::new();
    let mut confidences = Vec::new();
    let mut cost = 0.0;
    let mut prob = 0.5;

    loop {
        let (_, choice) = predict_modality(&model.params, state.h.view(), &extracted);
        let Some(m) = choice else {
            break; // exhausted
        };
        // Hard budget: never pay past the threshold, except for the
        // mandatory first extraction.
        if !sequence.is_empty() && cost + schema.cost(m) > cth {
            break;
        }
        cost += schema.cost(m);
        let masked = mask_input(x, schema, m)?;
        let (next, _) = forward_step(&model.params, &state, &masked);
        prob = predict_label(&model.params, next.h.view());
        sequence.push(m);
        step_costs.push(schema.cost(m));
        confidences.push(confidence(prob));
        extracted.insert(m);
        state = next;
        if confidence(prob) > rule.ath {
            break;
        }
    }

    Ok(PredictionTrace {
        sequence,
        step_costs,
        confidences,
        label: label_from_prob(prob),
        probability: prob,
        history_modality,
    })
}

/// Run the whole chain over a test set: stage `j` consumes the predictions
/// of stages `1..j-1` as its history modality. Returns the prediction
/// matrix reindexed to the original label order plus all traces, indexed
/// `[stage][instance]`.
pub fn predict_chain(
    models: &[StageModel],
    plan: &ChainPlan,
    data: &Arc<MultiModalDataset>,
    rule: &StopRule,
) -> Result<(Array2<i8>, Vec<Vec<PredictionTrace>>)> {
    if models.len() != plan.n_labels() {
        return Err(Error::Argument(format!(
            "{} stage models for a {}-label plan",
            models.len(),
            plan.n_labels()
        )));
    }
    let n = data.n_instances();
    let l = plan.n_labels();
    let mut z = Array2::<i8>::zeros((n, l));
    let mut chain_preds = Array2::<i8>::zeros((n, 0));
    let mut traces = Vec::with_capacity(l);

    for (idx, model) in models.iter().enumerate() {
        let j = idx + 1;
        if model.stage != j {
            return Err(Error::Argument(format!(
                "model at position {j} claims stage {}",
                model.stage
            )));
        }
        let stage = build_test_stage(plan, data, j, chain_preds.view())?;
        if stage.augmented_schema() != &model.schema {
            return Err(Error::Argument(format!(
                "stage {j} schema does not match the trained model"
            )));
        }
        let history_modality = stage.history_modality();
        let mut stage_traces = Vec::with_capacity(n);
        let mut stage_labels = Vec::with_capacity(n);
        for i in 0..n {
            let x = stage.instance(i);
            let trace = predict_instance(model, x.view(), rule, history_modality)?;
            stage_labels.push(trace.label);
            stage_traces.push(trace);
        }
        for (i, &label) in stage_labels.iter().enumerate() {
            z[[i, plan.tau[idx]]] = label;
        }
        let mut next = Array2::<i8>::zeros((n, j));
        next.slice_mut(ndarray::s![.., ..j - 1]).assign(&chain_preds);
        for (i, &label) in stage_labels.iter().enumerate() {
            next[[i, j - 1]] = label;
        }
        chain_preds = next;
        traces.push(stage_traces);
    }

    Ok((z, traces))
}

/// Mean extraction cost over all (instance, stage) traces. With
/// `include_history` false, the label-history modality's share is dropped
/// from every trace.
pub fn cost_average<'a, I>(traces: I, include_history: bool) -> Result<f64>
where
    I: IntoIterator<Item = &'a PredictionTrace>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for t in traces {
        total += if include_history {
            t.cost()
        } else {
            t.base_cost()
        };
        count += 1;
    }
    if count == 0 {
        return Err(Error::Argument("cost_average over no traces".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{CellDims, CellParams};
    use crate::dataset::ModalitySchema;
    use crate::training::{train_mcc, TrainConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_model(dims: &[usize]) -> StageModel {
        let schema = ModalitySchema::unit_costs(dims.to_vec()).unwrap();
        StageModel {
            params: CellParams::zeros(CellDims {
                hidden: 4,
                input: schema.total_dim(),
                modalities: schema.modality_count(),
            }),
            stage: 1,
            schema,
            target_label: 0,
            log: Vec::new(),
        }
    }

    fn random_model(dims: &[usize], seed: u64) -> StageModel {
        let schema = ModalitySchema::unit_costs(dims.to_vec()).unwrap();
        StageModel {
            params: CellParams::init(
                CellDims {
                    hidden: 4,
                    input: schema.total_dim(),
                    modalities: schema.modality_count(),
                },
                seed,
            ),
            stage: 1,
            schema,
            target_label: 0,
            log: Vec::new(),
        }
    }

    #[test]
    fn degenerate_threshold_stops_immediately() {
        let model = random_model(&[1, 1, 1], 2);
        let x = array![0.5, -0.2, 0.9];
        let rule = StopRule::new(None, 0.0);
        let t = predict_instance(&model, x.view(), &rule, None).unwrap();
        assert_eq!(t.sequence.len(), 1);
    }

    #[test]
    fn disabled_stopping_exhausts_modalities() {
        let model = random_model(&[1, 2, 1], 3);
        let x = array![0.5, -0.2, 0.9, 1.1];
        let rule = StopRule::new(None, 1.0);
        let t = predict_instance(&model, x.view(), &rule, None).unwrap();
        assert_eq!(t.sequence.len(), 3);
        let mut sorted = t.sequence.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 3, "duplicate modality in {:?}", t.sequence);
    }

    #[test]
    fn zero_model_walks_in_index_order() {
        let model = zero_model(&[1, 1, 1]);
        let x = array![9.0, 8.0, 7.0];
        let rule = StopRule::new(None, 0.9);
        let t = predict_instance(&model, x.view(), &rule, None).unwrap();
        // Tie-break picks the lowest index each time; confidence stays at
        // exactly 0.5, so extraction runs to exhaustion.
        assert_eq!(t.sequence, vec![0, 1, 2]);
        assert!(t.confidences.iter().all(|&c| c == 0.5));
        assert_eq!(t.probability, 0.5);
        assert_eq!(t.label, 1);
    }

    #[test]
    fn first_extraction_ignores_budget() {
        let model = zero_model(&[2, 1]);
        let x = array![1.0, 2.0, 3.0];
        let rule = StopRule::new(Some(0.25), 0.9);
        let t = predict_instance(&model, x.view(), &rule, None).unwrap();
        assert_eq!(t.sequence.len(), 1);
        assert!(t.cost() > 0.25);
        // Budget respected up to the last extraction.
        assert!(t.cost() - t.step_costs.last().unwrap() <= 0.25);
    }

    #[test]
    fn trace_is_deterministic() {
        let model = random_model(&[2, 2], 11);
        let x = array![0.4, -0.1, 0.2, 0.8];
        let rule = StopRule::new(Some(1.5), 0.8);
        let a = predict_instance(&model, x.view(), &rule, None).unwrap();
        let b = predict_instance(&model, x.view(), &rule, None).unwrap();
        assert_eq!(a.sequence, b.sequence);
        assert_eq!(a.probability, b.probability);
    }

    #[test]
    fn cost_average_examples() {
        let mk = |seq: Vec<usize>, costs: Vec<f64>| PredictionTrace {
            sequence: seq,
            step_costs: costs,
            confidences: vec![],
            label: 1,
            probability: 0.9,
            history_modality: None,
        };
        // Everything extracted, three unit-cost modalities.
        let traces = vec![
            mk(vec![0, 1, 2], vec![1.0, 1.0, 1.0]),
            mk(vec![2, 0, 1], vec![1.0, 1.0, 1.0]),
        ];
        assert_abs_diff_eq!(
            cost_average(traces.iter(), true).unwrap(),
            3.0,
            epsilon = 1e-12
        );

        let traces = vec![mk(vec![1], vec![1.0])];
        assert_abs_diff_eq!(
            cost_average(traces.iter(), true).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        let traces = vec![mk(vec![0], vec![1.0]), mk(vec![0, 1], vec![1.0, 1.0])];
        assert_abs_diff_eq!(
            cost_average(traces.iter(), true).unwrap(),
            1.5,
            epsilon = 1e-12
        );

        let empty: Vec<PredictionTrace> = vec![];
        assert!(cost_average(empty.iter(), true).is_err());
    }

    #[test]
    fn cost_average_can_exclude_history() {
        let t = PredictionTrace {
            sequence: vec![0, 2],
            step_costs: vec![1.0, 0.1],
            confidences: vec![0.6, 0.95],
            label: 1,
            probability: 0.95,
            history_modality: Some(2),
        };
        assert_abs_diff_eq!(t.cost(), 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(t.base_cost(), 1.0, epsilon = 1e-12);
    }

    fn tiny_chain_data(n: usize, seed: u64) -> Arc<MultiModalDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = ndarray::Array2::<f64>::zeros((n, 4));
        let mut y = ndarray::Array2::<i8>::zeros((n, 3));
        for i in 0..n {
            let a: i8 = if rng.random_range(0.0..1.0) < 0.5 { 1 } else { -1 };
            let b: i8 = if rng.random_range(0.0..1.0) < 0.7 { a } else { -a };
            let c: i8 = if rng.random_range(0.0..1.0) < 0.6 { 1 } else { -1 };
            for k in 0..2 {
                x[[i, k]] = f64::from(a) + rng.random_range(-0.3..0.3);
                x[[i, 2 + k]] = f64::from(c) * 0.5 + rng.random_range(-0.3..0.3);
            }
            y[[i, 0]] = a;
            y[[i, 1]] = b;
            y[[i, 2]] = c;
        }
        Arc::new(
            MultiModalDataset::new(
                x,
                y,
                ModalitySchema::unit_costs(vec![2, 2]).unwrap(),
                None,
            )
            .unwrap(),
        )
    }

    #[test]
    fn chain_prediction_matches_manual_simulation() {
        let data = tiny_chain_data(24, 31);
        let cfg = TrainConfig {
            hidden: 6,
            batch: 8,
            iters: 8,
            ..TrainConfig::default()
        };
        let model = train_mcc(&data, &cfg).unwrap();
        let rule = StopRule::new(None, cfg.ath);
        let (z, traces) = predict_chain(&model.stages, &model.plan, &data, &rule).unwrap();
        assert_eq!(traces.len(), 3);

        // Manual stage-by-stage simulation.
        let n = data.n_instances();
        let mut history = Array2::<i8>::zeros((n, 0));
        for (idx, stage_model) in model.stages.iter().enumerate() {
            let j = idx + 1;
            let stage = build_test_stage(&model.plan, &data, j, history.view()).unwrap();
            let mut labels = Vec::new();
            for i in 0..n {
                let x: Array1<f64> = stage.instance(i);
                let t = predict_instance(
                    stage_model,
                    x.view(),
                    &rule,
                    stage.history_modality(),
                )
                .unwrap();
                assert_eq!(t.sequence, traces[idx][i].sequence);
                labels.push(t.label);
            }
            for (i, &lab) in labels.iter().enumerate() {
                assert_eq!(z[[i, model.plan.tau[idx]]], lab);
            }
            let mut next = Array2::<i8>::zeros((n, j));
            next.slice_mut(ndarray::s![.., ..j - 1]).assign(&history);
            for (i, &lab) in labels.iter().enumerate() {
                next[[i, j - 1]] = lab;
            }
            history = next;
        }
    }

    #[test]
    fn instance_dimension_is_checked() {
        let model = zero_model(&[1, 1]);
        let x = array![1.0, 2.0, 3.0];
        let rule = StopRule::new(None, 0.9);
        assert!(predict_instance(&model, x.view(), &rule, None).is_err());
    }

    #[test]
    fn single_label_chain_is_the_single_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 12;
        let mut x = ndarray::Array2::<f64>::zeros((n, 4));
        let mut y = ndarray::Array2::<i8>::zeros((n, 1));
        for i in 0..n {
            let a: i8 = if i % 2 == 0 { 1 } else { -1 };
            for k in 0..4 {
                x[[i, k]] = f64::from(a) + rng.random_range(-0.2..0.2);
            }
            y[[i, 0]] = a;
        }
        let data = Arc::new(
            MultiModalDataset::new(
                x,
                y,
                ModalitySchema::unit_costs(vec![2, 2]).unwrap(),
                None,
            )
            .unwrap(),
        );
        let cfg = TrainConfig {
            hidden: 6,
            batch: 8,
            iters: 4,
            ..TrainConfig::default()
        };
        let model = train_mcc(&data, &cfg).unwrap();
        let rule = StopRule::new(None, cfg.ath);
        let (z, traces) = predict_chain(&model.stages, &model.plan, &data, &rule).unwrap();
        assert_eq!(traces.len(), 1);
        for i in 0..n {
            let x = crate::chain::build_test_stage(
                &model.plan,
                &data,
                1,
                ndarray::Array2::<i8>::zeros((n, 0)).view(),
            )
            .unwrap()
            .instance(i);
            let t = predict_instance(&model.stages[0], x.view(), &rule, None).unwrap();
            assert_eq!(z[[i, 0]], t.label);
        }
    }

    #[test]
    fn traces_respect_cost_bound() {
        let data = tiny_chain_data(16, 7);
        let cfg = TrainConfig {
            hidden: 6,
            batch: 8,
            iters: 4,
            ..TrainConfig::default()
        };
        let model = train_mcc(&data, &cfg).unwrap();
        let rule = StopRule::new(None, 0.9);
        let (_, traces) = predict_chain(&model.stages, &model.plan, &data, &rule).unwrap();
        for (idx, stage_traces) in traces.iter().enumerate() {
            let total = model.stages[idx].schema.total_cost();
            for t in stage_traces {
                assert!(t.cost() <= total + 1e-12);
                assert!(!t.sequence.is_empty() && t.sequence.len() <= model.stages[idx].schema.modality_count());
            }
        }
        let all: Vec<&PredictionTrace> = traces.iter().flatten().collect();
        let avg = cost_average(all.iter().copied(), true).unwrap();
        assert!(avg <= model.stages.last().unwrap().schema.total_cost());
    }
}
