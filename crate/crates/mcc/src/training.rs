//! Loss assembly, AdaDelta, and the per-stage training loop.
//!
//! Each chain stage trains one cell by unrolling modality extraction per
//! instance: at every step the modality head's scores pick the next block
//! (hinge-regressed toward a KNN teacher), the cell consumes the masked
//! input, and the label head is log-loss-supervised. Batch gradients flow
//! through the whole unrolled sequence and are applied with AdaDelta.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{
    backward_step, confidence, forward_step, mask_input, predict_label, predict_modality,
    CellDims, CellParams, CellState, ModalitySet, StepCache,
};
use crate::chain::{build_train_stage, order_labels, ChainPlan, StageDataset, DEFAULT_HISTORY_COST};
use crate::dataset::{ModalitySchema, MultiModalDataset};
use crate::error::{Error, Result};

/// Training hyperparameters shared by every chain stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden width of the cell.
    pub hidden: usize,
    /// Batch size; one optimizer update per batch.
    pub batch: usize,
    /// Number of epochs over the stage dataset.
    pub iters: usize,
    /// Cost budget for extraction; `None` disables truncation.
    pub cth: Option<f64>,
    /// Confidence threshold in (0.5, 1]; a rollout stops once the label
    /// confidence exceeds it.
    pub ath: f64,
    /// Trade-off between loss and regularization.
    pub lambda: f64,
    /// AdaDelta decay constant.
    pub rho: f64,
    /// AdaDelta numerical floor.
    pub epsilon: f64,
    /// Neighbors consulted by the modality teacher.
    pub knn: usize,
    /// Hinge margin for the modality head.
    pub margin: f64,
    /// Global gradient norm clip.
    pub clip: f64,
    /// Extraction cost of the label-history modality.
    pub history_cost: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 64,
            batch: 32,
            iters: 200,
            cth: None,
            ath: 0.9,
            lambda: 0.1,
            rho: 0.95,
            epsilon: 1e-8,
            knn: 5,
            margin: 1.0,
            clip: 5.0,
            history_cost: DEFAULT_HISTORY_COST,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Argument(msg));
        if self.hidden == 0 {
            return fail("hidden size must be positive".into());
        }
        if self.batch == 0 {
            return fail("batch size must be >= 1".into());
        }
        if self.iters == 0 {
            return fail("iteration count must be >= 1".into());
        }
        if let Some(cth) = self.cth {
            if cth.is_nan() || cth <= 0.0 {
                return fail(format!("cost threshold {cth} must be positive"));
            }
        }
        if self.ath.is_nan() || self.ath <= 0.5 || self.ath > 1.0 {
            return fail(format!("confidence threshold {} must lie in (0.5, 1]", self.ath));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return fail(format!("lambda {} must be non-negative", self.lambda));
        }
        if self.rho.is_nan() || self.rho <= 0.0 || self.rho >= 1.0 {
            return fail(format!("rho {} must lie in (0, 1)", self.rho));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail(format!("epsilon {} must be positive", self.epsilon));
        }
        if self.knn == 0 {
            return fail("teacher neighbor count must be >= 1".into());
        }
        if self.margin.is_nan() || self.margin < 0.0 {
            return fail(format!("margin {} must be non-negative", self.margin));
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return fail(format!("gradient clip {} must be positive", self.clip));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Losses and regularizer
// ---------------------------------------------------------------------------

/// Log loss for the label head. `y` is the {-1,+1} target, internally
/// rescaled to {0,1}; returns the loss and its gradient w.r.t. the logit,
/// which is `p - y01`. The probability is clamped away from 0 and 1 before
/// taking logs, so the loss is always finite.
pub fn label_loss(p: f64, y: i8) -> (f64, f64) {
    let y01 = f64::from(y + 1) / 2.0;
    let pc = p.clamp(1e-12, 1.0 - 1e-12);
    let loss = -(y01 * pc.ln() + (1.0 - y01) * (1.0 - pc).ln());
    (loss, p - y01)
}

/// Multi-class hinge over modality scores:
/// `sum_{m != target} max(0, margin - s_target + s_m)`, with its
/// subgradient.
pub fn modality_loss(scores: ArrayView1<f64>, target: usize, margin: f64) -> (f64, Array1<f64>) {
    assert!(target < scores.len(), "hinge target out of range");
    let s_target = scores[target];
    let mut loss = 0.0;
    let mut grad = Array1::<f64>::zeros(scores.len());
    for (m, &s) in scores.iter().enumerate() {
        if m == target {
            continue;
        }
        let violation = margin - s_target + s;
        if violation > 0.0 {
            loss += violation;
            grad[m] += 1.0;
            grad[target] -= 1.0;
        }
    }
    (loss, grad)
}

/// Gradients of [`regularizer`] with respect to its inputs.
#[derive(Debug, Clone)]
pub struct RegGrads {
    pub w_label: Array1<f64>,
    pub w_modality: ndarray::Array2<f64>,
    pub scores: Array1<f64>,
}

/// Per-step regularizer: squared L2 of both heads plus the Euclidean norm
/// of the cost-weighted modality scores. The last term is what pushes the
/// modality head toward cheap modalities.
pub fn regularizer(
    params: &CellParams,
    scores: ArrayView1<f64>,
    costs: &[f64],
) -> (f64, RegGrads) {
    assert_eq!(costs.len(), scores.len(), "cost vector length mismatch");
    let head_sq = head_norms_sq(params);
    let (cost_term, d_scores) = cost_score_norm(scores, costs);
    let grads = RegGrads {
        w_label: params.w_label.mapv(|v| 2.0 * v),
        w_modality: params.w_modality.mapv(|v| 2.0 * v),
        scores: d_scores,
    };
    (head_sq + cost_term, grads)
}

fn head_norms_sq(params: &CellParams) -> f64 {
    let wl: f64 = params.w_label.iter().map(|v| v * v).sum();
    let wm: f64 = params.w_modality.iter().map(|v| v * v).sum();
    wl + wm
}

/// `||c . s||_2` and its gradient w.r.t. the scores.
fn cost_score_norm(scores: ArrayView1<f64>, costs: &[f64]) -> (f64, Array1<f64>) {
    let norm_sq: f64 = scores
        .iter()
        .zip(costs)
        .map(|(&s, &c)| (c * s) * (c * s))
        .sum();
    let norm = norm_sq.sqrt();
    let mut grad = Array1::<f64>::zeros(scores.len());
    if norm > 1e-12 {
        for (k, g) in grad.iter_mut().enumerate() {
            *g = costs[k] * costs[k] * scores[k] / norm;
        }
    }
    (norm, grad)
}

/// One (instance, step) contribution to the batch objective.
#[derive(Debug, Clone, Copy)]
pub struct StepLossTerms {
    pub label: f64,
    pub modality: f64,
    pub regularizer: f64,
}

/// Batch objective: `sum(label + modality + lambda * regularizer)` over all
/// recorded steps. A non-finite term aborts with a diagnostic.
pub fn total_step_loss(terms: &[StepLossTerms], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for t in terms {
        let contribution = t.label + t.modality + lambda * t.regularizer;
        if !contribution.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite loss term (label={}, modality={}, regularizer={})",
                t.label, t.modality, t.regularizer
            )));
        }
        total += contribution;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// AdaDelta
// ---------------------------------------------------------------------------

/// Per-parameter decaying accumulators of squared gradients and squared
/// updates; both start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState {
    pub e_g2: Vec<f64>,
    pub e_dx2: Vec<f64>,
}

impl AdaDeltaState {
    pub fn new(n: usize) -> Self {
        AdaDeltaState {
            e_g2: vec![0.0; n],
            e_dx2: vec![0.0; n],
        }
    }
}

/// One AdaDelta update: decay the squared-gradient average, form the
/// update from the ratio of root accumulators, then decay the
/// squared-update average. Returns the parameter delta; applying it is
/// `W <- W + delta`.
pub fn adadelta_update(state: &mut AdaDeltaState, g: &[f64], rho: f64, epsilon: f64) -> Vec<f64> {
    assert_eq!(state.e_g2.len(), g.len(), "gradient length mismatch");
    let mut delta = vec![0.0; g.len()];
    for k in 0..g.len() {
        state.e_g2[k] = rho * state.e_g2[k] + (1.0 - rho) * g[k] * g[k];
        let dx = -((state.e_dx2[k] + epsilon).sqrt() / (state.e_g2[k] + epsilon).sqrt()) * g[k];
        state.e_dx2[k] = rho * state.e_dx2[k] + (1.0 - rho) * dx * dx;
        delta[k] = dx;
    }
    delta
}

/// Scale `g` so its global L2 norm does not exceed `max_norm`.
pub fn clip_global_norm(g: &mut [f64], max_norm: f64) {
    let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
}

// ---------------------------------------------------------------------------
// KNN modality teacher
// ---------------------------------------------------------------------------

fn block_dist_sq(a: ArrayView1<f64>, b: ArrayView1<f64>, range: std::ops::Range<usize>) -> f64 {
    let mut acc = 0.0;
    for k in range {
        let d = a[k] - b[k];
        acc += d * d;
    }
    acc
}

/// Training target for the modality head: among the not-yet-extracted
/// modalities, the one whose K nearest training neighbors (distance
/// restricted to the already-extracted blocks plus the candidate block)
/// agree most with the query instance's stage label. Ties break toward the
/// cheaper, then lower-indexed, modality. The query instance itself never
/// counts as a neighbor. Returns `None` once everything is extracted.
pub fn teacher_modality(
    aug: ArrayView2<f64>,
    targets: &[i8],
    schema: &ModalitySchema,
    query: usize,
    extracted: &ModalitySet,
    k: usize,
) -> Option<usize> {
    let p = schema.modality_count();
    let candidates: Vec<usize> = (0..p).filter(|&m| !extracted.contains(m)).collect();
    if candidates.is_empty() {
        return None;
    }
    let n = aug.nrows();
    let query_row = aug.row(query);

    // Distances over the already-extracted blocks are shared by every
    // candidate.
    let mut base = vec![0.0f64; n];
    for m in 0..p {
        if extracted.contains(m) {
            let range = schema.block_range(m);
            for (j, b) in base.iter_mut().enumerate() {
                *b += block_dist_sq(query_row, aug.row(j), range.clone());
            }
        }
    }

    let mut best: Option<(f64, f64, usize)> = None; // (score, cost, modality)
    for &m in &candidates {
        let range = schema.block_range(m);
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != query)
            .map(|j| (base[j] + block_dist_sq(query_row, aug.row(j), range.clone()), j))
            .collect();
        if dists.is_empty() {
            continue;
        }
        let kk = k.min(dists.len());
        dists.select_nth_unstable_by(kk - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let agree = dists[..kk]
            .iter()
            .filter(|(_, j)| targets[*j] == targets[query])
            .count();
        let score = agree as f64 / kk as f64;
        let cost = schema.cost(m);
        let better = match best {
            None => true,
            Some((bs, bc, bm)) => {
                score > bs
                    || (score == bs && (cost < bc || (cost == bc && m < bm)))
            }
        };
        if better {
            best = Some((score, cost, m));
        }
    }
    best.map(|(_, _, m)| m)
}

// ---------------------------------------------------------------------------
// Instance rollout
// ---------------------------------------------------------------------------

/// How the next modality is chosen during a rollout.
pub enum SelectionPolicy<'a> {
    /// The modality head's argmax (normal training and inference).
    Student,
    /// A fixed extraction sequence (finite-difference checks need the
    /// discrete choices frozen).
    Forced(&'a [usize]),
}

pub struct RolloutOptions<'a> {
    pub selection: SelectionPolicy<'a>,
    /// Cost budget; the rollout stops once the accumulated cost exceeds it.
    pub cth: f64,
    /// Confidence threshold; the rollout stops once exceeded.
    pub ath: f64,
    pub lambda: f64,
    pub margin: f64,
}

/// One recorded extraction step with everything backprop needs.
pub struct RolloutStep {
    pub cache: StepCache,
    pub h_after: Array1<f64>,
    pub scores: Array1<f64>,
    pub selected: usize,
    pub teacher: Option<usize>,
    pub prob: f64,
    pub terms: StepLossTerms,
    /// Combined gradient w.r.t. the scores: hinge plus lambda times the
    /// cost-norm term.
    pub d_scores: Array1<f64>,
    /// Gradient of the label loss w.r.t. the logit.
    pub d_logit: f64,
}

pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub cost: f64,
    pub final_prob: f64,
}

impl Rollout {
    pub fn terms(&self) -> Vec<StepLossTerms> {
        self.steps.iter().map(|s| s.terms).collect()
    }

    pub fn extracted_count(&self) -> usize {
        self.steps.len()
    }
}

/// Unroll modality extraction for one instance, recording losses at every
/// executed step. The step that trips the cost budget or the confidence
/// threshold still contributes its losses before the rollout stops.
///
/// The modality hinge at step `t` supervises the scores that made step
/// `t`'s selection, i.e. the scores read from the hidden state before the
/// step's forward pass; the teacher is consulted with the extracted set as
/// of that moment.
pub fn roll_instance(
    params: &CellParams,
    schema: &ModalitySchema,
    x: ArrayView1<f64>,
    y: i8,
    opts: &RolloutOptions,
    teacher: &mut dyn FnMut(usize, &ModalitySet) -> Option<usize>,
) -> Result<Rollout> {
    let p = schema.modality_count();
    let head_sq = head_norms_sq(params);
    let mut state = CellState::zeros(params.dims.hidden);
    let mut extracted = ModalitySet::empty();
    let mut steps = Vec::new();
    let mut cost = 0.0;
    let mut final_prob = 0.5;

    for t in 0..p {
        let (scores, student_choice) = predict_modality(params, state.h.view(), &extracted);
        let selected = match &opts.selection {
            SelectionPolicy::Student => match student_choice {
                Some(m) => m,
                None => break,
            },
            SelectionPolicy::Forced(seq) => {
                if t >= seq.len() {
                    break;
                }
                seq[t]
            }
        };
        if extracted.contains(selected) {
            return Err(Error::Argument(format!(
                "modality {selected} selected twice in one rollout"
            )));
        }

        let teacher_target = teacher(t, &extracted);
        let (m_loss, mut d_scores) = match teacher_target {
            Some(target) => modality_loss(scores.view(), target, opts.margin),
            None => (0.0, Array1::zeros(p)),
        };
        let (cost_term, d_cost_scores) = cost_score_norm(scores.view(), schema.costs());
        d_scores.scaled_add(opts.lambda, &d_cost_scores);
        let reg = head_sq + cost_term;

        cost += schema.cost(selected);
        let masked = mask_input(x, schema, selected)?;
        let (next_state, cache) = forward_step(params, &state, &masked);
        let prob = predict_label(params, next_state.h.view());
        let (l_loss, d_logit) = label_loss(prob, y);

        steps.push(RolloutStep {
            cache,
            h_after: next_state.h.clone(),
            scores,
            selected,
            teacher: teacher_target,
            prob,
            terms: StepLossTerms {
                label: l_loss,
                modality: m_loss,
                regularizer: reg,
            },
            d_scores,
            d_logit,
        });

        extracted.insert(selected);
        state = next_state;
        final_prob = prob;

        if cost > opts.cth || confidence(prob) > opts.ath {
            break;
        }
    }

    Ok(Rollout {
        steps,
        cost,
        final_prob,
    })
}

/// Accumulate exact gradients of the rollout's total loss (through the
/// unrolled sequence) into `grads`.
pub fn backprop_rollout(
    params: &CellParams,
    rollout: &Rollout,
    lambda: f64,
    grads: &mut CellParams,
) {
    let h = params.dims.hidden;
    let mut d_c = Array1::<f64>::zeros(h);
    let mut d_h = Array1::<f64>::zeros(h);
    for step in rollout.steps.iter().rev() {
        // Label head reads this step's output state.
        grads.w_label.scaled_add(step.d_logit, &step.h_after);
        grads.b_label += step.d_logit;
        d_h.scaled_add(step.d_logit, &params.w_label);

        // Per-step squared-L2 on both heads.
        grads.w_label.scaled_add(2.0 * lambda, &params.w_label);
        grads.w_modality.scaled_add(2.0 * lambda, &params.w_modality);

        let (prev_c, prev_h) = backward_step(params, &step.cache, d_c.view(), d_h.view(), grads);
        d_c = prev_c;
        d_h = prev_h;

        // Modality scores at this step read the pre-step hidden state.
        for (k, &hv) in step.cache.h_prev.iter().enumerate() {
            if hv != 0.0 {
                grads.w_modality.row_mut(k).scaled_add(hv, &step.d_scores);
            }
        }
        grads.b_modality += &step.d_scores;
        d_h += &params.w_modality.dot(&step.d_scores);
    }
}

// ---------------------------------------------------------------------------
// Stage training
// ---------------------------------------------------------------------------

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_extracted: f64,
    pub mean_confidence: f64,
}

/// One trained chain position: the cell plus its augmented schema.
#[derive(Debug, Clone)]
pub struct StageModel {
    pub params: CellParams,
    /// 1-based chain position.
    pub stage: usize,
    pub schema: ModalitySchema,
    pub target_label: usize,
    pub log: Vec<EpochLog>,
}

pub(crate) fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed ^ ((stage as u64) << 32)
}

/// Train one chain stage with seeded batches and AdaDelta updates.
pub fn train_stage(stage: &StageDataset, cfg: &TrainConfig) -> Result<StageModel> {
    cfg.validate()?;
    let n = stage.n_instances();
    if n == 0 {
        return Err(Error::Argument("stage dataset is empty".into()));
    }
    let schema = stage.augmented_schema().clone();
    let aug = stage.augmented_matrix();
    let targets: Vec<i8> = (0..n).map(|i| stage.target(i)).collect();
    // `None` means no truncation; summed costs would reintroduce it through
    // floating-point rounding of the running total.
    let cth = cfg.cth.unwrap_or(f64::INFINITY);
    let dims = CellDims {
        hidden: cfg.hidden,
        input: schema.total_dim(),
        modalities: schema.modality_count(),
    };
    let seed = stage_seed(cfg.seed, stage.stage());
    let mut params = CellParams::init(dims, seed);
    let mut optimizer = AdaDeltaState::new(params.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..n).collect();
    // The teacher depends only on the data, so results are cached across
    // epochs keyed by (instance, extracted-set).
    let mut teacher_cache: HashMap<(usize, u64), Option<usize>> = HashMap::new();
    let mut log = Vec::with_capacity(cfg.iters);

    for epoch in 0..cfg.iters {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_extracted = 0usize;
        let mut epoch_confidence = 0.0;

        for batch in order.chunks(cfg.batch) {
            let mut grads = CellParams::zeros(dims);
            let mut batch_terms = Vec::new();
            for &i in batch {
                let opts = RolloutOptions {
                    selection: SelectionPolicy::Student,
                    cth,
                    ath: cfg.ath,
                    lambda: cfg.lambda,
                    margin: cfg.margin,
                };
                let mut teacher = |_t: usize, extracted: &ModalitySet| {
                    *teacher_cache
                        .entry((i, extracted.bits()))
                        .or_insert_with(|| {
                            teacher_modality(
                                aug.view(),
                                &targets,
                                &schema,
                                i,
                                extracted,
                                cfg.knn,
                            )
                        })
                };
                let rollout = roll_instance(
                    &params,
                    &schema,
                    aug.row(i),
                    targets[i],
                    &opts,
                    &mut teacher,
                )?;
                batch_terms.extend(rollout.terms());
                backprop_rollout(&params, &rollout, cfg.lambda, &mut grads);
                epoch_extracted += rollout.extracted_count();
                epoch_confidence += confidence(rollout.final_prob);
            }
            let batch_loss =
                total_step_loss(&batch_terms, cfg.lambda).map_err(|e| Error::Training {
                    message: e.to_string(),
                    seed,
                    epoch,
                })?;
            epoch_loss += batch_loss;

            let mut flat = grads.flat();
            clip_global_norm(&mut flat, cfg.clip);
            let delta = adadelta_update(&mut optimizer, &flat, cfg.rho, cfg.epsilon);
            params.add_flat(&delta);
        }

        params.validate().map_err(|e| Error::Training {
            message: e.to_string(),
            seed,
            epoch,
        })?;
        log.push(EpochLog {
            epoch,
            mean_loss: epoch_loss / n as f64,
            mean_extracted: epoch_extracted as f64 / n as f64,
            mean_confidence: epoch_confidence / n as f64,
        });
    }

    Ok(StageModel {
        params,
        stage: stage.stage(),
        schema,
        target_label: stage.target_label(),
        log,
    })
}

/// A full trained chain: one stage model per label, in chain order.
#[derive(Debug, Clone)]
pub struct MccModel {
    pub stages: Vec<StageModel>,
    pub plan: ChainPlan,
}

/// Order the labels by Gini impurity, then train every stage with
/// true-label history.
pub fn train_mcc(data: &Arc<MultiModalDataset>, cfg: &TrainConfig) -> Result<MccModel> {
    cfg.validate()?;
    let plan = order_labels(data.y.view(), cfg.history_cost)?;
    let mut stages = Vec::with_capacity(plan.n_labels());
    for j in 1..=plan.n_labels() {
        let stage = build_train_stage(&plan, data, j)?;
        stages.push(train_stage(&stage, cfg)?);
    }
    Ok(MccModel { stages, plan })
}
