//! The gated recurrent cell with a label head and a modality head.
//!
//! One step consumes a masked input (only the freshly extracted modality's
//! block is populated) and updates the carried `(C, h)` state through three
//! sigmoid gates with full-matrix peephole connections: the forget and input
//! gates read the previous cell state, the output gate reads the updated
//! one. Two linear heads on the hidden state predict the stage label and
//! score the next modality to extract.
//!
//! Forward steps cache every intermediate so [`backward_step`] can produce
//! exact analytic gradients; correctness is pinned by finite-difference
//! checks in the tests and the acceptance suite.

use std::io::{BufRead, Write};

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::ModalitySchema;
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Set of already-extracted modality indices (a rollout never repeats one).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ModalitySet(u64);

impl ModalitySet {
    pub fn empty() -> Self {
        ModalitySet(0)
    }

    pub fn insert(&mut self, m: usize) {
        debug_assert!(m < 64);
        self.0 |= 1 << m;
    }

    pub fn contains(&self, m: usize) -> bool {
        self.0 & (1 << m) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    /// Raw bits, usable as a cache key.
    pub fn bits(&self) -> u64 {
        self.0
    }
}

/// Shape of one cell: hidden width, full (augmented) input width, and the
/// number of modalities scored by the modality head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellDims {
    pub hidden: usize,
    pub input: usize,
    pub modalities: usize,
}

/// All trainable parameters of one chain stage's cell.
///
/// Peephole weights (`w_fc`, `w_ic`, `w_oc`) are full matrices, not the
/// diagonal variant.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub dims: CellDims,
    // forget gate
    pub w_fc: Array2<f64>,
    pub w_fh: Array2<f64>,
    pub w_fx: Array2<f64>,
    pub b_f: Array1<f64>,
    // input gate
    pub w_ic: Array2<f64>,
    pub w_ih: Array2<f64>,
    pub w_ix: Array2<f64>,
    pub b_i: Array1<f64>,
    // cell candidate
    pub w_ch: Array2<f64>,
    pub w_cx: Array2<f64>,
    pub b_c: Array1<f64>,
    // output gate
    pub w_oc: Array2<f64>,
    pub w_oh: Array2<f64>,
    pub w_ox: Array2<f64>,
    pub b_o: Array1<f64>,
    // label head (scalar logit)
    pub w_label: Array1<f64>,
    pub b_label: f64,
    // modality head (hidden x modalities)
    pub w_modality: Array2<f64>,
    pub b_modality: Array1<f64>,
}

impl CellParams {
    pub fn zeros(dims: CellDims) -> Self {
        let h = dims.hidden;
        let d = dims.input;
        let p = dims.modalities;
        CellParams {
            dims,
            w_fc: Array2::zeros((h, h)),
            w_fh: Array2::zeros((h, h)),
            w_fx: Array2::zeros((h, d)),
            b_f: Array1::zeros(h),
            w_ic: Array2::zeros((h, h)),
            w_ih: Array2::zeros((h, h)),
            w_ix: Array2::zeros((h, d)),
            b_i: Array1::zeros(h),
            w_ch: Array2::zeros((h, h)),
            w_cx: Array2::zeros((h, d)),
            b_c: Array1::zeros(h),
            w_oc: Array2::zeros((h, h)),
            w_oh: Array2::zeros((h, h)),
            w_ox: Array2::zeros((h, d)),
            b_o: Array1::zeros(h),
            w_label: Array1::zeros(h),
            b_label: 0.0,
            w_modality: Array2::zeros((h, p)),
            b_modality: Array1::zeros(p),
        }
    }

    /// Seeded initialization: weights uniform in [-0.08, 0.08], biases zero.
    pub fn init(dims: CellDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = CellParams::zeros(dims);
        let fill = |m: &mut Array2<f64>, rng: &mut ChaCha8Rng| {
            for v in m.iter_mut() {
                *v = rng.random_range(-0.08..0.08);
            }
        };
        fill(&mut p.w_fc, &mut rng);
        fill(&mut p.w_fh, &mut rng);
        fill(&mut p.w_fx, &mut rng);
        fill(&mut p.w_ic, &mut rng);
        fill(&mut p.w_ih, &mut rng);
        fill(&mut p.w_ix, &mut rng);
        fill(&mut p.w_ch, &mut rng);
        fill(&mut p.w_cx, &mut rng);
        fill(&mut p.w_oc, &mut rng);
        fill(&mut p.w_oh, &mut rng);
        fill(&mut p.w_ox, &mut rng);
        for v in p.w_label.iter_mut() {
            *v = rng.random_range(-0.08..0.08);
        }
        fill(&mut p.w_modality, &mut rng);
        p
    }

    pub fn param_count(&self) -> usize {
        let h = self.dims.hidden;
        let d = self.dims.input;
        let p = self.dims.modalities;
        // 7 h*h recurrent matrices, 4 h*d input matrices, 4 h biases,
        // label head h+1, modality head h*p + p.
        7 * h * h + 4 * h * d + 4 * h + h + 1 + h * p + p
    }

    fn field_views(&self) -> [ArrayView1<'_, f64>; 18] {
        // Canonical flat ordering; `b_label` is handled separately.
        [
            self.w_fc.view().into_shape_with_order(self.w_fc.len()).unwrap(),
            self.w_fh.view().into_shape_with_order(self.w_fh.len()).unwrap(),
            self.w_fx.view().into_shape_with_order(self.w_fx.len()).unwrap(),
            self.b_f.view(),
            self.w_ic.view().into_shape_with_order(self.w_ic.len()).unwrap(),
            self.w_ih.view().into_shape_with_order(self.w_ih.len()).unwrap(),
            self.w_ix.view().into_shape_with_order(self.w_ix.len()).unwrap(),
            self.b_i.view(),
            self.w_ch.view().into_shape_with_order(self.w_ch.len()).unwrap(),
            self.w_cx.view().into_shape_with_order(self.w_cx.len()).unwrap(),
            self.b_c.view(),
            self.w_oc.view().into_shape_with_order(self.w_oc.len()).unwrap(),
            self.w_oh.view().into_shape_with_order(self.w_oh.len()).unwrap(),
            self.w_ox.view().into_shape_with_order(self.w_ox.len()).unwrap(),
            self.b_o.view(),
            self.w_label.view(),
            self.w_modality
                .view()
                .into_shape_with_order(self.w_modality.len())
                .unwrap(),
            self.b_modality.view(),
        ]
    }

    /// Parameters flattened in canonical order (the checkpoint and
    /// optimizer ordering).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        let views = self.field_views();
        for (k, v) in views.iter().enumerate() {
            out.extend(v.iter().copied());
            if k == 15 {
                out.push(self.b_label);
            }
        }
        out
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut idx = 0usize;
        macro_rules! walk {
            ($field:expr) => {
                for v in $field.iter_mut() {
                    f(idx, v);
                    idx += 1;
                }
            };
        }
        walk!(self.w_fc);
        walk!(self.w_fh);
        walk!(self.w_fx);
        walk!(self.b_f);
        walk!(self.w_ic);
        walk!(self.w_ih);
        walk!(self.w_ix);
        walk!(self.b_i);
        walk!(self.w_ch);
        walk!(self.w_cx);
        walk!(self.b_c);
        walk!(self.w_oc);
        walk!(self.w_oh);
        walk!(self.w_ox);
        walk!(self.b_o);
        walk!(self.w_label);
        f(idx, &mut self.b_label);
        idx += 1;
        walk!(self.w_modality);
        walk!(self.b_modality);
        debug_assert_eq!(idx, self.param_count());
    }

    /// Overwrite all parameters from a flat slice in canonical order.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        self.for_each_mut(|i, v| *v = flat[i]);
    }

    /// `W <- W + delta`, with `delta` in canonical flat order.
    pub fn add_flat(&mut self, delta: &[f64]) {
        assert_eq!(delta.len(), self.param_count());
        self.for_each_mut(|i, v| *v += delta[i]);
    }

    pub fn validate(&self) -> Result<()> {
        if self.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("cell parameters contain NaN/Inf".into()));
        }
        Ok(())
    }

    /// Versioned text checkpoint: a shape header then one value per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "mcc-cell-params v1")?;
        writeln!(
            w,
            "hidden={} input={} modalities={}",
            self.dims.hidden, self.dims.input, self.dims.modalities
        )?;
        for v in self.flat() {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: usize, message: &str| Error::Parse {
            line,
            message: message.to_string(),
        };
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "empty checkpoint"))?
            .1
            .map_err(|e| bad(1, &e.to_string()))
            .map(|h| (0, h))?;
        if header.trim() != "mcc-cell-params v1" {
            return Err(bad(1, "unrecognized checkpoint header"));
        }
        let shape_line = lines
            .next()
            .ok_or_else(|| bad(2, "missing shape line"))?
            .1
            .map_err(|e| bad(2, &e.to_string()))?;
        let mut hidden = None;
        let mut input = None;
        let mut modalities = None;
        for part in shape_line.split_whitespace() {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(2, "malformed shape entry"))?;
            let value: usize = value.parse().map_err(|_| bad(2, "bad shape value"))?;
            match key {
                "hidden" => hidden = Some(value),
                "input" => input = Some(value),
                "modalities" => modalities = Some(value),
                _ => return Err(bad(2, "unknown shape key")),
            }
        }
        let dims = CellDims {
            hidden: hidden.ok_or_else(|| bad(2, "missing hidden"))?,
            input: input.ok_or_else(|| bad(2, "missing input"))?,
            modalities: modalities.ok_or_else(|| bad(2, "missing modalities"))?,
        };
        let mut params = CellParams::zeros(dims);
        let mut flat = Vec::with_capacity(params.param_count());
        for (idx, line) in lines {
            let line = line.map_err(|e| bad(idx + 1, &e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| bad(idx + 1, "bad parameter value"))?;
            flat.push(v);
        }
        if flat.len() != params.param_count() {
            return Err(Error::Validation(format!(
                "checkpoint has {} values, expected {}",
                flat.len(),
                params.param_count()
            )));
        }
        params.assign_flat(&flat);
        params.validate()?;
        Ok(params)
    }
}

/// Carried recurrent state; all-zeros at step 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub c: Array1<f64>,
    pub h: Array1<f64>,
    pub step: usize,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        CellState {
            c: Array1::zeros(hidden),
            h: Array1::zeros(hidden),
            step: 0,
        }
    }
}

/// Full-width input vector with exactly one modality block populated.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedInput {
    data: Array1<f64>,
    modality: usize,
    offset: usize,
    len: usize,
}

impl MaskedInput {
    pub fn data(&self) -> ArrayView1<'_, f64> {
        self.data.view()
    }

    pub fn modality(&self) -> usize {
        self.modality
    }

    pub fn block(&self) -> ArrayView1<'_, f64> {
        self.data.slice(s![self.offset..self.offset + self.len])
    }

    pub fn block_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Zero everything except modality `m`'s block of `x`.
pub fn mask_input(x: ArrayView1<f64>, schema: &ModalitySchema, m: usize) -> Result<MaskedInput> {
    if m >= schema.modality_count() {
        return Err(Error::Argument(format!(
            "modality {m} out of range 0..{}",
            schema.modality_count()
        )));
    }
    if x.len() != schema.total_dim() {
        return Err(Error::Argument(format!(
            "input has {} entries, schema covers {}",
            x.len(),
            schema.total_dim()
        )));
    }
    let range = schema.block_range(m);
    let mut data = Array1::<f64>::zeros(x.len());
    data.slice_mut(s![range.start..range.end])
        .assign(&x.slice(s![range.start..range.end]));
    Ok(MaskedInput {
        data,
        modality: m,
        offset: range.start,
        len: range.len(),
    })
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub input: MaskedInput,
    pub c_prev: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub f: Array1<f64>,
    pub i: Array1<f64>,
    pub g: Array1<f64>,
    pub o: Array1<f64>,
    pub c_t: Array1<f64>,
    pub tanh_c: Array1<f64>,
}

/// W * x̂ exploiting that only one block of x̂ is nonzero.
fn masked_matvec(w: &Array2<f64>, x: &MaskedInput) -> Array1<f64> {
    let r = x.block_range();
    w.slice(s![.., r.start..r.end]).dot(&x.block())
}

/// grad += a (outer) b
fn add_outer(grad: &mut Array2<f64>, a: &Array1<f64>, b: ArrayView1<f64>) {
    for (r, &av) in a.iter().enumerate() {
        if av != 0.0 {
            grad.row_mut(r).scaled_add(av, &b);
        }
    }
}

/// grad[:, block] += a (outer) x.block()
fn add_outer_masked(grad: &mut Array2<f64>, a: &Array1<f64>, x: &MaskedInput) {
    let r = x.block_range();
    let mut sub = grad.slice_mut(s![.., r.start..r.end]);
    let block = x.block();
    for (row, &av) in a.iter().enumerate() {
        if av != 0.0 {
            sub.row_mut(row).scaled_add(av, &block);
        }
    }
}

/// One recurrent step. Gate order matches the model definition: forget and
/// input gates read `C_{t-1}`, the output gate reads the updated `C_t`.
pub fn forward_step(
    params: &CellParams,
    state: &CellState,
    x: &MaskedInput,
) -> (CellState, StepCache) {
    let a_f = params.w_fc.dot(&state.c)
        + params.w_fh.dot(&state.h)
        + masked_matvec(&params.w_fx, x)
        + &params.b_f;
    let f = a_f.mapv(sigmoid);

    let a_i = params.w_ic.dot(&state.c)
        + params.w_ih.dot(&state.h)
        + masked_matvec(&params.w_ix, x)
        + &params.b_i;
    let i = a_i.mapv(sigmoid);

    let a_c = params.w_ch.dot(&state.h) + masked_matvec(&params.w_cx, x) + &params.b_c;
    let g = a_c.mapv(f64::tanh);

    let c_t = &f * &state.c + &i * &g;

    let a_o = params.w_oc.dot(&c_t)
        + params.w_oh.dot(&state.h)
        + masked_matvec(&params.w_ox, x)
        + &params.b_o;
    let o = a_o.mapv(sigmoid);

    let tanh_c = c_t.mapv(f64::tanh);
    let h_t = &o * &tanh_c;

    let cache = StepCache {
        input: x.clone(),
        c_prev: state.c.clone(),
        h_prev: state.h.clone(),
        f,
        i,
        g,
        o,
        c_t: c_t.clone(),
        tanh_c,
    };
    (
        CellState {
            c: c_t,
            h: h_t,
            step: state.step + 1,
        },
        cache,
    )
}

/// Exact gradients for one step. `d_c_t` / `d_h_t` are the upstream
/// gradients flowing into this step's outputs; parameter gradients are
/// accumulated into `grads` and the gradients w.r.t. the incoming state are
/// returned so steps compose over time.
pub fn backward_step(
    params: &CellParams,
    cache: &StepCache,
    d_c_t: ArrayView1<f64>,
    d_h_t: ArrayView1<f64>,
    grads: &mut CellParams,
) -> (Array1<f64>, Array1<f64>) {
    let d_h = d_h_t.to_owned();

    // h_t = o * tanh(C_t)
    let d_o = &d_h * &cache.tanh_c;
    let da_o = &d_o * &cache.o * &cache.o.mapv(|v| 1.0 - v);

    add_outer(&mut grads.w_oc, &da_o, cache.c_t.view());
    add_outer(&mut grads.w_oh, &da_o, cache.h_prev.view());
    add_outer_masked(&mut grads.w_ox, &da_o, &cache.input);
    grads.b_o += &da_o;

    // C_t receives: upstream, the tanh in h_t, and the output gate peephole.
    let d_c = d_c_t.to_owned()
        + &d_h * &cache.o * &cache.tanh_c.mapv(|v| 1.0 - v * v)
        + params.w_oc.t().dot(&da_o);

    // C_t = f * C_{t-1} + i * g
    let d_f = &d_c * &cache.c_prev;
    let da_f = &d_f * &cache.f * &cache.f.mapv(|v| 1.0 - v);
    let d_i = &d_c * &cache.g;
    let da_i = &d_i * &cache.i * &cache.i.mapv(|v| 1.0 - v);
    let d_g = &d_c * &cache.i;
    let da_c = &d_g * &cache.g.mapv(|v| 1.0 - v * v);

    add_outer(&mut grads.w_fc, &da_f, cache.c_prev.view());
    add_outer(&mut grads.w_fh, &da_f, cache.h_prev.view());
    add_outer_masked(&mut grads.w_fx, &da_f, &cache.input);
    grads.b_f += &da_f;

    add_outer(&mut grads.w_ic, &da_i, cache.c_prev.view());
    add_outer(&mut grads.w_ih, &da_i, cache.h_prev.view());
    add_outer_masked(&mut grads.w_ix, &da_i, &cache.input);
    grads.b_i += &da_i;

    add_outer(&mut grads.w_ch, &da_c, cache.h_prev.view());
    add_outer_masked(&mut grads.w_cx, &da_c, &cache.input);
    grads.b_c += &da_c;

    let d_c_prev = &d_c * &cache.f + params.w_fc.t().dot(&da_f) + params.w_ic.t().dot(&da_i);
    let d_h_prev = params.w_fh.t().dot(&da_f)
        + params.w_ih.t().dot(&da_i)
        + params.w_ch.t().dot(&da_c)
        + params.w_oh.t().dot(&da_o);

    (d_c_prev, d_h_prev)
}

/// Label probability from the hidden state: sigmoid of a scalar logit.
pub fn predict_label(params: &CellParams, h: ArrayView1<f64>) -> f64 {
    sigmoid(h.dot(&params.w_label) + params.b_label)
}

/// Decision rule: +1 iff the probability reaches 0.5.
pub fn label_from_prob(p: f64) -> i8 {
    if p >= 0.5 {
        1
    } else {
        -1
    }
}

/// Prediction confidence: max(p, 1 - p).
pub fn confidence(p: f64) -> f64 {
    p.max(1.0 - p)
}

/// Modality scores plus the argmax over not-yet-extracted modalities
/// (ties toward the lowest index). Returns `None` as the choice when every
/// modality has been extracted; the caller must stop.
pub fn predict_modality(
    params: &CellParams,
    h: ArrayView1<f64>,
    extracted: &ModalitySet,
) -> (Array1<f64>, Option<usize>) {
    let scores = params.w_modality.t().dot(&h) + &params.b_modality;
    let mut best: Option<(usize, f64)> = None;
    for (m, &s) in scores.iter().enumerate() {
        if extracted.contains(m) {
            continue;
        }
        match best {
            Some((_, bs)) if s <= bs => {}
            _ => best = Some((m, s)),
        }
    }
    (scores, best.map(|(m, _)| m))
}
