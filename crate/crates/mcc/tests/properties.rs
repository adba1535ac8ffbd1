//! Property tests for the library's structural invariants.


use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mcc::cell::{forward_step, mask_input, CellDims, CellParams, CellState};
use mcc::chain::order_labels;
use mcc::dataset::{load_dataset, DataFormat, ModalitySchema, MultiModalDataset, SchemaSpec};
use mcc::inference::{cost_average, predict_instance, StopRule};
use mcc::metrics::{hamming_loss, micro_f1, subset_accuracy};
use mcc::training::{adadelta_update, AdaDeltaState, StageModel};

fn finite_value() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6f64, Just(0.0), -1e-6f64..1e-6f64]
}

fn label_value() -> impl Strategy<Value = i8> {
    prop_oneof![Just(1i8), Just(-1i8)]
}

fn dataset_parts() -> impl Strategy<Value = (usize, Vec<usize>, usize, Vec<f64>, Vec<i8>)> {
    (1usize..6, prop::collection::vec(1usize..4, 1..4), 1usize..4).prop_flat_map(
        |(n, dims, l)| {
            let d: usize = dims.iter().sum();
            (
                Just(n),
                Just(dims),
                Just(l),
                prop::collection::vec(finite_value(), n * d),
                prop::collection::vec(label_value(), n * l),
            )
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Writing a dataset to CSV and reloading reproduces X and Y exactly.
    #[test]
    fn csv_roundtrip_is_bit_identical((n, dims, l, xs, ys) in dataset_parts()) {
        let d: usize = dims.iter().sum();
        let x = Array2::from_shape_vec((n, d), xs).unwrap();
        let y = Array2::from_shape_vec((n, l), ys).unwrap();
        let schema = ModalitySchema::unit_costs(dims.clone()).unwrap();
        let ds = MultiModalDataset::new(x, y, schema, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.csv");
        ds.write_csv(&path).unwrap();
        let spec = SchemaSpec::new(dims, vec![1.0; ds.schema.modality_count()], l);
        let back = load_dataset(&path, DataFormat::Csv, &spec).unwrap();
        prop_assert_eq!(ds.x, back.x);
        prop_assert_eq!(ds.y, back.y);
    }

    /// Gates stay strictly inside (0,1) and the hidden state inside (-1,1).
    #[test]
    fn gate_ranges_hold(seed in 0u64..10_000, values in prop::collection::vec(-5.0f64..5.0, 6)) {
        let schema = ModalitySchema::unit_costs(vec![3, 3]).unwrap();
        let dims = CellDims { hidden: 4, input: 6, modalities: 2 };
        let params = CellParams::init(dims, seed);
        let x_full = Array1::from_vec(values);
        let state = CellState {
            c: Array1::from_elem(4, 0.3),
            h: Array1::from_elem(4, -0.2),
            step: 0,
        };
        let x = mask_input(x_full.view(), &schema, (seed % 2) as usize).unwrap();
        let (next, cache) = forward_step(&params, &state, &x);
        for gate in [&cache.f, &cache.i, &cache.o] {
            prop_assert!(gate.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        prop_assert!(next.h.iter().all(|&v| v > -1.0 && v < 1.0));
    }

    /// The step result only depends on the selected modality's block.
    #[test]
    fn masking_ignores_other_blocks(
        seed in 0u64..10_000,
        block in prop::collection::vec(-3.0f64..3.0, 2),
        other_a in prop::collection::vec(-100.0f64..100.0, 3),
        other_b in prop::collection::vec(-100.0f64..100.0, 3),
    ) {
        let schema = ModalitySchema::unit_costs(vec![2, 3]).unwrap();
        let dims = CellDims { hidden: 3, input: 5, modalities: 2 };
        let params = CellParams::init(dims, seed);
        let state = CellState::zeros(3);
        let mut xa = block.clone();
        xa.extend(&other_a);
        let mut xb = block.clone();
        xb.extend(&other_b);
        let ma = mask_input(Array1::from_vec(xa).view(), &schema, 0).unwrap();
        let mb = mask_input(Array1::from_vec(xb).view(), &schema, 0).unwrap();
        let (na, _) = forward_step(&params, &state, &ma);
        let (nb, _) = forward_step(&params, &state, &mb);
        prop_assert_eq!(na, nb);
    }

    /// Chain ordering only depends on per-label distributions, not row order.
    #[test]
    fn label_order_invariant_to_row_permutation(
        ys in prop::collection::vec(label_value(), 60),
        seed in 0u64..1000,
    ) {
        let y = Array2::from_shape_vec((12, 5), ys).unwrap();
        let mut rows: Vec<usize> = (0..12).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = y.select(ndarray::Axis(0), &rows);
        let a = order_labels(y.view(), 0.1).unwrap();
        let b = order_labels(shuffled.view(), 0.1).unwrap();
        prop_assert_eq!(a.tau, b.tau);
    }

    /// Hamming loss complements cellwise accuracy, subset accuracy never
    /// exceeds cellwise accuracy, and all metrics survive row permutation.
    #[test]
    fn metric_identities(
        zs in prop::collection::vec(label_value(), 48),
        ys in prop::collection::vec(label_value(), 48),
        seed in 0u64..1000,
    ) {
        let z = Array2::from_shape_vec((8, 6), zs).unwrap();
        let y = Array2::from_shape_vec((8, 6), ys).unwrap();
        let hamming = hamming_loss(z.view(), y.view()).unwrap();
        let agree = z.iter().zip(y.iter()).filter(|(a, b)| a == b).count() as f64
            / z.len() as f64;
        prop_assert!((hamming - (1.0 - agree)).abs() < 1e-15);
        prop_assert!(subset_accuracy(z.view(), y.view()).unwrap() <= agree + 1e-15);

        let mut rows: Vec<usize> = (0..8).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let zp = z.select(ndarray::Axis(0), &rows);
        let yp = y.select(ndarray::Axis(0), &rows);
        prop_assert_eq!(micro_f1(z.view(), y.view()).unwrap(),
            micro_f1(zp.view(), yp.view()).unwrap());
        prop_assert_eq!(hamming, hamming_loss(zp.view(), yp.view()).unwrap());
        prop_assert_eq!(subset_accuracy(z.view(), y.view()).unwrap(),
            subset_accuracy(zp.view(), yp.view()).unwrap());
    }

    /// AdaDelta accumulators stay non-negative and finite for any finite
    /// gradient stream.
    #[test]
    fn adadelta_accumulators_stay_finite(
        grads in prop::collection::vec(-1e3f64..1e3, 1..40),
        rho in 0.5f64..0.99,
    ) {
        let mut state = AdaDeltaState::new(1);
        for &g in &grads {
            let delta = adadelta_update(&mut state, &[g], rho, 1e-8);
            prop_assert!(delta[0].is_finite());
            prop_assert!(state.e_g2[0] >= 0.0 && state.e_g2[0].is_finite());
            prop_assert!(state.e_dx2[0] >= 0.0 && state.e_dx2[0].is_finite());
        }
    }

    /// Traces never cost more than the full schema, stay duplicate-free,
    /// and respect the budget up to the mandatory first extraction.
    #[test]
    fn trace_budget_invariants(
        seed in 0u64..10_000,
        cth in 0.1f64..8.0,
        ath in 0.55f64..1.0,
    ) {
        let schema = ModalitySchema::new(vec![2, 1, 2], vec![1.0, 0.5, 2.0]).unwrap();
        let model = StageModel {
            params: CellParams::init(
                CellDims { hidden: 5, input: 5, modalities: 3 },
                seed,
            ),
            stage: 1,
            schema: schema.clone(),
            target_label: 0,
            log: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
        let x = Array1::from_iter((0..5).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)));
        let trace = predict_instance(&model, x.view(), &StopRule::new(Some(cth), ath), None)
            .unwrap();

        prop_assert!(!trace.sequence.is_empty());
        prop_assert!(trace.cost() <= schema.total_cost() + 1e-12);
        let mut seen = trace.sequence.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), trace.sequence.len());
        // Everything before the last extraction fit the budget.
        prop_assert!(trace.cost() - trace.step_costs.last().unwrap() <= cth + 1e-12);

        let avg = cost_average([&trace], true).unwrap();
        prop_assert!(avg <= schema.total_cost() + 1e-12);
    }
}
