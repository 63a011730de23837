//! Loss functions checked against straight-line scalar oracles, hand-computed
//! values, and central-difference gradients.

use factcheck::corpus::LabelId;
use factcheck::objective::{
    class_weighted_ce, class_weighted_ce_on_tape, combine_static, combine_static_on_tape,
    combine_uncertainty, combine_uncertainty_on_tape, token_ce, token_ce_on_tape, ClassWeights,
    FinalActivation, StaticWeights, UncertaintyState,
};
use ndarray::{Array2, ArrayD, IxDyn};
use proptest::prelude::*;
use tapegrad::check::central_difference;
use tapegrad::{NllNorm, Tape};

const LN4: f64 = 1.3862943611198906;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Scalar-loop log softmax of one row, evaluated at a single index.
fn oracle_log_softmax_at(row: &[f64], idx: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    row[idx] - log_z
}

/// Mean NLL over non-pad positions, one position at a time.
fn oracle_token_ce(logits: &Array2<f64>, targets: &[usize], pad_id: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for (row, &t) in logits.outer_iter().zip(targets) {
        if t == pad_id {
            continue;
        }
        total -= oracle_log_softmax_at(row.as_slice().unwrap(), t);
        count += 1.0;
    }
    total / count
}

/// Weighted NLL over gold classes, normalized per `norm`.
fn oracle_class_ce(scores: &Array2<f64>, golds: &[LabelId], weights: &[f64], norm: NllNorm) -> f64 {
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    for (row, gold) in scores.outer_iter().zip(golds) {
        let w = weights[gold.0];
        total -= w * oracle_log_softmax_at(row.as_slice().unwrap(), gold.0);
        weight_sum += w;
    }
    match norm {
        NllNorm::WeightSum => total / weight_sum,
        NllNorm::Sum => total,
    }
}

#[test]
fn uniform_logits_cost_log_vocab() {
    // Any constant row gives softmax 1/V everywhere, so NLL is ln V.
    let logits = Array2::zeros((3, 4));
    let loss = token_ce(&logits, &[1, 2, 3], 0).unwrap();
    assert!(close(loss, LN4, 1e-15), "{loss} vs {LN4}");
}

#[test]
fn pad_positions_carry_no_weight() {
    // Put wild values on the pad rows; the mean over the two real
    // positions must not move.
    let mut logits = Array2::zeros((4, 4));
    logits[[1, 0]] = 500.0;
    logits[[3, 2]] = -900.0;
    let loss = token_ce(&logits, &[1, 0, 3, 0], 0).unwrap();
    assert!(close(loss, LN4, 1e-15));
}

#[test]
fn all_pad_targets_are_degenerate() {
    let logits = Array2::zeros((2, 4));
    let err = token_ce(&logits, &[0, 0], 0).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn class_ce_sum_norm_accumulates_rows() {
    // Seven uniform four-class rows with unit weights: each row costs ln 4.
    let scores = Array2::zeros((7, 4));
    let golds: Vec<LabelId> = (0..7).map(|i| LabelId(i % 4)).collect();
    let w = ClassWeights::uniform(4);
    let loss = class_weighted_ce(&scores, &golds, &w, FinalActivation::None, NllNorm::Sum).unwrap();
    assert!(close(loss, 9.704060527839234, 1e-12), "{loss}");
    let mean = class_weighted_ce(
        &scores,
        &golds,
        &w,
        FinalActivation::None,
        NllNorm::WeightSum,
    )
    .unwrap();
    assert!(close(mean, LN4, 1e-15));
}

#[test]
fn class_weights_scale_each_row_by_its_gold_class() {
    let mut scores = Array2::zeros((2, 3));
    scores[[0, 0]] = 1.0;
    scores[[1, 2]] = -0.5;
    let golds = [LabelId(0), LabelId(2)];
    let w = ClassWeights::new(vec![3.0, 1.0, 0.5]).unwrap();
    for norm in [NllNorm::WeightSum, NllNorm::Sum] {
        let got = class_weighted_ce(&scores, &golds, &w, FinalActivation::None, norm).unwrap();
        let want = oracle_class_ce(&scores, &golds, w.as_slice(), norm);
        assert!(close(got, want, 1e-12), "{norm:?}: {got} vs {want}");
    }
}

#[test]
fn zero_weight_rows_drop_out_entirely() {
    // Row 1 has a zero-weight gold class; its scores must not matter.
    let mut scores = Array2::zeros((2, 2));
    scores[[1, 0]] = 1e6;
    let golds = [LabelId(0), LabelId(1)];
    let w = ClassWeights::new(vec![2.0, 0.0]).unwrap();
    let loss = class_weighted_ce(
        &scores,
        &golds,
        &w,
        FinalActivation::None,
        NllNorm::WeightSum,
    )
    .unwrap();
    assert!(close(loss, std::f64::consts::LN_2, 1e-15));
}

#[test]
fn all_zero_weight_batch_is_degenerate_under_weight_sum() {
    let scores = Array2::zeros((2, 2));
    let golds = [LabelId(1), LabelId(1)];
    let w = ClassWeights::new(vec![1.0, 0.0]).unwrap();
    let err = class_weighted_ce(
        &scores,
        &golds,
        &w,
        FinalActivation::None,
        NllNorm::WeightSum,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 4);
    // Under the raw sum the same batch is a legal zero.
    let loss = class_weighted_ce(&scores, &golds, &w, FinalActivation::None, NllNorm::Sum).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn sigmoid_activation_rejects_out_of_range_scores() {
    let mut scores = Array2::zeros((1, 2));
    scores[[0, 0]] = 1.5;
    let w = ClassWeights::uniform(2);
    let err = class_weighted_ce(
        &scores,
        &[LabelId(0)],
        &w,
        FinalActivation::Sigmoid,
        NllNorm::WeightSum,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 3);
    // In-range sigmoid outputs are accepted and scored as softmax inputs.
    let ok_scores = Array2::from_elem((1, 2), 0.5);
    let loss = class_weighted_ce(
        &ok_scores,
        &[LabelId(0)],
        &w,
        FinalActivation::Sigmoid,
        NllNorm::WeightSum,
    )
    .unwrap();
    assert!(close(loss, std::f64::consts::LN_2, 1e-15));
}

#[test]
fn mismatched_shapes_are_schema_errors() {
    let scores = Array2::zeros((2, 3));
    let w3 = ClassWeights::uniform(3);
    let w2 = ClassWeights::uniform(2);
    let golds = [LabelId(0), LabelId(1)];
    // Wrong weight count.
    let err =
        class_weighted_ce(&scores, &golds, &w2, FinalActivation::None, NllNorm::Sum).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    // Wrong gold count.
    let err = class_weighted_ce(
        &scores,
        &golds[..1],
        &w3,
        FinalActivation::None,
        NllNorm::Sum,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
    // Gold index out of range.
    let err = class_weighted_ce(
        &scores,
        &[LabelId(0), LabelId(3)],
        &w3,
        FinalActivation::None,
        NllNorm::Sum,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn weight_constructors_reject_bad_values() {
    assert_eq!(ClassWeights::new(vec![]).unwrap_err().exit_code(), 2);
    assert_eq!(
        ClassWeights::new(vec![1.0, -0.1]).unwrap_err().exit_code(),
        2
    );
    assert_eq!(
        ClassWeights::new(vec![0.0, 0.0]).unwrap_err().exit_code(),
        2
    );
    assert_eq!(StaticWeights::new(-0.5, 1.0).unwrap_err().exit_code(), 2);
    assert_eq!(StaticWeights::new(0.0, 0.0).unwrap_err().exit_code(), 2);
    assert!(StaticWeights::new(0.0, 1.0).is_ok());
}

#[test]
fn static_combination_is_the_exact_weighted_sum() {
    let w = StaticWeights::new(0.5, 0.5).unwrap();
    assert_eq!(combine_static(&w, 2.0, 4.0), 3.0);
    let w = StaticWeights::new(0.7, 0.3).unwrap();
    assert_eq!(combine_static(&w, 1.0, 1.0), 0.7 * 1.0 + 0.3 * 1.0);
    assert_eq!(combine_static(&w, 0.0, 10.0), 3.0);
}

#[test]
fn static_tape_form_matches_and_routes_gradients() {
    let w = StaticWeights::new(0.7, 0.3).unwrap();
    let mut tape = Tape::new();
    let ls = tape.scalar_leaf(1.25);
    let lc = tape.scalar_leaf(2.5);
    let total = combine_static_on_tape(&mut tape, &w, ls, lc);
    assert!(close(
        tape.scalar(total),
        combine_static(&w, 1.25, 2.5),
        1e-15
    ));
    let grads = tape.backward(total);
    // d total / d loss_summ = w_s, d total / d loss_cl = w_c.
    assert!(close(grads.wrt(ls).unwrap()[IxDyn(&[])], 0.7, 1e-15));
    assert!(close(grads.wrt(lc).unwrap()[IxDyn(&[])], 0.3, 1e-15));
}

#[test]
fn uncertainty_combination_hand_values() {
    let eval = |ls: f64, lc: f64, s_c: f64, s_s: f64| {
        combine_uncertainty(ls, lc, &UncertaintyState { s_c, s_s })
    };
    // Zero log sigmas reduce to the unweighted half-sum.
    assert!(close(eval(1.0, 2.0, 0.0, 0.0), 1.5, 1e-15));
    assert!(close(eval(0.5, 1.0, 0.1, 0.2), 0.8769453880479008, 1e-15));
    assert!(close(eval(0.25, 4.0, -0.3, 0.7), 4.075062221273718, 1e-15));
}

#[test]
fn uncertainty_task_weights_stay_positive() {
    for s in [-3.0f64, -0.5, 0.0, 0.5, 3.0] {
        let w = 0.5 * (-2.0 * s).exp();
        assert!(w > 0.0);
        // Moving only the classification loss moves the total by w per unit.
        let lo = combine_uncertainty(1.0, 1.0, &UncertaintyState { s_c: s, s_s: 0.0 });
        let hi = combine_uncertainty(1.0, 2.0, &UncertaintyState { s_c: s, s_s: 0.0 });
        assert!(close(hi - lo, w, 1e-12));
    }
}

#[test]
fn uncertainty_minimum_sits_at_sigma_squared_equal_loss() {
    // For a fixed loss L, each task term is exp(-2s)/2 * L + s. Its
    // stationary point satisfies exp(2s) = L, i.e. sigma^2 = L.
    let loss = 3.0f64;
    let s_star = loss.ln() / 2.0;
    assert!(close((2.0 * s_star).exp(), loss, 1e-12));
    let term = |s: f64| 0.5 * (-2.0 * s).exp() * loss + s;
    // Derivative vanishes at the stationary point.
    let d = central_difference(&mut |s| term(s), s_star, 1e-6);
    assert!(d.abs() < 1e-9, "derivative at minimum: {d}");
    // And it is a minimum: every scanned neighbor costs more.
    let at_star = term(s_star);
    for k in 1..=40 {
        let off = 0.05 * k as f64;
        assert!(term(s_star - off) > at_star);
        assert!(term(s_star + off) > at_star);
    }
}

#[test]
fn uncertainty_tape_gradients_match_central_differences() {
    let (ls, lc) = (0.8, 1.7);
    let (s_c0, s_s0) = (0.3, -0.4);
    let mut tape = Tape::new();
    let vls = tape.scalar_leaf(ls);
    let vlc = tape.scalar_leaf(lc);
    let vsc = tape.scalar_leaf(s_c0);
    let vss = tape.scalar_leaf(s_s0);
    let total = combine_uncertainty_on_tape(&mut tape, vls, vlc, vsc, vss);
    assert!(close(
        tape.scalar(total),
        combine_uncertainty(
            ls,
            lc,
            &UncertaintyState {
                s_c: s_c0,
                s_s: s_s0
            }
        ),
        1e-15
    ));
    let grads = tape.backward(total);
    let scalar = |g: &ArrayD<f64>| g[IxDyn(&[])];
    let num_sc = central_difference(
        &mut |s| combine_uncertainty(ls, lc, &UncertaintyState { s_c: s, s_s: s_s0 }),
        s_c0,
        1e-6,
    );
    let num_ss = central_difference(
        &mut |s| combine_uncertainty(ls, lc, &UncertaintyState { s_c: s_c0, s_s: s }),
        s_s0,
        1e-6,
    );
    assert!(close(scalar(grads.wrt(vsc).unwrap()), num_sc, 1e-8));
    assert!(close(scalar(grads.wrt(vss).unwrap()), num_ss, 1e-8));
    // Loss gradients are the effective task weights.
    assert!(close(
        scalar(grads.wrt(vls).unwrap()),
        0.5 * (-2.0 * s_s0).exp(),
        1e-12
    ));
    assert!(close(
        scalar(grads.wrt(vlc).unwrap()),
        0.5 * (-2.0 * s_c0).exp(),
        1e-12
    ));
}

#[test]
fn token_ce_gradients_match_central_differences() {
    let mut logits = Array2::zeros((3, 3));
    for (i, v) in [0.3, -1.2, 0.8, 1.5, 0.0, -0.7, 0.2, 0.9, -0.4]
        .iter()
        .enumerate()
    {
        logits[[i / 3, i % 3]] = *v;
    }
    let targets = [2, 0, 1];
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone().into_dyn());
    let loss = token_ce_on_tape(&mut tape, l, &targets, 0).unwrap();
    let grads = tape.backward(loss);
    let g = grads.wrt(l).unwrap();
    for r in 0..3 {
        for c in 0..3 {
            let num = central_difference(
                &mut |x| {
                    let mut pert = logits.clone();
                    pert[[r, c]] = x;
                    token_ce(&pert, &targets, 0).unwrap()
                },
                logits[[r, c]],
                1e-5,
            );
            assert!(
                close(g[IxDyn(&[r, c])], num, 1e-7),
                "grad[{r},{c}] {} vs {num}",
                g[IxDyn(&[r, c])]
            );
        }
    }
}

#[test]
fn class_ce_gradients_match_central_differences() {
    let mut scores = Array2::zeros((2, 3));
    for (i, v) in [0.4, -0.9, 1.1, -0.2, 0.6, 0.0].iter().enumerate() {
        scores[[i / 3, i % 3]] = *v;
    }
    let golds = [LabelId(2), LabelId(0)];
    let w = ClassWeights::new(vec![2.0, 1.0, 0.5]).unwrap();
    for norm in [NllNorm::WeightSum, NllNorm::Sum] {
        let mut tape = Tape::new();
        let s = tape.leaf(scores.clone().into_dyn());
        let loss = class_weighted_ce_on_tape(&mut tape, s, &golds, &w, norm).unwrap();
        let grads = tape.backward(loss);
        let g = grads.wrt(s).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                let num = central_difference(
                    &mut |x| {
                        let mut pert = scores.clone();
                        pert[[r, c]] = x;
                        class_weighted_ce(&pert, &golds, &w, FinalActivation::None, norm).unwrap()
                    },
                    scores[[r, c]],
                    1e-5,
                );
                assert!(
                    close(g[IxDyn(&[r, c])], num, 1e-7),
                    "{norm:?} grad[{r},{c}]"
                );
            }
        }
    }
}

proptest! {
    #[test]
    fn token_ce_matches_oracle(
        vals in proptest::collection::vec(-4.0f64..4.0, 20),
        targets in proptest::collection::vec(0usize..5, 4),
    ) {
        prop_assume!(targets.iter().any(|&t| t != 0));
        let logits = Array2::from_shape_vec((4, 5), vals).unwrap();
        let got = token_ce(&logits, &targets, 0).unwrap();
        let want = oracle_token_ce(&logits, &targets, 0);
        prop_assert!(close(got, want, 1e-10), "{got} vs {want}");
    }

    #[test]
    fn class_ce_matches_oracle(
        vals in proptest::collection::vec(-4.0f64..4.0, 12),
        golds in proptest::collection::vec(0usize..3, 4),
        weights in proptest::collection::vec(0.1f64..5.0, 3),
    ) {
        let scores = Array2::from_shape_vec((4, 3), vals).unwrap();
        let gold_ids: Vec<LabelId> = golds.iter().map(|&g| LabelId(g)).collect();
        let w = ClassWeights::new(weights.clone()).unwrap();
        for norm in [NllNorm::WeightSum, NllNorm::Sum] {
            let got = class_weighted_ce(
                &scores, &gold_ids, &w, FinalActivation::None, norm,
            ).unwrap();
            let want = oracle_class_ce(&scores, &gold_ids, &weights, norm);
            prop_assert!(close(got, want, 1e-10));
        }
    }

    #[test]
    fn uncertainty_exceeds_neither_input_scaled(
        ls in 0.01f64..10.0,
        lc in 0.01f64..10.0,
    ) {
        // At the per-task optimum s = ln(L)/2 each term is (1 + ln L)/2,
        // so the optimal total is fully determined by the two losses.
        let state = UncertaintyState { s_c: lc.ln() / 2.0, s_s: ls.ln() / 2.0 };
        let total = combine_uncertainty(ls, lc, &state);
        let want = 0.5 * (1.0 + lc.ln()) + 0.5 * (1.0 + ls.ln());
        prop_assert!(close(total, want, 1e-10));
        // Any other sigma pair costs at least as much.
        for ds in [-0.7, -0.1, 0.1, 0.7] {
            let worse = combine_uncertainty(
                ls, lc,
                &UncertaintyState { s_c: state.s_c + ds, s_s: state.s_s - ds },
            );
            prop_assert!(worse >= total - 1e-12);
        }
    }
}
