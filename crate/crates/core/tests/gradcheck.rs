//! Analytic gradients vs central finite differences on every scalar.

#![allow(clippy::needless_range_loop)]

use pdplan_core::dataset::{generate_synthetic, sample_pair_batch, GenConfig};
use pdplan_core::estimator::{Dims, EstimatorParams, RpcHyper, Side};
use pdplan_core::par::Exec;
use pdplan_core::trainer::{backward, batch_objective, TextPairBatch};

const STEP: f64 = 1e-4;

fn small_dims() -> Dims {
    Dims {
        vocab: 64,
        embed: 8,
        hidden: 8,
        out: 8,
    }
}

fn batch(seed: u64) -> TextPairBatch {
    let recs = generate_synthetic(&GenConfig {
        n_records: 40,
        seed,
        ..GenConfig::default()
    })
    .unwrap();
    TextPairBatch::from(&sample_pair_batch(&recs, 4, seed, true).unwrap())
}

/// Largest relative error between analytic and numeric gradients.
fn max_relative_error(
    params: &EstimatorParams,
    b: &TextPairBatch,
    hyper: &RpcHyper,
) -> (f64, usize) {
    let analytic = backward(params, b, hyper, Exec::Sequential)
        .unwrap()
        .grads
        .to_dense(params);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let n_tensors = probe.tensors().len();
    for t in 0..n_tensors {
        let len = probe.tensors()[t].1.len();
        for i in 0..len {
            let orig = probe.tensors()[t].1[i];
            probe.tensors_mut()[t].1[i] = orig + STEP;
            let up = batch_objective(&probe, b, hyper).unwrap();
            probe.tensors_mut()[t].1[i] = orig - STEP;
            let down = batch_objective(&probe, b, hyper).unwrap();
            probe.tensors_mut()[t].1[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[t][i];
            let denom = a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((a - numeric).abs() / denom);
            checked += 1;
        }
    }
    (worst, checked)
}

#[test]
fn backward_matches_finite_differences_shared_embedder() {
    let params = EstimatorParams::init(small_dims(), true, 0.3, 5).unwrap();
    let b = batch(2);
    let (err, n) = max_relative_error(&params, &b, &RpcHyper::default());
    assert_eq!(n, params.num_scalars());
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn backward_matches_finite_differences_separate_embedders() {
    let params = EstimatorParams::init(small_dims(), false, 0.3, 6).unwrap();
    let b = batch(3);
    let (err, _) = max_relative_error(&params, &b, &RpcHyper::default());
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn unused_embedding_rows_have_zero_gradient() {
    let params = EstimatorParams::init(small_dims(), true, 0.3, 5).unwrap();
    let b = batch(2);
    let out = backward(&params, &b, &RpcHyper::default(), Exec::Sequential).unwrap();
    let used: std::collections::BTreeSet<usize> = b
        .positives
        .iter()
        .chain(&b.negatives)
        .flat_map(|(c, a)| {
            let e = &params.action_embedder;
            let mut rows = e.token_rows(c);
            rows.extend(e.token_rows(a));
            rows
        })
        .collect();
    assert_eq!(
        out.grads
            .action_embed
            .keys()
            .copied()
            .collect::<std::collections::BTreeSet<_>>(),
        used
    );
    let dense = out.grads.to_dense(&params);
    let d = params.dims.embed;
    for row in 0..params.dims.vocab {
        if !used.contains(&row) {
            assert!(dense[0][row * d..(row + 1) * d].iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn stationary_scores_give_zero_gradients() {
    // Context head outputs e_0 for every text; action head row 0 is solved so
    // the positive scores 1/β and the negative scores -α/γ, where the score
    // gradients vanish.
    let hyper = RpcHyper::default();
    let dims = small_dims();
    let mut params = EstimatorParams::init(dims, true, 0.5, 4).unwrap();
    params
        .context_head
        .weight
        .data
        .iter_mut()
        .for_each(|v| *v = 0.0);
    params.context_head.bias = vec![0.0; dims.out];
    params.context_head.bias[0] = 1.0;
    params
        .action_head
        .weight
        .data
        .iter_mut()
        .for_each(|v| *v = 0.0);

    let pos_text = "smart sprinkler : on";
    let neg_text = "oven : preheat 180c";
    let hp = params
        .pass(Side::Action, pos_text)
        .unwrap()
        .trace
        .last()
        .to_vec();
    let hn = params
        .pass(Side::Action, neg_text)
        .unwrap()
        .trace
        .last()
        .to_vec();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (tp, tn) = (1.0 / hyper.beta, -hyper.alpha / hyper.gamma);
    // W0 = a·hp + b·hn with Gram system [[hp·hp, hn·hp], [hp·hn, hn·hn]] [a, b] = [tp, tn]
    let (g11, g12, g22) = (dot(&hp, &hp), dot(&hp, &hn), dot(&hn, &hn));
    let det = g11 * g22 - g12 * g12;
    let a = (tp * g22 - tn * g12) / det;
    let b = (tn * g11 - tp * g12) / det;
    for j in 0..dims.hidden {
        params.action_head.weight.data[j] = a * hp[j] + b * hn[j];
    }

    let batch = TextPairBatch {
        positives: vec![("water the plants".into(), pos_text.into())],
        negatives: vec![("water the plants".into(), neg_text.into())],
    };
    let out = backward(&params, &batch, &hyper, Exec::Sequential).unwrap();
    assert!((out.s_pos[0] - tp).abs() < 1e-9, "{}", out.s_pos[0]);
    assert!((out.s_neg[0] - tn).abs() < 1e-9, "{}", out.s_neg[0]);
    assert!(
        out.grads.norm() < 1e-8,
        "gradient norm {}",
        out.grads.norm()
    );
}

#[test]
fn parallel_and_sequential_backward_agree_bitwise() {
    let params = EstimatorParams::init(small_dims(), true, 0.3, 5).unwrap();
    let recs = generate_synthetic(&GenConfig {
        n_records: 200,
        seed: 9,
        ..GenConfig::default()
    })
    .unwrap();
    let b = TextPairBatch::from(&sample_pair_batch(&recs, 64, 1, true).unwrap());
    let h = RpcHyper::default();
    let a = backward(&params, &b, &h, Exec::Sequential).unwrap();
    let p = backward(&params, &b, &h, Exec::Parallel).unwrap();
    assert_eq!(a.objective.to_bits(), p.objective.to_bits());
    assert_eq!(a.grads, p.grads);
}
