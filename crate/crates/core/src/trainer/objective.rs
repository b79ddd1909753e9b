use crate::estimator::RpcHyper;
use crate::{Error, Result};

/// Relative predictive coding objective (to be maximized):
///
/// ```text
/// J = mean(s⁺) - α·mean(s⁻) - β/2·mean(s⁺²) - γ/2·mean(s⁻²)
/// ```
pub fn rpc_objective(s_pos: &[f64], s_neg: &[f64], hyper: &RpcHyper) -> Result<f64> {
    check(s_pos, s_neg)?;
    let np = s_pos.len() as f64;
    let nn = s_neg.len() as f64;
    let pos = s_pos.iter().sum::<f64>() / np;
    let neg = s_neg.iter().sum::<f64>() / nn;
    let pos_sq = s_pos.iter().map(|s| s * s).sum::<f64>() / np;
    let neg_sq = s_neg.iter().map(|s| s * s).sum::<f64>() / nn;
    let j = pos - hyper.alpha * neg - 0.5 * hyper.beta * pos_sq - 0.5 * hyper.gamma * neg_sq;
    if !j.is_finite() {
        return Err(Error::Numeric("objective".into()));
    }
    Ok(j)
}

/// `(∂J/∂s⁺ᵢ, ∂J/∂s⁻ⱼ)`.
pub fn rpc_grad_scores(
    s_pos: &[f64],
    s_neg: &[f64],
    hyper: &RpcHyper,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check(s_pos, s_neg)?;
    let np = s_pos.len() as f64;
    let nn = s_neg.len() as f64;
    let gp = s_pos.iter().map(|s| (1.0 - hyper.beta * s) / np).collect();
    let gn = s_neg
        .iter()
        .map(|s| (-hyper.alpha - hyper.gamma * s) / nn)
        .collect();
    Ok((gp, gn))
}

fn check(s_pos: &[f64], s_neg: &[f64]) -> Result<()> {
    if s_pos.is_empty() || s_neg.is_empty() {
        return Err(Error::Config(
            "objective needs at least one positive and one negative score".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const H: RpcHyper = RpcHyper {
        alpha: 1.0,
        beta: 0.005,
        gamma: 0.1,
    };

    #[test]
    fn worked_examples() {
        let j = rpc_objective(&[0.5], &[0.2], &H).unwrap();
        assert!((j - 0.297375).abs() < 1e-15, "{j}");
        assert_eq!(rpc_objective(&[0.0], &[0.0], &H).unwrap(), 0.0);
        let c = 3.0;
        let j = rpc_objective(&[c], &[c], &H).unwrap();
        assert!((j + (H.beta + H.gamma) * c * c / 2.0).abs() < 1e-12);
        assert!(rpc_objective(&[], &[1.0], &H).is_err());
    }

    #[test]
    fn score_gradients_at_zero() {
        let (gp, gn) = rpc_grad_scores(&[0.0], &[0.0], &H).unwrap();
        assert_eq!(gp, vec![1.0]);
        assert_eq!(gn, vec![-1.0]);
    }

    #[test]
    fn stationary_points() {
        let (gp, gn) = rpc_grad_scores(&[1.0 / H.beta], &[-H.alpha / H.gamma], &H).unwrap();
        assert!(gp[0].abs() < 1e-15 && gn[0].abs() < 1e-15);
    }

    #[test]
    fn tied_score_optimum_by_grid_search() {
        // One score shared by a positive with weight w and a negative with
        // weight 1-w; stationary point solves w(1-βs) = (1-w)(α+γs).
        for w in [0.2, 0.5, 0.8] {
            let f = |s: f64| {
                w * (s - 0.5 * H.beta * s * s) - (1.0 - w) * (H.alpha * s + 0.5 * H.gamma * s * s)
            };
            // grid over [-20, 40]
            let best = (0..=600_000)
                .map(|i| -20.0 + i as f64 * 1e-4)
                .max_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
                .unwrap();
            let closed = (w - (1.0 - w) * H.alpha) / (w * H.beta + (1.0 - w) * H.gamma);
            assert!(
                (best - closed).abs() < 2e-4,
                "w={w} grid={best} closed={closed}"
            );
            // and the transform maps the optimum to the exact ratio w/(1-w)
            assert!((H.to_epd(closed) - w / (1.0 - w)).abs() < 1e-9);
        }
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    proptest! {
        #[test]
        #[allow(clippy::needless_range_loop)]
        fn grads_match_finite_differences(
            pos in prop::collection::vec(-30.0f64..30.0, 1..8),
            neg in prop::collection::vec(-30.0f64..30.0, 1..8),
        ) {
            let (gp, gn) = rpc_grad_scores(&pos, &neg, &H).unwrap();
            for i in 0..pos.len() {
                let fd = central_diff(|p| rpc_objective(p, &neg, &H).unwrap(), &pos, i, 1e-3);
                prop_assert!((fd - gp[i]).abs() <= 1e-8 * gp[i].abs().max(1e-3));
            }
            for i in 0..neg.len() {
                let fd = central_diff(|n| rpc_objective(&pos, n, &H).unwrap(), &neg, i, 1e-3);
                prop_assert!((fd - gn[i]).abs() <= 1e-8 * gn[i].abs().max(1e-3));
            }
        }

        #[test]
        fn permutation_invariant(
            pos in prop::collection::vec(-30.0f64..30.0, 1..10),
            neg in prop::collection::vec(-30.0f64..30.0, 1..10),
            rot in 0usize..10,
        ) {
            let mut p2 = pos.clone();
            let mut n2 = neg.clone();
            let k = rot % p2.len();
            p2.rotate_left(k);
            n2.reverse();
            let a = rpc_objective(&pos, &neg, &H).unwrap();
            let b = rpc_objective(&p2, &n2, &H).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
