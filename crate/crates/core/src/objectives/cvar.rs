//! Worst-case `alpha`-subpopulation risk over `(x, y)`, i.e. CVaR of the loss:
//! `inf_eta (1/alpha) mean[(l - eta)_+] + eta`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

fn sorted_desc(losses: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    idx
}

fn check(losses: &[f64], alpha: f64) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1]"));
    }
    Ok(())
}

/// Returns `(value, eta_star)`. The minimizing cutoff is the lower empirical
/// `(1 - alpha)` quantile: the `floor(alpha n)`-th largest loss (0-based).
pub fn cvar_objective(losses: &[f64], alpha: f64) -> Result<(f64, f64)> {
    check(losses, alpha)?;
    let n = losses.len();
    let order = sorted_desc(losses);
    let k = math::floor(alpha * n as f64) as usize;
    let eta = losses[order[k.min(n - 1)]];
    let tail: f64 = losses.iter().map(|&l| math::hinge(l - eta)).sum();
    Ok((tail / (alpha * n as f64) + eta, eta))
}

/// Derivative of the CVaR value with respect to each loss: `1/(alpha n)` on
/// the `floor(alpha n)` largest losses and the fractional remainder on the
/// next one. Weights sum to 1.
pub fn cvar_loss_weights(losses: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check(losses, alpha)?;
    let n = losses.len();
    let order = sorted_desc(losses);
    let k = alpha * n as f64;
    let full = (math::floor(k) as usize).min(n);
    let unit = 1.0 / k;
    let mut w = vec![0.0; n];
    for &i in &order[..full] {
        w[i] = unit;
    }
    if full < n {
        w[order[full]] = (k - full as f64) * unit;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Sort-based oracle: mean of the worst alpha-fraction, with the boundary
    /// example counted fractionally.
    fn tail_mean(losses: &[f64], alpha: f64) -> f64 {
        let mut s = losses.to_vec();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let k = alpha * s.len() as f64;
        let mut acc = 0.0;
        let mut left = k;
        for v in s {
            let take = left.min(1.0);
            if take <= 0.0 {
                break;
            }
            acc += take * v;
            left -= take;
        }
        acc / k
    }

    #[test]
    fn top_half() {
        let (v, eta) = cvar_objective(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap();
        assert_relative_eq!(v, 3.5, epsilon = 1e-15);
        assert_eq!(eta, 2.0);
        assert_relative_eq!(tail_mean(&[1.0, 2.0, 3.0, 4.0], 0.5), 3.5);
    }

    #[test]
    fn full_population_is_the_mean() {
        let l = [0.3, 5.0, 1.25, 2.0];
        assert_relative_eq!(cvar_objective(&l, 1.0).unwrap().0, 8.55 / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_losses() {
        for alpha in [0.05, 0.3, 0.77, 1.0] {
            assert_relative_eq!(cvar_objective(&[2.5; 7], alpha).unwrap().0, 2.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn weights_match_finite_differences() {
        let l = [0.4, 2.2, 1.1, 3.7, 0.9];
        let alpha = 0.5;
        let w = cvar_loss_weights(&l, alpha).unwrap();
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        for i in 0..l.len() {
            let mut up = l;
            up[i] += 1e-6;
            let mut dn = l;
            dn[i] -= 1e-6;
            let fd = (cvar_objective(&up, alpha).unwrap().0 - cvar_objective(&dn, alpha).unwrap().0) / 2e-6;
            assert_relative_eq!(w[i], fd, epsilon = 1e-7);
        }
    }

    proptest! {
        #[test]
        fn dual_form_matches_tail_mean(
            l in proptest::collection::vec(0.0f64..10.0, 1..40),
            alpha in 0.01f64..=1.0,
        ) {
            let (v, _) = cvar_objective(&l, alpha).unwrap();
            prop_assert!((v - tail_mean(&l, alpha)).abs() <= 1e-9);
        }
    }
}
