//! Bernoulli KL confidence bounds for best-arm identification.

use crate::scalar::Scalar;

/// Bernoulli relative entropy `KL(p || q)` with `0 log 0 = 0`.
pub fn kl_bernoulli<T: Scalar>(p: T, q: T) -> T {
    let term = |a: T, b: T| {
        if a == T::zero() {
            T::zero()
        } else if b == T::zero() {
            T::infinity()
        } else {
            a * (a / b).ln()
        }
    };
    term(p, q) + term(T::one() - p, T::one() - q)
}

const BISECTION_TOL: f64 = 1e-9;
const MAX_STEPS: usize = 200;

/// `(lb, ub)`: the extreme `q` on each side of `p_hat` with
/// `n KL(p_hat || q) <= beta`, found by bisection to `1e-9`.
///
/// `lb` is the upper end of its final bracket and `ub` the lower end, so
/// both stay inside the feasible region and `lb <= p_hat <= ub` holds.
pub fn kl_bernoulli_bounds<T: Scalar>(p_hat: T, n: usize, beta: T) -> (T, T) {
    let p = p_hat.max(T::zero()).min(T::one());
    if beta <= T::zero() || n == 0 {
        return (p, p);
    }
    let n = T::of_usize(n);
    let feasible = |q: T| n * kl_bernoulli(p, q) <= beta;
    let tol = T::of(BISECTION_TOL);
    let two = T::of(2.0);

    let ub = if p >= T::one() || feasible(T::one()) {
        T::one()
    } else {
        let (mut lo, mut hi) = (p, T::one());
        for _ in 0..MAX_STEPS {
            if hi - lo <= tol {
                break;
            }
            let mid = (lo + hi) / two;
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };

    let lb = if p <= T::zero() || feasible(T::zero()) {
        T::zero()
    } else {
        let (mut lo, mut hi) = (T::zero(), p);
        for _ in 0..MAX_STEPS {
            if hi - lo <= tol {
                break;
            }
            let mid = (lo + hi) / two;
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    (lb, ub)
}

/// Exploration rate `log(pi^2 k t^2 / (6 delta))` for `k` arms at round `t`.
pub fn lucb_beta(n_arms: usize, t: usize, delta: f64) -> f64 {
    let t = t as f64;
    (std::f64::consts::PI.powi(2) * n_arms as f64 * t * t / (6.0 * delta)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_beta_collapses() {
        assert_eq!(kl_bernoulli_bounds(0.3, 10, 0.0), (0.3, 0.3));
    }

    #[test]
    fn certain_arm_has_unit_upper_bound() {
        for n in [1, 10, 1000] {
            assert_eq!(kl_bernoulli_bounds(1.0, n, 0.5).1, 1.0);
        }
    }

    #[test]
    fn lower_bound_matches_grid_scan() {
        // independent check: scan q on a 1e-6 grid for the smallest q below
        // 0.8 that satisfies 50 KL(0.8 || q) <= 2
        let (lb, ub) = kl_bernoulli_bounds(0.8, 50, 2.0);
        let scan = (0..=800_000)
            .map(|i| i as f64 * 1e-6)
            .find(|&q| 50.0 * kl_bernoulli(0.8, q) <= 2.0)
            .unwrap();
        assert!((lb - scan).abs() <= 1.5e-6, "{lb} vs {scan}");
        assert!((50.0 * kl_bernoulli(0.8, lb) - 2.0).abs() < 1e-5);
        assert!(ub > 0.8 && ub < 1.0);
    }

    #[test]
    fn kl_edge_cases() {
        assert_eq!(kl_bernoulli(0.0, 0.0), 0.0);
        assert_eq!(kl_bernoulli(1.0, 1.0), 0.0);
        assert!(kl_bernoulli(0.5, 0.0f64).is_infinite());
        assert!(kl_bernoulli(0.5, 0.5f64).abs() < 1e-15);
    }

    #[test]
    fn works_in_f32() {
        let (lb, ub) = kl_bernoulli_bounds(0.5f32, 100, 1.0);
        assert!(lb < 0.5 && ub > 0.5 && lb > 0.3 && ub < 0.7);
    }

    proptest! {
        #[test]
        fn bounds_bracket_and_shrink(p in 0.0f64..=1.0, n in 1usize..500, beta in 0.0f64..10.0) {
            let (lb, ub) = kl_bernoulli_bounds(p, n, beta);
            prop_assert!(lb <= p && p <= ub);
            let (lb2, ub2) = kl_bernoulli_bounds(p, n + 1, beta);
            prop_assert!(lb2 >= lb && ub2 <= ub);
        }
    }
}
