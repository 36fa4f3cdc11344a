use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::weighted_least_squares;
use crate::model::ExplainContext;
use crate::predicate::{Attribution, BitVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapConfig {
    pub n_samples: usize,
    /// Enumerate every coalition when `2^d` is at most this.
    pub exhaustive_threshold: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig { n_samples: 1000, exhaustive_threshold: 4096 }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel `(d-1) / (C(d,s) s (d-s))` for coalitions of size `s`.
pub fn shapley_kernel_weight<T: Scalar>(d: usize, s: usize) -> Result<T> {
    if d < 2 || s == 0 || s >= d {
        return Err(Error::Domain(format!("kernel weight needs 1 <= s <= d-1, got d={d}, s={s}")));
    }
    Ok(T::of((d - 1) as f64 / (binomial(d, s) * s as f64 * (d - s) as f64)))
}

pub fn is_exact_mode(d: usize, cfg: &ShapConfig) -> bool {
    d < 63 && (1u64 << d) <= cfg.exhaustive_threshold
}

/// Kernel mass of all coalitions of size `s`: `(d-1) / (s (d-s))`.
fn size_mass(d: usize, s: usize) -> f64 {
    (d - 1) as f64 / (s * (d - s)) as f64
}

fn subset_of_size<R: Rng + ?Sized>(d: usize, s: usize, rng: &mut R) -> BitVector {
    let mut bits = vec![false; d];
    for i in rand::seq::index::sample(rng, d, s) {
        bits[i] = true;
    }
    BitVector::new(bits)
}

/// Coalitions and regression weights for a budget of `n` evaluations.
///
/// Size classes are visited in complementary pairs `(s, d-s)` from the
/// outside in. A pair is enumerated outright while the budget would give it
/// at least as many draws as it has members; the remaining kernel mass is
/// covered by draws of a size (in proportion to its mass) and a uniform
/// subset, each added together with its complement. Repeated draws add up.
fn hybrid_design<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> (Vec<BitVector>, Vec<f64>) {
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    let pairs: Vec<(usize, usize)> = (1..=d / 2).map(|s| (s, d - s)).collect();
    let pair_mass = |&(s, t): &(usize, usize)| if s == t { size_mass(d, s) } else { 2.0 * size_mass(d, s) };
    let pair_count = |&(s, t): &(usize, usize)| if s == t { binomial(d, s) } else { 2.0 * binomial(d, s) };
    let mut budget = n as f64;
    let mut left_mass: f64 = pairs.iter().map(pair_mass).sum();
    let mut next = 0;
    while next < pairs.len() {
        let p = &pairs[next];
        let count = pair_count(p);
        if budget * pair_mass(p) / left_mass < count - 1e-8 {
            break;
        }
        for z in BitVector::enumerate(d).filter(|z| z.count_ones() == p.0 || z.count_ones() == p.1) {
            weights.push(size_mass(d, z.count_ones()) / binomial(d, z.count_ones()));
            samples.push(z);
        }
        budget -= count;
        left_mass -= pair_mass(p);
        next += 1;
    }
    let rest = &pairs[next..];
    let draws = (budget.max(0.0) as usize) / 2;
    if rest.is_empty() || draws == 0 {
        return (samples, weights);
    }
    let masses: Vec<f64> = rest.iter().map(pair_mass).collect();
    let total: f64 = masses.iter().sum();
    let each = total / (2 * draws) as f64;
    let mut seen: HashMap<BitVector, usize> = HashMap::new();
    for _ in 0..draws {
        let mut u = rng.gen::<f64>() * total;
        let mut k = 0;
        while k + 1 < rest.len() && u >= masses[k] {
            u -= masses[k];
            k += 1;
        }
        let (s, t) = rest[k];
        let size = if s != t && rng.gen_bool(0.5) { t } else { s };
        let z = subset_of_size(d, size, rng);
        let complement = BitVector::new(z.bits().iter().map(|b| !b).collect());
        for v in [z, complement] {
            match seen.get(&v) {
                Some(&i) => weights[i] += each,
                None => {
                    seen.insert(v.clone(), samples.len());
                    samples.push(v);
                    weights.push(each);
                }
            }
        }
    }
    (samples, weights)
}

/// Kernel SHAP: weighted least squares under the constraints
/// `g(0) = v(empty)` and `g(1) = v(full)`.
///
/// The last weight is eliminated with the efficiency constraint. In exact
/// mode every coalition of size `1..d-1` enters with its kernel weight;
/// otherwise the design comes from [`hybrid_design`].
pub fn explain_kshap<T: Scalar, R: Rng + ?Sized>(ctx: &ExplainContext<'_>, cfg: &ShapConfig, rng: &mut R) -> Result<Attribution<T>> {
    let d = ctx.d();
    let ends = ctx.evaluate(&[BitVector::zeros(d), BitVector::ones(d)])?;
    let v0 = T::of(ctx.response(&ends[0]));
    let v1 = T::of(ctx.response(&ends[1]));
    let total = v1 - v0;
    if d == 1 {
        return Attribution::new(v0, vec![total], ctx.label());
    }

    let (samples, weights): (Vec<BitVector>, Vec<T>) = if is_exact_mode(d, cfg) {
        let samples: Vec<BitVector> =
            BitVector::enumerate(d).filter(|z| !z.is_all_zeros() && !z.is_all_ones()).collect();
        let weights = samples.iter().map(|z| shapley_kernel_weight(d, z.count_ones())).collect::<Result<_>>()?;
        (samples, weights)
    } else {
        if cfg.n_samples < d + 2 {
            return Err(Error::InvalidInput(format!("kernel shap needs at least {} samples", d + 2)));
        }
        let (samples, weights) = hybrid_design(d, cfg.n_samples, rng);
        (samples, weights.into_iter().map(T::of).collect())
    };

    let last = d - 1;
    let bit = |z: &BitVector, i: usize| if z.get(i) { T::one() } else { T::zero() };
    let responses = ctx.evaluate(&samples)?;
    let rows: Vec<Vec<T>> = samples.iter().map(|z| (0..last).map(|i| bit(z, i) - bit(z, last)).collect()).collect();
    let targets: Vec<T> = samples
        .iter()
        .zip(&responses)
        .map(|(z, p)| T::of(ctx.response(p)) - v0 - bit(z, last) * total)
        .collect();
    let mut phi = weighted_least_squares(&rows, &targets, &weights)?;
    let rest = phi.iter().fold(T::zero(), |acc, w| acc + *w);
    phi.push(total - rest);
    Attribution::new(v0, phi, ctx.label())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::exact_shapley_oracle;
    use crate::model::{FnModel, Prediction};
    use crate::perturb::seeded_rng;

    fn scored(v: impl Fn(&BitVector) -> f64 + Sync) -> FnModel<impl Fn(&BitVector) -> Prediction + Sync> {
        FnModel(move |z: &BitVector| Prediction::with_scores(0, vec![v(z)]))
    }

    #[test]
    fn kernel_weight_examples() {
        assert!((shapley_kernel_weight::<f64>(4, 1).unwrap() - 0.25).abs() < 1e-15);
        assert!((shapley_kernel_weight::<f64>(4, 2).unwrap() - 0.125).abs() < 1e-15);
        for s in 1..7 {
            assert_eq!(shapley_kernel_weight::<f64>(7, s).unwrap(), shapley_kernel_weight::<f64>(7, 7 - s).unwrap());
        }
        assert!(shapley_kernel_weight::<f64>(4, 0).is_err());
        assert!(shapley_kernel_weight::<f64>(4, 4).is_err());
    }

    #[test]
    fn or_of_two_bits_splits_evenly() {
        // coalitions: v({})=0, v({0})=v({1})=v({0,1})=1; marginal
        // contributions of bit 0 are 1 (after {}) and 0 (after {1}), so 0.5
        let m = scored(|z| f64::from(u8::from(z.get(0) || z.get(1))));
        let ctx = ExplainContext::new(&m, 2).unwrap();
        let a: Attribution<f64> = explain_kshap(&ctx, &ShapConfig::default(), &mut seeded_rng(0)).unwrap();
        assert!((a.weights[0] - 0.5).abs() < 1e-12 && (a.weights[1] - 0.5).abs() < 1e-12);
        assert_eq!(a.intercept, 0.0);
    }

    #[test]
    fn additive_values_are_recovered() {
        let coef = [0.3, -1.2, 0.0, 2.5, 0.7];
        let m = scored(move |z| z.ones_indices().map(|i| coef[i]).sum());
        let ctx = ExplainContext::new(&m, 5).unwrap();
        let a: Attribution<f64> = explain_kshap(&ctx, &ShapConfig::default(), &mut seeded_rng(0)).unwrap();
        for (w, c) in a.weights.iter().zip(coef) {
            assert!((w - c).abs() < 1e-9);
        }
    }

    #[test]
    fn dummy_predicate_gets_zero() {
        let m = scored(|z| f64::from(u8::from(z.get(0) && z.get(2))) + 0.5 * f64::from(u8::from(z.get(1))));
        let ctx = ExplainContext::new(&m, 4).unwrap();
        let a: Attribution<f64> = explain_kshap(&ctx, &ShapConfig::default(), &mut seeded_rng(0)).unwrap();
        assert!(a.weights[3].abs() < 1e-9);
    }

    #[test]
    fn exact_mode_matches_enumeration_and_efficiency() {
        let mut rng = seeded_rng(77);
        for d in 2..=8 {
            let table: Vec<f64> = (0..1u64 << d).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
            let lookup = |z: &BitVector| table[z.ones_indices().fold(0usize, |m, i| m | 1 << i)];
            let m = scored(lookup);
            let ctx = ExplainContext::new(&m, d).unwrap();
            let a: Attribution<f64> = explain_kshap(&ctx, &ShapConfig::default(), &mut seeded_rng(0)).unwrap();
            let oracle = exact_shapley_oracle(|z: &BitVector| lookup(z), d).unwrap();
            for (w, o) in a.weights.iter().zip(&oracle) {
                assert!((w - o).abs() < 1e-9, "d={d}: {w} vs {o}");
            }
            let sum: f64 = a.weights.iter().sum();
            assert!((sum - (table[(1 << d) - 1] - table[0])).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_mode_is_close_on_smooth_values() {
        let coef: Vec<f64> = (0..14).map(|i| (i as f64 - 6.5) / 10.0).collect();
        let c2 = coef.clone();
        let m = scored(move |z| z.ones_indices().map(|i| c2[i]).sum::<f64>() + 0.3 * f64::from(u8::from(z.get(0) && z.get(1))));
        let ctx = ExplainContext::new(&m, 14).unwrap();
        let cfg = ShapConfig { n_samples: 2000, exhaustive_threshold: 4096 };
        let a: Attribution<f64> = explain_kshap(&ctx, &cfg, &mut seeded_rng(4)).unwrap();
        assert!((a.weights[0] - (coef[0] + 0.15)).abs() < 0.05);
        assert!((a.weights[5] - coef[5]).abs() < 0.05);
    }

    #[test]
    fn budget_covering_every_coalition_is_exact() {
        let mut rng = seeded_rng(5);
        let d = 7;
        let table: Vec<f64> = (0..1u64 << d).map(|_| rng.gen::<f64>()).collect();
        let lookup = |z: &BitVector| table[z.ones_indices().fold(0usize, |m, i| m | 1 << i)];
        let m = scored(lookup);
        let ctx = ExplainContext::new(&m, d).unwrap();
        let (zs, _) = hybrid_design(d, 200, &mut seeded_rng(0));
        assert_eq!(zs.len(), 126);
        let cfg = ShapConfig { n_samples: 200, exhaustive_threshold: 0 };
        let a: Attribution<f64> = explain_kshap(&ctx, &cfg, &mut seeded_rng(0)).unwrap();
        let oracle = exact_shapley_oracle(|z: &BitVector| lookup(z), d).unwrap();
        for (w, o) in a.weights.iter().zip(&oracle) {
            assert!((w - o).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_pairs_track_random_tables() {
        let mut rng = seeded_rng(6);
        let d = 13;
        let table: Vec<f64> = (0..1u64 << d).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
        let lookup = |z: &BitVector| table[z.ones_indices().fold(0usize, |m, i| m | 1 << i)];
        let m = scored(lookup);
        let ctx = ExplainContext::new(&m, d).unwrap();
        let (zs, ws) = hybrid_design(d, 2000, &mut seeded_rng(1));
        // the outer pairs fit the budget, the middle is sampled
        assert!(zs.iter().any(|z| z.count_ones() == 1) && zs.len() < (1 << d) - 2);
        let mass: f64 = ws.iter().sum();
        let expected: f64 = (1..d).map(|s| size_mass(d, s)).sum();
        assert!((mass - expected).abs() < 1e-9);
        let cfg = ShapConfig { n_samples: 2000, exhaustive_threshold: 0 };
        let a: Attribution<f64> = explain_kshap(&ctx, &cfg, &mut seeded_rng(1)).unwrap();
        let oracle = exact_shapley_oracle(|z: &BitVector| lookup(z), d).unwrap();
        let worst = a.weights.iter().zip(&oracle).map(|(w, o)| (w - o).abs()).fold(0.0, f64::max);
        assert!(worst < 0.05, "{worst}");
    }
}
