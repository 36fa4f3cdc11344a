use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::weighted_ridge;
use crate::model::ExplainContext;
use crate::perturb::{sample_bitvectors, Strategy};
use crate::predicate::{Attribution, BitVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub kernel_width: f64,
    pub ridge: f64,
    pub strategy: Strategy,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig { n_samples: 1000, kernel_width: 0.25, ridge: 1.0, strategy: Strategy::Bernoulli { q: 0.5 } }
    }
}

impl LimeConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.kernel_width > 0.0) || !(self.ridge >= 0.0) {
            return Err(Error::InvalidInput("lime needs kernel_width > 0 and ridge >= 0".into()));
        }
        if self.n_samples < d + 1 {
            return Err(Error::InvalidInput(format!("lime needs at least {} samples", d + 1)));
        }
        self.strategy.validate()
    }
}

/// Proximity of `z` to the explained input: `exp(-(1 - s/d)^2 / width^2)`
/// with `s` the number of kept predicates.
pub fn proximity<T: Scalar>(z: &BitVector, width: f64) -> T {
    let dist = 1.0 - z.count_ones() as f64 / z.len() as f64;
    T::of((-(dist * dist) / (width * width)).exp())
}

/// Weighted ridge fit of `responses` on the bits of `samples`.
pub fn fit_lime<T: Scalar>(samples: &[BitVector], responses: &[T], label: usize, cfg: &LimeConfig) -> Result<Attribution<T>> {
    let d = samples.first().map_or(0, BitVector::len);
    if d == 0 {
        return Err(Error::InvalidInput("no samples".into()));
    }
    if let Some(z) = samples.iter().find(|z| z.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: z.len() });
    }
    let rows: Vec<Vec<T>> =
        samples.iter().map(|z| z.bits().iter().map(|&b| if b { T::one() } else { T::zero() }).collect()).collect();
    let weights: Vec<T> = samples.iter().map(|z| proximity(z, cfg.kernel_width)).collect();
    let (intercept, w) = weighted_ridge(&rows, responses, &weights, T::of(cfg.ridge)).map_err(|e| match e {
        Error::Numerical(m) if cfg.ridge == 0.0 => Error::Numerical(format!("{m}; use ridge > 0")),
        other => other,
    })?;
    Attribution::new(intercept, w, label)
}

/// Local linear surrogate of the explained label's score. The explained
/// input is always the first sample.
pub fn explain_lime<T: Scalar, R: Rng + ?Sized>(ctx: &ExplainContext<'_>, cfg: &LimeConfig, rng: &mut R) -> Result<Attribution<T>> {
    let d = ctx.d();
    cfg.validate(d)?;
    let mut samples = vec![BitVector::ones(d)];
    samples.extend(sample_bitvectors(d, cfg.n_samples - 1, &cfg.strategy, rng));
    let responses: Vec<T> = ctx.evaluate(&samples)?.iter().map(|p| T::of(ctx.response(p))).collect();
    fit_lime(&samples, &responses, ctx.label(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnModel, Prediction};
    use crate::perturb::seeded_rng;

    fn exact(d: usize) -> LimeConfig {
        LimeConfig { ridge: 0.0, n_samples: 1 << d, ..LimeConfig::default() }
    }

    #[test]
    fn recovers_two_bit_linear_target() {
        // four points, three unknowns, exact fit: the normal equations give
        // the generating coefficients for any positive weights
        let samples: Vec<BitVector> = BitVector::enumerate(2).collect();
        let y: Vec<f64> = samples.iter().map(|z| 2.0 * f64::from(u8::from(z.get(0))) - f64::from(u8::from(z.get(1))) + 3.0).collect();
        let a = fit_lime(&samples, &y, 0, &exact(2)).unwrap();
        assert!((a.weights[0] - 2.0).abs() <= 1e-9);
        assert!((a.weights[1] + 1.0).abs() <= 1e-9);
        assert!((a.intercept - 3.0).abs() <= 1e-9);
    }

    #[test]
    fn two_point_line() {
        let samples = vec![BitVector::zeros(1), BitVector::ones(1)];
        let a = fit_lime(&samples, &[0.0f64, 1.0], 1, &exact(1)).unwrap();
        assert!((a.weights[0] - 1.0).abs() < 1e-9 && a.intercept.abs() < 1e-9);
    }

    #[test]
    fn constant_model_gives_zero_weights() {
        let m = FnModel(|_: &BitVector| Prediction::with_scores(0, vec![0.7, 0.3]));
        let ctx = ExplainContext::new(&m, 5).unwrap();
        let a: Attribution<f64> = explain_lime(&ctx, &LimeConfig::default(), &mut seeded_rng(1)).unwrap();
        assert!(a.weights.iter().all(|w| w.abs() < 1e-9));
        assert!((a.intercept - 0.7).abs() < 1e-9);
    }

    #[test]
    fn singular_without_ridge_is_reported() {
        let samples = vec![BitVector::ones(2), BitVector::ones(2), BitVector::ones(2)];
        let err = fit_lime(&samples, &[1.0, 1.0, 1.0], 0, &exact(2)).unwrap_err();
        assert!(err.to_string().contains("ridge > 0"), "{err}");
    }

    #[test]
    fn recovers_linear_scores_f32() {
        let w = [0.1, -0.05, 0.2, 0.0, 0.08];
        let m = FnModel(move |z: &BitVector| {
            let p = 0.3 + z.ones_indices().map(|i| w[i]).sum::<f64>();
            Prediction::with_scores(usize::from(p >= 0.5), vec![1.0 - p, p])
        });
        let ctx = ExplainContext::new(&m, 5).unwrap();
        let cfg = LimeConfig { ridge: 1e-6, ..LimeConfig::default() };
        let a: Attribution<f32> = explain_lime(&ctx, &cfg, &mut seeded_rng(9)).unwrap();
        assert_eq!(a.label, 1);
        for (got, want) in a.weights.iter().zip(w) {
            assert!((f64::from(*got) - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(LimeConfig { kernel_width: 0.0, ..LimeConfig::default() }.validate(3).is_err());
        assert!(LimeConfig { n_samples: 3, ..LimeConfig::default() }.validate(3).is_err());
    }
}
