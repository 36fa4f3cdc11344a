//! Fidelity metrics for explanations, plus exhaustive oracles used to check
//! the estimators and learners.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BitModel, ExplainContext};
use crate::perturb::{sample_bitvectors, Strategy};
use crate::predicate::{evaluate_conjunction, top_k_mask, Attribution, BitVector, Rule};
use crate::scalar::Scalar;
use crate::unified::{threshold_predict, unified_predict, UnifiedExplanation};

/// Default AOPC grid: 10, 20, ..., 100.
pub fn default_k_grid() -> Vec<u32> {
    (1..=10).map(|i| i * 10).collect()
}

/// Monte Carlo estimate with a 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_counts(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        Estimate { estimate: p, half_width: 1.96 * (p * (1.0 - p) / n as f64).sqrt(), n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AopcPoint {
    pub k: u32,
    pub aopc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aopc_curve: Option<Vec<AopcPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aopc_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surrogate_accuracy: Option<f64>,
    pub n_samples: usize,
}

/// Fraction of draws from `dist` on which `rule` fires.
pub fn estimate_coverage<R: Rng + ?Sized>(rule: &Rule, d: usize, dist: &Strategy, n: usize, rng: &mut R) -> Result<Estimate> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    dist.validate()?;
    if let Some(m) = rule.max_id().filter(|&m| m >= d) {
        return Err(Error::DimensionMismatch { expected: d, found: m + 1 });
    }
    let hits = sample_bitvectors(d, n, dist, rng).iter().filter(|z| rule.covers_unchecked(z)).count();
    Ok(Estimate::from_counts(hits, n))
}

/// Fraction of covered samples on which the model predicts `rule.label`.
/// Samples are drawn with the rule's predicates forced (Bernoulli(`q`)
/// elsewhere), so every draw is covered.
pub fn estimate_precision<R: Rng + ?Sized>(rule: &Rule, ctx: &ExplainContext<'_>, q: f64, n: usize, rng: &mut R) -> Result<Estimate> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    if !rule.is_satisfiable() {
        return Err(Error::UndefinedPrecision(format!("rule {rule} covers no input")));
    }
    if let Some(m) = rule.max_id().filter(|&m| m >= ctx.d()) {
        return Err(Error::DimensionMismatch { expected: ctx.d(), found: m + 1 });
    }
    let dist = Strategy::AnchorConditional { anchor: rule.positive.clone(), negated: rule.negative.clone(), q };
    dist.validate()?;
    let zs = sample_bitvectors(ctx.d(), n, &dist, rng);
    let hits = ctx.labels(&zs)?.into_iter().filter(|&l| l == rule.label).count();
    Ok(Estimate::from_counts(hits, n))
}

/// `p(y|x) - p(y|x^(k))` for each `k`, masking the top `k%` positively
/// contributing predicates. Needs a backend that exposes scores.
pub fn aopc_curve<T: Scalar>(ctx: &ExplainContext<'_>, attr: &Attribution<T>, ks: &[u32]) -> Result<Vec<AopcPoint>> {
    if !ctx.has_scores() {
        return Err(Error::UnsupportedMetric("AOPC needs output probabilities, which this backend does not expose".into()));
    }
    if attr.d() != ctx.d() {
        return Err(Error::DimensionMismatch { expected: ctx.d(), found: attr.d() });
    }
    let y = attr.label;
    let base = ctx
        .original()
        .score(y)
        .ok_or_else(|| Error::Protocol(format!("no score for label {y}")))?;
    let masks = ks.iter().map(|&k| top_k_mask(attr, k)).collect::<Result<Vec<_>>>()?;
    let preds = ctx.evaluate(&masks)?;
    ks.iter()
        .zip(preds)
        .map(|(&k, p)| {
            let s = p.score(y).ok_or_else(|| Error::Protocol(format!("no score for label {y}")))?;
            Ok(AopcPoint { k, aopc: base - s })
        })
        .collect()
}

/// Point-wise mean of per-instance curves over the same grid.
pub fn average_curves(curves: &[Vec<AopcPoint>]) -> Result<Vec<AopcPoint>> {
    let Some(first) = curves.first() else {
        return Ok(Vec::new());
    };
    let mut out = first.clone();
    for c in &curves[1..] {
        if c.len() != out.len() || c.iter().zip(&out).any(|(a, b)| a.k != b.k) {
            return Err(Error::InvalidInput("AOPC curves use different k grids".into()));
        }
        for (o, p) in out.iter_mut().zip(c) {
            o.aopc += p.aopc;
        }
    }
    for o in &mut out {
        o.aopc /= curves.len() as f64;
    }
    Ok(out)
}

pub fn aopc_mean(curve: &[AopcPoint]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    curve.iter().map(|p| p.aopc).sum::<f64>() / curve.len() as f64
}

/// Fraction of `(instance, k)` pairs whose masked input keeps the original
/// label; lower means the attribution found the predicates that matter.
pub fn accuracy_a<T: Scalar>(instances: &[(&ExplainContext<'_>, &Attribution<T>)], ks: &[u32]) -> Result<f64> {
    if ks.is_empty() || instances.is_empty() {
        return Err(Error::InvalidInput("accuracy_a needs instances and a non-empty k grid".into()));
    }
    let mut same = 0usize;
    for (ctx, attr) in instances {
        let masks = ks.iter().map(|&k| top_k_mask(*attr, k)).collect::<Result<Vec<_>>>()?;
        same += ctx.labels(&masks)?.into_iter().filter(|&l| l == ctx.label()).count();
    }
    Ok(same as f64 / (instances.len() * ks.len()) as f64)
}

/// A local surrogate that predicts labels on bit vectors.
pub trait Surrogate {
    fn predict(&self, z: &BitVector) -> Result<usize>;
}

impl<T: Scalar> Surrogate for UnifiedExplanation<T> {
    fn predict(&self, z: &BitVector) -> Result<usize> {
        unified_predict(self, z)
    }
}

/// An attribution read as a classifier: its label at or above `threshold`.
pub struct Thresholded<'a, T> {
    pub attribution: &'a Attribution<T>,
    pub threshold: T,
    pub contrast: usize,
}

impl<T: Scalar> Surrogate for Thresholded<'_, T> {
    fn predict(&self, z: &BitVector) -> Result<usize> {
        threshold_predict(self.attribution, self.threshold, self.contrast, z)
    }
}

/// The model itself, as a surrogate.
pub struct ModelSurrogate<'a, 'm>(pub &'a ExplainContext<'m>);

impl Surrogate for ModelSurrogate<'_, '_> {
    fn predict(&self, z: &BitVector) -> Result<usize> {
        Ok(self.0.labels(std::slice::from_ref(z))?[0])
    }
}

fn agreement(surrogate: &dyn Surrogate, ctx: &ExplainContext<'_>, zs: &[BitVector], reduce_to_same: bool) -> Result<f64> {
    let labels = ctx.labels(zs)?;
    let y = ctx.label();
    let mut agree = 0usize;
    for (z, l) in zs.iter().zip(labels) {
        let g = surrogate.predict(z)?;
        let ok = if reduce_to_same { (g == y) == (l == y) } else { g == l };
        agree += usize::from(ok);
    }
    Ok(agree as f64 / zs.len() as f64)
}

/// Accuracy of the surrogate against the model over `n` draws from `dist`.
/// With `reduce_to_same`, both sides are compared only as
/// "same label as the explained input" or not.
pub fn surrogate_fidelity<R: Rng + ?Sized>(
    surrogate: &dyn Surrogate,
    ctx: &ExplainContext<'_>,
    dist: &Strategy,
    n: usize,
    reduce_to_same: bool,
    rng: &mut R,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let zs = sample_bitvectors(ctx.d(), n, dist, rng);
    agreement(surrogate, ctx, &zs, reduce_to_same)
}

/// Surrogate accuracy over all `2^d` vectors (uniform bits).
pub fn exhaustive_surrogate_fidelity(surrogate: &dyn Surrogate, ctx: &ExplainContext<'_>, reduce_to_same: bool) -> Result<f64> {
    if ctx.d() > 20 {
        return Err(Error::Budget(format!("2^{} vectors is too many to enumerate", ctx.d())));
    }
    let zs: Vec<BitVector> = BitVector::enumerate(ctx.d()).collect();
    agreement(surrogate, ctx, &zs, reduce_to_same)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Exact Shapley values by enumerating every coalition:
/// `phi_i = sum_{S not containing i} |S|! (d-|S|-1)! / d! (v(S+i) - v(S))`.
pub fn exact_shapley_oracle(value: impl Fn(&BitVector) -> f64, d: usize) -> Result<Vec<f64>> {
    if d > 15 {
        return Err(Error::Budget(format!("exact Shapley enumeration is limited to d <= 15, got {d}")));
    }
    let values: Vec<f64> = (0..1u64 << d).map(|m| value(&BitVector::from_mask(d, m))).collect();
    let coef: Vec<f64> = (0..d).map(|s| factorial(s) * factorial(d - s - 1) / factorial(d)).collect();
    Ok((0..d)
        .map(|i| {
            (0..1usize << d)
                .filter(|m| m & (1 << i) == 0)
                .map(|m| coef[m.count_ones() as usize] * (values[m | (1 << i)] - values[m]))
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleStats {
    pub coverage: f64,
    /// `None` when the rule covers nothing.
    pub precision: Option<f64>,
}

/// Exact coverage and precision of `rule` under uniform bits, by full
/// enumeration of `{0,1}^d`.
pub fn brute_force_rule_stats(rule: &Rule, model: &dyn BitModel, d: usize) -> Result<RuleStats> {
    if d > 20 {
        return Err(Error::Budget(format!("2^{d} vectors is too many to enumerate")));
    }
    let mut covered = Vec::new();
    for z in BitVector::enumerate(d) {
        if evaluate_conjunction(rule, &z)? {
            covered.push(z);
        }
    }
    let coverage = covered.len() as f64 / (1u64 << d) as f64;
    if covered.is_empty() {
        return Ok(RuleStats { coverage, precision: None });
    }
    let mut agree = 0usize;
    for chunk in covered.chunks(4096) {
        agree += model.predict_bits(chunk)?.into_iter().filter(|p| p.label == rule.label).count();
    }
    Ok(RuleStats { coverage, precision: Some(agree as f64 / covered.len() as f64) })
}

/// CSV rendering of an AOPC curve (`k,aopc`).
pub fn aopc_csv(curve: &[AopcPoint]) -> String {
    let mut out = String::from("k,aopc\n");
    for p in curve {
        out.push_str(&format!("{},{}\n", p.k, p.aopc));
    }
    out
}
