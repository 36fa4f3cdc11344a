//! The black box as seen by the learners: a function from predicate
//! representations to model outputs, with per-run memoization.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::RwLock;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predicate::BitVector;

/// Model output for one input: the predicted label and, when the backend
/// exposes them, per-class scores (probabilities for real classifiers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

impl Prediction {
    pub fn label_only(label: usize) -> Self {
        Prediction { label, scores: None }
    }

    pub fn with_scores(label: usize, scores: Vec<f64>) -> Self {
        Prediction { label, scores: Some(scores) }
    }

    /// Score of `label`, if scores are exposed.
    pub fn score(&self, label: usize) -> Option<f64> {
        self.scores.as_ref().and_then(|s| s.get(label).copied())
    }
}

/// Model evaluated on predicate representations (realizer + black box).
pub trait BitModel: Sync {
    fn predict_bits(&self, batch: &[BitVector]) -> Result<Vec<Prediction>>;
}

/// Model evaluated on raw inputs.
pub trait InputModel<I>: Sync {
    fn predict_batch(&self, inputs: &[I]) -> Result<Vec<Prediction>>;
}

/// Maps a predicate representation back to a model input.
pub trait Realizer: Sync {
    type Input: Send;
    fn realize(&self, z: &BitVector) -> Result<Self::Input>;
}

impl<M: BitModel + ?Sized> BitModel for &M {
    fn predict_bits(&self, batch: &[BitVector]) -> Result<Vec<Prediction>> {
        (**self).predict_bits(batch)
    }
}

impl<M: BitModel + ?Sized + Send> BitModel for Box<M> {
    fn predict_bits(&self, batch: &[BitVector]) -> Result<Vec<Prediction>> {
        (**self).predict_bits(batch)
    }
}

impl<I, M: InputModel<I> + ?Sized> InputModel<I> for &M {
    fn predict_batch(&self, inputs: &[I]) -> Result<Vec<Prediction>> {
        (**self).predict_batch(inputs)
    }
}

impl<I, M: InputModel<I> + ?Sized + Send> InputModel<I> for Box<M> {
    fn predict_batch(&self, inputs: &[I]) -> Result<Vec<Prediction>> {
        (**self).predict_batch(inputs)
    }
}

impl<I, M: InputModel<I> + ?Sized + Send> InputModel<I> for std::sync::Arc<M> {
    fn predict_batch(&self, inputs: &[I]) -> Result<Vec<Prediction>> {
        (**self).predict_batch(inputs)
    }
}

/// A closure over bit vectors, for planted models and tests.
pub struct FnModel<F>(pub F);

impl<F> BitModel for FnModel<F>
where
    F: Fn(&BitVector) -> Prediction + Sync,
{
    fn predict_bits(&self, batch: &[BitVector]) -> Result<Vec<Prediction>> {
        Ok(batch.iter().map(&self.0).collect())
    }
}

/// Realizes every vector, then sends the realized inputs as one batch.
pub struct RealizedModel<R, M> {
    pub realizer: R,
    pub model: M,
}

impl<R, M> BitModel for RealizedModel<R, M>
where
    R: Realizer,
    M: InputModel<R::Input>,
{
    fn predict_bits(&self, batch: &[BitVector]) -> Result<Vec<Prediction>> {
        let inputs = batch.par_iter().map(|z| self.realizer.realize(z)).collect::<Result<Vec<_>>>()?;
        self.model.predict_batch(&inputs)
    }
}

/// Per-explanation view of the model: knows the explained output `f(x)`
/// and memoizes every bit vector it has evaluated.
pub struct ExplainContext<'a> {
    model: &'a dyn BitModel,
    d: usize,
    original: Prediction,
    cache: RwLock<HashMap<BitVector, Prediction>>,
    queries: AtomicUsize,
}

impl<'a> ExplainContext<'a> {
    pub fn new(model: &'a dyn BitModel, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("predicate space is empty".into()));
        }
        let ones = BitVector::ones(d);
        let original = model
            .predict_bits(std::slice::from_ref(&ones))?
            .pop()
            .ok_or_else(|| Error::Protocol("model returned no output".into()))?;
        let mut cache = HashMap::new();
        cache.insert(ones, original.clone());
        Ok(ExplainContext { model, d, original, cache: RwLock::new(cache), queries: AtomicUsize::new(1) })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// The explained label `y = f(x)`.
    pub fn label(&self) -> usize {
        self.original.label
    }

    pub fn original(&self) -> &Prediction {
        &self.original
    }

    pub fn has_scores(&self) -> bool {
        self.original.scores.is_some()
    }

    /// Number of distinct vectors sent to the model so far.
    pub fn queries(&self) -> usize {
        self.queries.load(Ordering::Relaxed)
    }

    /// Outputs in submission order. Vectors already seen are served from
    /// the cache; the rest go to the model as a single batch.
    pub fn evaluate(&self, batch: &[BitVector]) -> Result<Vec<Prediction>> {
        if let Some(z) = batch.iter().find(|z| z.len() != self.d) {
            return Err(Error::DimensionMismatch { expected: self.d, found: z.len() });
        }
        let mut missing: Vec<BitVector> = {
            let cache = self.cache.read();
            batch.iter().filter(|z| !cache.contains_key(*z)).cloned().collect()
        };
        missing.sort();
        missing.dedup();
        if !missing.is_empty() {
            let out = self.model.predict_bits(&missing)?;
            if out.len() != missing.len() {
                return Err(Error::Protocol(format!(
                    "model returned {} outputs for {} inputs",
                    out.len(),
                    missing.len()
                )));
            }
            self.queries.fetch_add(missing.len(), Ordering::Relaxed);
            let mut cache = self.cache.write();
            for (z, p) in missing.into_iter().zip(out) {
                cache.insert(z, p);
            }
        }
        let cache = self.cache.read();
        Ok(batch.iter().map(|z| cache[z].clone()).collect())
    }

    pub fn labels(&self, batch: &[BitVector]) -> Result<Vec<usize>> {
        Ok(self.evaluate(batch)?.into_iter().map(|p| p.label).collect())
    }

    /// Regression target for attribution learners: the score of the
    /// explained label, or a 0/1 indicator when the backend has no scores.
    pub fn response(&self, p: &Prediction) -> f64 {
        match p.score(self.label()) {
            Some(s) if self.has_scores() => s,
            _ => f64::from(u8::from(p.label == self.label())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Counting<'a>(&'a AtomicUsize);

    impl BitModel for Counting<'_> {
        fn predict_bits(&self, batch: &[BitVector]) -> Result<Vec<Prediction>> {
            self.0.fetch_add(batch.len(), Ordering::SeqCst);
            Ok(batch.iter().map(|z| Prediction::label_only(z.count_ones())).collect())
        }
    }

    #[test]
    fn evaluate_preserves_order_and_caches() {
        let calls = AtomicUsize::new(0);
        let m = Counting(&calls);
        let ctx = ExplainContext::new(&m, 3).unwrap();
        let batch: Vec<BitVector> = ["100", "110", "100", "000", "111"].iter().map(|s| s.parse().unwrap()).collect();
        let labels = ctx.labels(&batch).unwrap();
        assert_eq!(labels, vec![1, 2, 1, 0, 3]);
        // all-ones at construction, then three new distinct vectors
        assert_eq!(calls.load(Ordering::SeqCst), 4);
        ctx.labels(&batch).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 4);
        assert_eq!(ctx.queries(), 4);
    }

    #[test]
    fn response_falls_back_to_indicator() {
        let m = FnModel(|z: &BitVector| Prediction::label_only(usize::from(z.get(0))));
        let ctx = ExplainContext::new(&m, 2).unwrap();
        assert_eq!(ctx.response(&Prediction::label_only(1)), 1.0);
        assert_eq!(ctx.response(&Prediction::label_only(0)), 0.0);

        let s = FnModel(|z: &BitVector| {
            let p = if z.get(0) { 0.8 } else { 0.3 };
            Prediction::with_scores(usize::from(p > 0.5), vec![1.0 - p, p])
        });
        let ctx = ExplainContext::new(&s, 2).unwrap();
        assert!((ctx.response(&Prediction::with_scores(0, vec![0.7, 0.3])) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_length() {
        let m = FnModel(|_: &BitVector| Prediction::label_only(0));
        let ctx = ExplainContext::new(&m, 2).unwrap();
        assert!(ctx.evaluate(&[BitVector::ones(3)]).is_err());
    }
}
