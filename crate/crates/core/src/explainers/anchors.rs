//! Anchors: beam search over conjunctions of predicates, with KL-LUCB
//! deciding which candidates survive each round.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kl::{kl_bernoulli_bounds, lucb_beta};
use crate::error::{Error, Result};
use crate::model::ExplainContext;
use crate::perturb::{sample_bitvectors, Strategy};
use crate::predicate::{AnchorRule, BitVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    pub precision_target: f64,
    pub tolerance: f64,
    pub confidence: f64,
    pub beam_width: usize,
    pub batch: usize,
    /// Defaults to `d`.
    pub max_anchor_size: Option<usize>,
    /// Bernoulli rate for predicates outside the candidate.
    pub q: f64,
    /// Size of the fixed sample set used to estimate coverage.
    pub coverage_samples: usize,
    pub max_samples_per_candidate: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            precision_target: 0.95,
            tolerance: 0.10,
            confidence: 0.05,
            beam_width: 4,
            batch: 16,
            max_anchor_size: None,
            q: 0.5,
            coverage_samples: 1000,
            max_samples_per_candidate: 2000,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.precision_target > 0.0 && self.precision_target <= 1.0) {
            return Err(Error::InvalidInput("precision target must lie in (0,1]".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) || !(self.tolerance >= 0.0) {
            return Err(Error::InvalidInput("confidence must lie in (0,1) and tolerance be >= 0".into()));
        }
        if self.beam_width == 0 || self.batch == 0 || self.coverage_samples == 0 {
            return Err(Error::InvalidInput("beam width, batch and coverage samples must be positive".into()));
        }
        Strategy::Bernoulli { q: self.q }.validate()
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Arm {
    n: usize,
    hits: usize,
}

impl Arm {
    fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.hits as f64 / self.n as f64
        }
    }
}

type Candidate = BTreeSet<usize>;

struct Search<'c, 'm, R: ?Sized> {
    ctx: &'c ExplainContext<'m>,
    cfg: &'c AnchorConfig,
    rng: &'c mut R,
    arms: HashMap<Candidate, Arm>,
    coverage_set: Vec<BitVector>,
    t: usize,
}

impl<R: Rng + ?Sized> Search<'_, '_, R> {
    fn pull(&mut self, c: &Candidate) -> Result<()> {
        let strategy = Strategy::AnchorConditional { anchor: c.clone(), negated: BTreeSet::new(), q: self.cfg.q };
        let zs = sample_bitvectors(self.ctx.d(), self.cfg.batch, &strategy, self.rng);
        let y = self.ctx.label();
        let hits = self.ctx.labels(&zs)?.into_iter().filter(|&l| l == y).count();
        let arm = self.arms.entry(c.clone()).or_default();
        arm.n += zs.len();
        arm.hits += hits;
        Ok(())
    }

    fn arm(&self, c: &Candidate) -> Arm {
        self.arms.get(c).copied().unwrap_or_default()
    }

    fn coverage(&self, c: &Candidate) -> f64 {
        let hit = self.coverage_set.iter().filter(|z| c.iter().all(|&i| z.get(i))).count();
        hit as f64 / self.coverage_set.len() as f64
    }

    fn exhausted(&self, c: &Candidate) -> bool {
        self.arm(c).n >= self.cfg.max_samples_per_candidate
    }

    fn bounds(&self, c: &Candidate, beta: f64) -> (f64, f64) {
        let a = self.arm(c);
        kl_bernoulli_bounds(a.mean(), a.n.max(1), beta)
    }

    /// KL-LUCB: the `k` candidates with (approximately) highest precision.
    fn top_k(&mut self, cands: &[Candidate], k: usize) -> Result<Vec<Candidate>> {
        let order = |s: &Self| {
            let mut idx: Vec<usize> = (0..cands.len()).collect();
            idx.sort_by(|&a, &b| s.arm(&cands[b]).mean().total_cmp(&s.arm(&cands[a]).mean()).then(a.cmp(&b)));
            idx
        };
        if cands.len() <= k {
            return Ok(order(self).into_iter().map(|i| cands[i].clone()).collect());
        }
        loop {
            self.t += 1;
            let idx = order(self);
            let (top, rest) = idx.split_at(k);
            let beta = lucb_beta(cands.len(), self.t, self.cfg.confidence);
            let ut = *rest
                .iter()
                .max_by(|&&a, &&b| self.bounds(&cands[a], beta).1.total_cmp(&self.bounds(&cands[b], beta).1).then(b.cmp(&a)))
                .expect("non-empty");
            let lt = *top
                .iter()
                .min_by(|&&a, &&b| self.bounds(&cands[a], beta).0.total_cmp(&self.bounds(&cands[b], beta).0).then(a.cmp(&b)))
                .expect("non-empty");
            let gap = self.bounds(&cands[ut], beta).1 - self.bounds(&cands[lt], beta).0;
            if gap <= self.cfg.tolerance || (self.exhausted(&cands[ut]) && self.exhausted(&cands[lt])) {
                return Ok(top.iter().map(|&i| cands[i].clone()).collect());
            }
            for i in [ut, lt] {
                if !self.exhausted(&cands[i]) {
                    self.pull(&cands[i])?;
                }
            }
        }
    }

    /// Sample `c` until its precision is confidently above `tau - eps`
    /// (accept) or below `tau` (reject), or its budget runs out.
    fn verify(&mut self, c: &Candidate, n_arms: usize) -> Result<bool> {
        let (tau, eps) = (self.cfg.precision_target, self.cfg.tolerance);
        loop {
            self.t += 1;
            let beta = lucb_beta(n_arms, self.t, self.cfg.confidence);
            let mean = self.arm(c).mean();
            let (lb, ub) = self.bounds(c, beta);
            if mean >= tau && lb > tau - eps {
                return Ok(true);
            }
            if ub < tau || self.exhausted(c) {
                return Ok(false);
            }
            self.pull(c)?;
        }
    }
}

fn lex_key(c: &Candidate) -> Vec<usize> {
    c.iter().copied().collect()
}

/// Highest coverage first, then fewer predicates, then lexicographic ids.
fn better(a: (&Candidate, f64), b: (&Candidate, f64)) -> bool {
    a.1 > b.1 || (a.1 == b.1 && (a.0.len() < b.0.len() || (a.0.len() == b.0.len() && lex_key(a.0) < lex_key(b.0))))
}

/// Search for a high-precision anchor around the explained input.
///
/// Each round extends the beam by one predicate, keeps candidates whose
/// coverage could still beat the best accepted anchor, selects the top
/// `beam_width` by KL-LUCB and verifies them. If nothing is ever accepted
/// the most precise candidate seen is returned with `converged = false`.
pub fn explain_anchors<R: Rng + ?Sized>(ctx: &ExplainContext<'_>, cfg: &AnchorConfig, rng: &mut R) -> Result<AnchorRule> {
    cfg.validate()?;
    let d = ctx.d();
    let max_size = cfg.max_anchor_size.unwrap_or(d).min(d);
    let coverage_set = sample_bitvectors(d, cfg.coverage_samples, &Strategy::Bernoulli { q: cfg.q }, rng);
    let mut s = Search { ctx, cfg, rng, arms: HashMap::new(), coverage_set, t: 0 };

    let mut accepted: Option<(Candidate, f64)> = None;
    let mut fallback: Option<Candidate> = None;
    let mut beam: Vec<Candidate> = Vec::new();

    for size in 0..=max_size {
        let mut cands: Vec<Candidate> = if size == 0 {
            vec![Candidate::new()]
        } else {
            let mut next: BTreeSet<Vec<usize>> = BTreeSet::new();
            for b in &beam {
                for i in (0..d).filter(|i| !b.contains(i)) {
                    let mut c = b.clone();
                    c.insert(i);
                    next.insert(lex_key(&c));
                }
            }
            next.into_iter().map(|v| v.into_iter().collect()).collect()
        };
        if let Some((_, best_cov)) = &accepted {
            cands.retain(|c| s.coverage(c) > *best_cov);
        }
        if cands.is_empty() {
            break;
        }
        for c in &cands {
            if s.arm(c).n == 0 {
                s.pull(c)?;
            }
        }
        let chosen = s.top_k(&cands, cfg.beam_width)?;
        for c in &chosen {
            if s.verify(c, cands.len())? {
                let cov = s.coverage(c);
                if accepted.as_ref().is_none_or(|(a, acov)| better((c, cov), (a, *acov))) {
                    accepted = Some((c.clone(), cov));
                }
            }
        }
        for c in &cands {
            let replace = match &fallback {
                None => true,
                Some(f) => {
                    let (mc, mf) = (s.arm(c).mean(), s.arm(f).mean());
                    mc > mf || (mc == mf && (c.len() < f.len() || (c.len() == f.len() && lex_key(c) < lex_key(f))))
                }
            };
            if replace {
                fallback = Some(c.clone());
            }
        }
        beam = chosen;
    }

    let (members, converged) = match accepted {
        Some((c, _)) => (c, true),
        None => (fallback.unwrap_or_default(), false),
    };
    let coverage = s.coverage(&members);
    Ok(AnchorRule {
        precision_estimate: s.arm(&members).mean(),
        coverage_estimate: coverage,
        confidence: cfg.confidence,
        members,
        label: ctx.label(),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnModel, Prediction};
    use crate::perturb::seeded_rng;

    fn conj(q: &'static [usize]) -> FnModel<impl Fn(&BitVector) -> Prediction + Sync> {
        FnModel(move |z: &BitVector| Prediction::label_only(usize::from(q.iter().all(|&i| z.get(i)))))
    }

    fn exhaustive_precision(q: &Candidate, f: impl Fn(&BitVector) -> bool, d: usize) -> f64 {
        let covered: Vec<BitVector> = BitVector::enumerate(d).filter(|z| q.iter().all(|&i| z.get(i))).collect();
        covered.iter().filter(|z| f(z)).count() as f64 / covered.len() as f64
    }

    #[test]
    fn recovers_planted_pair() {
        let m = conj(&[1, 3]);
        let ctx = ExplainContext::new(&m, 5).unwrap();
        let a = explain_anchors(&ctx, &AnchorConfig::default(), &mut seeded_rng(2)).unwrap();
        assert!(a.converged);
        assert_eq!(a.members, BTreeSet::from([1, 3]));
        assert!(a.precision_estimate >= 0.95);
        // exhaustive check over 2^5: {1,3} is exact, proper subsets are not
        let f = |z: &BitVector| z.get(1) && z.get(3);
        assert_eq!(exhaustive_precision(&a.members, f, 5), 1.0);
        assert!(exhaustive_precision(&BTreeSet::from([1]), f, 5) < 1.0);
        assert!(exhaustive_precision(&BTreeSet::from([3]), f, 5) < 1.0);
    }

    #[test]
    fn constant_model_yields_empty_anchor() {
        let m = FnModel(|_: &BitVector| Prediction::label_only(1));
        let ctx = ExplainContext::new(&m, 6).unwrap();
        let a = explain_anchors(&ctx, &AnchorConfig::default(), &mut seeded_rng(0)).unwrap();
        assert!(a.converged && a.members.is_empty());
        assert_eq!(a.coverage_estimate, 1.0);
    }

    #[test]
    fn unattainable_target_is_flagged() {
        // label depends on a pseudo-random hash of the vector, so no small
        // conjunction is perfectly precise
        let m = FnModel(|z: &BitVector| {
            let h = z.ones_indices().fold(17u64, |h, i| h.wrapping_mul(31).wrapping_add(i as u64 + 7));
            Prediction::label_only(usize::from(z.is_all_ones() || h % 3 != 0))
        });
        let ctx = ExplainContext::new(&m, 6).unwrap();
        let cfg = AnchorConfig {
            precision_target: 1.0,
            tolerance: 0.0,
            max_anchor_size: Some(2),
            max_samples_per_candidate: 200,
            ..AnchorConfig::default()
        };
        let a = explain_anchors(&ctx, &cfg, &mut seeded_rng(3)).unwrap();
        assert!(!a.converged);
        assert!(a.members.len() <= 2);
    }

    #[test]
    fn same_seed_same_anchor() {
        let m = conj(&[0, 4, 5]);
        let ctx = ExplainContext::new(&m, 8).unwrap();
        let a = explain_anchors(&ctx, &AnchorConfig::default(), &mut seeded_rng(10)).unwrap();
        let ctx2 = ExplainContext::new(&m, 8).unwrap();
        let b = explain_anchors(&ctx2, &AnchorConfig::default(), &mut seeded_rng(10)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.members, BTreeSet::from([0, 4, 5]));
    }
}
