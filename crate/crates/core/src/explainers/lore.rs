//! LORE: a genetic neighborhood around the explained input, a decision
//! tree on it, and factual/counterfactual rules read off the tree.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_decision_tree, DecisionTree, TreeConfig};
use crate::error::{Error, Result};
use crate::model::ExplainContext;
use crate::perturb::{sample_bitvectors, Strategy};
use crate::predicate::{BitVector, Rule, RuleSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoreConfig {
    pub ngen: usize,
    pub population: usize,
    pub crossover_p: f64,
    pub mutation_p: f64,
    pub tree: TreeConfig,
    pub max_counterfactuals: usize,
}

impl Default for LoreConfig {
    fn default() -> Self {
        LoreConfig {
            ngen: 5,
            population: 100,
            crossover_p: 0.7,
            mutation_p: 0.2,
            tree: TreeConfig::default(),
            max_counterfactuals: 3,
        }
    }
}

impl LoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngen == 0 || self.population < 4 || !self.population.is_multiple_of(2) {
            return Err(Error::InvalidInput("lore needs ngen >= 1 and an even population >= 4".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_p) || !(0.0..=1.0).contains(&self.mutation_p) {
            return Err(Error::InvalidInput("crossover and mutation probabilities must lie in [0,1]".into()));
        }
        Ok(())
    }
}

const TOURNAMENT: usize = 3;

fn tournament<'p, R: Rng + ?Sized>(pop: &'p [BitVector], fit: &[f64], rng: &mut R) -> &'p BitVector {
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..TOURNAMENT {
        let c = rng.gen_range(0..pop.len());
        if fit[c] > fit[best] {
            best = c;
        }
    }
    &pop[best]
}

fn two_point_crossover<R: Rng + ?Sized>(a: &BitVector, b: &BitVector, rng: &mut R) -> (BitVector, BitVector) {
    let d = a.len();
    let (mut i, mut j) = (rng.gen_range(0..=d), rng.gen_range(0..=d));
    if i > j {
        std::mem::swap(&mut i, &mut j);
    }
    let (mut x, mut y) = (a.bits().to_vec(), b.bits().to_vec());
    x[i..j].copy_from_slice(&b.bits()[i..j]);
    y[i..j].copy_from_slice(&a.bits()[i..j]);
    (BitVector::new(x), BitVector::new(y))
}

fn mutate<R: Rng + ?Sized>(z: BitVector, p: f64, rng: &mut R) -> BitVector {
    BitVector::new(z.bits().iter().map(|&b| if rng.gen_bool(p) { !b } else { b }).collect())
}

fn evolve<R: Rng + ?Sized>(
    ctx: &ExplainContext<'_>,
    cfg: &LoreConfig,
    same_label: bool,
    rng: &mut R,
) -> Result<Vec<BitVector>> {
    let d = ctx.d();
    let y = ctx.label();
    let mut pop = sample_bitvectors(d, cfg.population, &Strategy::Bernoulli { q: 0.5 }, rng);
    for _ in 0..cfg.ngen {
        let labels = ctx.labels(&pop)?;
        let fit: Vec<f64> = pop
            .iter()
            .zip(&labels)
            .map(|(z, &l)| {
                let hit = if same_label { l == y } else { l != y };
                f64::from(u8::from(hit)) + 1.0 - (d - z.count_ones()) as f64 / d as f64
            })
            .collect();
        let mut next = Vec::with_capacity(cfg.population);
        while next.len() < cfg.population {
            let a = tournament(&pop, &fit, rng).clone();
            let b = tournament(&pop, &fit, rng).clone();
            let (a, b) = if rng.gen_bool(cfg.crossover_p) { two_point_crossover(&a, &b, rng) } else { (a, b) };
            next.push(mutate(a, cfg.mutation_p, rng));
            next.push(mutate(b, cfg.mutation_p, rng));
        }
        pop = next;
    }
    Ok(pop)
}

/// Two populations evolved for `ngen` generations: one rewarded for keeping
/// the explained label, one for changing it, both for staying close to the
/// explained input. Returns both final populations followed by all-ones.
pub fn genetic_neighborhood<R: Rng + ?Sized>(ctx: &ExplainContext<'_>, cfg: &LoreConfig, rng: &mut R) -> Result<Vec<BitVector>> {
    cfg.validate()?;
    let mut out = evolve(ctx, cfg, true, rng)?;
    out.extend(evolve(ctx, cfg, false, rng)?);
    out.push(BitVector::ones(ctx.d()));
    Ok(out)
}

/// Factual rule from the explained input's leaf, counterfactual rules from
/// every leaf predicting another label, fewest negated predicates first.
pub fn extract_rules(tree: &DecisionTree, label: usize, max_counterfactuals: usize) -> RuleSet {
    let leaves = tree.leaves();
    let factual = leaves
        .iter()
        .find(|l| l.zeros.is_empty())
        .map(|l| Rule::new(l.ones.iter().copied(), [], label))
        .unwrap_or_else(|| Rule::empty(label));
    let mut cfs: Vec<Rule> = leaves
        .iter()
        .filter(|l| l.label != label)
        .map(|l| Rule::new(l.ones.iter().copied(), l.zeros.iter().copied(), l.label))
        .collect();
    cfs.sort_by(|a, b| {
        a.change_count()
            .cmp(&b.change_count())
            .then(a.len().cmp(&b.len()))
            .then_with(|| a.negative.iter().cmp(b.negative.iter()))
            .then_with(|| a.positive.iter().cmp(b.positive.iter()))
    });
    cfs.truncate(max_counterfactuals);
    RuleSet { factual, counterfactuals: cfs }
}

/// Neighborhood, labels, tree and rules, also returning the fitted tree.
pub fn explain_lore_with_tree<R: Rng + ?Sized>(
    ctx: &ExplainContext<'_>,
    cfg: &LoreConfig,
    rng: &mut R,
) -> Result<(RuleSet, DecisionTree)> {
    let zs = genetic_neighborhood(ctx, cfg, rng)?;
    let labels = ctx.labels(&zs)?;
    let samples: Vec<(BitVector, usize)> = zs.into_iter().zip(labels).collect();
    let tree = fit_decision_tree(&samples, &cfg.tree, ctx.label())?;
    Ok((extract_rules(&tree, ctx.label(), cfg.max_counterfactuals), tree))
}

pub fn explain_lore<R: Rng + ?Sized>(ctx: &ExplainContext<'_>, cfg: &LoreConfig, rng: &mut R) -> Result<RuleSet> {
    explain_lore_with_tree(ctx, cfg, rng).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnModel, Prediction};
    use crate::perturb::seeded_rng;
    use crate::predicate::evaluate_conjunction;

    fn model(f: impl Fn(&BitVector) -> bool + Sync) -> FnModel<impl Fn(&BitVector) -> Prediction + Sync> {
        FnModel(move |z: &BitVector| Prediction::label_only(usize::from(f(z))))
    }

    #[test]
    fn neighborhood_contains_original_and_both_populations() {
        let m = model(|_| true);
        let ctx = ExplainContext::new(&m, 6).unwrap();
        let cfg = LoreConfig::default();
        let zs = genetic_neighborhood(&ctx, &cfg, &mut seeded_rng(1)).unwrap();
        assert_eq!(zs.len(), 2 * cfg.population + 1);
        assert!(zs.last().unwrap().is_all_ones());
        // every vector keeps the constant label
        assert!(ctx.labels(&zs).unwrap().iter().filter(|&&l| l == 1).count() >= cfg.population / 2);
    }

    #[test]
    fn counter_population_moves_away_from_label() {
        let m = model(|z| z.get(1));
        let ctx = ExplainContext::new(&m, 8).unwrap();
        let cfg = LoreConfig::default();
        let b = evolve(&ctx, &cfg, false, &mut seeded_rng(7)).unwrap();
        let zero = b.iter().filter(|z| !z.get(1)).count();
        assert!(zero * 2 > b.len(), "{zero} of {}", b.len());
    }

    #[test]
    fn rules_from_single_bit_tree() {
        let samples: Vec<(BitVector, usize)> = BitVector::enumerate(3).map(|z| {
            let l = usize::from(z.get(1));
            (z, l)
        }).collect();
        let tree = fit_decision_tree(&samples, &TreeConfig::default(), 1).unwrap();
        let rules = extract_rules(&tree, 1, 3);
        assert_eq!(rules.factual, Rule::new([1], [], 1));
        assert_eq!(rules.counterfactuals, vec![Rule::new([], [1], 0)]);
        assert_eq!(rules.counterfactuals[0].change_count(), 1);
    }

    #[test]
    fn constant_tree_has_no_counterfactuals() {
        let samples = vec![(BitVector::ones(3), 0), (BitVector::zeros(3), 0)];
        let tree = fit_decision_tree(&samples, &TreeConfig::default(), 0).unwrap();
        let rules = extract_rules(&tree, 0, 3);
        assert!(rules.factual.is_empty() && rules.counterfactuals.is_empty());
    }

    #[test]
    fn counterfactuals_sorted_by_changes() {
        // f = z0 & (z1 | z2): label-0 leaves are z0=0 (one change) and
        // z1=0, z2=0 (two changes)
        let samples: Vec<(BitVector, usize)> = BitVector::enumerate(3).map(|z| {
            let l = usize::from(z.get(0) && (z.get(1) || z.get(2)));
            (z, l)
        }).collect();
        let tree = fit_decision_tree(&samples, &TreeConfig { max_depth: None, min_leaf: 1 }, 1).unwrap();
        let rules = extract_rules(&tree, 1, 3);
        let counts: Vec<usize> = rules.counterfactuals.iter().map(Rule::change_count).collect();
        assert_eq!(counts, vec![1, 2]);
        assert!(rules.validate(3).is_ok());
    }

    #[test]
    fn lore_on_planted_conjunction() {
        let m = model(|z| z.get(1) && z.get(2));
        let ctx = ExplainContext::new(&m, 4).unwrap();
        let rules = explain_lore(&ctx, &LoreConfig::default(), &mut seeded_rng(5)).unwrap();
        assert!(rules.factual.positive.is_superset(&[1, 2].into()));
        for cf in &rules.counterfactuals {
            let covered: Vec<BitVector> =
                BitVector::enumerate(4).filter(|z| evaluate_conjunction(cf, z).unwrap()).collect();
            let agree = covered.iter().filter(|z| usize::from(z.get(1) && z.get(2)) == cf.label).count();
            assert!(agree as f64 / covered.len() as f64 >= 0.9);
        }
        let again = explain_lore(&ExplainContext::new(&m, 4).unwrap(), &LoreConfig::default(), &mut seeded_rng(5)).unwrap();
        assert_eq!(rules, again);
    }

    #[test]
    fn constant_model_gives_empty_rules() {
        let m = model(|_| false);
        let ctx = ExplainContext::new(&m, 5).unwrap();
        let rules = explain_lore(&ctx, &LoreConfig::default(), &mut seeded_rng(0)).unwrap();
        assert!(rules.factual.is_empty() && rules.counterfactuals.is_empty());
    }
}
