//! Predicate spaces, predicate representations and the value semantics of
//! the explanation forms every learner produces.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredicateKind {
    FeatureLevel,
    ConceptLevel,
}

/// One predicate of a space. Feature predicates govern the input features in
/// `feature_indices`; concept predicates leave it empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateDescriptor {
    pub id: usize,
    pub name: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feature_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateSpace {
    pub kind: PredicateKind,
    pub instance_ref: String,
    pub predicates: Vec<PredicateDescriptor>,
    /// Size of the raw feature vector for feature-level spaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_features: Option<usize>,
}

impl PredicateSpace {
    /// Feature-level space; the index sets must partition `0..n_features`.
    pub fn feature_level(
        instance_ref: impl Into<String>,
        predicates: Vec<PredicateDescriptor>,
        n_features: usize,
    ) -> Result<Self> {
        let space = PredicateSpace {
            kind: PredicateKind::FeatureLevel,
            instance_ref: instance_ref.into(),
            predicates,
            n_features: Some(n_features),
        };
        space.validate()?;
        Ok(space)
    }

    pub fn concept_level(
        instance_ref: impl Into<String>,
        predicates: Vec<PredicateDescriptor>,
    ) -> Result<Self> {
        let space = PredicateSpace {
            kind: PredicateKind::ConceptLevel,
            instance_ref: instance_ref.into(),
            predicates,
            n_features: None,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn d(&self) -> usize {
        self.predicates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.predicates.is_empty() {
            return Err(Error::InvalidInput("predicate space is empty".into()));
        }
        for (i, p) in self.predicates.iter().enumerate() {
            if p.id != i {
                return Err(Error::InvalidInput(format!(
                    "predicate at position {i} has id {}",
                    p.id
                )));
            }
            if p.name.trim().is_empty() || p.description.trim().is_empty() {
                return Err(Error::InvalidInput(format!(
                    "predicate {i} needs a non-empty name and description"
                )));
            }
        }
        match self.kind {
            PredicateKind::FeatureLevel => {
                let n = self
                    .n_features
                    .ok_or_else(|| Error::InvalidInput("feature space without size".into()))?;
                let mut seen = vec![false; n];
                for p in &self.predicates {
                    for &j in &p.feature_indices {
                        if j >= n || seen[j] {
                            return Err(Error::InvalidInput(format!(
                                "feature index {j} is out of range or shared between predicates"
                            )));
                        }
                        seen[j] = true;
                    }
                }
                if let Some(j) = seen.iter().position(|s| !s) {
                    return Err(Error::InvalidInput(format!(
                        "feature {j} is not governed by any predicate"
                    )));
                }
            }
            PredicateKind::ConceptLevel => {
                if self.predicates.iter().any(|p| !p.feature_indices.is_empty()) {
                    return Err(Error::InvalidInput(
                        "concept predicates carry no feature indices".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The representation of the explained input itself.
    pub fn original(&self) -> BitVector {
        BitVector::ones(self.d())
    }
}

/// Predicate representation of a sample: bit `i` is 1 iff predicate `i`
/// holds. Serialized as a string of `0`/`1` characters, bit 0 first.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVector {
    bits: Box<[bool]>,
}

impl BitVector {
    pub fn new(bits: Vec<bool>) -> Self {
        BitVector { bits: bits.into_boxed_slice() }
    }

    pub fn ones(d: usize) -> Self {
        Self::new(vec![true; d])
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(vec![false; d])
    }

    /// Bit `i` is bit `i` of `mask`; used to enumerate `{0,1}^d` for `d <= 64`.
    pub fn from_mask(d: usize, mask: u64) -> Self {
        Self::new((0..d).map(|i| (mask >> i) & 1 == 1).collect())
    }

    /// Every vector of length `d`, in mask order.
    pub fn enumerate(d: usize) -> impl Iterator<Item = BitVector> {
        assert!(d < 64, "enumeration is limited to d < 64");
        (0..1u64 << d).map(move |m| BitVector::from_mask(d, m))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_all_ones(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }

    pub fn is_all_zeros(&self) -> bool {
        self.bits.iter().all(|b| !*b)
    }

    /// Copy with bit `i` set to `value`.
    pub fn with(&self, i: usize, value: bool) -> Self {
        let mut bits = self.bits.to_vec();
        bits[i] = value;
        Self::new(bits)
    }

    pub fn hamming(&self, other: &BitVector) -> usize {
        self.bits.iter().zip(other.bits.iter()).filter(|(a, b)| a != b).count()
    }

    pub fn ones_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits.iter() {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

impl FromStr for BitVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.char_indices()
            .map(|(i, c)| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::Parse { offset: i, message: format!("unexpected {c:?} in bit string") }),
            })
            .collect::<Result<Vec<_>>>()
            .map(BitVector::new)
    }
}

impl Serialize for BitVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Conjunction of positive predicates (`positive`) and negated predicates
/// (`negative`) implying `label`. Anchors leave `negative` empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub positive: BTreeSet<usize>,
    #[serde(default)]
    pub negative: BTreeSet<usize>,
    pub label: usize,
}

impl Rule {
    pub fn new(
        positive: impl IntoIterator<Item = usize>,
        negative: impl IntoIterator<Item = usize>,
        label: usize,
    ) -> Self {
        Rule { positive: positive.into_iter().collect(), negative: negative.into_iter().collect(), label }
    }

    /// The rule that holds everywhere.
    pub fn empty(label: usize) -> Self {
        Rule { positive: BTreeSet::new(), negative: BTreeSet::new(), label }
    }

    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty() && self.negative.is_empty()
    }

    /// Conditions that the explained input (all ones) violates.
    pub fn change_count(&self) -> usize {
        self.negative.len()
    }

    pub fn max_id(&self) -> Option<usize> {
        self.positive.iter().chain(self.negative.iter()).copied().max()
    }

    /// Whether the rule can hold at all (no predicate both required and negated).
    pub fn is_satisfiable(&self) -> bool {
        self.positive.is_disjoint(&self.negative)
    }

    /// Cheap coverage test without dimension checks; callers validate first.
    pub(crate) fn covers_unchecked(&self, z: &BitVector) -> bool {
        self.positive.iter().all(|&i| z.get(i)) && self.negative.iter().all(|&i| !z.get(i))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms: Vec<String> = self.positive.iter().map(|i| format!("p{i}")).collect();
        terms.extend(self.negative.iter().map(|i| format!("!p{i}")));
        if terms.is_empty() {
            write!(f, "true => {}", self.label)
        } else {
            write!(f, "{} => {}", terms.join(" & "), self.label)
        }
    }
}

/// `true` iff every predicate of `rule.positive` holds on `z` and none of
/// `rule.negative` does.
pub fn evaluate_conjunction(rule: &Rule, z: &BitVector) -> Result<bool> {
    if let Some(m) = rule.max_id() {
        if m >= z.len() {
            return Err(Error::dims(m + 1, z.len()));
        }
    }
    Ok(rule.covers_unchecked(z))
}

/// Linear surrogate `w_0 + sum_i w_i z_i` for the explained label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution<T> {
    pub intercept: T,
    pub weights: Vec<T>,
    pub label: usize,
}

impl<T: Scalar> Attribution<T> {
    pub fn new(intercept: T, weights: Vec<T>, label: usize) -> Result<Self> {
        if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("attribution contains non-finite values".into()));
        }
        Ok(Attribution { intercept, weights, label })
    }

    pub fn d(&self) -> usize {
        self.weights.len()
    }

    /// Same attribution in another scalar type.
    pub fn cast<U: Scalar>(&self) -> Attribution<U> {
        Attribution {
            intercept: U::of(self.intercept.as_f64()),
            weights: self.weights.iter().map(|w| U::of(w.as_f64())).collect(),
            label: self.label,
        }
    }
}

pub fn evaluate_attribution<T: Scalar>(attr: &Attribution<T>, z: &BitVector) -> Result<T> {
    if attr.weights.len() != z.len() {
        return Err(Error::dims(attr.weights.len(), z.len()));
    }
    Ok(attr
        .weights
        .iter()
        .zip(z.bits())
        .filter(|(_, b)| **b)
        .fold(attr.intercept, |acc, (w, _)| acc + *w))
}

/// Ids with positive weight, strongest first; equal weights keep id order.
pub fn rank_positive_predicates<T: Scalar>(attr: &Attribution<T>) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..attr.weights.len()).filter(|&i| attr.weights[i] > T::zero()).collect();
    // stable sort keeps ascending ids among ties
    ids.sort_by(|&a, &b| attr.weights[b].partial_cmp(&attr.weights[a]).expect("finite weights"));
    ids
}

/// All-ones with the `floor(k% * d)` top-ranked positive predicates cleared,
/// capped at the number of positive predicates.
pub fn top_k_mask<T: Scalar>(attr: &Attribution<T>, k_percent: u32) -> Result<BitVector> {
    if k_percent > 100 {
        return Err(Error::Domain(format!("k must lie in 0..=100, got {k_percent}")));
    }
    let d = attr.d();
    let ranked = rank_positive_predicates(attr);
    let m = (k_percent as usize * d / 100).min(ranked.len());
    let mut bits = vec![true; d];
    for &i in &ranked[..m] {
        bits[i] = false;
    }
    Ok(BitVector::new(bits))
}

/// A sufficient condition for keeping the explained label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRule {
    pub members: BTreeSet<usize>,
    pub label: usize,
    pub precision_estimate: f64,
    pub coverage_estimate: f64,
    pub confidence: f64,
    /// False when the search ran out of candidates or budget before any
    /// anchor reached the precision target.
    pub converged: bool,
}

impl AnchorRule {
    pub fn rule(&self) -> Rule {
        Rule { positive: self.members.clone(), negative: BTreeSet::new(), label: self.label }
    }
}

/// Factual rule for the explained label plus counterfactual rules for other
/// labels, ordered by how many predicates of the input they negate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub factual: Rule,
    pub counterfactuals: Vec<Rule>,
}

impl RuleSet {
    pub fn validate(&self, d: usize) -> Result<()> {
        let ones = BitVector::ones(d);
        if !evaluate_conjunction(&self.factual, &ones)? {
            return Err(Error::InvalidInput("factual rule must cover the explained input".into()));
        }
        for cf in &self.counterfactuals {
            if evaluate_conjunction(cf, &ones)? {
                return Err(Error::InvalidInput(format!("counterfactual {cf} covers the explained input")));
            }
            if cf.label == self.factual.label {
                return Err(Error::InvalidInput(format!("counterfactual {cf} keeps the factual label")));
            }
        }
        if let Some(r) = std::iter::once(&self.factual).chain(&self.counterfactuals).find(|r| !r.is_satisfiable()) {
            return Err(Error::InvalidInput(format!("rule {r} both requires and negates a predicate")));
        }
        Ok(())
    }
}
