//! Greedy Gini decision tree over bit vectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predicate::BitVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// Defaults to `d`.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: None, min_leaf: 2 }
    }
}

/// Node splitting on "bit = 1": `one` holds samples with the bit set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { label: usize, counts: BTreeMap<usize, usize> },
    Split { bit: usize, zero: Box<Node>, one: Box<Node> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub d: usize,
    pub root: Node,
}

/// Conditions along a root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafPath {
    pub ones: Vec<usize>,
    pub zeros: Vec<usize>,
    pub label: usize,
    pub size: usize,
}

fn counts(samples: &[&(BitVector, usize)]) -> BTreeMap<usize, usize> {
    let mut c = BTreeMap::new();
    for (_, l) in samples {
        *c.entry(*l).or_insert(0) += 1;
    }
    c
}

fn gini(c: &BTreeMap<usize, usize>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    1.0 - c.values().map(|&k| (k as f64 / n as f64).powi(2)).sum::<f64>()
}

/// Majority label; ties go to `favored` when it is among the tied labels,
/// otherwise to the smallest label.
fn majority(c: &BTreeMap<usize, usize>, favored: usize) -> usize {
    let top = c.values().copied().max().unwrap_or(0);
    if c.get(&favored) == Some(&top) {
        return favored;
    }
    c.iter().find(|(_, &k)| k == top).map_or(favored, |(l, _)| *l)
}

struct Builder {
    max_depth: usize,
    min_leaf: usize,
    favored: usize,
    used: Vec<bool>,
}

impl Builder {
    fn grow(&mut self, samples: Vec<&(BitVector, usize)>, depth: usize) -> Node {
        let n = samples.len();
        let c = counts(&samples);
        let leaf = |c: BTreeMap<usize, usize>, favored| Node::Leaf { label: majority(&c, favored), counts: c };
        if c.len() <= 1 || depth >= self.max_depth || n < 2 * self.min_leaf {
            return leaf(c, self.favored);
        }
        let parent = gini(&c, n);
        let mut best: Option<(usize, f64)> = None;
        for bit in (0..self.used.len()).filter(|&b| !self.used[b]) {
            let (one, zero): (Vec<_>, Vec<_>) = samples.iter().partition(|s| s.0.get(bit));
            if one.len() < self.min_leaf || zero.len() < self.min_leaf {
                continue;
            }
            let child = (one.len() as f64 * gini(&counts(&one), one.len())
                + zero.len() as f64 * gini(&counts(&zero), zero.len()))
                / n as f64;
            let gain = parent - child;
            // strict comparison keeps the lowest bit id among equal gains
            if best.is_none_or(|(_, g)| gain > g + 1e-12) {
                best = Some((bit, gain));
            }
        }
        let Some((bit, _)) = best else {
            return leaf(c, self.favored);
        };
        let (one, zero): (Vec<_>, Vec<_>) = samples.into_iter().partition(|s| s.0.get(bit));
        self.used[bit] = true;
        let one = self.grow(one, depth + 1);
        let zero = self.grow(zero, depth + 1);
        self.used[bit] = false;
        Node::Split { bit, zero: Box::new(zero), one: Box::new(one) }
    }
}

/// Fit a tree by greedy Gini splits. `favored` breaks label ties in leaves
/// (the explained label).
pub fn fit_decision_tree(samples: &[(BitVector, usize)], cfg: &TreeConfig, favored: usize) -> Result<DecisionTree> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput("a tree needs at least two samples".into()));
    }
    let d = samples[0].0.len();
    if let Some((z, _)) = samples.iter().find(|(z, _)| z.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: z.len() });
    }
    let mut b = Builder {
        max_depth: cfg.max_depth.unwrap_or(d),
        min_leaf: cfg.min_leaf.max(1),
        favored,
        used: vec![false; d],
    };
    let root = b.grow(samples.iter().collect(), 0);
    Ok(DecisionTree { d, root })
}

impl DecisionTree {
    pub fn predict(&self, z: &BitVector) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { label, .. } => return *label,
                Node::Split { bit, zero, one } => node = if z.get(*bit) { one } else { zero },
            }
        }
    }

    /// Every leaf with its path, `one` branches first.
    pub fn leaves(&self) -> Vec<LeafPath> {
        fn walk(node: &Node, ones: &mut Vec<usize>, zeros: &mut Vec<usize>, out: &mut Vec<LeafPath>) {
            match node {
                Node::Leaf { label, counts } => out.push(LeafPath {
                    ones: ones.clone(),
                    zeros: zeros.clone(),
                    label: *label,
                    size: counts.values().sum(),
                }),
                Node::Split { bit, zero, one } => {
                    ones.push(*bit);
                    walk(one, ones, zeros, out);
                    ones.pop();
                    zeros.push(*bit);
                    walk(zero, ones, zeros, out);
                    zeros.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut Vec::new(), &mut Vec::new(), &mut out);
        out
    }

    pub fn depth(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { zero, one, .. } => 1 + go(zero).max(go(one)),
            }
        }
        go(&self.root)
    }
}
