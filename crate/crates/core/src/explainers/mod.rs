//! The learning algorithms. Every learner works on bit vectors and model
//! outputs only, through an [`ExplainContext`](crate::ExplainContext).

pub mod anchors;
pub mod kl;
pub mod kshap;
pub mod lime;
pub mod lore;
pub mod tree;

pub use anchors::{explain_anchors, AnchorConfig};
pub use kl::{kl_bernoulli, kl_bernoulli_bounds, lucb_beta};
pub use kshap::{explain_kshap, shapley_kernel_weight, ShapConfig};
pub use lime::{explain_lime, fit_lime, LimeConfig};
pub use lore::{explain_lore, extract_rules, genetic_neighborhood, LoreConfig};
pub use tree::{fit_decision_tree, DecisionTree, TreeConfig};
