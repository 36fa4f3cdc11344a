//! Local, model-agnostic explanations computed in predicate space.
//!
//! A black-box model is viewed through a [`PredicateSpace`]: each sample is a
//! [`BitVector`] saying which predicates hold, a realizer maps it back to a
//! model input, and the learners in [`explainers`] fit attributions, anchors
//! and factual/counterfactual rules on the resulting labels. [`unified`]
//! combines rules and attributions into one surrogate, and [`metrics`]
//! measures how faithful the explanations are.
//!
//! The numeric types are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the common `f64` instantiations.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod concepts;
pub mod error;
pub mod explainers;
pub mod explanation;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod predicate;
pub mod prompt;
pub mod scalar;
pub mod unified;

pub use error::{Error, Result};
pub use explanation::{Explanation, ExplanationDocument};
pub use model::{BitModel, ExplainContext, InputModel, Prediction};
pub use predicate::{
    evaluate_attribution, evaluate_conjunction, rank_positive_predicates, top_k_mask,
    AnchorRule, BitVector, PredicateDescriptor, PredicateKind, PredicateSpace, Rule, RuleSet,
};
pub use scalar::Scalar;

/// Attribution with `f64` weights.
pub type Attribution = predicate::Attribution<f64>;
/// Attribution with `f32` weights.
pub type Attribution32 = predicate::Attribution<f32>;
/// Unified surrogate with an `f64` attribution part.
pub type UnifiedExplanation = unified::UnifiedExplanation<f64>;
/// Unified surrogate with an `f32` attribution part.
pub type UnifiedExplanation32 = unified::UnifiedExplanation<f32>;
/// Explanation document with `f64` payloads.
pub type Document = ExplanationDocument<f64>;
