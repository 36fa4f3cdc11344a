//! Rules-first, attribution-fallback surrogate built from LORE rules and a
//! Kernel SHAP attribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predicate::{evaluate_attribution, evaluate_conjunction, Attribution, BitVector, RuleSet};
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedExplanation<T> {
    pub rules: RuleSet,
    pub attribution: Attribution<T>,
    pub decision_threshold: T,
    /// Label predicted when the attribution falls below the threshold.
    pub contrast_label: usize,
    /// Whether counterfactual rules take part in prediction.
    pub use_counterfactuals: bool,
}

/// Label on the other side of a binary decision.
pub fn binary_contrast(label: usize) -> usize {
    usize::from(label == 0)
}

/// Combine rules and an attribution over the same predicate space.
/// `threshold` defaults to 0.5.
pub fn build_unified<T: Scalar>(rules: RuleSet, attribution: Attribution<T>, threshold: Option<T>) -> Result<UnifiedExplanation<T>> {
    let d = attribution.d();
    let out_of_space = std::iter::once(&rules.factual).chain(&rules.counterfactuals).filter_map(|r| r.max_id()).max();
    if let Some(m) = out_of_space {
        if m >= d {
            return Err(Error::DimensionMismatch { expected: d, found: m + 1 });
        }
    }
    if rules.factual.label != attribution.label {
        return Err(Error::InvalidInput(format!(
            "factual rule explains label {} but the attribution explains {}",
            rules.factual.label, attribution.label
        )));
    }
    rules.validate(d)?;
    let contrast_label = binary_contrast(attribution.label);
    Ok(UnifiedExplanation {
        rules,
        attribution,
        decision_threshold: threshold.unwrap_or_else(|| T::of(DEFAULT_THRESHOLD)),
        contrast_label,
        use_counterfactuals: true,
    })
}

/// Factual rule, then counterfactual rules in order, then the thresholded
/// attribution.
pub fn unified_predict<T: Scalar>(u: &UnifiedExplanation<T>, z: &BitVector) -> Result<usize> {
    if z.len() != u.attribution.d() {
        return Err(Error::DimensionMismatch { expected: u.attribution.d(), found: z.len() });
    }
    if evaluate_conjunction(&u.rules.factual, z)? {
        return Ok(u.rules.factual.label);
    }
    if u.use_counterfactuals {
        for cf in &u.rules.counterfactuals {
            if evaluate_conjunction(cf, z)? {
                return Ok(cf.label);
            }
        }
    }
    threshold_predict(&u.attribution, u.decision_threshold, u.contrast_label, z)
}

/// The attribution's label when its value reaches `threshold`, else `contrast`.
pub fn threshold_predict<T: Scalar>(attr: &Attribution<T>, threshold: T, contrast: usize, z: &BitVector) -> Result<usize> {
    Ok(if evaluate_attribution(attr, z)? >= threshold { attr.label } else { contrast })
}
