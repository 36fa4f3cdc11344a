//! Serializable explanation payloads and the versioned document that wraps
//! them together with their predicate space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predicate::{Attribution, AnchorRule, PredicateSpace, RuleSet};
use crate::scalar::Scalar;
use crate::unified::UnifiedExplanation;

pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Explanation<T> {
    Attribution(Attribution<T>),
    Anchor(AnchorRule),
    Rules(RuleSet),
    Unified(UnifiedExplanation<T>),
}

impl<T: Scalar> Explanation<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Explanation::Attribution(_) => "attribution",
            Explanation::Anchor(_) => "anchor",
            Explanation::Rules(_) => "rules",
            Explanation::Unified(_) => "unified",
        }
    }

    /// Check every predicate id against `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        let dims = |found: usize| {
            if found == d {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected: d, found })
            }
        };
        match self {
            Explanation::Attribution(a) => dims(a.d()),
            Explanation::Anchor(a) => match a.members.iter().max() {
                Some(&m) if m >= d => Err(Error::DimensionMismatch { expected: d, found: m + 1 }),
                _ => Ok(()),
            },
            Explanation::Rules(r) => r.validate(d),
            Explanation::Unified(u) => {
                dims(u.attribution.d())?;
                u.rules.validate(d)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationDocument<T> {
    pub version: u32,
    pub space: PredicateSpace,
    #[serde(flatten)]
    pub explanation: Explanation<T>,
    /// Free-form run metadata (seed, backend, effective configuration).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub provenance: serde_json::Value,
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> ExplanationDocument<T> {
    pub fn new(space: PredicateSpace, explanation: Explanation<T>, provenance: serde_json::Value) -> Result<Self> {
        explanation.validate(space.d())?;
        Ok(ExplanationDocument { version: DOCUMENT_VERSION, space, explanation, provenance })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        if doc.version != DOCUMENT_VERSION {
            return Err(Error::InvalidInput(format!("unsupported document version {}", doc.version)));
        }
        doc.explanation.validate(doc.space.d())?;
        Ok(doc)
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    text.split_inclusive('\n').take(line - 1).map(str::len).sum::<usize>() + column.saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::{PredicateDescriptor, Rule, RuleSet};
    use crate::unified::build_unified;

    fn space() -> PredicateSpace {
        let preds = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(id, n)| PredicateDescriptor {
                id,
                name: n.to_string(),
                description: format!("mentions {n}"),
                feature_indices: vec![],
                metadata: None,
            })
            .collect();
        PredicateSpace::concept_level("x", preds).unwrap()
    }

    #[test]
    fn roundtrip_every_kind() {
        let attr = Attribution::new(0.1, vec![0.5, -0.2, 0.0], 1).unwrap();
        let rules = RuleSet { factual: Rule::new([0], [], 1), counterfactuals: vec![Rule::new([], [0], 0)] };
        let anchor = AnchorRule {
            members: [0, 2].into(),
            label: 1,
            precision_estimate: 0.97,
            coverage_estimate: 0.25,
            confidence: 0.95,
            converged: true,
        };
        let unified = build_unified(rules.clone(), attr.clone(), None).unwrap();
        for e in [
            Explanation::Attribution(attr),
            Explanation::Anchor(anchor),
            Explanation::Rules(rules),
            Explanation::Unified(unified),
        ] {
            let doc = ExplanationDocument::new(space(), e, serde_json::json!({"seed": 3})).unwrap();
            let text = doc.to_json().unwrap();
            assert!(text.contains(&format!("\"kind\": \"{}\"", doc.explanation.kind())));
            assert_eq!(ExplanationDocument::<f64>::from_json(&text).unwrap(), doc);
        }
    }

    #[test]
    fn rejects_mismatched_space() {
        let attr = Attribution::new(0.0, vec![0.5, -0.2], 1).unwrap();
        assert!(matches!(
            ExplanationDocument::new(space(), Explanation::Attribution(attr), serde_json::Value::Null),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn parse_error_has_offset() {
        let text = "{\n  \"version\": x}";
        match ExplanationDocument::<f64>::from_json(text) {
            Err(Error::Parse { offset, .. }) => assert_eq!(&text[offset..offset + 1], "x"),
            other => panic!("{other:?}"),
        }
    }
}
