//! One-screen text renderings of explanations.

use std::fmt::Write;

use predex::predicate::Attribution;
use predex::{Explanation, PredicateSpace, Rule};

const MAX_ROWS: usize = 20;

fn name(space: &PredicateSpace, i: usize) -> &str {
    space.predicates.get(i).map_or("?", |p| p.name.as_str())
}

fn rule(space: &PredicateSpace, r: &Rule) -> String {
    let mut terms: Vec<String> = r.positive.iter().map(|&i| format!("\"{}\"", name(space, i))).collect();
    terms.extend(r.negative.iter().map(|&i| format!("NOT \"{}\"", name(space, i))));
    let cond = if terms.is_empty() { "TRUE".to_string() } else { terms.join(" AND ") };
    format!("IF {cond} THEN label {}", r.label)
}

fn attribution(space: &PredicateSpace, a: &Attribution<f64>, out: &mut String) {
    let _ = writeln!(out, "attribution for label {} (intercept {:+.4})", a.label, a.intercept);
    let mut order: Vec<usize> = (0..a.weights.len()).collect();
    order.sort_by(|&i, &j| a.weights[j].abs().total_cmp(&a.weights[i].abs()).then(i.cmp(&j)));
    let width = order.iter().take(MAX_ROWS).map(|&i| name(space, i).chars().count()).max().unwrap_or(0).min(60);
    for &i in order.iter().take(MAX_ROWS) {
        let _ = writeln!(out, "  {:<width$}  {:+.4}", name(space, i), a.weights[i]);
    }
    if order.len() > MAX_ROWS {
        let _ = writeln!(out, "  ... {} more", order.len() - MAX_ROWS);
    }
}

pub fn render(space: &PredicateSpace, e: &Explanation<f64>) -> String {
    let mut out = String::new();
    match e {
        Explanation::Attribution(a) => attribution(space, a, &mut out),
        Explanation::Anchor(a) => {
            let _ = writeln!(out, "anchor: {}", rule(space, &a.rule()));
            let _ = writeln!(
                out,
                "  precision ~ {:.3}, coverage ~ {:.3}, confidence {:.2}{}",
                a.precision_estimate,
                a.coverage_estimate,
                a.confidence,
                if a.converged { "" } else { " (not converged)" }
            );
        }
        Explanation::Rules(r) => {
            let _ = writeln!(out, "factual: {}", rule(space, &r.factual));
            for (k, cf) in r.counterfactuals.iter().enumerate() {
                let _ = writeln!(out, "counterfactual {}: {} ({} change(s))", k + 1, rule(space, cf), cf.change_count());
            }
        }
        Explanation::Unified(u) => {
            let _ = writeln!(out, "factual: {}", rule(space, &u.rules.factual));
            for (k, cf) in u.rules.counterfactuals.iter().enumerate() {
                let _ = writeln!(out, "counterfactual {}: {}", k + 1, rule(space, cf));
            }
            let _ = writeln!(
                out,
                "otherwise: label {} if score >= {} else label {}",
                u.attribution.label, u.decision_threshold, u.contrast_label
            );
            attribution(space, &u.attribution, &mut out);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use predex::concepts::{build_predicate_space, tokenize, PredicateSource};
    use predex::RuleSet;

    fn space() -> PredicateSpace {
        build_predicate_space(PredicateSource::Tokens(&tokenize("I love this movie")), "x").unwrap()
    }

    #[test]
    fn weights_sorted_by_magnitude() {
        let a = Attribution::new(0.1, vec![0.1, 0.9, -0.5, 0.0], 1).unwrap();
        let text = render(&space(), &Explanation::Attribution(a));
        let rows: Vec<&str> = text.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
        assert_eq!(rows, ["love", "this", "I", "movie"]);
    }

    #[test]
    fn rules_use_predicate_names() {
        let r = RuleSet { factual: Rule::new([1], [], 1), counterfactuals: vec![Rule::new([], [1], 0)] };
        let text = render(&space(), &Explanation::Rules(r));
        assert!(text.contains("factual: IF \"love\" THEN label 1"));
        assert!(text.contains("IF NOT \"love\" THEN label 0 (1 change(s))"));
    }
}
