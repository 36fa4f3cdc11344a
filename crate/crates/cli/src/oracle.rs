//! Brute-force self-checks: exact Shapley values, planted-rule recovery and
//! estimator agreement with full enumeration.

use predex::explainers::{explain_anchors, explain_kshap, AnchorConfig, ShapConfig};
use predex::metrics::{brute_force_rule_stats, estimate_coverage, estimate_precision, exact_shapley_oracle};
use predex::model::FnModel;
use predex::perturb::{seeded_rng, Strategy};
use predex::{Attribution, BitVector, ExplainContext, Prediction, Rule};
use rand::seq::index::sample;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Shapley,
    Rules,
    Metrics,
    All,
}

pub struct Outcome {
    pub suite: &'static str,
    pub passed: bool,
    pub summary: String,
    pub first_failure: Option<String>,
}

fn index(z: &BitVector) -> usize {
    z.ones_indices().fold(0, |m, i| m | 1 << i)
}

pub fn shapley(seed: u64) -> anyhow::Result<Outcome> {
    const CASES: usize = 50;
    const TOL: f64 = 1e-6;
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    let mut first_failure = None;
    for case in 0..CASES {
        let d = 2 + case % 9;
        let table: Vec<f64> = (0..1usize << d).map(|_| rng.gen::<f64>()).collect();
        let model = FnModel(|z: &BitVector| Prediction::with_scores(0, vec![table[index(z)]]));
        let ctx = ExplainContext::new(&model, d)?;
        let a: Attribution = explain_kshap(&ctx, &ShapConfig::default(), &mut seeded_rng(seed ^ case as u64))?;
        let oracle = exact_shapley_oracle(|z| table[index(z)], d)?;
        let err = a.weights.iter().zip(&oracle).map(|(w, o)| (w - o).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        if err > TOL && first_failure.is_none() {
            first_failure = Some(format!("case {case} (d={d}): max |delta| {err:.3e} > {TOL:e}"));
        }
    }
    Ok(Outcome {
        suite: "shapley",
        passed: first_failure.is_none(),
        summary: format!("{CASES} value tables, d in 2..=10, max |delta| {worst:.2e}"),
        first_failure,
    })
}

pub fn rules(seed: u64) -> anyhow::Result<Outcome> {
    const RUNS: u64 = 100;
    const NEEDED: usize = 95;
    const D: usize = 10;
    let mut recovered = 0;
    let mut first_failure = None;
    for run in 0..RUNS {
        let mut rng = seeded_rng(seed.wrapping_add(run));
        let size = 1 + (run % 3) as usize;
        let planted: Vec<usize> = {
            let mut v = sample(&mut rng, D, size).into_vec();
            v.sort_unstable();
            v
        };
        let model = FnModel(|z: &BitVector| Prediction::label_only(usize::from(planted.iter().all(|&i| z.get(i)))));
        let ctx = ExplainContext::new(&model, D)?;
        let anchor = explain_anchors(&ctx, &AnchorConfig::default(), &mut rng)?;
        let got: Vec<usize> = anchor.members.iter().copied().collect();
        let exact = brute_force_rule_stats(&anchor.rule(), &model, D)?.precision;
        if got == planted && exact == Some(1.0) {
            recovered += 1;
        } else if first_failure.is_none() {
            first_failure = Some(format!("seed {run}: planted {planted:?}, anchor {got:?}, exhaustive precision {exact:?}"));
        }
    }
    let passed = recovered >= NEEDED;
    Ok(Outcome {
        suite: "rules",
        passed,
        summary: format!("planted conjunctions recovered {recovered}/{RUNS} (need {NEEDED})"),
        first_failure: if passed { None } else { first_failure },
    })
}

pub fn metrics(seed: u64) -> anyhow::Result<Outcome> {
    const TRIALS: u64 = 200;
    const N: usize = 10_000;
    const TOL: f64 = 0.03;
    let mut within = 0;
    let mut first_failure = None;
    for trial in 0..TRIALS {
        let mut rng = seeded_rng(seed.wrapping_add(trial).wrapping_mul(0x9e37_79b9));
        let d = 5 + (trial % 8) as usize;
        let table: Vec<bool> = (0..1usize << d).map(|_| rng.gen_bool(0.7)).collect();
        let model = FnModel(|z: &BitVector| Prediction::label_only(usize::from(table[index(z)])));
        let n_pos = rng.gen_range(1..=3);
        let n_neg = rng.gen_range(0..=2);
        let picked = sample(&mut rng, d, n_pos + n_neg).into_vec();
        let ctx = ExplainContext::new(&model, d)?;
        let rule = Rule::new(picked[..n_pos].iter().copied(), picked[n_pos..].iter().copied(), ctx.label());
        let exact = brute_force_rule_stats(&rule, &model, d)?;
        let cov = estimate_coverage(&rule, d, &Strategy::Bernoulli { q: 0.5 }, N, &mut rng)?;
        let prec = estimate_precision(&rule, &ctx, 0.5, N, &mut rng)?;
        let dc = (cov.estimate - exact.coverage).abs();
        let dp = (prec.estimate - exact.precision.unwrap_or(f64::NAN)).abs();
        if dc <= TOL && dp <= TOL {
            within += 1;
        } else if first_failure.is_none() {
            first_failure = Some(format!("trial {trial} (d={d}, rule {rule}): coverage off by {dc:.4}, precision off by {dp:.4}"));
        }
    }
    let passed = within * 100 >= TRIALS * 99;
    Ok(Outcome {
        suite: "metrics",
        passed,
        summary: format!("estimates within {TOL} of enumeration in {within}/{TRIALS} trials (n={N})"),
        first_failure: if passed { None } else { first_failure },
    })
}

pub fn run(suite: Suite, seed: u64) -> anyhow::Result<u8> {
    let outcomes = match suite {
        Suite::Shapley => vec![shapley(seed)?],
        Suite::Rules => vec![rules(seed)?],
        Suite::Metrics => vec![metrics(seed)?],
        Suite::All => vec![shapley(seed)?, rules(seed)?, metrics(seed)?],
    };
    for o in &outcomes {
        println!("{:<8} {}  {}", o.suite, if o.passed { "PASS" } else { "FAIL" }, o.summary);
    }
    match outcomes.iter().find_map(|o| o.first_failure.as_ref()) {
        Some(f) => {
            println!("first failing case: {f}");
            Ok(1)
        }
        None => Ok(0),
    }
}
