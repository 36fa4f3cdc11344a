use std::path::Path;

use anyhow::Context;
use predex::metrics::{
    accuracy_a, aopc_csv, aopc_curve, aopc_mean, average_curves, estimate_coverage, estimate_precision,
    surrogate_fidelity, AopcPoint, FidelityReport, Surrogate, Thresholded,
};
use predex::perturb::Strategy;
use predex::unified::binary_contrast;
use predex::{Document, Error, ExplainContext, Explanation, PredicateKind, Rule};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ConfigError, Level};
use crate::explain::provenance;
use crate::output::write_atomic;
use crate::pipeline::{instance_rng, Runtime, Technique};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Coverage,
    Precision,
    Aopc,
    AccuracyA,
    Fidelity,
}

const ALL: [Metric; 5] = [Metric::Coverage, Metric::Precision, Metric::Aopc, Metric::AccuracyA, Metric::Fidelity];

pub enum Source {
    Technique(Technique),
    Document(Box<Document>),
}

pub struct Request<'a> {
    pub source: Source,
    pub level: Level,
    pub metrics: Option<Vec<Metric>>,
    pub n: Option<usize>,
    pub jobs: usize,
    pub out: Option<&'a Path>,
}

#[derive(Debug, Serialize)]
struct InstanceResult {
    id: String,
    kind: &'static str,
    report: FidelityReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    skipped: Vec<String>,
}

#[derive(Debug, Default, Serialize)]
struct Aggregate {
    #[serde(skip_serializing_if = "Option::is_none")]
    aopc_curve: Option<Vec<AopcPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aopc_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    surrogate_accuracy: Option<f64>,
}

fn rule_of(e: &Explanation<f64>) -> Option<Rule> {
    match e {
        Explanation::Anchor(a) => Some(a.rule()),
        Explanation::Rules(r) => Some(r.factual.clone()),
        Explanation::Unified(u) => Some(u.rules.factual.clone()),
        Explanation::Attribution(_) => None,
    }
}

fn attribution_of(e: &Explanation<f64>) -> Option<&predex::Attribution> {
    match e {
        Explanation::Attribution(a) => Some(a),
        Explanation::Unified(u) => Some(&u.attribution),
        _ => None,
    }
}

fn evaluate_instance(rt: &Runtime, index: usize, req: &Request<'_>, metrics: &[Metric], explicit: bool) -> anyhow::Result<InstanceResult> {
    let cfg = &rt.cfg;
    let inst = &cfg.instances[index];
    let prepared = rt.prepare(inst, req.level)?;
    let ctx = ExplainContext::new(prepared.model.as_ref(), prepared.space.d())?;
    let explanation = match &req.source {
        Source::Technique(t) => rt.explain(*t, &ctx, &mut instance_rng(cfg.seed, index, 0))?,
        Source::Document(doc) => {
            if doc.space != prepared.space {
                return Err(ConfigError(format!("the explanation's predicate space does not match instance {:?}", inst.id)).into());
            }
            doc.explanation.clone()
        }
    };
    let n = req.n.unwrap_or(cfg.metrics.n);
    let q = cfg.perturb.q;
    let dist = Strategy::Bernoulli { q };
    let mut rng = instance_rng(cfg.seed, index, 1);
    let mut report = FidelityReport { n_samples: n, ..FidelityReport::default() };
    let mut skipped = Vec::new();
    for &m in metrics {
        match m {
            Metric::Coverage | Metric::Precision => {
                let Some(rule) = rule_of(&explanation) else {
                    skipped.push(format!("{m:?}: explanation has no rule").to_lowercase());
                    continue;
                };
                if m == Metric::Coverage {
                    report.coverage = Some(estimate_coverage(&rule, ctx.d(), &dist, n, &mut rng)?);
                } else {
                    match estimate_precision(&rule, &ctx, q, n, &mut rng) {
                        Ok(p) => report.precision = Some(p),
                        Err(Error::UndefinedPrecision(msg)) => skipped.push(format!("precision: {msg}")),
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            Metric::Aopc | Metric::AccuracyA => {
                let Some(attr) = attribution_of(&explanation) else {
                    skipped.push(format!("{m:?}: explanation has no attribution").to_lowercase());
                    continue;
                };
                if m == Metric::Aopc {
                    if !ctx.has_scores() && !explicit {
                        skipped.push("aopc: backend exposes no probabilities".into());
                        continue;
                    }
                    let curve = aopc_curve(&ctx, attr, &cfg.metrics.ks)?;
                    report.aopc_mean = Some(aopc_mean(&curve));
                    report.aopc_curve = Some(curve);
                } else {
                    report.accuracy_a = Some(accuracy_a(&[(&ctx, attr)], &cfg.metrics.ks)?);
                }
            }
            Metric::Fidelity => {
                let thresholded;
                let surrogate: &dyn Surrogate = match &explanation {
                    Explanation::Unified(u) => u,
                    Explanation::Attribution(a) => {
                        thresholded = Thresholded { attribution: a, threshold: cfg.unified.threshold, contrast: binary_contrast(a.label) };
                        &thresholded
                    }
                    _ => {
                        skipped.push("fidelity: needs an attribution or unified explanation".into());
                        continue;
                    }
                };
                report.surrogate_accuracy = Some(surrogate_fidelity(surrogate, &ctx, &dist, n, cfg.reduce_to_same(), &mut rng)?);
            }
        }
    }
    Ok(InstanceResult { id: inst.id.clone(), kind: explanation.kind(), report, skipped })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn run(rt: &Runtime, req: Request<'_>) -> anyhow::Result<u8> {
    let explicit = req.metrics.is_some();
    let mut metrics = req.metrics.clone().unwrap_or_else(|| ALL.to_vec());
    metrics.sort_by_key(|m| ALL.iter().position(|a| a == m));
    metrics.dedup();
    let indices: Vec<usize> = match &req.source {
        Source::Technique(_) => (0..rt.cfg.instances.len()).collect(),
        Source::Document(doc) => vec![rt
            .cfg
            .instances
            .iter()
            .position(|i| i.id == doc.space.instance_ref)
            .ok_or_else(|| ConfigError(format!("no instance {:?} in the config", doc.space.instance_ref)))?],
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(req.jobs.max(1)).build().context("building thread pool")?;
    let results: Vec<anyhow::Result<InstanceResult>> =
        pool.install(|| indices.par_iter().map(|&i| evaluate_instance(rt, i, &req, &metrics, explicit)).collect());
    let results = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;

    let curves: Vec<Vec<AopcPoint>> = results.iter().filter_map(|r| r.report.aopc_curve.clone()).collect();
    let aopc = (!curves.is_empty()).then(|| average_curves(&curves)).transpose()?;
    let aggregate = Aggregate {
        aopc_mean: aopc.as_deref().map(aopc_mean),
        aopc_curve: aopc,
        accuracy_a: mean(results.iter().filter_map(|r| r.report.accuracy_a)),
        surrogate_accuracy: mean(results.iter().filter_map(|r| r.report.surrogate_accuracy)),
    };
    let (technique, level) = match &req.source {
        Source::Technique(t) => (json!(t.name()), json!(req.level)),
        Source::Document(doc) => (doc.provenance.get("technique").cloned().unwrap_or(json!(doc.explanation.kind())), json!(req.level)),
    };
    let n = req.n.unwrap_or(rt.cfg.metrics.n);
    let report = json!({
        "provenance": provenance(rt, json!({ "technique": technique, "level": level, "metrics": metrics, "n": n })),
        "n_samples": n,
        "instances": results,
        "aggregate": aggregate,
    });
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    match req.out {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            if let Some(curve) = &aggregate_curve(&report) {
                write_atomic(&path.with_file_name("aopc.csv"), aopc_csv(curve).as_bytes())?;
            }
        }
        None => print!("{text}"),
    }
    for r in &results {
        println!("{}", summary_line(r));
    }
    Ok(0)
}

fn aggregate_curve(report: &serde_json::Value) -> Option<Vec<AopcPoint>> {
    serde_json::from_value(report.pointer("/aggregate/aopc_curve")?.clone()).ok()
}

fn summary_line(r: &InstanceResult) -> String {
    let mut parts = vec![format!("{} [{}]", r.id, r.kind)];
    let rep = &r.report;
    if let Some(c) = rep.coverage {
        parts.push(format!("coverage {:.3}±{:.3}", c.estimate, c.half_width));
    }
    if let Some(p) = rep.precision {
        parts.push(format!("precision {:.3}±{:.3}", p.estimate, p.half_width));
    }
    if let Some(m) = rep.aopc_mean {
        parts.push(format!("aopc {m:.4}"));
    }
    if let Some(a) = rep.accuracy_a {
        parts.push(format!("accuracy_a {a:.3}"));
    }
    if let Some(f) = rep.surrogate_accuracy {
        parts.push(format!("fidelity {f:.3}"));
    }
    parts.join("  ")
}

/// Level recorded in a document's provenance, else inferred from its space.
pub fn document_level(doc: &Document) -> Level {
    doc.provenance
        .get("level")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or(match doc.space.kind {
            PredicateKind::FeatureLevel => Level::Feature,
            PredicateKind::ConceptLevel => Level::Concept,
        })
}
