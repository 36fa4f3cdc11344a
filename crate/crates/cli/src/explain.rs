use std::path::Path;

use predex::{ExplainContext, Explanation, ExplanationDocument};
use serde_json::{json, Value};

use crate::config::Level;
use crate::output::{sibling, write_atomic};
use crate::pipeline::{instance_rng, Runtime, Technique};
use crate::render::render;

pub const EXIT_UNCONVERGED: u8 = 4;

pub fn provenance(rt: &Runtime, extra: Value) -> Value {
    let mut p = json!({
        "tool": "predex",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": rt.cfg.seed,
        "offline": rt.offline,
        "config": serde_json::to_value(&rt.cfg).expect("config serializes"),
    });
    if let (Value::Object(p), Value::Object(extra)) = (&mut p, extra) {
        p.extend(extra);
    }
    p
}

pub fn run(rt: &Runtime, technique: Technique, level: Level, instance: Option<&str>, out: Option<&Path>) -> anyhow::Result<u8> {
    let inst = rt.cfg.instance(instance)?;
    let index = rt.instance_index(&inst.id);
    let prepared = rt.prepare(inst, level)?;
    let ctx = ExplainContext::new(prepared.model.as_ref(), prepared.space.d())?;
    let explanation = rt.explain(technique, &ctx, &mut instance_rng(rt.cfg.seed, index, 0))?;
    let unconverged = matches!(&explanation, Explanation::Anchor(a) if !a.converged);
    let prov = provenance(rt, json!({ "technique": technique.name(), "level": level, "instance": inst.id }));
    let doc = ExplanationDocument::new(prepared.space, explanation, prov)?;
    let mut text = doc.to_json()?;
    text.push('\n');
    let rendering = render(&doc.space, &doc.explanation);
    match out {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            if let Some(seg) = &prepared.segments {
                let mut png = std::io::Cursor::new(Vec::new());
                seg.to_label_image()?.write_to(&mut png, image::ImageFormat::Png)?;
                write_atomic(&sibling(path, ".segments.png"), png.get_ref())?;
            }
            print!("{rendering}");
        }
        None => {
            print!("{text}");
            eprint!("{rendering}");
        }
    }
    if unconverged {
        eprintln!("note: the anchor search did not reach the precision target; the most precise candidate was returned");
        return Ok(EXIT_UNCONVERGED);
    }
    Ok(0)
}
