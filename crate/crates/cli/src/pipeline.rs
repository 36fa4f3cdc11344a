//! Backends, predicate spaces and explainers wired together from a config.

use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use image::RgbImage;
use predex::concepts::{
    build_predicate_space, extract_text_concepts, ingest_segment_map, segment_image, tokenize, PredicateSource,
    SegmentMap,
};
use predex::explainers::{explain_anchors, explain_kshap, explain_lime, explain_lore};
use predex::model::{InputModel, RealizedModel};
use predex::perturb::{ConceptCache, ImageRealizer, SampleRng, TextConceptRealizer, TextFeatureRealizer};
use predex::prompt::{ChatClient, Slots};
use predex::unified::build_unified;
use predex::{BitModel, ExplainContext, Explanation, PredicateSpace, Prediction};
use predex_adapters::chat::ChatParams;
use predex_adapters::templates::{self, CONCEPT_EXTRACTION, CONCEPT_GENERATION, SENTIMENT};
use predex_adapters::{
    dominant_color_backend, Backend, CachedModel, ChatModel, HttpBackend, HttpChat, LexiconSentiment, ModelHandle,
    PredictionCache, RecordingBackend, RecordingChat, ReplayBackend, ReplayChat, RetryPolicy, SubprocessBackend, Task,
};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::{ChatBackendKind, Config, ConfigError, Instance, Level, ModelBackendKind, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Technique {
    Lime,
    Kshap,
    Anchors,
    Lore,
    Unified,
}

impl Technique {
    pub fn name(self) -> &'static str {
        match self {
            Technique::Lime => "lime",
            Technique::Kshap => "kshap",
            Technique::Anchors => "anchors",
            Technique::Lore => "lore",
            Technique::Unified => "unified",
        }
    }
}

/// The configured black box.
pub enum Target {
    Handle(ModelHandle),
    Chat(ChatModel),
}

impl Target {
    fn id(&self) -> String {
        match self {
            Target::Handle(h) => h.id().to_string(),
            Target::Chat(c) => c.id(),
        }
    }
}

impl InputModel<String> for Target {
    fn predict_batch(&self, inputs: &[String]) -> predex::Result<Vec<Prediction>> {
        match self {
            Target::Handle(h) => h.predict_batch(inputs),
            Target::Chat(c) => c.predict_batch(inputs),
        }
    }
}

impl InputModel<RgbImage> for Target {
    fn predict_batch(&self, inputs: &[RgbImage]) -> predex::Result<Vec<Prediction>> {
        match self {
            Target::Handle(h) => h.predict_batch(inputs),
            Target::Chat(_) => Err(predex::Error::InvalidInput("chat models classify text only".into())),
        }
    }
}

pub struct Runtime {
    pub cfg: Config,
    pub offline: bool,
    model: CachedModel<Target>,
    chat: Option<Arc<dyn ChatClient>>,
    concept_cache: Arc<ConceptCache>,
}

fn token(env: &Option<String>) -> Option<String> {
    env.as_ref().and_then(|name| std::env::var(name).ok())
}

fn fixtures(cfg: &Config, what: &str) -> Result<std::path::PathBuf, ConfigError> {
    cfg.paths.fixtures.clone().ok_or_else(|| ConfigError(format!("{what} needs paths.fixtures")))
}

fn build_chat(cfg: &Config, offline: bool) -> anyhow::Result<Option<Arc<dyn ChatClient>>> {
    let Some(c) = &cfg.chat else { return Ok(None) };
    let params = ChatParams { model: c.model.clone(), temperature: c.temperature };
    let replay = c.backend == ChatBackendKind::Replay || offline;
    let client: Arc<dyn ChatClient> = if replay {
        Arc::new(ReplayChat::new(fixtures(cfg, "chat replay")?, c.id.clone(), params)?)
    } else {
        let url = c.url.clone().ok_or_else(|| ConfigError("chat.url is required".into()))?;
        let live = HttpChat::new(c.id.clone(), url, params.clone(), token(&c.token_env), Duration::from_secs(c.timeout_secs));
        if c.record {
            Arc::new(RecordingChat::new(Box::new(live), params, fixtures(cfg, "chat.record")?)?)
        } else {
            Arc::new(live)
        }
    };
    Ok(Some(client))
}

fn build_target(cfg: &Config, offline: bool, chat: Option<&Arc<dyn ChatClient>>) -> anyhow::Result<Target> {
    let m = &cfg.model;
    let id = m.id();
    let backend: Box<dyn Backend> = match m.backend {
        ModelBackendKind::Chat => {
            let client = chat.cloned().ok_or_else(|| ConfigError("the chat backend needs [chat]".into()))?;
            let retries = cfg.chat.as_ref().map_or(2, |c| c.retries);
            let template = templates::load(SENTIMENT, cfg.paths.templates.as_deref())?;
            return Ok(Target::Chat(ChatModel::new(client, template, retries)?));
        }
        ModelBackendKind::Replay => Box::new(ReplayBackend::new(fixtures(cfg, "replay")?, id)?),
        ModelBackendKind::Http if offline => Box::new(ReplayBackend::new(fixtures(cfg, "--offline")?, id)?),
        ModelBackendKind::Http => {
            let url = m.url.clone().ok_or_else(|| ConfigError("model.url is required".into()))?;
            Box::new(HttpBackend::new(id, url, token(&m.token_env), Duration::from_secs(m.timeout_secs)))
        }
        ModelBackendKind::Subprocess => {
            Box::new(SubprocessBackend::new(id, m.command[0].clone(), m.command[1..].to_vec()))
        }
        ModelBackendKind::Lexicon => Box::new(LexiconSentiment::default().into_backend(id)),
        ModelBackendKind::Color => Box::new(dominant_color_backend(id)),
    };
    let backend: Box<dyn Backend> = if m.record && m.backend != ModelBackendKind::Replay && !offline {
        Box::new(RecordingBackend::new(backend, fixtures(cfg, "model.record")?)?)
    } else {
        backend
    };
    let task = match m.task {
        TaskKind::TextBinary => Task::TextBinary,
        TaskKind::ImageMulticlass => Task::ImageMulticlass { classes: m.n_classes() },
    };
    let handle = ModelHandle::new(backend, task, m.exposes_probabilities())?
        .with_retry(RetryPolicy { max_retries: m.retries, ..RetryPolicy::default() })
        .with_max_batch(m.max_batch);
    Ok(Target::Handle(handle))
}

/// One instance ready to explain: its predicate space and the model seen
/// through that space.
pub struct Prepared<'r> {
    pub space: PredicateSpace,
    pub model: Box<dyn BitModel + 'r>,
    pub segments: Option<SegmentMap>,
}

impl Runtime {
    pub fn new(cfg: Config, offline: bool) -> anyhow::Result<Self> {
        let chat = build_chat(&cfg, offline)?;
        let target = build_target(&cfg, offline, chat.as_ref())?;
        let cache = match &cfg.paths.cache {
            Some(p) => PredictionCache::open(p).with_context(|| format!("opening cache {}", p.display()))?,
            None => PredictionCache::in_memory(),
        };
        let model = CachedModel::new(target.id(), target, Arc::new(cache));
        Ok(Runtime { cfg, offline, model, chat, concept_cache: Arc::default() })
    }

    pub fn prepare(&self, inst: &Instance, level: Level) -> anyhow::Result<Prepared<'_>> {
        let cfg = &self.cfg;
        if let Some(text) = &inst.text {
            return match level {
                Level::Feature => {
                    let tokens = tokenize(text);
                    let space = build_predicate_space(PredicateSource::Tokens(&tokens), &inst.id)?;
                    let realizer = TextFeatureRealizer { tokens, mask_token: cfg.mask_token() };
                    Ok(Prepared { space, model: Box::new(RealizedModel { realizer, model: &self.model }), segments: None })
                }
                Level::Concept => {
                    let chat = self
                        .chat
                        .as_deref()
                        .ok_or_else(|| ConfigError("concept-level text needs a [chat] section".into()))?;
                    let retries = cfg.chat.as_ref().map_or(2, |c| c.retries);
                    let dir = cfg.paths.templates.as_deref();
                    let p = &cfg.predicates;
                    let concepts = extract_text_concepts(
                        text,
                        &p.task,
                        &p.examples,
                        p.n_concepts,
                        chat,
                        &templates::load(CONCEPT_EXTRACTION, dir)?,
                        retries,
                    )?;
                    let space = build_predicate_space(PredicateSource::Concepts(&concepts), &inst.id)?;
                    let realizer = TextConceptRealizer {
                        instance_id: inst.id.clone(),
                        original: text.clone(),
                        concepts,
                        client: chat,
                        template: templates::load(CONCEPT_GENERATION, dir)?,
                        extra_slots: Slots::new(),
                        dropped: p.dropped,
                        retries,
                        cache: self.concept_cache.clone(),
                    };
                    Ok(Prepared { space, model: Box::new(RealizedModel { realizer, model: &self.model }), segments: None })
                }
            };
        }
        let path = inst.image.as_ref().expect("validated: image instance");
        let image = image::open(path).with_context(|| format!("reading {}", path.display()))?.to_rgb8();
        let segments = match level {
            Level::Feature => segment_image(&image, cfg.predicates.segments)?,
            Level::Concept => {
                let seg = inst
                    .segments
                    .as_ref()
                    .ok_or_else(|| ConfigError(format!("instance {:?} needs `segments` at concept level", inst.id)))?;
                ingest_segment_map(seg, Some(image.dimensions()))?
            }
        };
        let space = build_predicate_space(PredicateSource::Segments(&segments), &inst.id)?;
        let realizer = ImageRealizer { image, segments: segments.clone(), fill: cfg.perturb.image_fill };
        Ok(Prepared { space, model: Box::new(RealizedModel { realizer, model: &self.model }), segments: Some(segments) })
    }

    pub fn explain(&self, technique: Technique, ctx: &ExplainContext<'_>, rng: &mut SampleRng) -> predex::Result<Explanation<f64>> {
        let cfg = &self.cfg;
        Ok(match technique {
            Technique::Lime => Explanation::Attribution(explain_lime(ctx, &cfg.lime, rng)?),
            Technique::Kshap => Explanation::Attribution(explain_kshap(ctx, &cfg.kshap, rng)?),
            Technique::Anchors => Explanation::Anchor(explain_anchors(ctx, &cfg.anchors, rng)?),
            Technique::Lore => Explanation::Rules(explain_lore(ctx, &cfg.lore, rng)?),
            Technique::Unified => {
                let rules = explain_lore(ctx, &cfg.lore, rng)?;
                let attr = explain_kshap(ctx, &cfg.kshap, rng)?;
                Explanation::Unified(build_unified(rules, attr, Some(cfg.unified.threshold))?)
            }
        })
    }

    pub fn instance_index(&self, id: &str) -> usize {
        self.cfg.instances.iter().position(|i| i.id == id).unwrap_or(0)
    }
}

/// Per-instance generator: the run seed offset by the instance's position,
/// so results do not depend on which instances run or in what order.
/// `stream` separates explanation sampling (0) from metric sampling (1).
pub fn instance_rng(seed: u64, index: usize, stream: u64) -> SampleRng {
    let mut rng = SampleRng::seed_from_u64(seed.wrapping_add(index as u64));
    rng.set_stream(stream);
    rng
}
