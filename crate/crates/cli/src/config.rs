//! TOML run configuration. Every section is optional except `[model]` and
//! at least one `[[instances]]` entry; relative paths resolve against the
//! config file's directory.

use std::path::{Path, PathBuf};

use predex::concepts::{SegmentParams, DEFAULT_CONCEPTS};
use predex::explainers::{AnchorConfig, LimeConfig, LoreConfig, ShapConfig};
use predex::metrics::default_k_grid;
use predex::perturb::{DroppedConcepts, ImageFill, MASK_TOKEN, UNK_TOKEN};
use serde::{Deserialize, Serialize};

/// Invalid or unreadable configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat: Option<ChatConfig>,
    #[serde(default)]
    pub predicates: PredicateConfig,
    #[serde(default)]
    pub perturb: PerturbConfig,
    #[serde(default)]
    pub lime: LimeConfig,
    #[serde(default)]
    pub kshap: ShapConfig,
    #[serde(default)]
    pub anchors: AnchorConfig,
    #[serde(default)]
    pub lore: LoreConfig,
    #[serde(default)]
    pub unified: UnifiedConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub instances: Vec<Instance>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Root of the replay fixture tree (`<fixtures>/<client-id>/<digest>.json`).
    pub fixtures: Option<PathBuf>,
    /// Directory of `<template-id>.txt` overrides.
    pub templates: Option<PathBuf>,
    /// Append-only prediction cache file.
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelBackendKind {
    /// Built-in word-weight sentiment scorer.
    Lexicon,
    /// Built-in mean-colour image classifier (3 classes).
    Color,
    Http,
    Subprocess,
    Replay,
    /// Sentiment classification through the `[chat]` client.
    Chat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    TextBinary,
    ImageMulticlass,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backend: ModelBackendKind,
    pub id: Option<String>,
    pub url: Option<String>,
    #[serde(default)]
    pub command: Vec<String>,
    /// Environment variable holding a bearer token.
    pub token_env: Option<String>,
    #[serde(default = "default_task")]
    pub task: TaskKind,
    pub classes: Option<usize>,
    pub probabilities: Option<bool>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub max_batch: usize,
    #[serde(default = "default_transport_retries")]
    pub retries: usize,
    /// Record live answers as fixtures.
    #[serde(default)]
    pub record: bool,
}

fn default_task() -> TaskKind {
    TaskKind::TextBinary
}

fn default_timeout() -> u64 {
    30
}

fn default_transport_retries() -> usize {
    3
}

impl ModelConfig {
    pub fn id(&self) -> String {
        self.id.clone().unwrap_or_else(|| match self.backend {
            ModelBackendKind::Lexicon => "lexicon".into(),
            ModelBackendKind::Color => "color".into(),
            _ => "model".into(),
        })
    }

    pub fn n_classes(&self) -> usize {
        match (self.task, self.backend) {
            (TaskKind::TextBinary, _) => 2,
            (_, ModelBackendKind::Color) => self.classes.unwrap_or(3),
            _ => self.classes.unwrap_or(2),
        }
    }

    pub fn exposes_probabilities(&self) -> bool {
        self.probabilities.unwrap_or(matches!(self.backend, ModelBackendKind::Lexicon | ModelBackendKind::Color))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChatBackendKind {
    Http,
    Replay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatConfig {
    pub backend: ChatBackendKind,
    #[serde(default = "default_chat_id")]
    pub id: String,
    pub url: Option<String>,
    #[serde(default = "default_chat_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Extra attempts when a reply cannot be parsed.
    #[serde(default = "default_parse_retries")]
    pub retries: usize,
    #[serde(default)]
    pub record: bool,
}

fn default_chat_id() -> String {
    "llm".into()
}

fn default_chat_model() -> String {
    "default".into()
}

fn default_parse_retries() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Feature,
    Concept,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredicateConfig {
    pub level: Level,
    pub n_concepts: usize,
    /// Task description given to concept extraction and generation.
    pub task: String,
    /// Labelled example inputs for the extraction prompt.
    pub examples: String,
    pub dropped: DroppedConcepts,
    pub segments: SegmentParams,
}

impl Default for PredicateConfig {
    fn default() -> Self {
        PredicateConfig {
            level: Level::Feature,
            n_concepts: DEFAULT_CONCEPTS,
            task: "binary sentiment classification".into(),
            examples: "(none)".into(),
            dropped: DroppedConcepts::Omit,
            segments: SegmentParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    /// Defaults to `[MASK]`, or `<UNK>` for chat-backed models.
    pub mask_token: Option<String>,
    pub image_fill: ImageFill,
    /// Bit probability of the evaluation distribution.
    pub q: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { mask_token: None, image_fill: ImageFill::MeanColor, q: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnifiedConfig {
    pub threshold: f64,
}

impl Default for UnifiedConfig {
    fn default() -> Self {
        UnifiedConfig { threshold: predex::unified::DEFAULT_THRESHOLD }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub n: usize,
    pub ks: Vec<u32>,
    /// Compare surrogate and model only as "same label as f(x)" or not.
    /// Defaults to on for image tasks.
    pub reduce_to_same: Option<bool>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { n: 1000, ks: default_k_grid(), reduce_to_same: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub id: String,
    pub text: Option<String>,
    pub image: Option<PathBuf>,
    /// Segment label PNG or RLE JSON (concept level for images).
    pub segments: Option<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let mut cfg: Config = toml::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.paths.fixtures);
        fix(&mut self.paths.templates);
        fix(&mut self.paths.cache);
        for inst in &mut self.instances {
            fix(&mut inst.image);
            fix(&mut inst.segments);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        use ModelBackendKind::*;
        let m = &self.model;
        match m.backend {
            Http if m.url.is_none() => return Err(bad("model.url is required for the http backend")),
            Subprocess if m.command.is_empty() => return Err(bad("model.command is required for the subprocess backend")),
            Replay if self.paths.fixtures.is_none() => return Err(bad("paths.fixtures is required for replay")),
            Chat if self.chat.is_none() => return Err(bad("the chat model backend needs a [chat] section")),
            Chat | Lexicon if m.task != TaskKind::TextBinary => return Err(bad("this backend classifies text only")),
            Color if m.task != TaskKind::ImageMulticlass => return Err(bad("the color backend needs task = \"image-multiclass\"")),
            _ => {}
        }
        if m.n_classes() < 2 {
            return Err(bad("model.classes must be at least 2"));
        }
        if m.record && self.paths.fixtures.is_none() {
            return Err(bad("model.record needs paths.fixtures"));
        }
        if let Some(c) = &self.chat {
            match c.backend {
                ChatBackendKind::Http if c.url.is_none() => return Err(bad("chat.url is required for the http backend")),
                ChatBackendKind::Replay if self.paths.fixtures.is_none() => {
                    return Err(bad("paths.fixtures is required for chat replay"))
                }
                _ => {}
            }
            if c.record && self.paths.fixtures.is_none() {
                return Err(bad("chat.record needs paths.fixtures"));
            }
        }
        if self.instances.is_empty() {
            return Err(bad("at least one [[instances]] entry is required"));
        }
        let mut ids = std::collections::HashSet::new();
        for inst in &self.instances {
            if !ids.insert(inst.id.as_str()) {
                return Err(bad(format!("duplicate instance id {:?}", inst.id)));
            }
            match (m.task, &inst.text, &inst.image) {
                (TaskKind::TextBinary, Some(_), None) | (TaskKind::ImageMulticlass, None, Some(_)) => {}
                (TaskKind::TextBinary, ..) => return Err(bad(format!("instance {:?} needs `text` only", inst.id))),
                (TaskKind::ImageMulticlass, ..) => return Err(bad(format!("instance {:?} needs `image` only", inst.id))),
            }
        }
        if !(self.perturb.q > 0.0 && self.perturb.q < 1.0) {
            return Err(bad("perturb.q must lie in (0,1)"));
        }
        if self.metrics.n == 0 {
            return Err(bad("metrics.n must be positive"));
        }
        if self.metrics.ks.is_empty() || self.metrics.ks.iter().any(|&k| k > 100) || !self.metrics.ks.windows(2).all(|w| w[0] < w[1]) {
            return Err(bad("metrics.ks must be strictly increasing values in 0..=100"));
        }
        if self.predicates.n_concepts == 0 {
            return Err(bad("predicates.n_concepts must be positive"));
        }
        Ok(())
    }

    pub fn mask_token(&self) -> String {
        self.perturb.mask_token.clone().unwrap_or_else(|| {
            if self.model.backend == ModelBackendKind::Chat { UNK_TOKEN } else { MASK_TOKEN }.to_string()
        })
    }

    pub fn reduce_to_same(&self) -> bool {
        self.metrics.reduce_to_same.unwrap_or(self.model.task == TaskKind::ImageMulticlass)
    }

    pub fn instance(&self, id: Option<&str>) -> Result<&Instance, ConfigError> {
        match id {
            None => Ok(&self.instances[0]),
            Some(id) => self.instances.iter().find(|i| i.id == id).ok_or_else(|| bad(format!("no instance {id:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("[model]\nbackend = \"lexicon\"\n[[instances]]\nid = \"a\"\ntext = \"I love it\"\n").unwrap();
        assert_eq!(cfg.metrics.n, 1000);
        assert_eq!(cfg.metrics.ks, (1..=10).map(|i| i * 10).collect::<Vec<_>>());
        assert_eq!(cfg.predicates.n_concepts, 10);
        assert_eq!(cfg.mask_token(), "[MASK]");
        assert_eq!(cfg.lime.kernel_width, 0.25);
        assert!(cfg.model.exposes_probabilities());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = parse(
            "seed = 9\n[model]\nbackend = \"lexicon\"\n[lime]\nn_samples = 50\n[anchors]\nprecision_target = 0.9\n\
             [perturb]\nimage_fill = { fixed-color = [1, 2, 3] }\n[[instances]]\nid = \"a\"\ntext = \"x\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lime.n_samples, 50);
        assert_eq!(cfg.anchors.precision_target, 0.9);
        assert_eq!(cfg.perturb.image_fill, ImageFill::FixedColor([1, 2, 3]));
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in [
            "[model]\nbackend = \"http\"\n[[instances]]\nid = \"a\"\ntext = \"x\"\n",
            "[model]\nbackend = \"lexicon\"\n",
            "[model]\nbackend = \"lexicon\"\nbogus = 1\n[[instances]]\nid = \"a\"\ntext = \"x\"\n",
            "[model]\nbackend = \"lexicon\"\n[[instances]]\nid = \"a\"\nimage = \"x.png\"\n",
            "[model]\nbackend = \"chat\"\n[[instances]]\nid = \"a\"\ntext = \"x\"\n",
            "[model]\nbackend = \"lexicon\"\n[metrics]\nks = [20, 10]\n[[instances]]\nid = \"a\"\ntext = \"x\"\n",
        ] {
            assert!(parse(text).is_err(), "{text}");
        }
    }
}
