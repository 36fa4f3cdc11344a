//! Target model backends and the validating handle the explainers call.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use predex::model::InputModel;
use predex::perturb::{EMPTY_SENTINEL, MASK_TOKEN, UNK_TOKEN};
use predex::{Error, Prediction, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::digest::request_digest;
use crate::fixtures::FixtureStore;
use crate::http;
use crate::retry::{excerpt, RetryPolicy};
use crate::wire::{decode_image, WireInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Task {
    TextBinary,
    ImageMulticlass { classes: usize },
}

impl Task {
    pub fn n_classes(&self) -> usize {
        match self {
            Task::TextBinary => 2,
            Task::ImageMulticlass { classes } => *classes,
        }
    }
}

/// One backend answer, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireOutput {
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
}

/// Raw transport to a model: JSON inputs in, one output per input back.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn call(&self, inputs: &[Value]) -> Result<Vec<WireOutput>>;
}

/// `POST <url>` with `{"inputs":[...]}`, expecting
/// `{"labels":[...], "probabilities":[[...]]}` (probabilities optional).
pub struct HttpBackend {
    id: String,
    url: String,
    bearer: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(id: impl Into<String>, url: impl Into<String>, bearer: Option<String>, timeout: Duration) -> Self {
        HttpBackend { id: id.into(), url: url.into(), bearer, agent: http::agent(timeout) }
    }
}

#[derive(Deserialize)]
struct HttpReply {
    labels: Vec<usize>,
    #[serde(default)]
    probabilities: Option<Vec<Vec<f64>>>,
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, inputs: &[Value]) -> Result<Vec<WireOutput>> {
        let raw = http::post_json(&self.agent, &self.url, self.bearer.as_deref(), &json!({ "inputs": inputs }))?;
        let reply: HttpReply = serde_json::from_value(raw.clone())
            .map_err(|e| Error::Protocol(format!("{}: {e}; payload: {}", self.id, excerpt(&raw.to_string()))))?;
        if let Some(p) = &reply.probabilities {
            if p.len() != reply.labels.len() {
                return Err(Error::Protocol(format!(
                    "{}: {} labels but {} probability vectors",
                    self.id,
                    reply.labels.len(),
                    p.len()
                )));
            }
        }
        let mut probs = reply.probabilities.map(|p| p.into_iter().map(Some).collect::<Vec<_>>());
        Ok(reply
            .labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| WireOutput { label, probabilities: probs.as_mut().and_then(|p| p[i].take()) })
            .collect())
    }
}

/// Spawns `program` per batch, writes one `{"input": ...}` line per input
/// to its stdin and reads one `{"label": ..}` line per input back.
pub struct SubprocessBackend {
    id: String,
    program: String,
    args: Vec<String>,
}

impl SubprocessBackend {
    pub fn new(id: impl Into<String>, program: impl Into<String>, args: Vec<String>) -> Self {
        SubprocessBackend { id: id.into(), program: program.into(), args }
    }
}

impl Backend for SubprocessBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, inputs: &[Value]) -> Result<Vec<WireOutput>> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Retryable(format!("{}: cannot start {}: {e}", self.id, self.program)))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let lines: String = inputs.iter().map(|v| format!("{}\n", json!({ "input": v }))).collect();
        let writer = std::thread::spawn(move || stdin.write_all(lines.as_bytes()));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut out = Vec::with_capacity(inputs.len());
        for line in stdout.lines() {
            let line = line.map_err(|e| Error::Retryable(format!("{}: reading stdout: {e}", self.id)))?;
            if line.trim().is_empty() {
                continue;
            }
            let o: WireOutput = serde_json::from_str(&line)
                .map_err(|e| Error::Protocol(format!("{}: {e}; payload: {}", self.id, excerpt(&line))))?;
            out.push(o);
        }
        let wrote = writer.join().expect("writer thread");
        let status = child.wait()?;
        if !status.success() {
            let mut err = String::new();
            if let Some(mut s) = child.stderr.take() {
                let _ = std::io::Read::read_to_string(&mut s, &mut err);
            }
            return Err(Error::Retryable(format!("{}: exited with {status}: {}", self.id, excerpt(&err))));
        }
        wrote.map_err(|e| Error::Retryable(format!("{}: writing stdin: {e}", self.id)))?;
        Ok(out)
    }
}

/// Answers from recorded fixtures only; a missing entry is an error.
pub struct ReplayBackend {
    id: String,
    store: FixtureStore,
}

impl ReplayBackend {
    pub fn new(root: impl AsRef<Path>, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        Ok(ReplayBackend { store: FixtureStore::new(root, &id)?, id })
    }
}

fn fixture_output(v: Value, id: &str) -> Result<WireOutput> {
    let resp = v.get("response").cloned().unwrap_or(v);
    serde_json::from_value(resp.clone())
        .map_err(|e| Error::Protocol(format!("{id}: bad fixture: {e}; payload: {}", excerpt(&resp.to_string()))))
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, inputs: &[Value]) -> Result<Vec<WireOutput>> {
        inputs.iter().map(|v| fixture_output(self.store.require(&request_digest(v))?, &self.id)).collect()
    }
}

/// Forwards to a live backend and records every answer as a fixture.
/// Inputs that already have a fixture are served from it.
pub struct RecordingBackend {
    inner: Box<dyn Backend>,
    store: FixtureStore,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn Backend>, root: impl AsRef<Path>) -> Result<Self> {
        let store = FixtureStore::new(root, inner.id())?;
        Ok(RecordingBackend { inner, store })
    }
}

impl Backend for RecordingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn call(&self, inputs: &[Value]) -> Result<Vec<WireOutput>> {
        let digests: Vec<String> = inputs.iter().map(request_digest).collect();
        let mut out: Vec<Option<WireOutput>> = Vec::with_capacity(inputs.len());
        for d in &digests {
            out.push(self.store.get(d)?.map(|v| fixture_output(v, self.id())).transpose()?);
        }
        let todo: Vec<usize> = (0..inputs.len()).filter(|&i| out[i].is_none()).collect();
        if !todo.is_empty() {
            let batch: Vec<Value> = todo.iter().map(|&i| inputs[i].clone()).collect();
            let fresh = self.inner.call(&batch)?;
            if fresh.len() != batch.len() {
                return Err(Error::Protocol(format!(
                    "{}: {} outputs for {} inputs",
                    self.id(),
                    fresh.len(),
                    batch.len()
                )));
            }
            for (&i, o) in todo.iter().zip(fresh) {
                let record = json!({ "request": { "inputs": [inputs[i]] }, "response": o });
                self.store.put(&digests[i], &record)?;
                out[i] = Some(o);
            }
        }
        Ok(out.into_iter().map(|o| o.expect("filled above")).collect())
    }
}

type Predictor = dyn Fn(&Value) -> Result<WireOutput> + Send + Sync;

/// A predictor running in this process.
pub struct InProcessBackend {
    id: String,
    f: Box<Predictor>,
}

impl InProcessBackend {
    pub fn new(id: impl Into<String>, f: impl Fn(&Value) -> Result<WireOutput> + Send + Sync + 'static) -> Self {
        InProcessBackend { id: id.into(), f: Box::new(f) }
    }
}

impl Backend for InProcessBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, inputs: &[Value]) -> Result<Vec<WireOutput>> {
        inputs.iter().map(|v| (self.f)(v)).collect()
    }
}

/// Word-weight sentiment scorer: `p(positive) = sigmoid(bias + sum of
/// word weights)`. Masked tokens and unknown words weigh nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconSentiment {
    pub weights: HashMap<String, f64>,
    pub bias: f64,
}

impl Default for LexiconSentiment {
    fn default() -> Self {
        let words = [
            ("love", 2.0),
            ("great", 2.0),
            ("excellent", 2.0),
            ("wonderful", 2.0),
            ("good", 1.5),
            ("best", 1.5),
            ("enjoy", 1.5),
            ("enjoyed", 1.5),
            ("like", 1.0),
            ("fun", 1.0),
            ("much", 0.3),
            ("hate", -2.0),
            ("awful", -2.0),
            ("terrible", -2.0),
            ("worst", -2.0),
            ("bad", -1.5),
            ("boring", -1.5),
            ("dull", -1.0),
            ("not", -0.8),
        ];
        LexiconSentiment { weights: words.iter().map(|(w, s)| (w.to_string(), *s)).collect(), bias: -0.2 }
    }
}

impl LexiconSentiment {
    pub fn positive_probability(&self, text: &str) -> f64 {
        let score: f64 = text
            .split_whitespace()
            .filter(|t| *t != MASK_TOKEN && *t != UNK_TOKEN && *t != EMPTY_SENTINEL)
            .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
            .filter_map(|t| self.weights.get(&t))
            .sum();
        1.0 / (1.0 + (-(self.bias + score)).exp())
    }

    pub fn predict(&self, text: &str) -> WireOutput {
        let p = self.positive_probability(text);
        WireOutput { label: usize::from(p >= 0.5), probabilities: Some(vec![1.0 - p, p]) }
    }

    pub fn into_backend(self, id: impl Into<String>) -> InProcessBackend {
        InProcessBackend::new(id, move |v| match v {
            Value::String(s) => Ok(self.predict(s)),
            other => Err(Error::Protocol(format!("expected a text input, got {}", excerpt(&other.to_string())))),
        })
    }
}

/// Toy image classifier: softmax over the mean of each colour channel
/// (class 0 red, 1 green, 2 blue).
pub fn dominant_color_backend(id: impl Into<String>) -> InProcessBackend {
    InProcessBackend::new(id, |v| {
        let img = decode_image(v)?;
        let n = f64::from(img.width() * img.height()).max(1.0);
        let mut mean = [0.0f64; 3];
        for p in img.pixels() {
            for c in 0..3 {
                mean[c] += f64::from(p[c]) / n;
            }
        }
        let e: Vec<f64> = mean.iter().map(|m| (m / 32.0).exp()).collect();
        let z: f64 = e.iter().sum();
        let probs: Vec<f64> = e.iter().map(|x| x / z).collect();
        let label = (0..3).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        Ok(WireOutput { label, probabilities: Some(probs) })
    })
}

/// A backend plus the contract its answers must meet.
pub struct ModelHandle {
    backend: Box<dyn Backend>,
    pub task: Task,
    pub exposes_probabilities: bool,
    pub retry: RetryPolicy,
    /// Largest batch sent in one call; 0 means unlimited.
    pub max_batch: usize,
}

const NORMALIZATION_TOL: f64 = 1e-6;

impl ModelHandle {
    pub fn new(backend: Box<dyn Backend>, task: Task, exposes_probabilities: bool) -> Result<Self> {
        if task.n_classes() < 2 {
            return Err(Error::InvalidInput("a classifier needs at least two classes".into()));
        }
        Ok(ModelHandle { backend, task, exposes_probabilities, retry: RetryPolicy::default(), max_batch: 0 })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_batch(mut self, n: usize) -> Self {
        self.max_batch = n;
        self
    }

    pub fn id(&self) -> &str {
        self.backend.id()
    }

    fn check(&self, o: WireOutput) -> Result<Prediction> {
        let m = self.task.n_classes();
        if o.label >= m {
            return Err(Error::Protocol(format!("{}: label {} out of range for {m} classes", self.id(), o.label)));
        }
        if !self.exposes_probabilities {
            return Ok(Prediction::label_only(o.label));
        }
        let p = o
            .probabilities
            .ok_or_else(|| Error::Protocol(format!("{}: probabilities missing", self.id())))?;
        if p.len() != m || p.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
            return Err(Error::Protocol(format!("{}: invalid probability vector {p:?}", self.id())));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Protocol(format!("{}: probabilities not normalized (sum {sum})", self.id())));
        }
        Ok(Prediction::with_scores(o.label, p))
    }

    /// Validated predictions for already-encoded inputs, in order.
    pub fn predict_wire(&self, inputs: &[Value]) -> Result<Vec<Prediction>> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let size = if self.max_batch == 0 { inputs.len() } else { self.max_batch };
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(size) {
            let got = self.retry.run(|| self.backend.call(chunk))?;
            if got.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "{}: {} outputs for {} inputs",
                    self.id(),
                    got.len(),
                    chunk.len()
                )));
            }
            for o in got {
                out.push(self.check(o)?);
            }
        }
        Ok(out)
    }
}

impl<I: WireInput + Sync> InputModel<I> for ModelHandle {
    fn predict_batch(&self, inputs: &[I]) -> Result<Vec<Prediction>> {
        let wire = inputs.iter().map(WireInput::to_wire).collect::<Result<Vec<_>>>()?;
        self.predict_wire(&wire)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Fixed(Vec<WireOutput>, Arc<AtomicUsize>);

    impl Backend for Fixed {
        fn id(&self) -> &str {
            "fixed"
        }

        fn call(&self, inputs: &[Value]) -> Result<Vec<WireOutput>> {
            self.1.fetch_add(1, Ordering::SeqCst);
            Ok(self.0.iter().cycle().take(inputs.len()).cloned().collect())
        }
    }

    fn handle(outputs: Vec<WireOutput>, probs: bool) -> ModelHandle {
        ModelHandle::new(Box::new(Fixed(outputs, Arc::default())), Task::TextBinary, probs).unwrap()
    }

    #[test]
    fn order_preserving_shape() {
        let h = ModelHandle::new(Box::new(LexiconSentiment::default().into_backend("lex")), Task::TextBinary, true).unwrap();
        let out = h.predict_batch(&["I love it".to_string(), "awful".to_string()]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].label, out[1].label), (1, 0));
    }

    #[test]
    fn unnormalized_probabilities_rejected() {
        let h = handle(vec![WireOutput { label: 0, probabilities: Some(vec![0.6, 0.5]) }], true);
        let err = InputModel::<String>::predict_batch(&h, &["x".into()]).unwrap_err();
        assert!(err.to_string().contains("not normalized"), "{err}");
    }

    #[test]
    fn probabilities_required_iff_exposed() {
        let h = handle(vec![WireOutput { label: 1, probabilities: None }], true);
        assert!(InputModel::<String>::predict_batch(&h, &["x".into()]).is_err());
        let h = handle(vec![WireOutput { label: 1, probabilities: Some(vec![0.2, 0.8]) }], false);
        let out = InputModel::<String>::predict_batch(&h, &["x".into()]).unwrap();
        assert_eq!(out[0], Prediction::label_only(1));
        let h = handle(vec![WireOutput { label: 2, probabilities: None }], false);
        assert!(InputModel::<String>::predict_batch(&h, &["x".into()]).is_err());
    }

    #[test]
    fn batches_are_split() {
        let calls = Arc::new(AtomicUsize::new(0));
        let h = ModelHandle::new(
            Box::new(Fixed(vec![WireOutput { label: 0, probabilities: None }], calls.clone())),
            Task::TextBinary,
            false,
        )
        .unwrap()
        .with_max_batch(2);
        let inputs: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        assert_eq!(h.predict_batch(&inputs).unwrap().len(), 5);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn replay_miss_is_protocol_error() {
        let tmp = tempfile::tempdir().unwrap();
        let h = ModelHandle::new(Box::new(ReplayBackend::new(tmp.path(), "m").unwrap()), Task::TextBinary, false).unwrap();
        let err = InputModel::<String>::predict_batch(&h, &["unseen".into()]).unwrap_err();
        assert!(matches!(err, Error::Protocol(ref m) if m.contains("fixture miss")), "{err}");
    }

    #[test]
    fn record_then_replay() {
        let tmp = tempfile::tempdir().unwrap();
        let live = LexiconSentiment::default().into_backend("lex");
        let rec = ModelHandle::new(Box::new(RecordingBackend::new(Box::new(live), tmp.path()).unwrap()), Task::TextBinary, true).unwrap();
        let inputs = vec!["good fun".to_string(), "bad".to_string(), "good fun".to_string()];
        let a = rec.predict_batch(&inputs).unwrap();
        let replay = ModelHandle::new(Box::new(ReplayBackend::new(tmp.path(), "lex").unwrap()), Task::TextBinary, true).unwrap();
        assert_eq!(replay.predict_batch(&inputs).unwrap(), a);
        assert_eq!(std::fs::read_dir(tmp.path().join("lex")).unwrap().count(), 2);
    }

    #[test]
    fn lexicon_ignores_masks() {
        let lex = LexiconSentiment::default();
        assert_eq!(lex.positive_probability("[MASK] <UNK>"), lex.positive_probability(""));
        assert_eq!(lex.predict("I love this movie so much").label, 1);
        assert_eq!(lex.predict("").label, 0);
    }

    #[test]
    fn dominant_color() {
        let b = dominant_color_backend("color");
        let img = image::RgbImage::from_pixel(4, 4, image::Rgb([10, 200, 30]));
        let out = b.call(&[img.to_wire().unwrap()]).unwrap();
        assert_eq!(out[0].label, 1);
        assert!((out[0].probabilities.as_ref().unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
