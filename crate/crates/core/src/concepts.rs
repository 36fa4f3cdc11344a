//! Building predicate spaces: tokens and segments for feature-level spaces,
//! concepts from a chat client for concept-level ones.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::predicate::{PredicateDescriptor, PredicateSpace};
use crate::prompt::{extract_json, slots, templated_chat, ChatClient, Template};

/// Label value marking unlabeled pixels in ingested label images.
pub const UNLABELED: u8 = 255;

/// Default number of concepts extracted per text instance.
pub const DEFAULT_CONCEPTS: usize = 10;

/// Whitespace tokenization; punctuation stays attached to its word.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Per-pixel segment labels, contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
    /// Original id of each normalized segment.
    pub segment_ids: Vec<u32>,
}

impl SegmentMap {
    /// Normalizes arbitrary ids to `0..s` in ascending id order; pixels with
    /// the `background` id (if any) form one extra segment placed last.
    pub fn from_raw(width: u32, height: u32, raw: &[u32], background: Option<u32>) -> Result<Self> {
        let n = width as usize * height as usize;
        if n == 0 {
            return Err(Error::InvalidInput("segment map has no pixels".into()));
        }
        if raw.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: raw.len() });
        }
        let mut ids: Vec<u32> = raw.iter().copied().filter(|&v| Some(v) != background).collect();
        ids.sort_unstable();
        ids.dedup();
        if let Some(bg) = background {
            if raw.contains(&bg) {
                ids.push(bg);
            }
        }
        let index: BTreeMap<u32, u32> = ids.iter().enumerate().map(|(i, &id)| (id, i as u32)).collect();
        Ok(SegmentMap {
            width,
            height,
            labels: raw.iter().map(|v| index[v]).collect(),
            segment_ids: ids,
        })
    }

    pub fn segment_count(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn label_at(&self, x: u32, y: u32) -> u32 {
        self.labels[(y * self.width + x) as usize]
    }

    /// Row-major pixel indices of every segment.
    pub fn pixel_sets(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); self.segment_count()];
        for (i, &l) in self.labels.iter().enumerate() {
            sets[l as usize].push(i);
        }
        sets
    }

    pub fn check_dimensions(&self, width: u32, height: u32) -> Result<()> {
        if (self.width, self.height) != (width, height) {
            return Err(Error::InvalidInput(format!(
                "segment map is {}x{}, image is {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Encode as an 8-bit label image (at most 255 segments).
    pub fn to_label_image(&self) -> Result<image::GrayImage> {
        if self.segment_count() > UNLABELED as usize {
            return Err(Error::InvalidInput("too many segments for an 8-bit label image".into()));
        }
        Ok(image::GrayImage::from_fn(self.width, self.height, |x, y| image::Luma([self.label_at(x, y) as u8])))
    }
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    pub cell: u32,
    pub merge_tol: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams { cell: 16, merge_tol: 10.0 }
    }
}

/// Grid segmentation: `cell`x`cell` blocks, 4-adjacent blocks merged when
/// their mean RGB colors are within `merge_tol` (Euclidean). Segments are
/// numbered in raster order of their first pixel.
pub fn segment_image(img: &RgbImage, params: SegmentParams) -> Result<SegmentMap> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput("image has no pixels".into()));
    }
    if params.cell == 0 {
        return Err(Error::InvalidInput("cell size must be at least 1".into()));
    }
    let cell = params.cell;
    let (bw, bh) = (w.div_ceil(cell), h.div_ceil(cell));
    let block_of = |x: u32, y: u32| (y / cell * bw + x / cell) as usize;

    let mut sums = vec![[0f64; 3]; (bw * bh) as usize];
    let mut counts = vec![0usize; sums.len()];
    for (x, y, px) in img.enumerate_pixels() {
        let b = block_of(x, y);
        for c in 0..3 {
            sums[b][c] += f64::from(px.0[c]);
        }
        counts[b] += 1;
    }
    let means: Vec<[f64; 3]> =
        sums.iter().zip(&counts).map(|(s, &n)| s.map(|v| v / n as f64)).collect();
    let close = |a: usize, b: usize| {
        let d2: f64 = (0..3).map(|c| (means[a][c] - means[b][c]).powi(2)).sum();
        d2.sqrt() <= params.merge_tol
    };

    let mut sets = DisjointSet((0..means.len()).collect());
    for by in 0..bh {
        for bx in 0..bw {
            let b = (by * bw + bx) as usize;
            if bx + 1 < bw && close(b, b + 1) {
                sets.union(b, b + 1);
            }
            if by + 1 < bh && close(b, b + bw as usize) {
                sets.union(b, b + bw as usize);
            }
        }
    }

    let mut order: BTreeMap<usize, u32> = BTreeMap::new();
    let mut labels = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let root = sets.find(block_of(x, y));
            let next = order.len() as u32;
            labels.push(*order.entry(root).or_insert(next));
        }
    }
    let s = order.len() as u32;
    Ok(SegmentMap { width: w, height: h, labels, segment_ids: (0..s).collect() })
}

#[derive(Deserialize)]
struct RleDoc {
    width: u32,
    height: u32,
    runs: Vec<(u32, u64)>,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    start + column.saturating_sub(1)
}

/// Parse a run-length JSON label map (`{"width","height","runs":[[label,len],...]}`).
pub fn parse_rle(text: &str) -> Result<SegmentMap> {
    let doc: RleDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let n = doc.width as u64 * doc.height as u64;
    let covered: u64 = doc.runs.iter().map(|r| r.1).sum();
    if covered != n {
        return Err(Error::Parse {
            offset: text.find("\"runs\"").unwrap_or(0),
            message: format!("runs cover {covered} pixels, expected {}x{} = {n}", doc.width, doc.height),
        });
    }
    let mut raw = Vec::with_capacity(n as usize);
    for (label, len) in doc.runs {
        raw.extend(std::iter::repeat_n(label, len as usize));
    }
    SegmentMap::from_raw(doc.width, doc.height, &raw, None)
}

/// Decode an 8-bit grayscale PNG label image; value 255 marks unlabeled
/// pixels, which become one background segment.
pub fn parse_label_png(bytes: &[u8]) -> Result<SegmentMap> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Parse { offset: 0, message: format!("label image: {e}") })?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Parse {
                offset: 25,
                message: format!("label image must be 8-bit grayscale, found {:?}", other.color()),
            })
        }
    };
    let raw: Vec<u32> = gray.as_raw().iter().map(|&v| u32::from(v)).collect();
    SegmentMap::from_raw(gray.width(), gray.height(), &raw, Some(u32::from(UNLABELED)))
}

/// Load a segment map from a label PNG or run-length JSON file, optionally
/// checking it against the target image's dimensions.
pub fn ingest_segment_map(path: &Path, expected: Option<(u32, u32)>) -> Result<SegmentMap> {
    let bytes = std::fs::read(path)?;
    let map = if bytes.starts_with(b"\x89PNG") {
        parse_label_png(&bytes)?
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::Parse { offset: e.valid_up_to(), message: "file is neither PNG nor UTF-8 JSON".into() })?;
        parse_rle(text)?
    };
    if let Some((w, h)) = expected {
        map.check_dimensions(w, h)?;
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_guide: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSet {
    pub concepts: Vec<Concept>,
    pub task_context: String,
}

impl ConceptSet {
    pub fn new(concepts: Vec<Concept>, task_context: impl Into<String>, max: usize) -> Result<Self> {
        if concepts.is_empty() || concepts.len() > max {
            return Err(Error::InvalidInput(format!("need 1..={max} concepts, got {}", concepts.len())));
        }
        let mut names = HashSet::new();
        for c in &concepts {
            if c.name.trim().is_empty() || c.description.trim().is_empty() {
                return Err(Error::InvalidInput("concepts need a name and a description".into()));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate concept name {:?}", c.name)));
            }
        }
        Ok(ConceptSet { concepts, task_context: task_context.into() })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

fn text_field(obj: &Value, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| match obj.get(*k) {
        Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Some(v @ Value::Object(_)) | Some(v @ Value::Array(_)) => Some(v.to_string()),
        _ => None,
    })
}

/// Parse a concept list reply: either `{"concepts": [...]}` or a bare
/// array, each item carrying a name and a description (questionnaire-style
/// keys such as `"Concept Name"` are accepted too).
pub fn parse_concepts(text: &str) -> std::result::Result<Vec<Concept>, String> {
    let v = extract_json(text)?;
    let items = match &v {
        Value::Array(a) => a,
        Value::Object(o) => match o.get("concepts") {
            Some(Value::Array(a)) => a,
            _ => return Err("expected a \"concepts\" array".into()),
        },
        _ => return Err("expected a JSON object or array".into()),
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let name = text_field(item, &["name", "Concept Name"]).ok_or(format!("concept {i} has no name"))?;
            let description = text_field(item, &["description", "Concept Description"])
                .ok_or(format!("concept {i} has no description"))?;
            let response_guide = text_field(item, &["response_guide", "Response Guide"]);
            Ok(Concept { name, description, response_guide })
        })
        .collect()
}

/// Ask `client` for `n` concepts relevant to `instance` under `task_context`.
/// `examples` fills the template's `{examples}` slot (labelled similar
/// inputs chosen by the caller).
pub fn extract_text_concepts(
    instance: &str,
    task_context: &str,
    examples: &str,
    n: usize,
    client: &dyn ChatClient,
    template: &Template,
    retries: usize,
) -> Result<ConceptSet> {
    if n == 0 {
        return Err(Error::InvalidInput("at least one concept is required".into()));
    }
    let s = slots([
        ("task", task_context.to_string()),
        ("input", instance.to_string()),
        ("examples", examples.to_string()),
        ("n", n.to_string()),
    ]);
    let mut concepts = match templated_chat(client, template, &s, retries, parse_concepts) {
        Ok(c) => c,
        Err(Error::Unparseable { message, raw }) => return Err(Error::Extraction { message, raw: Some(raw) }),
        Err(e @ (Error::Retryable(_) | Error::Template(_))) => return Err(e),
        Err(e) => return Err(Error::Extraction { message: e.to_string(), raw: None }),
    };
    if concepts.len() < n {
        return Err(Error::Extraction {
            message: format!("insufficient concepts: got {}, need {n}", concepts.len()),
            raw: None,
        });
    }
    concepts.truncate(n);
    ConceptSet::new(concepts, task_context, n).map_err(|e| Error::Extraction { message: e.to_string(), raw: None })
}

pub enum PredicateSource<'a> {
    Tokens(&'a [String]),
    Segments(&'a SegmentMap),
    Concepts(&'a ConceptSet),
}

pub fn build_predicate_space(source: PredicateSource<'_>, instance_ref: &str) -> Result<PredicateSpace> {
    match source {
        PredicateSource::Tokens(tokens) => {
            if tokens.is_empty() {
                return Err(Error::InvalidInput("no tokens".into()));
            }
            let preds = tokens
                .iter()
                .enumerate()
                .map(|(i, t)| PredicateDescriptor {
                    id: i,
                    name: t.clone(),
                    description: format!("token {i} is {t:?}"),
                    feature_indices: vec![i],
                    metadata: None,
                })
                .collect();
            PredicateSpace::feature_level(instance_ref, preds, tokens.len())
        }
        PredicateSource::Segments(map) => {
            let preds = map
                .pixel_sets()
                .into_iter()
                .enumerate()
                .map(|(i, pixels)| PredicateDescriptor {
                    id: i,
                    name: format!("segment {i}"),
                    description: format!("segment {i} ({} pixels) is unchanged", pixels.len()),
                    feature_indices: pixels,
                    metadata: None,
                })
                .collect();
            PredicateSpace::feature_level(instance_ref, preds, map.labels.len())
        }
        PredicateSource::Concepts(set) => {
            if set.is_empty() {
                return Err(Error::InvalidInput("no concepts".into()));
            }
            let preds = set
                .concepts
                .iter()
                .enumerate()
                .map(|(i, c)| PredicateDescriptor {
                    id: i,
                    name: c.name.clone(),
                    description: c.description.clone(),
                    feature_indices: Vec::new(),
                    metadata: c.response_guide.clone(),
                })
                .collect();
            PredicateSpace::concept_level(instance_ref, preds)
        }
    }
}
