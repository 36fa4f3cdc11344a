//! Sampling in predicate space and realizing samples back into model inputs.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use image::{Rgb, RgbImage};
use parking_lot::RwLock;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::{ConceptSet, SegmentMap};
use crate::error::{Error, Result};
use crate::model::{InputModel, Prediction, Realizer};
use crate::predicate::BitVector;
use crate::prompt::{parse_answer, slots, templated_chat, ChatClient, Slots, Template};

/// Sentinel passed to models when every token is masked.
pub const EMPTY_SENTINEL: &str = "<EMPTY>";
/// Mask token for encoder-style models.
pub const MASK_TOKEN: &str = "[MASK]";
/// Mask token for prompted generation models.
pub const UNK_TOKEN: &str = "<UNK>";

/// Seeded generator used everywhere sampling must be reproducible.
pub type SampleRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    /// Independent bits, each 1 with probability `q`.
    Bernoulli { q: f64 },
    /// Size `s` uniform in `1..d`, then a uniform subset of that size.
    SizeStratified,
    /// Bits in `anchor` forced to 1, bits in `negated` forced to 0, the
    /// rest Bernoulli(`q`).
    AnchorConditional {
        anchor: BTreeSet<usize>,
        #[serde(default)]
        negated: BTreeSet<usize>,
        q: f64,
    },
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Bernoulli { q: 0.5 }
    }
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::Bernoulli { q } | Strategy::AnchorConditional { q, .. } if !(*q > 0.0 && *q < 1.0) => {
                Err(Error::InvalidInput(format!("bernoulli q must lie in (0,1), got {q}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageFill {
    /// Mean color of the whole image.
    MeanColor,
    FixedColor([u8; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbPolicy {
    pub strategy: Strategy,
    pub mask_token: String,
    pub image_fill: ImageFill,
    pub seed: u64,
}

impl Default for PerturbPolicy {
    fn default() -> Self {
        PerturbPolicy {
            strategy: Strategy::default(),
            mask_token: MASK_TOKEN.to_string(),
            image_fill: ImageFill::MeanColor,
            seed: 0,
        }
    }
}

pub fn sample_bitvector<R: Rng + ?Sized>(d: usize, strategy: &Strategy, rng: &mut R) -> BitVector {
    match strategy {
        Strategy::Bernoulli { q } => BitVector::new((0..d).map(|_| rng.gen_bool(*q)).collect()),
        Strategy::SizeStratified if d < 2 => BitVector::new((0..d).map(|_| rng.gen_bool(0.5)).collect()),
        Strategy::SizeStratified => {
            let s = rng.gen_range(1..d);
            let mut bits = vec![false; d];
            for i in index::sample(rng, d, s) {
                bits[i] = true;
            }
            BitVector::new(bits)
        }
        Strategy::AnchorConditional { anchor, negated, q } => BitVector::new(
            (0..d)
                .map(|i| {
                    // draw for every bit so the stream does not depend on the conditioning set
                    let b = rng.gen_bool(*q);
                    if anchor.contains(&i) {
                        true
                    } else if negated.contains(&i) {
                        false
                    } else {
                        b
                    }
                })
                .collect(),
        ),
    }
}

pub fn sample_bitvectors<R: Rng + ?Sized>(d: usize, n: usize, strategy: &Strategy, rng: &mut R) -> Vec<BitVector> {
    (0..n).map(|_| sample_bitvector(d, strategy, rng)).collect()
}

/// Sampled vectors, their realized inputs and where they came from.
#[derive(Debug, Clone)]
pub struct SampleBatch<I> {
    pub bitvectors: Vec<BitVector>,
    pub realized: Vec<I>,
    pub strategy: Strategy,
    pub seed: u64,
}

impl<I: Send> SampleBatch<I> {
    pub fn realize<R: Realizer<Input = I>>(bitvectors: Vec<BitVector>, realizer: &R, strategy: Strategy, seed: u64) -> Result<Self> {
        use rayon::prelude::*;
        let realized = bitvectors.par_iter().map(|z| realizer.realize(z)).collect::<Result<Vec<_>>>()?;
        Ok(SampleBatch { bitvectors, realized, strategy, seed })
    }
}

/// Model outputs for a realized batch, in submission order. Identical
/// vectors are sent once and share their output.
pub fn evaluate_samples<I: Clone, M: InputModel<I>>(model: &M, batch: &SampleBatch<I>) -> Result<Vec<Prediction>> {
    if batch.bitvectors.len() != batch.realized.len() {
        return Err(Error::dims(batch.bitvectors.len(), batch.realized.len()));
    }
    let mut first: HashMap<&BitVector, usize> = HashMap::new();
    let mut unique = Vec::new();
    let slot: Vec<usize> = batch
        .bitvectors
        .iter()
        .enumerate()
        .map(|(i, z)| {
            *first.entry(z).or_insert_with(|| {
                unique.push(batch.realized[i].clone());
                unique.len() - 1
            })
        })
        .collect();
    let out = model.predict_batch(&unique)?;
    if out.len() != unique.len() {
        return Err(Error::Protocol(format!("model returned {} outputs for {} inputs", out.len(), unique.len())));
    }
    Ok(slot.into_iter().map(|i| out[i].clone()).collect())
}

/// Keep tokens whose bit is 1, replace the rest with `mask_token`; the
/// all-zero vector becomes the `<EMPTY>` sentinel.
pub fn realize_text_feature(tokens: &[String], z: &BitVector, mask_token: &str) -> Result<String> {
    if tokens.len() != z.len() {
        return Err(Error::dims(tokens.len(), z.len()));
    }
    if z.is_all_zeros() {
        return Ok(EMPTY_SENTINEL.to_string());
    }
    let words: Vec<&str> =
        tokens.iter().zip(z.bits()).map(|(t, keep)| if *keep { t.as_str() } else { mask_token }).collect();
    Ok(words.join(" "))
}

pub struct TextFeatureRealizer {
    pub tokens: Vec<String>,
    pub mask_token: String,
}

impl Realizer for TextFeatureRealizer {
    type Input = String;

    fn realize(&self, z: &BitVector) -> Result<String> {
        realize_text_feature(&self.tokens, z, &self.mask_token)
    }
}

pub fn mean_color(img: &RgbImage) -> [u8; 3] {
    let n = (img.width() as u64 * img.height() as u64).max(1);
    let mut sums = [0u64; 3];
    for px in img.pixels() {
        for c in 0..3 {
            sums[c] += u64::from(px.0[c]);
        }
    }
    sums.map(|s| ((s + n / 2) / n) as u8)
}

/// Keep pixels of segments whose bit is 1 and fill the others.
pub fn realize_image(img: &RgbImage, z: &BitVector, segmap: &SegmentMap, fill: ImageFill) -> Result<RgbImage> {
    segmap.check_dimensions(img.width(), img.height())?;
    if z.len() != segmap.segment_count() {
        return Err(Error::dims(segmap.segment_count(), z.len()));
    }
    let color = match fill {
        ImageFill::MeanColor => mean_color(img),
        ImageFill::FixedColor(c) => c,
    };
    let mut out = img.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        if !z.get(segmap.labels[i] as usize) {
            *px = Rgb(color);
        }
    }
    Ok(out)
}

pub struct ImageRealizer {
    pub image: RgbImage,
    pub segments: SegmentMap,
    pub fill: ImageFill,
}

impl Realizer for ImageRealizer {
    type Input = RgbImage;

    fn realize(&self, z: &BitVector) -> Result<RgbImage> {
        realize_image(&self.image, z, &self.segments, self.fill)
    }
}

/// What the generation prompt says about concepts whose bit is 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DroppedConcepts {
    #[default]
    Omit,
    Negate,
}

/// Realizations shared across concept realizers, keyed by
/// `(instance id, bit string)`.
#[derive(Default)]
pub struct ConceptCache {
    entries: RwLock<HashMap<(String, String), String>>,
}

impl ConceptCache {
    pub fn get(&self, instance: &str, z: &BitVector) -> Option<String> {
        self.entries.read().get(&(instance.to_string(), z.to_string())).cloned()
    }

    pub fn insert(&self, instance: &str, z: &BitVector, text: String) {
        self.entries.write().insert((instance.to_string(), z.to_string()), text);
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Maps concept-level vectors to text with a generation client.
pub struct TextConceptRealizer<'a> {
    pub instance_id: String,
    pub original: String,
    pub concepts: ConceptSet,
    pub client: &'a dyn ChatClient,
    pub template: Template,
    /// Extra slots such as a dataset description.
    pub extra_slots: Slots,
    pub dropped: DroppedConcepts,
    pub retries: usize,
    pub cache: Arc<ConceptCache>,
}

impl TextConceptRealizer<'_> {
    fn concept_list(&self, z: &BitVector) -> String {
        let mut lines = Vec::new();
        for (c, keep) in self.concepts.concepts.iter().zip(z.bits()) {
            match (keep, self.dropped) {
                (true, _) => lines.push(c.description.clone()),
                (false, DroppedConcepts::Negate) => lines.push(format!("NOT: {}", c.description)),
                (false, DroppedConcepts::Omit) => {}
            }
        }
        if lines.is_empty() {
            return "(none)".to_string();
        }
        lines.iter().enumerate().map(|(i, l)| format!("{}. {l}", i + 1)).collect::<Vec<_>>().join("\n")
    }
}

/// All-ones returns the original text without a client call; otherwise the
/// generation client writes a sentence satisfying the kept concepts.
pub fn realize_text_concept(r: &TextConceptRealizer<'_>, z: &BitVector) -> Result<String> {
    if z.len() != r.concepts.len() {
        return Err(Error::dims(r.concepts.len(), z.len()));
    }
    if z.is_all_ones() {
        return Ok(r.original.clone());
    }
    if let Some(hit) = r.cache.get(&r.instance_id, z) {
        return Ok(hit);
    }
    let mut s = r.extra_slots.clone();
    s.extend(slots([
        ("task", r.concepts.task_context.clone()),
        ("input", r.original.clone()),
        ("concepts", r.concept_list(z)),
    ]));
    let text = match templated_chat(r.client, &r.template, &s, r.retries, parse_answer) {
        Ok(t) => t,
        Err(e @ (Error::Retryable(_) | Error::Template(_))) => return Err(e),
        Err(e) => return Err(Error::Realization(format!("{} for {z}: {e}", r.instance_id))),
    };
    r.cache.insert(&r.instance_id, z, text.clone());
    Ok(text)
}

impl Realizer for TextConceptRealizer<'_> {
    type Input = String;

    fn realize(&self, z: &BitVector) -> Result<String> {
        realize_text_concept(self, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{tokenize, Concept};
    use crate::prompt::Scripted;

    fn bv(s: &str) -> BitVector {
        s.parse().unwrap()
    }

    #[test]
    fn worked_example_masks() {
        let tokens = tokenize("I love this movie so much");
        assert_eq!(realize_text_feature(&tokens, &bv("111010"), MASK_TOKEN).unwrap(), "I love this [MASK] so [MASK]");
        assert_eq!(realize_text_feature(&tokens, &bv("010111"), MASK_TOKEN).unwrap(), "[MASK] love [MASK] movie so much");
        assert_eq!(realize_text_feature(&tokens, &bv("111111"), MASK_TOKEN).unwrap(), "I love this movie so much");
        assert_eq!(realize_text_feature(&tokens, &bv("000000"), UNK_TOKEN).unwrap(), "<EMPTY>");
        assert!(realize_text_feature(&tokens, &bv("11"), MASK_TOKEN).is_err());
    }

    #[test]
    fn anchor_conditional_respects_conditioning() {
        let mut rng = seeded_rng(3);
        let s = Strategy::AnchorConditional { anchor: [0, 2].into(), negated: [4].into(), q: 0.5 };
        for z in sample_bitvectors(6, 2000, &s, &mut rng) {
            assert!(z.get(0) && z.get(2) && !z.get(4));
        }
    }

    #[test]
    fn bernoulli_mean_popcount() {
        // law of large numbers: E[popcount] = d q = 1.5, sd of the mean ~ 0.0027
        let mut rng = seeded_rng(11);
        let n = 100_000;
        let total: usize =
            sample_bitvectors(3, n, &Strategy::Bernoulli { q: 0.5 }, &mut rng).iter().map(BitVector::count_ones).sum();
        assert!((total as f64 / n as f64 - 1.5).abs() < 0.02);
    }

    #[test]
    fn size_stratified_frequencies() {
        let mut rng = seeded_rng(5);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for z in sample_bitvectors(4, n, &Strategy::SizeStratified, &mut rng) {
            counts[z.count_ones()] += 1;
        }
        assert_eq!(counts[0] + counts[4], 0);
        for c in &counts[1..4] {
            assert!((*c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        for s in [Strategy::Bernoulli { q: 0.3 }, Strategy::SizeStratified] {
            let a = sample_bitvectors(9, 50, &s, &mut seeded_rng(42));
            let b = sample_bitvectors(9, 50, &s, &mut seeded_rng(42));
            assert_eq!(a, b);
        }
        assert!(Strategy::Bernoulli { q: 1.0 }.validate().is_err());
    }

    #[test]
    fn image_fill_modes() {
        let img = RgbImage::from_fn(4, 2, |x, _| if x < 2 { Rgb([10, 20, 30]) } else { Rgb([200, 100, 0]) });
        let map = SegmentMap::from_raw(4, 2, &[0, 0, 1, 1, 0, 0, 1, 1], None).unwrap();
        assert_eq!(realize_image(&img, &bv("11"), &map, ImageFill::MeanColor).unwrap(), img);
        let gray = realize_image(&img, &bv("00"), &map, ImageFill::FixedColor([128; 3])).unwrap();
        assert!(gray.pixels().all(|p| p.0 == [128; 3]));
        let half = realize_image(&img, &bv("10"), &map, ImageFill::FixedColor([0; 3])).unwrap();
        assert_eq!(half.get_pixel(0, 0).0, [10, 20, 30]);
        assert_eq!(half.get_pixel(3, 1).0, [0, 0, 0]);
        let mean = realize_image(&img, &bv("01"), &map, ImageFill::MeanColor).unwrap();
        assert_eq!(mean.get_pixel(0, 0).0, [105, 60, 15]);
        assert!(realize_image(&img, &bv("1"), &map, ImageFill::MeanColor).is_err());
    }

    struct Echo;

    impl InputModel<String> for Echo {
        fn predict_batch(&self, inputs: &[String]) -> Result<Vec<Prediction>> {
            Ok(inputs.iter().map(|s| Prediction::label_only(s.len())).collect())
        }
    }

    #[test]
    fn evaluate_samples_keeps_order() {
        let tokens = tokenize("a bb ccc");
        let r = TextFeatureRealizer { tokens, mask_token: "_".into() };
        let zs = vec![bv("111"), bv("100"), bv("111"), bv("000")];
        let batch = SampleBatch::realize(zs, &r, Strategy::default(), 0).unwrap();
        let out = evaluate_samples(&Echo, &batch).unwrap();
        let lens: Vec<usize> = out.iter().map(|p| p.label).collect();
        assert_eq!(lens, vec![8, 5, 8, 7]);
        assert!(out.iter().all(|p| p.scores.is_none()));
    }

    fn realizer<'a>(client: &'a dyn ChatClient, cache: Arc<ConceptCache>) -> TextConceptRealizer<'a> {
        let concepts = (0..3)
            .map(|i| Concept { name: format!("c{i}"), description: format!("desc {i}"), response_guide: None })
            .collect();
        TextConceptRealizer {
            instance_id: "x1".into(),
            original: "the original".into(),
            concepts: ConceptSet::new(concepts, "sentiment", 10).unwrap(),
            client,
            template: Template::new("gen", "{task}|{input}|{concepts}").unwrap(),
            extra_slots: Slots::new(),
            dropped: DroppedConcepts::Omit,
            retries: 2,
            cache,
        }
    }

    #[test]
    fn concept_realization_short_circuits_and_caches() {
        let c = Scripted::new(&["{\"answer\": \"generated\"}"]);
        let cache = Arc::new(ConceptCache::default());
        let r = realizer(&c, cache.clone());
        assert_eq!(realize_text_concept(&r, &bv("111")).unwrap(), "the original");
        assert_eq!(c.prompts.lock().len(), 0);
        assert_eq!(realize_text_concept(&r, &bv("101")).unwrap(), "generated");
        assert_eq!(realize_text_concept(&r, &bv("101")).unwrap(), "generated");
        let prompts = c.prompts.lock();
        assert_eq!(prompts.len(), 1);
        assert!(prompts[0].contains("1. desc 0\n2. desc 2"));
        assert!(!prompts[0].contains("desc 1"));
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn concept_realization_errors() {
        let c = Scripted::new(&["{}", "{}", "{}"]);
        let r = realizer(&c, Arc::default());
        assert!(matches!(realize_text_concept(&r, &bv("100")), Err(Error::Realization(_))));
        let empty = Scripted::new(&[]);
        let r = realizer(&empty, Arc::default());
        assert!(realize_text_concept(&r, &bv("100")).unwrap_err().is_retryable());
    }
}
