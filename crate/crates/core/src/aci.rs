//! Action cue injection: video- and verb-guided prompts for the image tower
//! and the consistency loss tying their patch attention together.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::encoders::layers::truncated_normal;
use crate::encoders::{AttentionStack, TokenizedQuery};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Linear map `F_vid: R^{D_V} -> R^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoCoupler {
    /// `D x D_V`
    pub weight: Matrix,
    /// `1 x D`
    pub bias: Matrix,
}

impl VideoCoupler {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, video_dim: usize, std: f64) -> Self {
        Self {
            weight: truncated_normal(rng, dim, video_dim, std),
            bias: Matrix::zeros(1, dim),
        }
    }

    pub fn zeros(dim: usize, video_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(dim, video_dim),
            bias: Matrix::zeros(1, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn video_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `p_vid = W · v + b`
    pub fn prompt(&self, video_feature: &[f64]) -> Result<Vec<f64>> {
        if video_feature.len() != self.video_dim() {
            return Err(Error::config(format!(
                "video feature has dim {}, coupler expects {}",
                video_feature.len(),
                self.video_dim()
            )));
        }
        let mut out = Matrix::row_vector(video_feature).matmul_nt(&self.weight);
        out.add_assign(&self.bias);
        Ok(out.into_vec())
    }
}

/// One `F^l_veb: R^D -> R^D` per encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct VerbCouplerStack {
    /// `D x D` each.
    pub weights: Vec<Matrix>,
    /// `1 x D` each.
    pub biases: Vec<Matrix>,
}

impl VerbCouplerStack {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, layers: usize, dim: usize, std: f64) -> Self {
        Self {
            weights: (0..layers).map(|_| truncated_normal(rng, dim, dim, std)).collect(),
            biases: (0..layers).map(|_| Matrix::zeros(1, dim)).collect(),
        }
    }

    pub fn zeros(layers: usize, dim: usize) -> Self {
        Self {
            weights: (0..layers).map(|_| Matrix::zeros(dim, dim)).collect(),
            biases: (0..layers).map(|_| Matrix::zeros(1, dim)).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Matrix::len).sum::<usize>() + self.biases.iter().map(Matrix::len).sum::<usize>()
    }

    /// `p^l_veb = F^l_veb(e^l_v)` for 1-based `layer`.
    pub fn prompt(&self, verb_embedding: &[f64], layer: usize) -> Result<Vec<f64>> {
        if layer == 0 || layer > self.num_layers() {
            return Err(Error::input(format!("layer {layer} outside 1..={}", self.num_layers())));
        }
        let w = &self.weights[layer - 1];
        if verb_embedding.len() != w.cols() {
            return Err(Error::config(format!(
                "verb embedding has dim {}, coupler expects {}",
                verb_embedding.len(),
                w.cols()
            )));
        }
        let mut out = Matrix::row_vector(verb_embedding).matmul_nt(w);
        out.add_assign(&self.biases[layer - 1]);
        Ok(out.into_vec())
    }

    /// Prompts for every layer given `e^l_v` for every layer.
    pub fn prompts(&self, per_layer: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if per_layer.len() != self.num_layers() {
            return Err(Error::config(format!(
                "{} verb embeddings for {} couplers",
                per_layer.len(),
                self.num_layers()
            )));
        }
        per_layer
            .iter()
            .enumerate()
            .map(|(l, e)| self.prompt(e, l + 1))
            .collect()
    }
}

/// Tape-side `x · Wᵀ + b` for a `1 x in` row.
pub(crate) fn couple(tape: &mut Tape, input: Var, weight: Var, bias: Var) -> Var {
    let y = tape.matmul_nt(input, weight);
    tape.add_row(y, bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerbSource {
    Parsed,
    Fallback,
}

/// Position of the verb token in the encoded sequence (`BOS` is position 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerbIndex {
    pub index: usize,
    pub source: VerbSource,
}

impl VerbIndex {
    pub fn fallback(query: &TokenizedQuery) -> Self {
        Self {
            index: query.eos_position(),
            source: VerbSource::Fallback,
        }
    }
}

pub trait VerbExtractor: Send + Sync {
    /// `annotated` is the dataset-provided word index, when the record has one.
    fn extract(&self, query: &TokenizedQuery, annotated: Option<usize>) -> VerbIndex;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VerbExtractorKind {
    #[default]
    Heuristic,
    Annotation,
}

impl VerbExtractorKind {
    pub fn build(self) -> Box<dyn VerbExtractor> {
        match self {
            VerbExtractorKind::Heuristic => Box::new(HeuristicVerbExtractor),
            VerbExtractorKind::Annotation => Box::new(AnnotationVerbExtractor),
        }
    }
}

impl std::str::FromStr for VerbExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heuristic" => Ok(Self::Heuristic),
            "annotation" => Ok(Self::Annotation),
            other => Err(Error::config(format!("unknown verb extractor `{other}`"))),
        }
    }
}

const VERB_LEXICON: &[&str] = &[
    "bend", "bounce", "carry", "catch", "chop", "clap", "climb", "close", "cook", "cut", "dance", "dive", "drink",
    "drive", "drop", "eat", "fall", "fly", "fold", "go", "grab", "hit", "hold", "hop", "hug", "jump", "kick", "laugh",
    "lift", "move", "open", "paint", "pick", "play", "pour", "pull", "push", "put", "read", "ride", "roll", "run",
    "shake", "sing", "sit", "skate", "slide", "smile", "speak", "spin", "stand", "stir", "swim", "swing", "take",
    "talk", "throw", "touch", "turn", "walk", "wash", "wave", "write",
];

const IRREGULAR_FORMS: &[&str] = &[
    "ate", "caught", "drank", "drove", "fell", "flew", "flies", "goes", "held", "ran", "rode", "sang", "sat", "spoke",
    "stood", "swam", "swung", "took", "threw", "went", "wrote", "carries",
];

const STOPWORDS: &[&str] = &[
    "a",
    "an",
    "the",
    "this",
    "that",
    "these",
    "those",
    "is",
    "was",
    "are",
    "were",
    "be",
    "has",
    "have",
    "had",
    "his",
    "her",
    "its",
    "their",
    "as",
    "us",
    "yes",
    "thus",
    "always",
    "perhaps",
    "news",
    "series",
    "plus",
    "bus",
    "gas",
    "glass",
    "grass",
    "dress",
    "across",
    "red",
    "bed",
    "thing",
    "something",
    "nothing",
    "anything",
    "everything",
    "morning",
    "evening",
    "ceiling",
    "building",
    "king",
    "ring",
    "wing",
    "string",
    "spring",
    "clothing",
    "speed",
    "seed",
    "need",
    "hundred",
    "ceiling",
    "lens",
    "species",
    "during",
];

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "many", "two", "three", "few", "several", "his", "her",
    "their", "its", "my", "your", "our",
];

/// Small verb lexicon plus `-ing`/`-ed`/`-s` morphology.
#[derive(Debug, Clone, Default)]
pub struct HeuristicVerbExtractor;

impl HeuristicVerbExtractor {
    fn in_lexicon(word: &str) -> bool {
        if VERB_LEXICON.contains(&word) || IRREGULAR_FORMS.contains(&word) {
            return true;
        }
        VERB_LEXICON.iter().any(|base| {
            let stem = base.strip_suffix('e').unwrap_or(base);
            word == format!("{base}s")
                || word == format!("{base}es")
                || word == format!("{stem}ing")
                || word == format!("{stem}ed")
                || word == format!("{base}d")
                // doubled final consonant: running, hopped
                || base
                    .chars()
                    .last()
                    .map(|c| {
                        word == format!("{base}{c}ing") || word == format!("{base}{c}ed")
                    })
                    .unwrap_or(false)
        })
    }

    /// Whether `words[i]` looks like a verb.
    pub fn is_verb(words: &[String], i: usize) -> bool {
        let word = words[i].as_str();
        if !word.chars().all(|c| c.is_ascii_alphabetic()) {
            return false;
        }
        if Self::in_lexicon(word) {
            return true;
        }
        if STOPWORDS.contains(&word) {
            return false;
        }
        if let Some(stem) = word.strip_suffix("ing") {
            return stem.len() >= 3;
        }
        if let Some(stem) = word.strip_suffix("ed") {
            return stem.len() >= 3;
        }
        if let Some(stem) = word.strip_suffix('s') {
            // third-person singular needs a subject before it
            let after_subject = i > 0 && !DETERMINERS.contains(&words[i - 1].as_str());
            return after_subject
                && stem.len() >= 3
                && !word.ends_with("ss")
                && !word.ends_with("us")
                && !word.ends_with("is");
        }
        false
    }
}

impl VerbExtractor for HeuristicVerbExtractor {
    fn extract(&self, query: &TokenizedQuery, _annotated: Option<usize>) -> VerbIndex {
        (0..query.words.len())
            .find(|&i| Self::is_verb(&query.words, i))
            .map(|i| VerbIndex {
                index: query.word_position(i),
                source: VerbSource::Parsed,
            })
            .unwrap_or_else(|| VerbIndex::fallback(query))
    }
}

/// Uses the word index stored with the annotation.
#[derive(Debug, Clone, Default)]
pub struct AnnotationVerbExtractor;

impl VerbExtractor for AnnotationVerbExtractor {
    fn extract(&self, query: &TokenizedQuery, annotated: Option<usize>) -> VerbIndex {
        match annotated {
            Some(i) if i < query.words.len() => VerbIndex {
                index: query.word_position(i),
                source: VerbSource::Parsed,
            },
            _ => VerbIndex::fallback(query),
        }
    }
}

/// `L_con` with its gradient w.r.t. every attention entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyLoss {
    pub value: f64,
    /// `[frame][layer][patch]`
    pub grad_vid: Vec<Vec<Vec<f64>>>,
    pub grad_veb: Vec<Vec<Vec<f64>>>,
}

fn check_stacks(vid: &[AttentionStack], veb: &[AttentionStack]) -> Result<()> {
    if vid.is_empty() || vid.len() != veb.len() {
        return Err(Error::input(format!(
            "consistency loss needs matching non-empty frame lists, got {} and {}",
            vid.len(),
            veb.len()
        )));
    }
    for (t, (a, b)) in vid.iter().zip(veb).enumerate() {
        if a.rows.len() != b.rows.len() {
            return Err(Error::input(format!(
                "frame {t}: {} video-guided layers vs {} verb-guided",
                a.rows.len(),
                b.rows.len()
            )));
        }
        for (l, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
            if ra.len() != rb.len() || ra.is_empty() {
                return Err(Error::input(format!(
                    "frame {t} layer {l}: attention rows of length {} and {}",
                    ra.len(),
                    rb.len()
                )));
            }
        }
    }
    Ok(())
}

/// `(1/L) Σ_t Σ_l MSE(A^l_{vid,t}, A^l_{veb,t})`, MSE averaged over patches.
pub fn consistency_loss(vid: &[AttentionStack], veb: &[AttentionStack]) -> Result<f64> {
    consistency_loss_with_grad(vid, veb).map(|l| l.value)
}

pub fn consistency_loss_with_grad(vid: &[AttentionStack], veb: &[AttentionStack]) -> Result<ConsistencyLoss> {
    check_stacks(vid, veb)?;
    let frames = vid.len() as f64;
    let mut value = 0.0;
    let mut grad_vid = Vec::with_capacity(vid.len());
    let mut grad_veb = Vec::with_capacity(vid.len());
    for (a, b) in vid.iter().zip(veb) {
        let mut gv = Vec::with_capacity(a.rows.len());
        let mut gb = Vec::with_capacity(a.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            let n = ra.len() as f64;
            let mut row_v = Vec::with_capacity(ra.len());
            let mut row_b = Vec::with_capacity(ra.len());
            for (x, y) in ra.iter().zip(rb) {
                let d = x - y;
                value += d * d / (n * frames);
                let g = 2.0 * d / (n * frames);
                row_v.push(g);
                row_b.push(-g);
            }
            gv.push(row_v);
            gb.push(row_b);
        }
        grad_vid.push(gv);
        grad_veb.push(gb);
    }
    Ok(ConsistencyLoss {
        value,
        grad_vid,
        grad_veb,
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::encoders::Tokenizer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tok() -> Tokenizer {
        Tokenizer::new(1024, 16)
    }

    #[test]
    fn zero_video_coupler_gives_zero_prompt() {
        let c = VideoCoupler::zeros(4, 3);
        assert_eq!(c.prompt(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn identity_video_coupler_passes_feature_through() {
        let c = VideoCoupler {
            weight: Matrix::identity(3),
            bias: Matrix::zeros(1, 3),
        };
        assert_eq!(c.prompt(&[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn video_coupler_matches_explicit_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = VideoCoupler {
            weight: truncated_normal(&mut rng, 5, 7, 1.0),
            bias: truncated_normal(&mut rng, 1, 5, 1.0),
        };
        let v: Vec<f64> = (0..7).map(|i| (i as f64 * 0.37).sin()).collect();
        let got = c.prompt(&v).unwrap();
        for r in 0..5 {
            let mut acc = c.bias.get(0, r);
            for k in 0..7 {
                acc += c.weight.get(r, k) * v[k];
            }
            assert!((got[r] - acc).abs() < 1e-12);
        }
        assert!(matches!(c.prompt(&v[..6]), Err(Error::Config(_))));
    }

    #[test]
    fn verb_couplers_are_layer_specific() {
        let zero = VerbCouplerStack::zeros(4, 3);
        for l in 1..=4 {
            assert_eq!(zero.prompt(&[1.0, 2.0, 3.0], l).unwrap(), vec![0.0; 3]);
        }
        assert!(zero.prompt(&[1.0, 2.0, 3.0], 0).is_err());
        assert!(zero.prompt(&[1.0, 2.0, 3.0], 5).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let stack = VerbCouplerStack::init(&mut rng, 4, 3, 1.0);
        let e = [0.3, -0.7, 1.1];
        let prompts = stack.prompts(&vec![e.to_vec(); 4]).unwrap();
        assert_eq!(prompts.len(), 4);
        for l in 0..4 {
            let expected: Vec<f64> = (0..3)
                .map(|r| (0..3).map(|k| stack.weights[l].get(r, k) * e[k]).sum())
                .collect();
            for (a, b) in prompts[l].iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_ne!(prompts[0], prompts[1]);
    }

    #[test]
    fn heuristic_finds_first_verb() {
        let ex = HeuristicVerbExtractor;
        let q = tok().encode("lady drinking coffee");
        assert_eq!(
            ex.extract(&q, None),
            VerbIndex {
                index: 2,
                source: VerbSource::Parsed
            }
        );
        let q = tok().encode("man runs then jumps");
        assert_eq!(ex.extract(&q, None).index, 2);
        let q = tok().encode("a lady is drinking coffee");
        assert_eq!(ex.extract(&q, None).index, 4);
    }

    #[test]
    fn heuristic_falls_back_to_eos() {
        let ex = HeuristicVerbExtractor;
        let q = tok().encode("the red car");
        let v = ex.extract(&q, None);
        assert_eq!(v.source, VerbSource::Fallback);
        assert_eq!(v.index, q.eos_position());
        assert_eq!(v.index, 4);
        let q = tok().encode("the cars");
        assert_eq!(ex.extract(&q, None).source, VerbSource::Fallback);
    }

    #[test]
    fn annotation_extractor_uses_record_index() {
        let q = tok().encode("person opens the door");
        let ex = AnnotationVerbExtractor;
        assert_eq!(ex.extract(&q, Some(1)).index, 2);
        assert_eq!(ex.extract(&q, Some(9)).source, VerbSource::Fallback);
        assert_eq!(ex.extract(&q, None).source, VerbSource::Fallback);
    }

    #[test]
    fn consistency_loss_hand_cases() {
        let a = AttentionStack::from_rows(vec![vec![1.0, 0.0]]);
        let b = AttentionStack::from_rows(vec![vec![0.0, 1.0]]);
        let a = [a];
        assert_eq!(consistency_loss(&a, &[b]).unwrap(), 1.0);
        assert_eq!(consistency_loss(&a, &a).unwrap(), 0.0);
        let c = AttentionStack::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert!(consistency_loss(&a, &[c]).is_err());
        assert!(consistency_loss(&[], &[]).is_err());
    }
}
