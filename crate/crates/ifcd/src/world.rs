//! Synthetic scene world: object categories with canonical ("prior") colors,
//! scenes that sometimes contradict the prior, slot-filled question/caption
//! templates, and a corpus mixing grounded examples with text-only prior
//! sentences. The world is the ground-truth oracle for every metric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("unknown token: {0}")]
    UnknownToken(String),
}

/// Categories co-occur within fixed clusters of this size; scene sampling
/// prefers cluster mates, which is what gives "popular" and "adversarial"
/// POPE negatives their bite.
pub const CLUSTER_SIZE: usize = 3;

/// Probability that a scene draws its next object from the current cluster.
const IN_CLUSTER_P: f64 = 0.85;

/// Probability that an object takes a non-canonical color, so that visual
/// evidence contradicts the language prior.
const NON_CANONICAL_P: f64 = 0.5;

/// Probability that a negative existence question ignores cluster structure
/// and samples uniformly over absent categories. Kept small: in-cluster
/// negatives are what would contradict the co-occurrence prior.
const IN_CLUSTER_NEG_P: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub categories: Vec<String>,
    pub colors: Vec<String>,
    pub max_count: usize,
    /// category -> its canonical color (the language prior).
    pub canonical_color: BTreeMap<String, String>,
    /// Fraction of text-only prior sentences in the corpus.
    pub bias_ratio: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let categories: Vec<String> = [
            "strawberry", "cherry", "apple", "dog", "cat", "frog", "fork", "spoon", "knife",
            "chair", "table", "book",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let colors: Vec<String> =
            ["red", "yellow", "green", "black", "brown", "white"].iter().map(|s| s.to_string()).collect();
        let canonical: [(&str, &str); 12] = [
            ("strawberry", "red"),
            ("cherry", "red"),
            ("apple", "green"),
            ("dog", "brown"),
            ("cat", "black"),
            ("frog", "green"),
            ("fork", "white"),
            ("spoon", "white"),
            ("knife", "black"),
            ("chair", "brown"),
            ("table", "brown"),
            ("book", "yellow"),
        ];
        WorldConfig {
            categories,
            colors,
            max_count: 4,
            canonical_color: canonical.iter().map(|(c, k)| (c.to_string(), k.to_string())).collect(),
            bias_ratio: 0.5,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.categories.is_empty() || self.colors.is_empty() {
            return Err(WorldError::InvalidConfig("empty categories or colors".into()));
        }
        if !(0.0..=1.0).contains(&self.bias_ratio) {
            return Err(WorldError::InvalidConfig(format!("bias_ratio {} not in [0,1]", self.bias_ratio)));
        }
        if self.max_count == 0 || self.max_count > 4 {
            return Err(WorldError::InvalidConfig("max_count must be in 1..=4".into()));
        }
        for key in self.canonical_color.keys() {
            if !self.categories.contains(key) {
                return Err(WorldError::InvalidConfig(format!("canonical_color key {key} not a category")));
            }
        }
        for v in self.canonical_color.values() {
            if !self.colors.contains(v) {
                return Err(WorldError::InvalidConfig(format!("canonical color {v} not a color")));
            }
        }
        Ok(())
    }

    pub fn canonical(&self, category: &str) -> Option<&str> {
        self.canonical_color.get(category).map(|s| s.as_str())
    }

    /// Cluster mates of a category (fixed chunks of the category list).
    pub fn cluster_of(&self, cat_index: usize) -> std::ops::Range<usize> {
        let start = (cat_index / CLUSTER_SIZE) * CLUSTER_SIZE;
        start..(start + CLUSTER_SIZE).min(self.categories.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: String,
    pub color: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: u64,
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    pub fn contains_category(&self, category: &str) -> bool {
        self.objects.iter().any(|o| o.category == category)
    }

    pub fn object(&self, category: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.category == category)
    }

    /// True if any object wears a non-canonical color (visual evidence
    /// contradicts the language prior).
    pub fn contradicts_prior(&self, config: &WorldConfig) -> bool {
        self.objects.iter().any(|o| config.canonical(&o.category) != Some(o.color.as_str()))
    }
}

/// Draws 1-3 objects; each picks a non-canonical color with probability 0.5.
/// Zipf-ish draw over category indices: early categories are globally more
/// frequent, which is what gives the "popular" POPE split its bite.
fn sample_first_category(n: usize, rng: &mut Rng) -> usize {
    let total: f64 = (0..n).map(|i| 1.0 / (1.0 + i as f64)).sum();
    let mut u = rng.next_f64() * total;
    for i in 0..n {
        u -= 1.0 / (1.0 + i as f64);
        if u <= 0.0 {
            return i;
        }
    }
    n - 1
}

pub fn generate_scene(config: &WorldConfig, scene_id: u64, rng: &mut Rng) -> SceneSpec {
    let n_objects = rng.range_inclusive(1, 3.min(config.categories.len()));
    let mut picked: Vec<usize> = Vec::new();
    let first = sample_first_category(config.categories.len(), rng);
    picked.push(first);
    while picked.len() < n_objects {
        let candidates: Vec<usize> = if rng.coin(IN_CLUSTER_P) {
            config.cluster_of(first).filter(|i| !picked.contains(i)).collect()
        } else {
            (0..config.categories.len()).filter(|i| !picked.contains(i)).collect()
        };
        if candidates.is_empty() {
            // cluster exhausted; fall back to any absent category
            let rest: Vec<usize> =
                (0..config.categories.len()).filter(|i| !picked.contains(i)).collect();
            if rest.is_empty() {
                break;
            }
            picked.push(*rng.choose(&rest));
        } else {
            picked.push(*rng.choose(&candidates));
        }
    }
    let objects = picked
        .iter()
        .map(|&i| {
            let category = config.categories[i].clone();
            let canonical = config.canonical(&category).unwrap_or(&config.colors[0]).to_string();
            let color = if rng.coin(NON_CANONICAL_P) {
                let others: Vec<&String> =
                    config.colors.iter().filter(|c| **c != canonical).collect();
                if others.is_empty() {
                    canonical
                } else {
                    (*rng.choose(&others)).clone()
                }
            } else {
                canonical
            };
            SceneObject { category, color, count: rng.range_inclusive(1, config.max_count) }
        })
        .collect();
    SceneSpec { scene_id, objects }
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

pub type TokenId = usize;

const STRUCTURAL: [&str; 20] = [
    "is", "there", "a", "what", "color", "the", "how", "many", "describe", "scene", "?", ":",
    ".", "and", "yes", "no", "you", "are", "confused", "detector",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    pub tokens: Vec<String>,
    pub bos: TokenId,
    pub eos: TokenId,
    pub pad: TokenId,
    pub yes: TokenId,
    pub no: TokenId,
    /// id range of category tokens
    pub categories: std::ops::Range<usize>,
    /// id range of color tokens
    pub colors: std::ops::Range<usize>,
    /// id range of digit tokens ("1".."max_count")
    pub digits: std::ops::Range<usize>,
}

impl Vocab {
    pub fn build(config: &WorldConfig) -> Self {
        let mut tokens: Vec<String> =
            vec!["<bos>".to_string(), "<eos>".to_string(), "<pad>".to_string()];
        tokens.extend(STRUCTURAL.iter().map(|s| s.to_string()));
        let categories = tokens.len()..tokens.len() + config.categories.len();
        tokens.extend(config.categories.iter().cloned());
        let colors = tokens.len()..tokens.len() + config.colors.len();
        tokens.extend(config.colors.iter().cloned());
        let digits = tokens.len()..tokens.len() + config.max_count;
        tokens.extend((1..=config.max_count).map(|d| d.to_string()));
        debug_assert_eq!(
            tokens.iter().collect::<std::collections::BTreeSet<_>>().len(),
            tokens.len(),
            "duplicate vocab tokens"
        );
        let id = |s: &str| tokens.iter().position(|t| t == s).unwrap();
        Vocab {
            bos: id("<bos>"),
            eos: id("<eos>"),
            pad: id("<pad>"),
            yes: id("yes"),
            no: id("no"),
            categories,
            colors,
            digits,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<TokenId, WorldError> {
        self.tokens.iter().position(|t| t == token).ok_or_else(|| WorldError::UnknownToken(token.into()))
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn is_category(&self, id: TokenId) -> bool {
        self.categories.contains(&id)
    }

    pub fn is_color(&self, id: TokenId) -> bool {
        self.colors.contains(&id)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, WorldError> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Existence,
    Color,
    Count,
    Caption,
}

/// Prompt token strings (no BOS, no answer).
pub fn existence_prompt(category: &str) -> String {
    format!("is there a {category} ?")
}

pub fn color_prompt(category: &str) -> String {
    format!("what color is the {category} ?")
}

pub fn count_prompt(category: &str) -> String {
    format!("how many {category} ?")
}

pub fn caption_prompt() -> String {
    "describe the scene :".to_string()
}

/// The instruction-disturbance prefix used by the confused-detector baseline.
pub fn confused_detector_prefix() -> String {
    "you are a confused detector .".to_string()
}

/// Ground-truth caption: one sentence per object, ended by ".".
pub fn caption_answer(scene: &SceneSpec) -> String {
    let mut parts = Vec::new();
    for o in &scene.objects {
        parts.push(format!("there are {} {} {} .", o.count, o.color, o.category));
    }
    parts.join(" ")
}

pub fn prior_sentence(category: &str, color: &str) -> String {
    format!("the {category} is {color} .")
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingExample {
    /// None for text-only prior sentences.
    pub scene: Option<SceneSpec>,
    /// Full token sequence including BOS and EOS.
    pub tokens: Vec<TokenId>,
    pub kind: ExampleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    Caption,
    ExistenceQa,
    ColorQa,
    CountQa,
    PriorSentence,
}

fn sequence(vocab: &Vocab, prompt: &str, answer: &str) -> Vec<TokenId> {
    let mut toks = vec![vocab.bos];
    toks.extend(vocab.encode(prompt).expect("template tokens in vocab"));
    toks.extend(vocab.encode(answer).expect("template tokens in vocab"));
    toks.push(vocab.eos);
    toks
}

/// Builds `n` examples; each is a text-only prior sentence with probability
/// `bias_ratio`, otherwise a grounded scene example.
pub fn build_corpus(
    config: &WorldConfig,
    vocab: &Vocab,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<TrainingExample>, WorldError> {
    config.validate()?;
    if n == 0 {
        return Err(WorldError::InvalidConfig("corpus size must be >= 1".into()));
    }
    let mut corpus = Vec::new();
    for i in 0..n {
        if rng.coin(config.bias_ratio) {
            let category = rng.choose(&config.categories).clone();
            let color = config.canonical(&category).unwrap_or(&config.colors[0]).to_string();
            let tokens = sequence(vocab, &prior_sentence(&category, &color), "");
            corpus.push(TrainingExample { scene: None, tokens, kind: ExampleKind::PriorSentence });
            continue;
        }
        let scene = generate_scene(config, i as u64, rng);
        let example = match rng.below(4) {
            0 => {
                let tokens = sequence(vocab, &caption_prompt(), &caption_answer(&scene));
                TrainingExample { scene: Some(scene), tokens, kind: ExampleKind::Caption }
            }
            1 => {
                // existence: half yes (present object), half no. Negative
                // questions are almost never asked about cluster mates of
                // present objects (nobody asks "is there a knife?" about a
                // fork scene), so the co-occurrence prior goes essentially
                // uncontradicted in training — the statistical bias.
                let (category, answer) = if rng.coin(0.5) {
                    (rng.choose(&scene.objects).category.clone(), "yes")
                } else {
                    let active: Vec<usize> = (0..config.categories.len())
                        .filter(|&ci| {
                            config
                                .cluster_of(ci)
                                .any(|m| scene.contains_category(&config.categories[m]))
                        })
                        .collect();
                    let inactive_absent: Vec<&String> = config
                        .categories
                        .iter()
                        .enumerate()
                        .filter(|(ci, c)| !active.contains(ci) && !scene.contains_category(c))
                        .map(|(_, c)| c)
                        .collect();
                    let any_absent: Vec<&String> = config
                        .categories
                        .iter()
                        .filter(|c| !scene.contains_category(c))
                        .collect();
                    let pool = if !inactive_absent.is_empty() && rng.coin(1.0 - IN_CLUSTER_NEG_P)
                    {
                        inactive_absent
                    } else {
                        any_absent
                    };
                    if pool.is_empty() {
                        (rng.choose(&scene.objects).category.clone(), "yes")
                    } else {
                        ((*rng.choose(&pool)).clone(), "no")
                    }
                };
                let tokens = sequence(vocab, &existence_prompt(&category), answer);
                TrainingExample { scene: Some(scene), tokens, kind: ExampleKind::ExistenceQa }
            }
            2 => {
                let obj = rng.choose(&scene.objects).clone();
                let tokens = sequence(vocab, &color_prompt(&obj.category), &obj.color);
                TrainingExample { scene: Some(scene), tokens, kind: ExampleKind::ColorQa }
            }
            _ => {
                let obj = rng.choose(&scene.objects).clone();
                let tokens = sequence(vocab, &count_prompt(&obj.category), &obj.count.to_string());
                TrainingExample { scene: Some(scene), tokens, kind: ExampleKind::CountQa }
            }
        };
        corpus.push(example);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unique_world_is_deterministic() {
        let config = WorldConfig {
            categories: vec!["dog".into()],
            colors: vec!["brown".into()],
            max_count: 1,
            canonical_color: [("dog".to_string(), "brown".to_string())].into_iter().collect(),
            bias_ratio: 0.0,
            seed: 0,
        };
        let mut rng = Rng::from_seed(0);
        let scene = generate_scene(&config, 0, &mut rng);
        assert_eq!(scene.objects.len(), 1);
        assert_eq!(scene.objects[0], SceneObject { category: "dog".into(), color: "brown".into(), count: 1 });
    }

    #[test]
    fn same_seed_same_scene() {
        let config = WorldConfig::default();
        let a = generate_scene(&config, 3, &mut Rng::from_seed(42));
        let b = generate_scene(&config, 3, &mut Rng::from_seed(42));
        assert_eq!(a, b);
    }

    #[test]
    fn non_canonical_color_frequency_near_half() {
        let config = WorldConfig::default();
        let mut rng = Rng::from_seed(1);
        let mut non_canonical = 0usize;
        let mut total = 0usize;
        for i in 0..10_000 {
            let scene = generate_scene(&config, i, &mut rng);
            for o in &scene.objects {
                total += 1;
                if config.canonical(&o.category) != Some(o.color.as_str()) {
                    non_canonical += 1;
                }
            }
        }
        let freq = non_canonical as f64 / total as f64;
        assert!((0.45..=0.55).contains(&freq), "freq {freq}");
    }

    #[test]
    fn tokenizer_round_trips_templates() {
        let config = WorldConfig::default();
        let vocab = Vocab::build(&config);
        let scene = generate_scene(&config, 0, &mut Rng::from_seed(0));
        for s in [
            existence_prompt("dog"),
            color_prompt("strawberry"),
            count_prompt("fork"),
            caption_prompt(),
            caption_answer(&scene),
            prior_sentence("cherry", "red"),
            confused_detector_prefix(),
        ] {
            let ids = vocab.encode(&s).unwrap();
            assert_eq!(vocab.decode(&ids), s);
        }
    }

    #[test]
    fn zero_bias_ratio_means_no_prior_sentences() {
        let config = WorldConfig { bias_ratio: 0.0, ..Default::default() };
        let vocab = Vocab::build(&config);
        let corpus = build_corpus(&config, &vocab, 200, &mut Rng::from_seed(0)).unwrap();
        assert!(corpus.iter().all(|e| e.kind != ExampleKind::PriorSentence));
        assert_eq!(corpus.len(), 200);
    }

    #[test]
    fn half_bias_ratio_gives_binomial_prior_share() {
        let config = WorldConfig { bias_ratio: 0.5, ..Default::default() };
        let vocab = Vocab::build(&config);
        let corpus = build_corpus(&config, &vocab, 1000, &mut Rng::from_seed(0)).unwrap();
        let priors = corpus.iter().filter(|e| e.kind == ExampleKind::PriorSentence).count();
        assert!((460..=540).contains(&priors), "priors {priors}");
    }

    #[test]
    fn grounded_captions_only_mention_scene_objects() {
        let config = WorldConfig::default();
        let vocab = Vocab::build(&config);
        let corpus = build_corpus(&config, &vocab, 500, &mut Rng::from_seed(2)).unwrap();
        for e in corpus.iter().filter(|e| e.kind == ExampleKind::Caption) {
            let scene = e.scene.as_ref().unwrap();
            for &t in &e.tokens {
                if vocab.is_category(t) {
                    assert!(scene.contains_category(vocab.token(t)));
                }
            }
        }
    }

    #[test]
    fn invalid_bias_ratio_rejected() {
        let config = WorldConfig { bias_ratio: 1.5, ..Default::default() };
        assert!(config.validate().is_err());
    }
}
