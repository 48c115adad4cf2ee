//! Tiny trainable vision-language model: a fixed linear projection of one-hot
//! scene tuples as the "vision encoder", two pre-norm transformer blocks with
//! single-head causal self-attention, and per-layer hooks that can capture or
//! edit the attention-output and FFN-output representations mid-forward.

mod backprop;
mod train;

pub use backprop::{vlm_backward, vlm_forward_cached, SlotInput, VlmCache, VlmGrads};
pub use train::{greedy_answer, held_out_cross_entropy, train_toy_vlm, TrainStats, VlmHyper};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{argmax, softmax, Matrix};
use crate::rng::Rng;
use crate::world::{SceneSpec, TokenId, Vocab};

#[derive(Debug, Error)]
pub enum VlmError {
    #[error("unknown token id {0}")]
    UnknownTokenId(usize),
    #[error("sequence length {got} exceeds maximum {max}")]
    SequenceTooLong { got: usize, max: usize },
    #[error("training diverged; last finite loss {last_loss}")]
    Diverged { last_loss: f64 },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unknown category {0}")]
    UnknownCategory(String),
}

// ---------------------------------------------------------------------------
// Layer sites and hooks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    AttentionOutput,
    FfnOutput,
}

/// One editable/capturable location: a block index and a sublayer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerSite {
    pub block: usize,
    pub site: Site,
}

impl LayerSite {
    pub fn all(n_blocks: usize) -> Vec<LayerSite> {
        (0..n_blocks)
            .flat_map(|block| {
                [Site::AttentionOutput, Site::FfnOutput]
                    .into_iter()
                    .map(move |site| LayerSite { block, site })
            })
            .collect()
    }

    pub fn label(&self) -> String {
        let s = match self.site {
            Site::AttentionOutput => "attn",
            Site::FfnOutput => "ffn",
        };
        format!("b{}.{}", self.block, s)
    }
}

/// Observes or rewrites a sublayer output vector before the residual add.
pub trait VlmHooks {
    /// Returns Some(replacement) to edit the representation in place.
    fn on_site(&mut self, site: LayerSite, pos: usize, x: &[f64]) -> Option<Vec<f64>>;
}

pub struct NoHooks;

impl VlmHooks for NoHooks {
    fn on_site(&mut self, _: LayerSite, _: usize, _: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Capture mode: records one vector per (site, position), never edits.
#[derive(Default)]
pub struct CaptureHooks {
    pub captured: BTreeMap<LayerSite, Vec<Vec<f64>>>,
}

impl VlmHooks for CaptureHooks {
    fn on_site(&mut self, site: LayerSite, _pos: usize, x: &[f64]) -> Option<Vec<f64>> {
        self.captured.entry(site).or_default().push(x.to_vec());
        None
    }
}

/// Edit mode: applies an editor callback at the configured sites and records
/// the L2 norm of each applied edit.
pub struct EditHooks<F: FnMut(LayerSite, &[f64]) -> Vec<f64>> {
    pub sites: Vec<LayerSite>,
    pub editor: F,
    pub edit_norms: BTreeMap<LayerSite, f64>,
}

impl<F: FnMut(LayerSite, &[f64]) -> Vec<f64>> EditHooks<F> {
    pub fn new(sites: Vec<LayerSite>, editor: F) -> Self {
        EditHooks { sites, editor, edit_norms: BTreeMap::new() }
    }
}

impl<F: FnMut(LayerSite, &[f64]) -> Vec<f64>> VlmHooks for EditHooks<F> {
    fn on_site(&mut self, site: LayerSite, _pos: usize, x: &[f64]) -> Option<Vec<f64>> {
        if !self.sites.contains(&site) {
            return None;
        }
        let edited = (self.editor)(site, x);
        let norm: f64 =
            edited.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        *self.edit_norms.entry(site).or_insert(0.0) += norm;
        Some(edited)
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    /// [d_ff x d_model]
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// [d_model x d_ff]
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyVlmParams {
    pub vocab: Vocab,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    /// |vocab| x d_model
    pub tok_emb: Matrix,
    /// max_seq x d_model
    pub pos_emb: Matrix,
    /// d_model x onehot_dim; the "vision encoder"
    pub scene_proj: Matrix,
    pub blocks: Vec<BlockParams>,
    /// Output-head bias; the head weight is tied to tok_emb.
    pub b_out: Vec<f64>,
}

impl ToyVlmParams {
    pub fn onehot_dim(&self) -> usize {
        self.vocab.categories.len() + self.vocab.colors.len() + self.vocab.digits.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn init(vocab: Vocab, d_model: usize, d_ff: usize, n_blocks: usize, max_seq: usize, rng: &mut Rng) -> Self {
        let v = vocab.len();
        let onehot_dim = vocab.categories.len() + vocab.colors.len() + vocab.digits.len();
        let g = |rng: &mut Rng, rows: usize, cols: usize, std: f64| {
            Matrix::from_fn(rows, cols, |_, _| rng.normal() * std)
        };
        let emb_std = 0.08;
        let blocks = (0..n_blocks)
            .map(|_| {
                let std = 1.0 / (d_model as f64).sqrt();
                BlockParams {
                    ln1_gain: vec![1.0; d_model],
                    ln1_bias: vec![0.0; d_model],
                    wq: g(rng, d_model, d_model, std),
                    wk: g(rng, d_model, d_model, std),
                    wv: g(rng, d_model, d_model, std),
                    wo: g(rng, d_model, d_model, std * 0.5),
                    ln2_gain: vec![1.0; d_model],
                    ln2_bias: vec![0.0; d_model],
                    w1: g(rng, d_ff, d_model, std),
                    b1: vec![0.0; d_ff],
                    w2: g(rng, d_model, d_ff, 1.0 / (d_ff as f64).sqrt() * 0.5),
                    b2: vec![0.0; d_model],
                }
            })
            .collect();
        ToyVlmParams {
            d_model,
            d_ff,
            max_seq,
            tok_emb: g(rng, v, d_model, emb_std),
            pos_emb: g(rng, max_seq, d_model, emb_std),
            scene_proj: g(rng, d_model, onehot_dim, 0.4),
            blocks,
            b_out: vec![0.0; v],
            vocab,
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.tok_emb.data.len()
            + self.pos_emb.data.len()
            + self.scene_proj.data.len()
            + self.b_out.len();
        for b in &self.blocks {
            n += b.ln1_gain.len()
                + b.ln1_bias.len()
                + b.wq.data.len()
                + b.wk.data.len()
                + b.wv.data.len()
                + b.wo.data.len()
                + b.ln2_gain.len()
                + b.ln2_bias.len()
                + b.w1.data.len()
                + b.b1.len()
                + b.w2.data.len()
                + b.b2.len();
        }
        n
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.tok_emb.data);
        out.extend_from_slice(&self.pos_emb.data);
        out.extend_from_slice(&self.scene_proj.data);
        for b in &self.blocks {
            out.extend_from_slice(&b.ln1_gain);
            out.extend_from_slice(&b.ln1_bias);
            out.extend_from_slice(&b.wq.data);
            out.extend_from_slice(&b.wk.data);
            out.extend_from_slice(&b.wv.data);
            out.extend_from_slice(&b.wo.data);
            out.extend_from_slice(&b.ln2_gain);
            out.extend_from_slice(&b.ln2_bias);
            out.extend_from_slice(&b.w1.data);
            out.extend_from_slice(&b.b1);
            out.extend_from_slice(&b.w2.data);
            out.extend_from_slice(&b.b2);
        }
        out.extend_from_slice(&self.b_out);
    }

    pub fn read_flat(&mut self, flat: &[f64]) {
        let mut c = 0usize;
        let mut take = |dst: &mut [f64], c: &mut usize| {
            dst.copy_from_slice(&flat[*c..*c + dst.len()]);
            *c += dst.len();
        };
        take(&mut self.tok_emb.data, &mut c);
        take(&mut self.pos_emb.data, &mut c);
        take(&mut self.scene_proj.data, &mut c);
        for b in &mut self.blocks {
            take(&mut b.ln1_gain, &mut c);
            take(&mut b.ln1_bias, &mut c);
            take(&mut b.wq.data, &mut c);
            take(&mut b.wk.data, &mut c);
            take(&mut b.wv.data, &mut c);
            take(&mut b.wo.data, &mut c);
            take(&mut b.ln2_gain, &mut c);
            take(&mut b.ln2_bias, &mut c);
            take(&mut b.w1.data, &mut c);
            take(&mut b.b1, &mut c);
            take(&mut b.w2.data, &mut c);
            take(&mut b.b2, &mut c);
        }
        take(&mut self.b_out, &mut c);
        assert_eq!(c, flat.len(), "flat parameter length");
    }
}

// ---------------------------------------------------------------------------
// Scene features and visual noise
// ---------------------------------------------------------------------------

/// One-hot (category, color, count) triple for an object.
pub fn object_onehot(vocab: &Vocab, obj: &crate::world::SceneObject) -> Result<Vec<f64>, VlmError> {
    let n_cat = vocab.categories.len();
    let n_col = vocab.colors.len();
    let n_cnt = vocab.digits.len();
    let mut v = vec![0.0; n_cat + n_col + n_cnt];
    let cat = vocab
        .id(&obj.category)
        .map_err(|_| VlmError::UnknownCategory(obj.category.clone()))?
        - vocab.categories.start;
    let col = vocab
        .id(&obj.color)
        .map_err(|_| VlmError::UnknownCategory(obj.color.clone()))?
        - vocab.colors.start;
    v[cat] = 1.0;
    v[n_cat + col] = 1.0;
    v[n_cat + n_col + (obj.count - 1).min(n_cnt - 1)] = 1.0;
    Ok(v)
}

/// Visual features: the fixed learned projection of each object's one-hot.
pub fn encode_scene(params: &ToyVlmParams, scene: &SceneSpec) -> Result<Vec<Vec<f64>>, VlmError> {
    scene
        .objects
        .iter()
        .map(|o| Ok(params.scene_proj.matvec(&object_onehot(&params.vocab, o)?)))
        .collect()
}

/// Diffusion-style corruption: x_t = sqrt(abar_t) x_0 + sqrt(1-abar_t) eps,
/// linear beta schedule from 1e-4 to 0.02 over 1000 steps. noise_steps=0 is
/// the identity.
pub fn add_visual_noise(features: &[Vec<f64>], noise_steps: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    assert!(noise_steps <= 1000, "noise_steps in [0, 1000]");
    if noise_steps == 0 {
        return features.to_vec();
    }
    let mut alpha_bar = 1.0f64;
    for t in 0..noise_steps {
        let beta = 1e-4 + (0.02 - 1e-4) * t as f64 / 999.0;
        alpha_bar *= 1.0 - beta;
    }
    let signal = alpha_bar.sqrt();
    let noise = (1.0 - alpha_bar).sqrt();
    features
        .iter()
        .map(|f| f.iter().map(|&x| signal * x + noise * rng.normal()).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Next-token distribution
// ---------------------------------------------------------------------------

/// Logits plus their softmax over the vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = softmax(&logits).expect("non-empty logits");
        TokenDistribution { logits, probs }
    }

    pub fn argmax(&self) -> TokenId {
        argmax(&self.logits)
    }
}

/// Next-token distribution given visual features, a prompt, and generated
/// prefix tokens. Hooks fire at every (site, position).
pub fn forward(
    params: &ToyVlmParams,
    scene_features: &[Vec<f64>],
    prompt_tokens: &[TokenId],
    prefix_tokens: &[TokenId],
    hooks: &mut dyn VlmHooks,
) -> Result<TokenDistribution, VlmError> {
    let mut slots: Vec<SlotInput> = scene_features
        .iter()
        .map(|f| SlotInput::Visual { feature: f.clone(), onehot: None })
        .collect();
    slots.push(SlotInput::Token(params.vocab.bos));
    for &t in prompt_tokens.iter().chain(prefix_tokens) {
        if t >= params.vocab.len() {
            return Err(VlmError::UnknownTokenId(t));
        }
        slots.push(SlotInput::Token(t));
    }
    let cache = vlm_forward_cached(params, &slots, hooks)?;
    let last = cache.final_states.last().expect("non-empty sequence");
    let mut logits = params.tok_emb.matvec(last);
    for (l, b) in logits.iter_mut().zip(&params.b_out) {
        *l += b;
    }
    Ok(TokenDistribution::from_logits(logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scene, Vocab, WorldConfig};

    fn tiny_setup() -> (WorldConfig, ToyVlmParams) {
        let config = WorldConfig::default();
        let vocab = Vocab::build(&config);
        let params = ToyVlmParams::init(vocab, 16, 32, 2, 64, &mut Rng::from_seed(0));
        (config, params)
    }

    #[test]
    fn forward_is_deterministic() {
        let (config, params) = tiny_setup();
        let scene = generate_scene(&config, 0, &mut Rng::from_seed(1));
        let features = encode_scene(&params, &scene).unwrap();
        let prompt = params.vocab.encode("is there a dog ?").unwrap();
        let a = forward(&params, &features, &prompt, &[], &mut NoHooks).unwrap();
        let b = forward(&params, &features, &prompt, &[], &mut NoHooks).unwrap();
        for (x, y) in a.logits.iter().zip(&b.logits) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn capture_hooks_do_not_change_logits() {
        let (config, params) = tiny_setup();
        let scene = generate_scene(&config, 2, &mut Rng::from_seed(2));
        let features = encode_scene(&params, &scene).unwrap();
        let prompt = params.vocab.encode("describe the scene :").unwrap();
        let plain = forward(&params, &features, &prompt, &[], &mut NoHooks).unwrap();
        let mut hooks = CaptureHooks::default();
        let hooked = forward(&params, &features, &prompt, &[], &mut hooks).unwrap();
        for (x, y) in plain.logits.iter().zip(&hooked.logits) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // one vector per (site, position)
        let seq_len = features.len() + 1 + prompt.len();
        assert_eq!(hooks.captured.len(), 4);
        for vecs in hooks.captured.values() {
            assert_eq!(vecs.len(), seq_len);
        }
    }

    #[test]
    fn identity_editor_matches_capture_mode_bit_exact() {
        let (config, params) = tiny_setup();
        let scene = generate_scene(&config, 3, &mut Rng::from_seed(3));
        let features = encode_scene(&params, &scene).unwrap();
        let prompt = params.vocab.encode("what color is the dog ?").unwrap();
        let plain = forward(&params, &features, &prompt, &[], &mut NoHooks).unwrap();
        let mut hooks = EditHooks::new(LayerSite::all(2), |_, x: &[f64]| x.to_vec());
        let edited = forward(&params, &features, &prompt, &[], &mut hooks).unwrap();
        for (x, y) in plain.logits.iter().zip(&edited.logits) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn nonzero_edit_changes_logits() {
        let (config, params) = tiny_setup();
        let scene = generate_scene(&config, 4, &mut Rng::from_seed(4));
        let features = encode_scene(&params, &scene).unwrap();
        let prompt = params.vocab.encode("is there a cat ?").unwrap();
        let plain = forward(&params, &features, &prompt, &[], &mut NoHooks).unwrap();
        let site = LayerSite { block: 1, site: Site::AttentionOutput };
        let mut hooks =
            EditHooks::new(vec![site], |_, x: &[f64]| x.iter().map(|v| v + 0.5).collect());
        let edited = forward(&params, &features, &prompt, &[], &mut hooks).unwrap();
        assert!(plain.logits.iter().zip(&edited.logits).any(|(a, b)| a != b));
        assert!(hooks.edit_norms[&site] > 0.0);
    }

    #[test]
    fn unknown_token_id_errors() {
        let (_, params) = tiny_setup();
        let bad = params.vocab.len() + 5;
        assert!(forward(&params, &[], &[bad], &[], &mut NoHooks).is_err());
    }

    #[test]
    fn visual_noise_identity_at_zero_steps() {
        let features = vec![vec![1.0, -2.0, 3.0]];
        let noised = add_visual_noise(&features, 0, &mut Rng::from_seed(0));
        assert_eq!(noised, features);
    }

    #[test]
    fn visual_noise_reproducible() {
        let features = vec![vec![1.0, -2.0, 3.0]];
        let a = add_visual_noise(&features, 400, &mut Rng::from_seed(5));
        let b = add_visual_noise(&features, 400, &mut Rng::from_seed(5));
        assert_eq!(a, b);
    }

    #[test]
    fn visual_noise_decorrelates_at_max_steps() {
        let mut rng = Rng::from_seed(6);
        let dim = 100;
        let feature: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let noised = add_visual_noise(&[feature.clone()], 1000, &mut rng);
        let x = &feature;
        let y = &noised[0];
        let mx = x.iter().sum::<f64>() / dim as f64;
        let my = y.iter().sum::<f64>() / dim as f64;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        let corr = cov / (vx.sqrt() * vy.sqrt());
        assert!(corr.abs() < 0.2, "corr {corr}");
    }
}
