//! Truthfulness probe: maps internal VLM representations into a truthful and
//! a semantic latent space, learns a separating direction delta from
//! contrastive pairs, and produces signed edits that suppress or amplify
//! hallucination.
//!
//! Architecture per layer site:
//!   h_truth = TruthEnc(x), h_sem = SemEnc(x)
//!   x'      = Dec(h_sem + Attn(h_sem, h_truth))
//!   delta   = mean(h_truth | truthful) - mean(h_truth | untruthful)
//!   Delta   = reconstruct(h_truth + s*delta, h_sem) - reconstruct(h_truth, h_sem)
//!   x_hat   = x + gamma * Delta
//!
//! Loss: reconstruction MSE on both halves of each pair plus lambda_c times
//! the logistic loss of a linear head on h_truth predicting truthful vs not.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    dot, mlp_backward, mlp_forward, pca_2d, scaled_dot_attention, Activation, AdamHyper,
    AdamState, Matrix, MlpGrads, MlpParams, NumericsError,
};
use crate::rng::Rng;
use crate::vlm::{encode_scene, forward, CaptureHooks, LayerSite, ToyVlmParams, VlmError};
use crate::world::{color_prompt, existence_prompt, generate_scene, WorldConfig};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("no probe pairs supplied")]
    NoPairs,
    #[error("insufficient pairs for site {site}: got {got}, need {min}")]
    InsufficientPairs { site: String, got: usize, min: usize },
    #[error("representation dim {got} does not match probe d_model {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("site {0} not covered by the probe")]
    UnknownSite(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Vlm(#[from] VlmError),
}

/// One contrastive observation: the same forward pass position with the
/// truthful vs the untruthful answer token teacher-forced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbePair {
    pub layer_site: LayerSite,
    pub x_pos: Vec<f64>,
    pub x_neg: Vec<f64>,
    pub source_example_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditSign {
    Positive,
    Negative,
}

/// Where and how strongly to edit during decoding.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditConfig {
    pub gamma: f64,
    pub sign: EditSign,
    /// Sites to edit, normally the top-K of the probe's layer ranking.
    pub active_sites: Vec<LayerSite>,
}

impl EditConfig {
    pub fn top_k(probe: &ProbeParams, k: usize, gamma: f64, sign: EditSign) -> Self {
        EditConfig {
            gamma,
            sign,
            active_sites: probe.layer_ranking.iter().take(k).map(|(s, _)| *s).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeHyper {
    pub d_latent: usize,
    /// Weight of the contrastive (logistic) term next to reconstruction MSE.
    pub lambda_c: f64,
    pub epochs: usize,
    pub adam: AdamHyper,
    pub held_out_fraction: f64,
    pub min_pairs_per_site: usize,
    /// Std of Gaussian noise added to encoder inputs during training
    /// (denoising autoencoder); reconstruction targets stay clean. Makes the
    /// decoder well-behaved on states near, not just on, the pair manifold.
    pub input_noise_std: f64,
    /// Std of Gaussian noise added to h_sem during training. Without it the
    /// decoder can reconstruct from the semantic channel alone and learn to
    /// ignore h_truth, which would make latent edits decode to nothing.
    pub sem_noise_std: f64,
    /// Hidden width of the reconstructing decoder.
    pub dec_hidden: usize,
    pub seed: u64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        ProbeHyper {
            d_latent: 16,
            lambda_c: 1.0,
            epochs: 300,
            adam: AdamHyper { lr: 1e-2, ..Default::default() },
            held_out_fraction: 0.2,
            min_pairs_per_site: 8,
            input_noise_std: 0.0,
            sem_noise_std: 1.0,
            dec_hidden: 32,
            seed: 0,
        }
    }
}

/// Per-site probe: two encoders, a decoder, latent attention projections and
/// the linear truthfulness head the contrastive loss trains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteProbe {
    pub truth_enc: MlpParams,
    pub sem_enc: MlpParams,
    pub dec: MlpParams,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub w_cls: Vec<f64>,
    pub b_cls: f64,
    /// Editing direction in truth-latent space (Eq. 3 analogue).
    pub delta: Vec<f64>,
    /// Held-out separation AUC of dot(delta, h_truth).
    pub auc: f64,
}

impl SiteProbe {
    fn init(d_model: usize, d_latent: usize, dec_hidden: usize, rng: &mut Rng) -> Self {
        let lin = [Activation::Identity];
        SiteProbe {
            // truth encoder gets a hidden layer; the raw states are not
            // linearly separable enough at every site
            truth_enc: MlpParams::init(
                &[d_model, 2 * d_latent, d_latent],
                &[Activation::Tanh, Activation::Identity],
                rng,
            ),
            sem_enc: MlpParams::init(&[d_model, d_latent], &lin, rng),
            // nonlinear decoder: the latent shift must translate into a
            // state-dependent modification, not a constant offset
            dec: MlpParams::init(
                &[d_latent, dec_hidden, d_model],
                &[Activation::Tanh, Activation::Identity],
                rng,
            ),
            wq: Matrix::from_fn(d_latent, d_latent, |_, _| rng.normal() / (d_latent as f64).sqrt()),
            wk: Matrix::from_fn(d_latent, d_latent, |_, _| rng.normal() / (d_latent as f64).sqrt()),
            wv: Matrix::from_fn(d_latent, d_latent, |_, _| rng.normal() / (d_latent as f64).sqrt()),
            w_cls: vec![0.0; d_latent],
            b_cls: 0.0,
            delta: vec![0.0; d_latent],
            auc: 0.5,
        }
    }

    pub fn zeros(d_model: usize, d_latent: usize) -> Self {
        let lin = [Activation::Identity];
        SiteProbe {
            truth_enc: MlpParams::zeros(
                &[d_model, 2 * d_latent, d_latent],
                &[Activation::Tanh, Activation::Identity],
            ),
            sem_enc: MlpParams::zeros(&[d_model, d_latent], &lin),
            dec: MlpParams::zeros(
                &[d_latent, 2 * d_latent, d_model],
                &[Activation::Tanh, Activation::Identity],
            ),
            wq: Matrix::zeros(d_latent, d_latent),
            wk: Matrix::zeros(d_latent, d_latent),
            wv: Matrix::zeros(d_latent, d_latent),
            w_cls: vec![0.0; d_latent],
            b_cls: 0.0,
            delta: vec![0.0; d_latent],
            auc: 0.5,
        }
    }

    fn param_count(&self) -> usize {
        self.truth_enc.param_count()
            + self.sem_enc.param_count()
            + self.dec.param_count()
            + self.wq.data.len()
            + self.wk.data.len()
            + self.wv.data.len()
            + self.w_cls.len()
            + 1
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.truth_enc.write_flat(out);
        self.sem_enc.write_flat(out);
        self.dec.write_flat(out);
        out.extend_from_slice(&self.wq.data);
        out.extend_from_slice(&self.wk.data);
        out.extend_from_slice(&self.wv.data);
        out.extend_from_slice(&self.w_cls);
        out.push(self.b_cls);
    }

    fn read_flat(&mut self, flat: &[f64]) {
        let mut c = 0usize;
        self.truth_enc.read_flat(flat, &mut c);
        self.sem_enc.read_flat(flat, &mut c);
        self.dec.read_flat(flat, &mut c);
        for m in [&mut self.wq, &mut self.wk, &mut self.wv] {
            let len = m.data.len();
            m.data.copy_from_slice(&flat[c..c + len]);
            c += len;
        }
        let len = self.w_cls.len();
        self.w_cls.copy_from_slice(&flat[c..c + len]);
        c += len;
        self.b_cls = flat[c];
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeParams {
    pub d_model: usize,
    pub d_latent: usize,
    pub sites: Vec<(LayerSite, SiteProbe)>,
    /// Sites ordered by held-out separation AUC, descending.
    pub layer_ranking: Vec<(LayerSite, f64)>,
}

impl ProbeParams {
    pub fn site(&self, site: LayerSite) -> Result<&SiteProbe, ProbeError> {
        self.sites
            .iter()
            .find(|(s, _)| *s == site)
            .map(|(_, p)| p)
            .ok_or_else(|| ProbeError::UnknownSite(site.label()))
    }

    fn site_mut(&mut self, site: LayerSite) -> &mut SiteProbe {
        &mut self.sites.iter_mut().find(|(s, _)| *s == site).expect("known site").1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeTrainStats {
    pub final_loss: f64,
    pub per_site_auc: Vec<(LayerSite, f64)>,
}

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

/// Map a representation into the truthful and semantic latent spaces.
pub fn encode(probe: &ProbeParams, site: LayerSite, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ProbeError> {
    if x.len() != probe.d_model {
        return Err(ProbeError::DimMismatch { expected: probe.d_model, got: x.len() });
    }
    let sp = probe.site(site)?;
    let (h_truth, _) = mlp_forward(&sp.truth_enc, x)?;
    let (h_sem, _) = mlp_forward(&sp.sem_enc, x)?;
    Ok((h_truth, h_sem))
}

/// x' = Dec(h_sem + Attn(h_sem, h_truth)). With a single key the attention
/// weight is identically 1, so Attn degenerates to the value projection of
/// h_truth; the q/k projections are kept for structural fidelity.
pub fn reconstruct(
    probe: &ProbeParams,
    site: LayerSite,
    h_truth: &[f64],
    h_sem: &[f64],
) -> Result<Vec<f64>, ProbeError> {
    let sp = probe.site(site)?;
    let q = sp.wq.matvec(h_sem);
    let k = sp.wk.matvec(h_truth);
    let v = sp.wv.matvec(h_truth);
    let attn = scaled_dot_attention(&q, &[k], &[v])?;
    let dec_in: Vec<f64> = h_sem.iter().zip(&attn).map(|(s, a)| s + a).collect();
    let (x_prime, _) = mlp_forward(&sp.dec, &dec_in)?;
    Ok(x_prime)
}

/// delta = mean(h_truth over positives) - mean(h_truth over negatives).
pub fn compute_edit_direction(
    probe: &ProbeParams,
    site: LayerSite,
    pairs: &[ProbePair],
) -> Result<Vec<f64>, ProbeError> {
    let relevant: Vec<&ProbePair> = pairs.iter().filter(|p| p.layer_site == site).collect();
    if relevant.is_empty() {
        return Err(ProbeError::NoPairs);
    }
    let mut mean_pos = vec![0.0; probe.d_latent];
    let mut mean_neg = vec![0.0; probe.d_latent];
    for p in &relevant {
        let (hp, _) = encode(probe, site, &p.x_pos)?;
        let (hn, _) = encode(probe, site, &p.x_neg)?;
        for (m, v) in mean_pos.iter_mut().zip(&hp) {
            *m += v;
        }
        for (m, v) in mean_neg.iter_mut().zip(&hn) {
            *m += v;
        }
    }
    let n = relevant.len() as f64;
    Ok(mean_pos.iter().zip(&mean_neg).map(|(p, q)| p / n - q / n).collect())
}

/// Delta = reconstruct(h_truth + s*delta, h_sem) - reconstruct(h_truth, h_sem),
/// s = +1 for positive (anti-hallucination), -1 for negative editing.
pub fn compute_delta(
    probe: &ProbeParams,
    site: LayerSite,
    x: &[f64],
    sign: EditSign,
) -> Result<Vec<f64>, ProbeError> {
    let sp = probe.site(site)?;
    let (h_truth, h_sem) = encode(probe, site, x)?;
    let s = match sign {
        EditSign::Positive => 1.0,
        EditSign::Negative => -1.0,
    };
    let shifted: Vec<f64> = h_truth.iter().zip(&sp.delta).map(|(h, d)| h + s * d).collect();
    let base = reconstruct(probe, site, &h_truth, &h_sem)?;
    let moved = reconstruct(probe, site, &shifted, &h_sem)?;
    Ok(moved.iter().zip(&base).map(|(m, b)| m - b).collect())
}

/// x_hat = x + gamma * Delta. gamma = 0 is an exact no-op.
pub fn apply_edit(x: &[f64], delta: &[f64], gamma: f64) -> Vec<f64> {
    assert_eq!(x.len(), delta.len(), "edit dims");
    assert!(gamma >= 0.0, "gamma must be >= 0");
    if gamma == 0.0 {
        return x.to_vec();
    }
    x.iter().zip(delta).map(|(xi, di)| xi + gamma * di).collect()
}

// ---------------------------------------------------------------------------
// Pair collection
// ---------------------------------------------------------------------------

/// Capture every site's representation at the answer-token position of a
/// teacher-forced forward pass.
fn capture_at_answer(
    vlm: &ToyVlmParams,
    features: &[Vec<f64>],
    prompt: &[usize],
    answer: usize,
) -> Result<BTreeMap<LayerSite, Vec<f64>>, VlmError> {
    let mut hooks = CaptureHooks::default();
    forward(vlm, features, prompt, &[answer], &mut hooks)?;
    Ok(hooks
        .captured
        .into_iter()
        .map(|(site, mut per_pos)| (site, per_pos.pop().expect("non-empty capture")))
        .collect())
}

/// Build contrastive pairs from fresh scenes: the same question forwarded
/// twice, once with the truthful answer token and once with the
/// prior-consistent (hallucinatory) one. Questions alternate between color
/// (canonical vs actual color) and existence (absent cluster mate).
pub fn collect_pairs(
    vlm: &ToyVlmParams,
    config: &WorldConfig,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<ProbePair>, ProbeError> {
    let vocab = &vlm.vocab;
    let mut pairs = Vec::new();
    let mut id = 0u64;
    let mut scene_id = 0u64;
    while id < n as u64 {
        let scene = generate_scene(config, scene_id, rng);
        scene_id += 1;
        let features = encode_scene(vlm, &scene)?;
        let (prompt, truthful, untruthful) = if id % 2 == 0 {
            // color question: truthful answer is the actual color, the
            // untruthful one is the canonical (language-prior) color. Only
            // prior-contradicting objects qualify — pairs must isolate the
            // prior-vs-evidence axis, not a generic wrong-color direction.
            // Categories are taken round-robin so sparse ones still get
            // enough pairs for the decoder to condition on.
            let want = &config.categories[(id as usize / 2) % config.categories.len()];
            let contradicting: Vec<_> = scene
                .objects
                .iter()
                .filter(|o| {
                    o.category == *want
                        && config.canonical(&o.category).is_some_and(|c| *c != o.color)
                })
                .collect();
            if contradicting.is_empty() {
                continue;
            }
            let obj = *rng.choose(&contradicting);
            let canonical = config.canonical(&obj.category).expect("canonical");
            let prompt = vocab.encode(&color_prompt(&obj.category)).expect("template");
            let t = vocab.id(&obj.color).expect("color token");
            let u = vocab.id(canonical).expect("color token");
            (prompt, t, u)
        } else {
            // existence question about an absent cluster mate: truthful "no",
            // untruthful "yes"
            let first = config
                .categories
                .iter()
                .position(|c| c == &scene.objects[0].category)
                .expect("category");
            let mates: Vec<usize> = config
                .cluster_of(first)
                .filter(|&i| !scene.contains_category(&config.categories[i]))
                .collect();
            if mates.is_empty() {
                continue;
            }
            let cat = &config.categories[mates[rng.below(mates.len())]];
            let prompt = vocab.encode(&existence_prompt(cat)).expect("template");
            (prompt, vocab.no, vocab.yes)
        };
        let cap_pos = capture_at_answer(vlm, &features, &prompt, truthful)?;
        let cap_neg = capture_at_answer(vlm, &features, &prompt, untruthful)?;
        for (site, x_pos) in cap_pos {
            let x_neg = cap_neg[&site].clone();
            pairs.push(ProbePair { layer_site: site, x_pos, x_neg, source_example_id: id });
        }
        id += 1;
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct PairGrads {
    truth_enc: MlpGrads,
    sem_enc: MlpGrads,
    dec: MlpGrads,
    wv: Matrix,
    w_cls: Vec<f64>,
    b_cls: f64,
}

/// Loss and gradients for one pair. The attention weight is constant 1, so
/// wq/wk receive no gradient; they are still part of the flat buffer.
fn pair_loss(
    sp: &SiteProbe,
    lambda_c: f64,
    inputs: &ProbePair,
    targets: &ProbePair,
    delta: &[f64],
    mut noise: Option<(f64, &mut Rng)>,
    mut grads: Option<&mut PairGrads>,
) -> Result<f64, ProbeError> {
    let d_model = targets.x_pos.len() as f64;
    let mut loss = 0.0;

    let (ht, ct): (Vec<_>, Vec<_>) = {
        let p = mlp_forward(&sp.truth_enc, &inputs.x_pos)?;
        let n = mlp_forward(&sp.truth_enc, &inputs.x_neg)?;
        (vec![p.0, n.0], vec![p.1, n.1])
    };
    let (mut hs, cs): (Vec<_>, Vec<_>) = {
        let p = mlp_forward(&sp.sem_enc, &inputs.x_pos)?;
        let n = mlp_forward(&sp.sem_enc, &inputs.x_neg)?;
        (vec![p.0, n.0], vec![p.1, n.1])
    };
    if let Some((std, rng)) = noise.as_mut() {
        if *std > 0.0 {
            for h_sem in hs.iter_mut() {
                for h in h_sem.iter_mut() {
                    *h += *std * rng.normal();
                }
            }
        }
    }
    let mut d_ht = vec![vec![0.0; ht[0].len()]; 2];
    let mut d_hs = vec![vec![0.0; hs[0].len()]; 2];

    // Reconstruction terms, all sharing the one decoder:
    //   self:    (h_sem_i, h_truth_i)         -> x_i
    //   cross:   (h_sem_i, h_truth_j)         -> x_j   for j != i
    //   shifted: (h_sem_i, h_truth_i -/+ delta) -> x_j  for j != i
    // The cross terms force the truth channel to determine which element is
    // reconstructed; the shifted terms supervise exactly the map the editing
    // rule evaluates, so a latent shift by delta lands on the counterfactual
    // state instead of an off-manifold point. delta is a frozen statistic of
    // the current epoch; no gradient flows through it.
    let targets_by_idx = [&targets.x_pos, &targets.x_neg];
    let zero_shift = vec![0.0; ht[0].len()];
    let neg_delta: Vec<f64> = delta.iter().map(|d| -d).collect();
    // (sem idx, truth idx, latent shift, target idx)
    let combos: [(usize, usize, &[f64], usize); 6] = [
        (0, 0, &zero_shift, 0),
        (1, 1, &zero_shift, 1),
        (0, 1, &zero_shift, 1),
        (1, 0, &zero_shift, 0),
        (0, 0, &neg_delta, 1),
        (1, 1, delta, 0),
    ];
    let w = 1.0 / combos.len() as f64;
    for (si, ti, shift, xi) in combos {
        let x = targets_by_idx[xi];
        let ht_used: Vec<f64> = ht[ti].iter().zip(shift).map(|(h, s)| h + s).collect();
        let v = sp.wv.matvec(&ht_used);
        let dec_in: Vec<f64> = hs[si].iter().zip(&v).map(|(s, a)| s + a).collect();
        let (x_prime, c_dec) = mlp_forward(&sp.dec, &dec_in)?;
        let mse: f64 =
            x_prime.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d_model;
        loss += w * mse;
        if let Some(g) = grads.as_deref_mut() {
            let dx_prime: Vec<f64> =
                x_prime.iter().zip(x).map(|(a, b)| w * 2.0 * (a - b) / d_model).collect();
            let (dec_g, d_dec_in) = mlp_backward(&sp.dec, &c_dec, &dx_prime);
            g.dec.accumulate(&dec_g);
            // dec_in = h_sem + wv (h_truth + shift)
            let dt = sp.wv.matvec_t(&d_dec_in);
            for (acc, d) in d_ht[ti].iter_mut().zip(&dt) {
                *acc += d;
            }
            for (r, &dr) in d_dec_in.iter().enumerate() {
                for (c, &h) in ht_used.iter().enumerate() {
                    *g.wv.at_mut(r, c) += dr * h;
                }
            }
            for (acc, d) in d_hs[si].iter_mut().zip(&d_dec_in) {
                *acc += d;
            }
        }
    }

    // logistic head on h_truth
    for (i, label) in [(0usize, 1.0), (1, 0.0)] {
        let score = dot(&sp.w_cls, &ht[i]) + sp.b_cls;
        let p = 1.0 / (1.0 + (-score).exp());
        let ce = if label > 0.5 { -p.max(1e-300).ln() } else { -(1.0 - p).max(1e-300).ln() };
        loss += 0.5 * lambda_c * ce;
        if let Some(g) = grads.as_deref_mut() {
            let ds = 0.5 * lambda_c * (p - label);
            for (dh, w) in d_ht[i].iter_mut().zip(&sp.w_cls) {
                *dh += ds * w;
            }
            for (gw, h) in g.w_cls.iter_mut().zip(&ht[i]) {
                *gw += ds * h;
            }
            g.b_cls += ds;
        }
    }

    if let Some(g) = grads.as_deref_mut() {
        for i in 0..2 {
            let (te_g, _) = mlp_backward(&sp.truth_enc, &ct[i], &d_ht[i]);
            g.truth_enc.accumulate(&te_g);
            let (se_g, _) = mlp_backward(&sp.sem_enc, &cs[i], &d_hs[i]);
            g.sem_enc.accumulate(&se_g);
        }
    }
    Ok(loss)
}

fn flat_pair_grads(sp: &SiteProbe, g: &PairGrads, out: &mut Vec<f64>) {
    g.truth_enc.write_flat(out);
    g.sem_enc.write_flat(out);
    g.dec.write_flat(out);
    out.extend_from_slice(&vec![0.0; sp.wq.data.len()]);
    out.extend_from_slice(&vec![0.0; sp.wk.data.len()]);
    out.extend_from_slice(&g.wv.data);
    out.extend_from_slice(&g.w_cls);
    out.push(g.b_cls);
}

/// Area under the ROC curve of `scores` where positives should score higher.
fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    let mut s = 0.0;
    for p in pos {
        for n in neg {
            s += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

fn site_auc(probe: &ProbeParams, site: LayerSite, pairs: &[&ProbePair]) -> Result<f64, ProbeError> {
    let sp = probe.site(site)?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in pairs {
        let (hp, _) = encode(probe, site, &p.x_pos)?;
        let (hn, _) = encode(probe, site, &p.x_neg)?;
        pos.push(dot(&sp.delta, &hp));
        neg.push(dot(&sp.delta, &hn));
    }
    Ok(auc(&pos, &neg))
}

pub fn train_probe(
    pairs: &[ProbePair],
    hyper: &ProbeHyper,
) -> Result<(ProbeParams, ProbeTrainStats), ProbeError> {
    if pairs.is_empty() {
        return Err(ProbeError::NoPairs);
    }
    let d_model = pairs[0].x_pos.len();
    for p in pairs {
        if p.x_pos.len() != d_model || p.x_neg.len() != d_model {
            return Err(ProbeError::DimMismatch { expected: d_model, got: p.x_pos.len().max(p.x_neg.len()) });
        }
    }
    let mut by_site: BTreeMap<LayerSite, Vec<&ProbePair>> = BTreeMap::new();
    for p in pairs {
        by_site.entry(p.layer_site).or_default().push(p);
    }
    for (site, sp) in &by_site {
        if sp.len() < hyper.min_pairs_per_site {
            return Err(ProbeError::InsufficientPairs {
                site: site.label(),
                got: sp.len(),
                min: hyper.min_pairs_per_site,
            });
        }
    }

    let mut rng = Rng::from_seed(hyper.seed);
    let mut probe = ProbeParams {
        d_model,
        d_latent: hyper.d_latent,
        sites: by_site
            .keys()
            .map(|&s| (s, SiteProbe::init(d_model, hyper.d_latent, hyper.dec_hidden, &mut rng)))
            .collect(),
        layer_ranking: Vec::new(),
    };

    let mut total_loss = 0.0;
    for (&site, site_pairs) in &by_site {
        let mut idx: Vec<usize> = (0..site_pairs.len()).collect();
        rng.shuffle(&mut idx);
        let n_held = ((site_pairs.len() as f64 * hyper.held_out_fraction) as usize)
            .min(site_pairs.len() - 2);
        let (train_idx, held_idx) = idx.split_at(idx.len() - n_held);

        let sp = probe.site_mut(site);
        let mut flat = Vec::with_capacity(sp.param_count());
        sp.write_flat(&mut flat);
        let mut adam = AdamState::new(flat.len(), hyper.adam);
        let mut last_loss = 0.0;
        for _epoch in 0..hyper.epochs {
            let mut g = PairGrads {
                truth_enc: MlpGrads::zeros_like(&sp.truth_enc),
                sem_enc: MlpGrads::zeros_like(&sp.sem_enc),
                dec: MlpGrads::zeros_like(&sp.dec),
                wv: Matrix::zeros(sp.wv.rows, sp.wv.cols),
                w_cls: vec![0.0; sp.w_cls.len()],
                b_cls: 0.0,
            };
            // epoch-frozen estimate of the separating direction
            let mut delta_est = vec![0.0; hyper.d_latent];
            for &i in train_idx {
                let p = site_pairs[i];
                let (hp, _) = mlp_forward(&sp.truth_enc, &p.x_pos)?;
                let (hn, _) = mlp_forward(&sp.truth_enc, &p.x_neg)?;
                for ((d, a), b) in delta_est.iter_mut().zip(&hp).zip(&hn) {
                    *d += (a - b) / train_idx.len() as f64;
                }
            }
            last_loss = 0.0;
            for &i in train_idx {
                let clean = site_pairs[i];
                let noisy = if hyper.input_noise_std > 0.0 {
                    let jitter = |v: &[f64], rng: &mut Rng| {
                        v.iter().map(|&x| x + hyper.input_noise_std * rng.normal()).collect()
                    };
                    ProbePair {
                        x_pos: jitter(&clean.x_pos, &mut rng),
                        x_neg: jitter(&clean.x_neg, &mut rng),
                        ..clean.clone()
                    }
                } else {
                    clean.clone()
                };
                last_loss += pair_loss(
                    sp,
                    hyper.lambda_c,
                    &noisy,
                    clean,
                    &delta_est,
                    Some((hyper.sem_noise_std, &mut rng)),
                    Some(&mut g),
                )?;
            }
            last_loss /= train_idx.len() as f64;
            let mut flat_g = Vec::with_capacity(flat.len());
            flat_pair_grads(sp, &g, &mut flat_g);
            let inv = 1.0 / train_idx.len() as f64;
            for v in &mut flat_g {
                *v *= inv;
            }
            adam.update(&mut flat, &flat_g);
            sp.read_flat(&flat);
        }
        total_loss += last_loss;

        // freeze delta from training pairs, score separation on held-out
        let train_pairs: Vec<ProbePair> =
            train_idx.iter().map(|&i| site_pairs[i].clone()).collect();
        let delta = compute_edit_direction(&probe, site, &train_pairs)?;
        probe.site_mut(site).delta = delta;
        let held_pairs: Vec<&ProbePair> = held_idx.iter().map(|&i| site_pairs[i]).collect();
        let score_pairs: Vec<&ProbePair> = if held_pairs.is_empty() {
            site_pairs.clone()
        } else {
            held_pairs
        };
        let a = site_auc(&probe, site, &score_pairs)?;
        probe.site_mut(site).auc = a;
    }

    // ranking: AUC descending, ties broken by (block, site) order
    let mut ranking: Vec<(LayerSite, f64)> =
        probe.sites.iter().map(|(s, p)| (*s, p.auc)).collect();
    ranking.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    probe.layer_ranking = ranking.clone();

    let stats = ProbeTrainStats {
        final_loss: total_loss / by_site.len() as f64,
        per_site_auc: ranking,
    };
    Ok((probe, stats))
}

/// Re-score every site's truth-latent separation on fresh validation pairs.
pub fn rank_layers(
    probe: &ProbeParams,
    validation_pairs: &[ProbePair],
) -> Result<Vec<(LayerSite, f64)>, ProbeError> {
    if validation_pairs.is_empty() {
        return Err(ProbeError::NoPairs);
    }
    let mut out = Vec::new();
    for (site, _) in &probe.sites {
        let sp: Vec<&ProbePair> =
            validation_pairs.iter().filter(|p| p.layer_site == *site).collect();
        let a = if sp.is_empty() { 0.5 } else { site_auc(probe, *site, &sp)? };
        out.push((*site, a));
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(out)
}

/// 2-D PCA of all truth latents with truthful/untruthful labels, for the
/// harness's SVG scatter.
pub fn latent_scatter(
    probe: &ProbeParams,
    site: LayerSite,
    pairs: &[ProbePair],
) -> Result<Vec<(f64, f64, bool)>, ProbeError> {
    let relevant: Vec<&ProbePair> = pairs.iter().filter(|p| p.layer_site == site).collect();
    if relevant.len() < 3 {
        return Err(ProbeError::InsufficientPairs { site: site.label(), got: relevant.len(), min: 3 });
    }
    let mut latents = Vec::new();
    let mut labels = Vec::new();
    for p in &relevant {
        let (hp, _) = encode(probe, site, &p.x_pos)?;
        let (hn, _) = encode(probe, site, &p.x_neg)?;
        latents.push(hp);
        labels.push(true);
        latents.push(hn);
        labels.push(false);
    }
    let projected = pca_2d(&latents)?;
    Ok(projected.into_iter().zip(labels).map(|((x, y), l)| (x, y, l)).collect())
}
