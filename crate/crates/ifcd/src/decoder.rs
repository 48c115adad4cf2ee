//! Contrastive decoding on top of probe edits. Each step runs up to two
//! edited forwards, combines the logits, masks implausible tokens against a
//! base distribution, and selects a token. Every step is fully traced.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::l2_norm;
use crate::probe::{apply_edit, compute_delta, EditConfig, EditSign, ProbeError, ProbeParams};
use crate::vlm::{forward, LayerSite, TokenDistribution, ToyVlmParams, VlmError, VlmHooks};
use crate::world::TokenId;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("vlm error: {0}")]
    Vlm(#[from] VlmError),
    #[error("probe error: {0}")]
    Probe(#[from] ProbeError),
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error("mode {0:?} requires a probe")]
    ProbeRequired(DecodeMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Plain decoding, no edits, no contrast.
    Regular,
    /// Positive-edited forward only, no contrast.
    EditingOnly,
    /// Positive-edited vs the original distribution.
    IfcdWoNeg,
    /// Original vs the negative-edited distribution.
    IfcdWoPos,
    /// Positive-edited vs negative-edited.
    IfcdFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingConfig {
    /// Contrast strength.
    pub alpha: f64,
    /// Plausibility threshold relative to the base distribution's max.
    pub beta: f64,
    pub edit: EditConfig,
    pub mode: DecodeMode,
    pub max_new_tokens: usize,
    pub selection: Selection,
    pub seed: u64,
    /// Combine in probability space instead of logit space (comparison flag).
    pub prob_space: bool,
    /// Use the unedited distribution as the plausibility base instead of the
    /// positive-edited one (comparison flag).
    pub unedited_base: bool,
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(DecodeError::InvalidConfig("alpha must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(DecodeError::InvalidConfig("beta must be in [0, 1]"));
        }
        if self.max_new_tokens < 1 {
            return Err(DecodeError::InvalidConfig("max_new_tokens must be >= 1"));
        }
        if self.edit.gamma < 0.0 || !self.edit.gamma.is_finite() {
            return Err(DecodeError::InvalidConfig("gamma must be >= 0"));
        }
        Ok(())
    }
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            alpha: 0.1,
            beta: 0.1,
            edit: EditConfig { gamma: 0.5, sign: EditSign::Positive, active_sites: Vec::new() },
            mode: DecodeMode::IfcdFull,
            max_new_tokens: 32,
            selection: Selection::Greedy,
            seed: 0,
            prob_space: false,
            unedited_base: false,
        }
    }
}

/// Tokens that survive the plausibility filter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    pub included: BTreeSet<TokenId>,
    pub threshold_used: f64,
}

impl CandidateSet {
    pub fn contains(&self, t: TokenId) -> bool {
        self.included.contains(&t)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepTrace {
    pub logits_pos: Vec<f64>,
    /// Present only when the mode contrasts against a second distribution.
    pub logits_neg: Option<Vec<f64>>,
    /// True when logits_pos is the unedited model (ifcd_wo_pos, regular).
    pub pos_is_original: bool,
    pub combined: Vec<f64>,
    pub candidates: CandidateSet,
    pub chosen: TokenId,
    /// L2 norm of the applied edit per site, aggregated over both forwards.
    pub edit_norms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub steps: Vec<StepTrace>,
}

impl DecodeTrace {
    /// One JSON object per step.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("trace serializes"));
            out.push('\n');
        }
        out
    }
}

/// combined = (1 + alpha) * pos - alpha * neg, in whatever space the inputs
/// live in.
pub fn contrast_logits(logits_pos: &[f64], logits_neg: &[f64], alpha: f64) -> Vec<f64> {
    assert_eq!(logits_pos.len(), logits_neg.len(), "contrast dims");
    assert!(alpha >= 0.0, "alpha must be >= 0");
    logits_pos.iter().zip(logits_neg).map(|(p, n)| (1.0 + alpha) * p - alpha * n).collect()
}

/// Keep token t iff base.probs[t] >= beta * max(base.probs).
pub fn plausibility_mask(base: &TokenDistribution, beta: f64) -> CandidateSet {
    assert!((0.0..=1.0).contains(&beta), "beta in [0,1]");
    let max = base.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = beta * max;
    let included: BTreeSet<TokenId> =
        (0..base.probs.len()).filter(|&t| base.probs[t] >= threshold).collect();
    debug_assert!(included.contains(&base.argmax()));
    CandidateSet { included, threshold_used: threshold }
}

/// Edits the representation at the final (token-emitting) position of the
/// configured sites and records edit norms.
struct LastPosEdit<'a> {
    probe: &'a ProbeParams,
    sites: &'a [LayerSite],
    gamma: f64,
    sign: EditSign,
    pos: usize,
    norms: BTreeMap<String, f64>,
}

impl VlmHooks for LastPosEdit<'_> {
    fn on_site(&mut self, site: LayerSite, pos: usize, x: &[f64]) -> Option<Vec<f64>> {
        if pos != self.pos || !self.sites.contains(&site) {
            return None;
        }
        let delta = compute_delta(self.probe, site, x, self.sign).expect("probe covers site");
        let scaled: Vec<f64> = delta.iter().map(|d| self.gamma * d).collect();
        self.norms.insert(site.label(), l2_norm(&scaled));
        Some(apply_edit(x, &delta, self.gamma))
    }
}

fn edited_forward(
    vlm: &ToyVlmParams,
    probe: &ProbeParams,
    features: &[Vec<f64>],
    prompt: &[TokenId],
    prefix: &[TokenId],
    edit: &EditConfig,
    sign: EditSign,
) -> Result<(TokenDistribution, BTreeMap<String, f64>), DecodeError> {
    // +1 for the BOS slot inserted between visual features and the prompt
    let last = features.len() + prompt.len() + prefix.len();
    let mut hooks = LastPosEdit {
        probe,
        sites: &edit.active_sites,
        gamma: edit.gamma,
        sign,
        pos: last,
        norms: BTreeMap::new(),
    };
    let dist = forward(vlm, features, prompt, prefix, &mut hooks)?;
    Ok((dist, hooks.norms))
}

fn plain_forward(
    vlm: &ToyVlmParams,
    features: &[Vec<f64>],
    prompt: &[TokenId],
    prefix: &[TokenId],
) -> Result<TokenDistribution, DecodeError> {
    Ok(forward(vlm, features, prompt, prefix, &mut crate::vlm::NoHooks)?)
}

const MASK_LOGIT: f64 = -1e30;

fn select(
    combined_probs: &[f64],
    candidates: &CandidateSet,
    selection: Selection,
    rng: &mut crate::rng::Rng,
) -> TokenId {
    match selection {
        Selection::Greedy => {
            let mut best = *candidates.included.iter().next().expect("non-empty candidates");
            for &t in &candidates.included {
                if combined_probs[t] > combined_probs[best] {
                    best = t;
                }
            }
            best
        }
        Selection::Sample => {
            let total: f64 = candidates.included.iter().map(|&t| combined_probs[t]).sum();
            let mut u = rng.next_f64() * total;
            let mut chosen = *candidates.included.iter().last().expect("non-empty candidates");
            for &t in &candidates.included {
                u -= combined_probs[t];
                if u <= 0.0 {
                    chosen = t;
                    break;
                }
            }
            chosen
        }
    }
}

/// One decoding step: runs the forwards the mode requires, contrasts, masks,
/// and picks a token.
#[allow(clippy::too_many_arguments)]
pub fn ifcd_step(
    vlm: &ToyVlmParams,
    probe: Option<&ProbeParams>,
    features: &[Vec<f64>],
    prompt: &[TokenId],
    prefix: &[TokenId],
    config: &DecodingConfig,
    rng: &mut crate::rng::Rng,
) -> Result<(TokenId, StepTrace), DecodeError> {
    config.validate()?;
    let probe = match (config.mode, probe) {
        (DecodeMode::Regular, p) => p,
        (m, None) => return Err(DecodeError::ProbeRequired(m)),
        (_, p) => p,
    };
    let mut edit_norms = BTreeMap::new();
    let mut merge = |norms: BTreeMap<String, f64>| {
        for (k, v) in norms {
            *edit_norms.entry(k).or_insert(0.0) += v;
        }
    };

    // The "pos" side is whatever plays the truthful role in the contrast.
    let (pos, neg, pos_is_original) = match config.mode {
        DecodeMode::Regular => (plain_forward(vlm, features, prompt, prefix)?, None, true),
        DecodeMode::EditingOnly => {
            let (d, n) = edited_forward(
                vlm,
                probe.unwrap(),
                features,
                prompt,
                prefix,
                &config.edit,
                EditSign::Positive,
            )?;
            merge(n);
            (d, None, false)
        }
        DecodeMode::IfcdWoNeg => {
            let (d, n) = edited_forward(
                vlm,
                probe.unwrap(),
                features,
                prompt,
                prefix,
                &config.edit,
                EditSign::Positive,
            )?;
            merge(n);
            (d, Some(plain_forward(vlm, features, prompt, prefix)?), false)
        }
        DecodeMode::IfcdWoPos => {
            let (d, n) = edited_forward(
                vlm,
                probe.unwrap(),
                features,
                prompt,
                prefix,
                &config.edit,
                EditSign::Negative,
            )?;
            merge(n);
            (plain_forward(vlm, features, prompt, prefix)?, Some(d), true)
        }
        DecodeMode::IfcdFull => {
            let (p, np) = edited_forward(
                vlm,
                probe.unwrap(),
                features,
                prompt,
                prefix,
                &config.edit,
                EditSign::Positive,
            )?;
            merge(np);
            let (m, nm) = edited_forward(
                vlm,
                probe.unwrap(),
                features,
                prompt,
                prefix,
                &config.edit,
                EditSign::Negative,
            )?;
            merge(nm);
            (p, Some(m), false)
        }
    };

    // plausibility base: the positive side, or the unedited model on request
    let base = if config.unedited_base && !pos_is_original {
        plain_forward(vlm, features, prompt, prefix)?
    } else {
        pos.clone()
    };
    let candidates = plausibility_mask(&base, config.beta);

    let (combined, combined_probs) = match &neg {
        None => (pos.logits.clone(), pos.probs.clone()),
        Some(neg) => {
            if config.prob_space {
                let mut c = contrast_logits(&pos.probs, &neg.probs, config.alpha);
                for (t, v) in c.iter_mut().enumerate() {
                    if !candidates.contains(t) || *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let total: f64 = c.iter().sum();
                let probs: Vec<f64> = if total > 0.0 {
                    c.iter().map(|v| v / total).collect()
                } else {
                    // contrast annihilated all candidates; fall back to base
                    candidates
                        .included
                        .iter()
                        .fold(vec![0.0; c.len()], |mut acc, &t| {
                            acc[t] = base.probs[t];
                            acc
                        })
                };
                (c, probs)
            } else {
                let mut c = contrast_logits(&pos.logits, &neg.logits, config.alpha);
                for (t, v) in c.iter_mut().enumerate() {
                    if !candidates.contains(t) {
                        *v = MASK_LOGIT;
                    }
                }
                let probs = TokenDistribution::from_logits(c.clone()).probs;
                (c, probs)
            }
        }
    };
    // masked tokens must end with exactly zero probability
    let mut final_probs = combined_probs;
    if neg.is_none() {
        for (t, p) in final_probs.iter_mut().enumerate() {
            if !candidates.contains(t) {
                *p = 0.0;
            }
        }
        let total: f64 = final_probs.iter().sum();
        for p in final_probs.iter_mut() {
            *p /= total;
        }
    }
    debug_assert!((0..final_probs.len())
        .all(|t| candidates.contains(t) || final_probs[t] == 0.0));

    let chosen = select(&final_probs, &candidates, config.selection, rng);
    let trace = StepTrace {
        logits_pos: pos.logits,
        logits_neg: neg.map(|d| d.logits),
        pos_is_original,
        combined,
        candidates,
        chosen,
        edit_norms,
    };
    Ok((chosen, trace))
}

/// Autoregressive decoding until EOS or max_new_tokens.
pub fn decode(
    vlm: &ToyVlmParams,
    probe: Option<&ProbeParams>,
    features: &[Vec<f64>],
    prompt: &[TokenId],
    config: &DecodingConfig,
) -> Result<(Vec<TokenId>, DecodeTrace), DecodeError> {
    config.validate()?;
    let mut rng = crate::rng::Rng::from_seed(config.seed);
    let mut tokens = Vec::new();
    let mut trace = DecodeTrace::default();
    for _ in 0..config.max_new_tokens {
        let (t, step) = ifcd_step(vlm, probe, features, prompt, &tokens, config, &mut rng)?;
        trace.steps.push(step);
        tokens.push(t);
        if t == vlm.vocab.eos {
            break;
        }
    }
    Ok((tokens, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::SiteProbe;
    use crate::rng::Rng;
    use crate::vlm::Site;
    use crate::world::{generate_scene, Vocab, WorldConfig};

    fn tiny_vlm() -> (WorldConfig, ToyVlmParams) {
        let config = WorldConfig::default();
        let vocab = Vocab::build(&config);
        let params = ToyVlmParams::init(vocab, 16, 32, 2, 64, &mut Rng::from_seed(0));
        (config, params)
    }

    fn zero_probe(d_model: usize, d_latent: usize) -> ProbeParams {
        let sites = LayerSite::all(2)
            .into_iter()
            .map(|s| (s, SiteProbe::zeros(d_model, d_latent)))
            .collect::<Vec<_>>();
        let ranking = sites.iter().map(|(s, _)| (*s, 0.5)).collect();
        ProbeParams { d_model, d_latent, sites, layer_ranking: ranking }
    }

    #[test]
    fn contrast_alpha_zero_is_identity() {
        let pos = vec![2.0, 1.0, 0.0];
        let neg = vec![0.0, 1.0, 2.0];
        assert_eq!(contrast_logits(&pos, &neg, 0.0), pos);
    }

    #[test]
    fn contrast_arithmetic_example() {
        let c = contrast_logits(&[2.0, 1.0, 0.0], &[0.0, 1.0, 2.0], 0.1);
        for (got, want) in c.iter().zip([2.2, 1.0, -0.2]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn contrast_equal_inputs_cancel() {
        let l = vec![0.3, -1.2, 5.0];
        for alpha in [0.0, 0.1, 1.0, 7.5] {
            let c = contrast_logits(&l, &l, alpha);
            for (got, want) in c.iter().zip(&l) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contrast_matches_closed_formula_on_random_inputs() {
        let mut rng = Rng::from_seed(3);
        for _ in 0..100 {
            let pos: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let neg: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let alpha = rng.next_f64() * 2.0;
            let c = contrast_logits(&pos, &neg, alpha);
            for i in 0..8 {
                assert!((c[i] - ((1.0 + alpha) * pos[i] - alpha * neg[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_beta_one_keeps_argmax_ties() {
        let d = TokenDistribution::from_logits(vec![1.0, 1.0, 0.0]);
        let c = plausibility_mask(&d, 1.0);
        assert_eq!(c.included.iter().copied().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn mask_arithmetic_example() {
        let d = TokenDistribution {
            logits: vec![0.0; 3],
            probs: vec![0.7, 0.2, 0.1],
        };
        let c = plausibility_mask(&d, 0.2);
        assert!((c.threshold_used - 0.14).abs() < 1e-12);
        assert_eq!(c.included.iter().copied().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn mask_beta_zero_includes_everything() {
        let d = TokenDistribution {
            logits: vec![0.0; 4],
            probs: vec![0.5, 0.5, 0.0, 0.0],
        };
        let c = plausibility_mask(&d, 0.0);
        assert_eq!(c.included.len(), 4);
    }

    #[test]
    fn mask_uniform_includes_all_at_default_beta() {
        let d = TokenDistribution::from_logits(vec![0.0; 10]);
        let c = plausibility_mask(&d, 0.1);
        assert_eq!(c.included.len(), 10);
    }

    #[test]
    fn noop_equivalence_with_regular() {
        let (config, vlm) = tiny_vlm();
        let probe = zero_probe(vlm.d_model, 4);
        let mut rng = Rng::from_seed(11);
        let mut noop = DecodingConfig::default();
        noop.alpha = 0.0;
        noop.edit.gamma = 0.0;
        noop.edit.active_sites = LayerSite::all(2);
        noop.mode = DecodeMode::IfcdFull;
        let mut regular = DecodingConfig::default();
        regular.mode = DecodeMode::Regular;
        for i in 0..50 {
            let scene = generate_scene(&config, i, &mut rng);
            let features = crate::vlm::encode_scene(&vlm, &scene).unwrap();
            let prompt = vlm.vocab.encode("describe the scene :").unwrap();
            let (a, _) = decode(&vlm, Some(&probe), &features, &prompt, &noop).unwrap();
            let (b, _) = decode(&vlm, Some(&probe), &features, &prompt, &regular).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mask_soundness_on_traces() {
        let (config, vlm) = tiny_vlm();
        let probe = zero_probe(vlm.d_model, 4);
        let mut rng = Rng::from_seed(5);
        let mut cfg = DecodingConfig::default();
        cfg.edit.active_sites = LayerSite::all(2);
        cfg.beta = 0.3;
        let scene = generate_scene(&config, 7, &mut rng);
        let features = crate::vlm::encode_scene(&vlm, &scene).unwrap();
        let prompt = vlm.vocab.encode("describe the scene :").unwrap();
        let (_, trace) = decode(&vlm, Some(&probe), &features, &prompt, &cfg).unwrap();
        assert!(!trace.steps.is_empty());
        for step in &trace.steps {
            assert!(step.candidates.contains(step.chosen));
            let probs = TokenDistribution::from_logits(step.combined.clone()).probs;
            for (t, p) in probs.iter().enumerate() {
                if !step.candidates.contains(t) {
                    assert_eq!(*p, 0.0);
                }
            }
        }
    }

    #[test]
    fn monotone_contrast_in_alpha() {
        // token 2: p- exceeds p+; its combined probability must not rise
        let pos = vec![1.0, 0.5, 0.0];
        let neg = vec![0.0, 0.5, 2.0];
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let alpha = i as f64 * 0.2;
            let c = contrast_logits(&pos, &neg, alpha);
            let p = TokenDistribution::from_logits(c).probs[2];
            assert!(p <= prev + 1e-12);
            prev = p;
        }
    }

    #[test]
    fn mode_lattice_trace_shape() {
        let (config, vlm) = tiny_vlm();
        let probe = zero_probe(vlm.d_model, 4);
        let mut rng = Rng::from_seed(5);
        let scene = generate_scene(&config, 3, &mut rng);
        let features = crate::vlm::encode_scene(&vlm, &scene).unwrap();
        let prompt = vlm.vocab.encode("is there a dog ?").unwrap();
        let run = |mode| {
            let mut cfg = DecodingConfig::default();
            cfg.mode = mode;
            cfg.max_new_tokens = 1;
            cfg.edit.active_sites = LayerSite::all(2);
            let (_, t) = decode(&vlm, Some(&probe), &features, &prompt, &cfg).unwrap();
            t.steps.into_iter().next().unwrap()
        };
        assert!(run(DecodeMode::Regular).logits_neg.is_none());
        assert!(run(DecodeMode::EditingOnly).logits_neg.is_none());
        assert!(run(DecodeMode::IfcdWoNeg).logits_neg.is_some());
        assert!(!run(DecodeMode::IfcdWoNeg).pos_is_original);
        assert!(run(DecodeMode::IfcdWoPos).pos_is_original);
        assert!(!run(DecodeMode::IfcdFull).pos_is_original);
    }

    #[test]
    fn decode_is_deterministic_under_greedy() {
        let (config, vlm) = tiny_vlm();
        let probe = zero_probe(vlm.d_model, 4);
        let mut rng = Rng::from_seed(9);
        let scene = generate_scene(&config, 4, &mut rng);
        let features = crate::vlm::encode_scene(&vlm, &scene).unwrap();
        let prompt = vlm.vocab.encode("describe the scene :").unwrap();
        let mut cfg = DecodingConfig::default();
        cfg.edit.active_sites = LayerSite::all(2);
        let (a, _) = decode(&vlm, Some(&probe), &features, &prompt, &cfg).unwrap();
        let (b, _) = decode(&vlm, Some(&probe), &features, &prompt, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_json_lines_roundtrip() {
        let (config, vlm) = tiny_vlm();
        let probe = zero_probe(vlm.d_model, 4);
        let mut rng = Rng::from_seed(2);
        let scene = generate_scene(&config, 6, &mut rng);
        let features = crate::vlm::encode_scene(&vlm, &scene).unwrap();
        let prompt = vlm.vocab.encode("describe the scene :").unwrap();
        let mut cfg = DecodingConfig::default();
        cfg.edit.active_sites = LayerSite::all(2);
        cfg.max_new_tokens = 3;
        let (tokens, trace) = decode(&vlm, Some(&probe), &features, &prompt, &cfg).unwrap();
        assert_eq!(trace.steps.len(), tokens.len());
        let jl = trace.to_json_lines();
        for (line, step) in jl.lines().zip(&trace.steps) {
            let parsed: StepTrace = serde_json::from_str(line).unwrap();
            assert_eq!(parsed.chosen, step.chosen);
        }
    }

    #[test]
    fn probe_required_when_editing() {
        let (config, vlm) = tiny_vlm();
        let mut rng = Rng::from_seed(2);
        let scene = generate_scene(&config, 1, &mut rng);
        let features = crate::vlm::encode_scene(&vlm, &scene).unwrap();
        let prompt = vlm.vocab.encode("is there a cat ?").unwrap();
        let cfg = DecodingConfig::default();
        assert!(decode(&vlm, None, &features, &prompt, &cfg).is_err());
        let mut reg = cfg;
        reg.mode = DecodeMode::Regular;
        assert!(decode(&vlm, None, &features, &prompt, &reg).is_ok());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = DecodingConfig::default();
        cfg.alpha = -0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = DecodingConfig::default();
        cfg.beta = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = DecodingConfig::default();
        cfg.max_new_tokens = 0;
        assert!(cfg.validate().is_err());
    }
}
