//! Next-token training of the toy VLM with per-example Adam updates.

use serde::{Deserialize, Serialize};

use super::backprop::{vlm_backward, vlm_forward_cached, SlotInput, VlmGrads};
use super::{object_onehot, NoHooks, ToyVlmParams, VlmError};
use crate::numerics::{softmax, AdamHyper, AdamState};
use crate::rng::Rng;
use crate::world::{ExampleKind, TrainingExample, Vocab, CLUSTER_SIZE};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlmHyper {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_blocks: usize,
    pub max_seq: usize,
    pub epochs: usize,
    pub adam: AdamHyper,
    /// Examples per gradient update.
    pub batch_size: usize,
    /// lr decays linearly to lr * final_lr_fraction over training.
    pub final_lr_fraction: f64,
    /// Train-time gaussian noise on the category part of each object
    /// encoding. Unreliable perception makes the optimal predictor blend
    /// visual evidence with corpus co-occurrence priors.
    pub category_noise_std: f64,
    /// Same, for the color part; drives reliance on canonical-color priors.
    pub color_noise_std: f64,
    pub held_out_fraction: f64,
    pub seed: u64,
}

impl Default for VlmHyper {
    fn default() -> Self {
        VlmHyper {
            d_model: 32,
            d_ff: 64,
            n_blocks: 2,
            max_seq: 160,
            epochs: 40,
            adam: AdamHyper { lr: 3e-3, ..Default::default() },
            batch_size: 16,
            final_lr_fraction: 0.1,
            category_noise_std: 0.6,
            color_noise_std: 0.7,
            held_out_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStats {
    pub final_train_loss: f64,
    pub held_out_ce: f64,
    pub epochs_run: usize,
}

/// Fresh train-time perception noise, applied per visit so the model cannot
/// memorize it away. Category and color components get independent gaussian
/// corruption; the count component stays clean.
struct VisualNoise<'a> {
    rng: &'a mut Rng,
    category_std: f64,
    color_std: f64,
}

/// Sequence slots plus (position, target) pairs for an example. Text token at
/// sequence position p predicts the following text token.
fn example_slots(
    params: &ToyVlmParams,
    example: &TrainingExample,
    mut noise: Option<&mut VisualNoise>,
) -> Result<(Vec<SlotInput>, Vec<(usize, usize)>), VlmError> {
    let mut slots = Vec::new();
    if let Some(scene) = &example.scene {
        let n_cat = params.vocab.categories.len();
        let n_col = params.vocab.colors.len();
        for obj in &scene.objects {
            let mut onehot = object_onehot(&params.vocab, obj)?;
            if let Some(n) = noise.as_deref_mut() {
                // category noise is cluster-local: perception only ever
                // confuses an object with its visually-similar cluster mates
                let cat = onehot[..n_cat].iter().position(|&v| v == 1.0).expect("category set");
                let start = (cat / CLUSTER_SIZE) * CLUSTER_SIZE;
                for v in &mut onehot[start..(start + CLUSTER_SIZE).min(n_cat)] {
                    *v += n.category_std * n.rng.normal();
                }
                for v in &mut onehot[n_cat..n_cat + n_col] {
                    *v += n.color_std * n.rng.normal();
                }
            }
            let feature = params.scene_proj.matvec(&onehot);
            slots.push(SlotInput::Visual { feature, onehot: Some(onehot) });
        }
    }
    let text_start = slots.len();
    for &t in &example.tokens {
        if t >= params.vocab.len() {
            return Err(VlmError::UnknownTokenId(t));
        }
        slots.push(SlotInput::Token(t));
    }
    let targets = (0..example.tokens.len() - 1)
        .map(|j| (text_start + j, example.tokens[j + 1]))
        .collect();
    Ok((slots, targets))
}

/// QA answer tokens carry extra loss weight so the single informative token
/// is not drowned out by the fixed question template.
const ANSWER_WEIGHT: f64 = 8.0;

/// Per-target loss weights, aligned with the targets of `example_slots`.
fn target_weights(params: &ToyVlmParams, example: &TrainingExample) -> Vec<f64> {
    let mut weights = vec![1.0; example.tokens.len() - 1];
    let is_qa = matches!(
        example.kind,
        ExampleKind::ExistenceQa | ExampleKind::ColorQa | ExampleKind::CountQa
    );
    if is_qa {
        if let Ok(q) = params.vocab.id("?") {
            // target j predicts tokens[j+1]; the token right after "?" is the answer
            for (j, w) in weights.iter_mut().enumerate() {
                if example.tokens[j] == q {
                    *w = ANSWER_WEIGHT;
                }
            }
        }
    }
    weights
}

/// Weighted mean cross-entropy of an example and, optionally, the gradient
/// step data.
fn example_loss(
    params: &ToyVlmParams,
    example: &TrainingExample,
    noise: Option<&mut VisualNoise>,
    grads: Option<&mut VlmGrads>,
) -> Result<f64, VlmError> {
    let (slots, targets) = example_slots(params, example, noise)?;
    let cache = vlm_forward_cached(params, &slots, &mut NoHooks)?;
    let weights = target_weights(params, example);
    let total_w: f64 = weights.iter().sum();
    let mut loss = 0.0;
    let mut grad_logits = Vec::new();
    for ((pos, tgt), w) in targets.iter().zip(&weights) {
        let mut logits = params.tok_emb.matvec(&cache.final_states[*pos]);
        for (l, b) in logits.iter_mut().zip(&params.b_out) {
            *l += b;
        }
        let probs = softmax(&logits).expect("non-empty vocab");
        loss -= w * probs[*tgt].max(1e-300).ln();
        if grads.is_some() {
            let mut dl = probs;
            dl[*tgt] -= 1.0;
            for g in &mut dl {
                *g *= w / total_w;
            }
            grad_logits.push((*pos, dl));
        }
    }
    if let Some(g) = grads {
        vlm_backward(params, &cache, &grad_logits, g);
    }
    Ok(loss / total_w)
}

pub fn held_out_cross_entropy(
    params: &ToyVlmParams,
    examples: &[TrainingExample],
) -> Result<f64, VlmError> {
    if examples.is_empty() {
        return Err(VlmError::EmptyCorpus);
    }
    let mut total = 0.0;
    for e in examples {
        total += example_loss(params, e, None, None)?;
    }
    Ok(total / examples.len() as f64)
}

pub fn train_toy_vlm(
    vocab: Vocab,
    corpus: &[TrainingExample],
    hyper: &VlmHyper,
) -> Result<(ToyVlmParams, TrainStats), VlmError> {
    if corpus.is_empty() {
        return Err(VlmError::EmptyCorpus);
    }
    let mut rng = Rng::from_seed(hyper.seed);
    let mut noise_rng = rng.split();
    let mut params =
        ToyVlmParams::init(vocab, hyper.d_model, hyper.d_ff, hyper.n_blocks, hyper.max_seq, &mut rng);

    let n_held = ((corpus.len() as f64 * hyper.held_out_fraction) as usize).min(corpus.len() - 1);
    let (train_set, held_out) = corpus.split_at(corpus.len() - n_held);

    let mut flat = Vec::with_capacity(params.param_count());
    params.write_flat(&mut flat);
    let mut adam = AdamState::new(flat.len(), hyper.adam);
    let mut grads = VlmGrads::zeros_like(&params);
    let mut flat_grads = Vec::with_capacity(flat.len());

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut last_finite = f64::INFINITY;
    let mut epoch_loss = 0.0;
    let batch = hyper.batch_size.max(1);
    let total_updates = (hyper.epochs * train_set.len().div_ceil(batch)).max(1);
    let base_lr = hyper.adam.lr;
    let mut update_idx = 0usize;
    for _epoch in 0..hyper.epochs {
        rng.shuffle(&mut order);
        epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grads.zero();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let mut noise = VisualNoise {
                    rng: &mut noise_rng,
                    category_std: hyper.category_noise_std,
                    color_std: hyper.color_noise_std,
                };
                let loss = example_loss(&params, &train_set[i], Some(&mut noise), Some(&mut grads))?;
                if !loss.is_finite() {
                    return Err(VlmError::Diverged { last_loss: last_finite });
                }
                last_finite = loss;
                batch_loss += loss;
            }
            epoch_loss += batch_loss;
            flat_grads.clear();
            grads.write_flat(&mut flat_grads);
            let inv = 1.0 / chunk.len() as f64;
            for g in &mut flat_grads {
                *g *= inv;
            }
            // linear lr decay
            let frac = update_idx as f64 / total_updates as f64;
            adam.hyper.lr = base_lr * (1.0 - (1.0 - hyper.final_lr_fraction) * frac);
            adam.update(&mut flat, &flat_grads);
            params.read_flat(&flat);
            update_idx += 1;
        }
        epoch_loss /= train_set.len() as f64;
    }

    let held_out_ce = if held_out.is_empty() {
        epoch_loss
    } else {
        held_out_cross_entropy(&params, held_out)?
    };
    Ok((params, TrainStats { final_train_loss: epoch_loss, held_out_ce, epochs_run: hyper.epochs }))
}

/// Greedy single-token answer to a prompt; the workhorse for accuracy checks.
pub fn greedy_answer(
    params: &ToyVlmParams,
    scene_features: &[Vec<f64>],
    prompt_tokens: &[usize],
) -> Result<usize, VlmError> {
    let dist = super::forward(params, scene_features, prompt_tokens, &[], &mut NoHooks)?;
    Ok(dist.argmax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_corpus, WorldConfig};

    #[test]
    fn empty_corpus_errors() {
        let vocab = Vocab::build(&WorldConfig::default());
        assert!(train_toy_vlm(vocab, &[], &VlmHyper::default()).is_err());
    }

    #[test]
    fn single_example_is_memorized() {
        let config = WorldConfig { bias_ratio: 0.0, ..Default::default() };
        let vocab = Vocab::build(&config);
        let corpus = build_corpus(&config, &vocab, 1, &mut Rng::from_seed(0)).unwrap();
        let hyper = VlmHyper {
            epochs: 300,
            held_out_fraction: 0.0,
            category_noise_std: 0.0,
            color_noise_std: 0.0,
            ..Default::default()
        };
        let (params, stats) = train_toy_vlm(vocab, &corpus, &hyper).unwrap();
        assert!(stats.final_train_loss < 0.1, "loss {}", stats.final_train_loss);
        let loss = example_loss(&params, &corpus[0], None, None).unwrap();
        assert!(loss < 0.1, "loss {loss}");
    }
}
