//! Cached forward pass and hand-written backward pass for the toy VLM.
//! Backward assumes the forward ran without edits (training never edits).

use super::{LayerSite, Site, ToyVlmParams, VlmError, VlmHooks};
use crate::numerics::Matrix;
use crate::world::TokenId;

const LN_EPS: f64 = 1e-5;

/// One sequence slot: a projected visual feature or a token id. The one-hot
/// is carried when the scene projection itself should receive gradients.
#[derive(Debug, Clone)]
pub enum SlotInput {
    Visual { feature: Vec<f64>, onehot: Option<Vec<f64>> },
    Token(TokenId),
}

#[derive(Debug, Clone, Default)]
pub struct BlockCache {
    pub x_in: Vec<Vec<f64>>,
    pub ln1_xhat: Vec<Vec<f64>>,
    pub ln1_inv_std: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// row t holds t+1 causal weights
    pub attn_w: Vec<Vec<f64>>,
    /// weighted value sum per position
    pub mix: Vec<Vec<f64>>,
    pub x_mid: Vec<Vec<f64>>,
    pub ln2_xhat: Vec<Vec<f64>>,
    pub ln2_inv_std: Vec<f64>,
    pub ffn_pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct VlmCache {
    pub slots: Vec<SlotInput>,
    pub blocks: Vec<BlockCache>,
    pub x_last: Vec<Vec<f64>>,
    pub final_states: Vec<Vec<f64>>,
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|&v| (v - mean) * inv_std).collect();
    let y = xhat.iter().zip(gain.iter().zip(bias)).map(|(&h, (&g, &b))| g * h + b).collect();
    (y, xhat, inv_std)
}

/// dx given dy, using the cached normalized values.
fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: f64,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let d = dy.len() as f64;
    let dxhat: Vec<f64> = dy.iter().zip(gain).map(|(&g, &w)| g * w).collect();
    for i in 0..dy.len() {
        dgain[i] += dy[i] * xhat[i];
        dbias[i] += dy[i];
    }
    let mean_dxhat = dxhat.iter().sum::<f64>() / d;
    let mean_dxhat_xhat = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d;
    dxhat
        .iter()
        .zip(xhat)
        .map(|(&dxh, &xh)| inv_std * (dxh - mean_dxhat - xh * mean_dxhat_xhat))
        .collect()
}

pub fn vlm_forward_cached(
    params: &ToyVlmParams,
    slots: &[SlotInput],
    hooks: &mut dyn VlmHooks,
) -> Result<VlmCache, VlmError> {
    let seq = slots.len();
    if seq > params.max_seq {
        return Err(VlmError::SequenceTooLong { got: seq, max: params.max_seq });
    }
    let d = params.d_model;
    let scale = 1.0 / (d as f64).sqrt();

    let mut x: Vec<Vec<f64>> = slots
        .iter()
        .enumerate()
        .map(|(pos, slot)| {
            let mut e = match slot {
                SlotInput::Visual { feature, .. } => feature.clone(),
                SlotInput::Token(t) => {
                    if *t >= params.vocab.len() {
                        return Err(VlmError::UnknownTokenId(*t));
                    }
                    params.tok_emb.row(*t).to_vec()
                }
            };
            for (ei, &p) in e.iter_mut().zip(params.pos_emb.row(pos)) {
                *ei += p;
            }
            Ok(e)
        })
        .collect::<Result<_, _>>()?;

    let mut blocks = Vec::with_capacity(params.blocks.len());
    for (bi, bp) in params.blocks.iter().enumerate() {
        let mut cache = BlockCache { x_in: x.clone(), ..Default::default() };

        // attention sublayer (pre-norm)
        for t in 0..seq {
            let (u, xhat, inv_std) = layer_norm(&x[t], &bp.ln1_gain, &bp.ln1_bias);
            cache.ln1_xhat.push(xhat);
            cache.ln1_inv_std.push(inv_std);
            cache.q.push(bp.wq.matvec(&u));
            cache.k.push(bp.wk.matvec(&u));
            cache.v.push(bp.wv.matvec(&u));
        }
        for t in 0..seq {
            let mut scores = vec![0.0; t + 1];
            for s in 0..=t {
                scores[s] = crate::numerics::dot(&cache.q[t], &cache.k[s]) * scale;
            }
            let w = crate::numerics::softmax(&scores).expect("non-empty scores");
            let mut mix = vec![0.0; d];
            for (s, &ws) in w.iter().enumerate() {
                crate::numerics::add_scaled(&mut mix, &cache.v[s], ws);
            }
            let attn_out = bp.wo.matvec(&mix);
            let site = LayerSite { block: bi, site: Site::AttentionOutput };
            let attn_out = hooks.on_site(site, t, &attn_out).unwrap_or(attn_out);
            let mut xm = x[t].clone();
            crate::numerics::add_scaled(&mut xm, &attn_out, 1.0);
            cache.attn_w.push(w);
            cache.mix.push(mix);
            cache.x_mid.push(xm);
        }

        // FFN sublayer (pre-norm)
        let mut x_out = Vec::with_capacity(seq);
        for t in 0..seq {
            let (u, xhat, inv_std) = layer_norm(&cache.x_mid[t], &bp.ln2_gain, &bp.ln2_bias);
            cache.ln2_xhat.push(xhat);
            cache.ln2_inv_std.push(inv_std);
            let mut pre = bp.w1.matvec(&u);
            for (p, &b) in pre.iter_mut().zip(&bp.b1) {
                *p += b;
            }
            let act: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
            let mut ffn_out = bp.w2.matvec(&act);
            for (f, &b) in ffn_out.iter_mut().zip(&bp.b2) {
                *f += b;
            }
            let site = LayerSite { block: bi, site: Site::FfnOutput };
            let ffn_out = hooks.on_site(site, t, &ffn_out).unwrap_or(ffn_out);
            let mut xo = cache.x_mid[t].clone();
            crate::numerics::add_scaled(&mut xo, &ffn_out, 1.0);
            cache.ffn_pre.push(pre);
            x_out.push(xo);
        }

        blocks.push(cache);
        x = x_out;
    }

    // no final layer norm: the tied output head reads the residual stream
    // directly, so activation edits shift logits linearly
    let final_states = x.clone();

    Ok(VlmCache { slots: slots.to_vec(), blocks, x_last: x, final_states })
}

/// Gradients, same tensor layout as the parameters.
#[derive(Debug, Clone)]
pub struct VlmGrads {
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
    pub scene_proj: Matrix,
    pub blocks: Vec<BlockGrads>,
    pub b_out: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl VlmGrads {
    pub fn zeros_like(p: &ToyVlmParams) -> Self {
        VlmGrads {
            tok_emb: Matrix::zeros(p.tok_emb.rows, p.tok_emb.cols),
            pos_emb: Matrix::zeros(p.pos_emb.rows, p.pos_emb.cols),
            scene_proj: Matrix::zeros(p.scene_proj.rows, p.scene_proj.cols),
            blocks: p
                .blocks
                .iter()
                .map(|b| BlockGrads {
                    ln1_gain: vec![0.0; b.ln1_gain.len()],
                    ln1_bias: vec![0.0; b.ln1_bias.len()],
                    wq: Matrix::zeros(b.wq.rows, b.wq.cols),
                    wk: Matrix::zeros(b.wk.rows, b.wk.cols),
                    wv: Matrix::zeros(b.wv.rows, b.wv.cols),
                    wo: Matrix::zeros(b.wo.rows, b.wo.cols),
                    ln2_gain: vec![0.0; b.ln2_gain.len()],
                    ln2_bias: vec![0.0; b.ln2_bias.len()],
                    w1: Matrix::zeros(b.w1.rows, b.w1.cols),
                    b1: vec![0.0; b.b1.len()],
                    w2: Matrix::zeros(b.w2.rows, b.w2.cols),
                    b2: vec![0.0; b.b2.len()],
                })
                .collect(),
            b_out: vec![0.0; p.b_out.len()],
        }
    }

    pub fn zero(&mut self) {
        fn z(v: &mut [f64]) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        z(&mut self.tok_emb.data);
        z(&mut self.pos_emb.data);
        z(&mut self.scene_proj.data);
        for b in &mut self.blocks {
            z(&mut b.ln1_gain);
            z(&mut b.ln1_bias);
            z(&mut b.wq.data);
            z(&mut b.wk.data);
            z(&mut b.wv.data);
            z(&mut b.wo.data);
            z(&mut b.ln2_gain);
            z(&mut b.ln2_bias);
            z(&mut b.w1.data);
            z(&mut b.b1);
            z(&mut b.w2.data);
            z(&mut b.b2);
        }
        z(&mut self.b_out);
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
}

/// Backward through the whole model given d(loss)/d(logits) at selected
/// positions: `grad_logits[i] = (position, dlogits)`.
pub fn vlm_backward(
    params: &ToyVlmParams,
    cache: &VlmCache,
    grad_logits: &[(usize, Vec<f64>)],
    grads: &mut VlmGrads,
) {
    let seq = cache.slots.len();
    let d = params.d_model;
    let scale = 1.0 / (d as f64).sqrt();

    // tied output head, no final norm
    let mut dx: Vec<Vec<f64>> = vec![vec![0.0; d]; seq];
    for (pos, dlog) in grad_logits {
        let z = &cache.final_states[*pos];
        for (r, &dl) in dlog.iter().enumerate() {
            grads.b_out[r] += dl;
            let row = r * d;
            for c in 0..d {
                grads.tok_emb.data[row + c] += dl * z[c];
            }
        }
        let dz = params.tok_emb.matvec_t(dlog);
        crate::numerics::add_scaled(&mut dx[*pos], &dz, 1.0);
    }

    for (bi, bp) in params.blocks.iter().enumerate().rev() {
        let bc = &cache.blocks[bi];
        let bg = &mut grads.blocks[bi];

        // FFN sublayer: x_out = x_mid + W2 relu(W1 ln2(x_mid) + b1) + b2
        let mut dx_mid: Vec<Vec<f64>> = dx.clone(); // residual path
        for t in 0..seq {
            let dffn = &dx[t];
            if dffn.iter().all(|&g| g == 0.0) {
                continue;
            }
            let act: Vec<f64> = bc.ffn_pre[t].iter().map(|&z| z.max(0.0)).collect();
            for (r, &g) in dffn.iter().enumerate() {
                bg.b2[r] += g;
                let row = r * params.d_ff;
                for c in 0..params.d_ff {
                    bg.w2.data[row + c] += g * act[c];
                }
            }
            let dact = bp.w2.matvec_t(dffn);
            let dpre: Vec<f64> = dact
                .iter()
                .zip(&bc.ffn_pre[t])
                .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                .collect();
            // reconstruct ln2 output u from cached xhat
            let u: Vec<f64> = bc.ln2_xhat[t]
                .iter()
                .zip(bp.ln2_gain.iter().zip(&bp.ln2_bias))
                .map(|(&h, (&g, &b))| g * h + b)
                .collect();
            for (r, &g) in dpre.iter().enumerate() {
                bg.b1[r] += g;
                let row = r * d;
                for c in 0..d {
                    bg.w1.data[row + c] += g * u[c];
                }
            }
            let du = bp.w1.matvec_t(&dpre);
            let dxm = layer_norm_backward(
                &du,
                &bc.ln2_xhat[t],
                bc.ln2_inv_std[t],
                &bp.ln2_gain,
                &mut bg.ln2_gain,
                &mut bg.ln2_bias,
            );
            crate::numerics::add_scaled(&mut dx_mid[t], &dxm, 1.0);
        }

        // attention sublayer: x_mid = x_in + Wo mix
        let mut dq: Vec<Vec<f64>> = vec![vec![0.0; d]; seq];
        let mut dk: Vec<Vec<f64>> = vec![vec![0.0; d]; seq];
        let mut dv: Vec<Vec<f64>> = vec![vec![0.0; d]; seq];
        let mut dx_in: Vec<Vec<f64>> = dx_mid.clone(); // residual path
        for t in 0..seq {
            let dattn = &dx_mid[t];
            if dattn.iter().all(|&g| g == 0.0) {
                continue;
            }
            for (r, &g) in dattn.iter().enumerate() {
                let row = r * d;
                for c in 0..d {
                    bg.wo.data[row + c] += g * bc.mix[t][c];
                }
            }
            let dmix = bp.wo.matvec_t(dattn);
            let w = &bc.attn_w[t];
            let mut dw = vec![0.0; t + 1];
            for s in 0..=t {
                crate::numerics::add_scaled(&mut dv[s], &dmix, w[s]);
                dw[s] = crate::numerics::dot(&dmix, &bc.v[s]);
            }
            // softmax backward
            let dot_wd: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
            for s in 0..=t {
                let dscore = w[s] * (dw[s] - dot_wd);
                crate::numerics::add_scaled(&mut dq[t], &bc.k[s], dscore * scale);
                crate::numerics::add_scaled(&mut dk[s], &bc.q[t], dscore * scale);
            }
        }
        for t in 0..seq {
            // u_t = ln1(x_in_t); q/k/v = W u_t
            let u: Vec<f64> = bc.ln1_xhat[t]
                .iter()
                .zip(bp.ln1_gain.iter().zip(&bp.ln1_bias))
                .map(|(&h, (&g, &b))| g * h + b)
                .collect();
            let mut du = vec![0.0; d];
            let mut proj_backward = |mat: &Matrix, gmat: &mut Matrix, dvec: &[f64], du: &mut [f64]| {
                if dvec.iter().all(|&g| g == 0.0) {
                    return;
                }
                for (r, &g) in dvec.iter().enumerate() {
                    let row = r * d;
                    for c in 0..d {
                        gmat.data[row + c] += g * u[c];
                    }
                }
                crate::numerics::add_scaled(du, &mat.matvec_t(dvec), 1.0);
            };
            proj_backward(&bp.wq, &mut bg.wq, &dq[t], &mut du);
            proj_backward(&bp.wk, &mut bg.wk, &dk[t], &mut du);
            proj_backward(&bp.wv, &mut bg.wv, &dv[t], &mut du);
            if du.iter().all(|&g| g == 0.0) {
                continue;
            }
            let dxi = layer_norm_backward(
                &du,
                &bc.ln1_xhat[t],
                bc.ln1_inv_std[t],
                &bp.ln1_gain,
                &mut bg.ln1_gain,
                &mut bg.ln1_bias,
            );
            crate::numerics::add_scaled(&mut dx_in[t], &dxi, 1.0);
        }
        dx = dx_in;
    }

    // embeddings
    for (pos, slot) in cache.slots.iter().enumerate() {
        let g = &dx[pos];
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let row = pos * d;
        for c in 0..d {
            grads.pos_emb.data[row + c] += g[c];
        }
        match slot {
            SlotInput::Token(t) => {
                let row = t * d;
                for c in 0..d {
                    grads.tok_emb.data[row + c] += g[c];
                }
            }
            SlotInput::Visual { onehot: Some(oh), .. } => {
                for (r, &gr) in g.iter().enumerate() {
                    let row = r * grads.scene_proj.cols;
                    for (c, &o) in oh.iter().enumerate() {
                        if o != 0.0 {
                            grads.scene_proj.data[row + c] += gr * o;
                        }
                    }
                }
            }
            SlotInput::Visual { onehot: None, .. } => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::vlm::NoHooks;
    use crate::world::{Vocab, WorldConfig};

    /// Central finite differences over every parameter of a small model on a
    /// mixed visual/text sequence; loss is mean cross-entropy at two positions.
    #[test]
    fn full_model_gradients_match_finite_differences() {
        let config = WorldConfig {
            categories: vec!["dog".into(), "cat".into()],
            colors: vec!["red".into(), "black".into()],
            max_count: 2,
            canonical_color: [("dog".to_string(), "red".to_string())].into_iter().collect(),
            bias_ratio: 0.0,
            seed: 0,
        };
        let vocab = Vocab::build(&config);
        let mut rng = Rng::from_seed(11);
        let mut params = super::super::ToyVlmParams::init(vocab, 6, 10, 2, 16, &mut rng);

        let onehot = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let feature = params.scene_proj.matvec(&onehot);
        let slots = vec![
            SlotInput::Visual { feature, onehot: Some(onehot.clone()) },
            SlotInput::Token(params.vocab.bos),
            SlotInput::Token(params.vocab.id("is").unwrap()),
            SlotInput::Token(params.vocab.id("dog").unwrap()),
            SlotInput::Token(params.vocab.yes),
        ];
        let targets = vec![(2usize, params.vocab.id("dog").unwrap()), (4, params.vocab.eos)];

        let loss_fn = |p: &super::super::ToyVlmParams| -> f64 {
            // rebuild the visual feature from the (possibly perturbed) projection
            let mut s = slots.clone();
            if let SlotInput::Visual { feature, .. } = &mut s[0] {
                *feature = p.scene_proj.matvec(&onehot);
            }
            let cache = vlm_forward_cached(p, &s, &mut NoHooks).unwrap();
            let mut loss = 0.0;
            for (pos, tgt) in &targets {
                let mut logits = p.tok_emb.matvec(&cache.final_states[*pos]);
                for (l, b) in logits.iter_mut().zip(&p.b_out) {
                    *l += b;
                }
                let probs = crate::numerics::softmax(&logits).unwrap();
                loss -= probs[*tgt].ln();
            }
            loss / targets.len() as f64
        };

        // analytic
        let cache = vlm_forward_cached(&params, &slots, &mut NoHooks).unwrap();
        let mut grads = VlmGrads::zeros_like(&params);
        let mut grad_logits = Vec::new();
        for (pos, tgt) in &targets {
            let mut logits = params.tok_emb.matvec(&cache.final_states[*pos]);
            for (l, b) in logits.iter_mut().zip(&params.b_out) {
                *l += b;
            }
            let mut dl = crate::numerics::softmax(&logits).unwrap();
            dl[*tgt] -= 1.0;
            for g in &mut dl {
                *g /= targets.len() as f64;
            }
            grad_logits.push((*pos, dl));
        }
        vlm_backward(&params, &cache, &grad_logits, &mut grads);
        let mut analytic = Vec::new();
        grads.write_flat(&mut analytic);

        let mut flat = Vec::new();
        params.write_flat(&mut flat);
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        // sample a spread of parameters rather than all ~3k for speed
        for i in (0..flat.len()).step_by(7) {
            let orig = flat[i];
            flat[i] = orig + h;
            params.read_flat(&flat);
            let lp = loss_fn(&params);
            flat[i] = orig - h;
            params.read_flat(&flat);
            let lm = loss_fn(&params);
            flat[i] = orig;
            params.read_flat(&flat);
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
            let rel = (fd - analytic[i]).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }
}
