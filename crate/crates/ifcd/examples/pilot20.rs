//! Scratch: does shrinking the edit magnitude fix monotonicity? Applies
//! kappa * gamma * Delta at b0.ffn, last position, protocol pairs.

use ifcd::probe::{apply_edit, collect_pairs, compute_delta, train_probe, EditSign, ProbeHyper};
use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, forward, train_toy_vlm, LayerSite, Site, VlmHooks, VlmHyper};
use ifcd::world::{build_corpus, color_prompt, generate_scene, Vocab, WorldConfig};

struct ScaledEdit<'a> {
    site: LayerSite,
    probe: &'a ifcd::probe::ProbeParams,
    gamma: f64,
    kappa: f64,
    pos: usize,
}

impl VlmHooks for ScaledEdit<'_> {
    fn on_site(&mut self, site: LayerSite, pos: usize, x: &[f64]) -> Option<Vec<f64>> {
        if pos != self.pos || site != self.site {
            return None;
        }
        let delta = compute_delta(self.probe, site, x, EditSign::Negative).unwrap();
        Some(apply_edit(x, &delta, self.gamma * self.kappa))
    }
}

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    let corpus = build_corpus(&config, &vocab, 3000, &mut rng).unwrap();
    let (vlm, _) = train_toy_vlm(vocab.clone(), &corpus, &VlmHyper::default()).unwrap();

    let mut panel = Vec::new();
    let mut eval_rng = Rng::from_seed(777);
    let mut i = 0u64;
    while panel.len() < 100 {
        let scene = generate_scene(&config, 300_000 + i, &mut eval_rng);
        i += 1;
        let obj = scene.objects[0].clone();
        let canonical = config.canonical(&obj.category).unwrap().to_string();
        if obj.color == canonical {
            continue;
        }
        panel.push((scene, obj, canonical));
    }

    let b0f = LayerSite { block: 0, site: Site::FfnOutput };
    let mut pair_rng = Rng::from_seed(42);
    let pairs = collect_pairs(&vlm, &config, 1200, &mut pair_rng).unwrap();
    for (dh, sem) in [(8usize, 1.0), (8, 0.3), (16, 1.0), (16, 0.3), (64, 1.0)] {
    println!("dec_hidden {dh} sem {sem}");
    let hyper = ProbeHyper { dec_hidden: dh, sem_noise_std: sem, ..ProbeHyper::default() };
    let (probe, _) = train_probe(&pairs, &hyper).unwrap();
    for kappa in [0.25, 1.0] {
        let gammas = [0.0, 0.5, 1.0, 2.0];
        let mut monotone = 0;
        let mut trans = [0usize; 3];
        let mut means = [0.0f64; 4];
        let mut by_cat: std::collections::BTreeMap<String, (usize, usize)> = Default::default();
        let mut base_by_cat: std::collections::BTreeMap<String, (f64, f64)> = Default::default();
        for (scene, obj, canonical) in &panel {
            let features = encode_scene(&vlm, scene).unwrap();
            let prompt = vocab.encode(&color_prompt(&obj.category)).unwrap();
            let canon_id = vocab.id(canonical).unwrap();
            let last = features.len() + prompt.len();
            let mut ps = Vec::new();
            for &gamma in &gammas {
                let mut hooks = ScaledEdit { site: b0f, probe: &probe, gamma, kappa, pos: last };
                let dist = forward(&vlm, &features, &prompt, &[], &mut hooks).unwrap();
                ps.push(dist.probs[canon_id]);
            }
            for (m, p) in means.iter_mut().zip(&ps) {
                *m += p;
            }
            for (k, w) in ps.windows(2).enumerate() {
                if w[1] >= w[0] - 1e-12 {
                    trans[k] += 1;
                }
            }
            let e = by_cat.entry(obj.category.clone()).or_insert((0, 0));
            e.1 += 1;
            let f = base_by_cat.entry(obj.category.clone()).or_insert((0.0, 0.0));
            f.0 += ps[0];
            f.1 += ps[3] - ps[0];
            if ps.windows(2).all(|w| w[1] >= w[0] - 1e-12) {
                monotone += 1;
                e.0 += 1;
            }
        }
        for (c, (ok, n)) in &by_cat {
            let (b, d) = base_by_cat[c];
            print!(" {c} {ok}/{n} base {:.2} shift {:+.3}\n", b / *n as f64, d / *n as f64);
        }
        println!();
        println!(
            "kappa {kappa}: monotone {monotone}/100 transitions {:?} mean P(canon) {:?}",
            trans,
            means.iter().map(|m| (m / 100.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
    }
}
