//! Scratch: diagnose edit directionality — sweep gamma for both edit signs,
//! watch P(canonical) vs P(true color), compare all-position vs
//! last-position editing.

use ifcd::probe::{apply_edit, collect_pairs, compute_delta, train_probe, EditSign, ProbeHyper};
use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, forward, train_toy_vlm, LayerSite, VlmHooks, VlmHyper};
use ifcd::world::{build_corpus, color_prompt, generate_scene, Vocab, WorldConfig};

struct PosEdit<'a> {
    sites: Vec<LayerSite>,
    probe: &'a ifcd::probe::ProbeParams,
    sign: EditSign,
    gamma: f64,
    only_pos: Option<usize>,
}

impl VlmHooks for PosEdit<'_> {
    fn on_site(&mut self, site: LayerSite, pos: usize, x: &[f64]) -> Option<Vec<f64>> {
        if !self.sites.contains(&site) {
            return None;
        }
        if let Some(p) = self.only_pos {
            if pos != p {
                return None;
            }
        }
        let delta = compute_delta(self.probe, site, x, self.sign).unwrap();
        Some(apply_edit(x, &delta, self.gamma))
    }
}

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    let corpus = build_corpus(&config, &vocab, 3000, &mut rng).unwrap();
    let (vlm, stats) = train_toy_vlm(vocab.clone(), &corpus, &VlmHyper::default()).unwrap();
    println!("vlm held-out ce {:.4}", stats.held_out_ce);

    let mut pair_rng = Rng::from_seed(42);
    let pairs = collect_pairs(&vlm, &config, 300, &mut pair_rng).unwrap();
    let (probe, pstats) = train_probe(&pairs, &ProbeHyper::default()).unwrap();
    for (site, auc) in &pstats.per_site_auc {
        println!("site {} auc {:.4}", site.label(), auc);
    }
    let active: Vec<_> = probe.layer_ranking.iter().take(2).map(|(s, _)| *s).collect();

    // build the contradicting panel once
    let mut eval_rng = Rng::from_seed(777);
    let mut panel = Vec::new();
    let mut i = 0u64;
    while panel.len() < 100 {
        let scene = generate_scene(&config, 300_000 + i, &mut eval_rng);
        i += 1;
        let obj = scene.objects[0].clone();
        let canonical = config.canonical(&obj.category).unwrap().clone();
        if obj.color == canonical {
            continue;
        }
        panel.push((scene, obj, canonical));
    }

    for (label, only_last) in [("all-pos", false), ("last-pos", true)] {
        for sign in [EditSign::Negative, EditSign::Positive] {
            for gamma in [0.0, 0.5, 1.0, 2.0, 5.0] {
                let mut mean_canon = 0.0;
                let mut mean_true = 0.0;
                let mut acc = 0.0;
                for (scene, obj, canonical) in &panel {
                    let features = encode_scene(&vlm, scene).unwrap();
                    let prompt = vocab.encode(&color_prompt(&obj.category)).unwrap();
                    let only_pos = if only_last {
                        Some(features.len() + prompt.len())
                    } else {
                        None
                    };
                    let mut hooks = PosEdit {
                        sites: active.clone(),
                        probe: &probe,
                        sign,
                        gamma,
                        only_pos,
                    };
                    let dist = forward(&vlm, &features, &prompt, &[], &mut hooks).unwrap();
                    let canon_id = vocab.id(canonical).unwrap();
                    let true_id = vocab.id(&obj.color).unwrap();
                    mean_canon += dist.probs[canon_id];
                    mean_true += dist.probs[true_id];
                    let best = dist
                        .probs
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .unwrap()
                        .0;
                    if best == true_id {
                        acc += 1.0;
                    }
                }
                let n = panel.len() as f64;
                println!(
                    "{label} {sign:?} gamma {gamma:>4}: P(canon) {:.3} P(true) {:.3} acc {:.3}",
                    mean_canon / n,
                    mean_true / n,
                    acc / n
                );
            }
        }
    }
}
