//! Scratch: steerability ground truth. Edit = per-category mean displacement
//! between prior-consistent and prior-contradicting question states, applied
//! directly (no probe). If this fails, additive activation edits cannot
//! steer the model and the architecture needs rework.

use std::collections::BTreeMap;

use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, forward, train_toy_vlm, CaptureHooks, LayerSite, VlmHooks, VlmHyper};
use ifcd::world::{build_corpus, color_prompt, generate_scene, SceneObject, SceneSpec, Vocab, WorldConfig};

struct PosEdit<'a> {
    deltas: &'a BTreeMap<LayerSite, Vec<f64>>,
    sites: Vec<LayerSite>,
    gamma: f64,
    pos: usize,
}

impl VlmHooks for PosEdit<'_> {
    fn on_site(&mut self, site: LayerSite, pos: usize, x: &[f64]) -> Option<Vec<f64>> {
        if pos != self.pos || !self.sites.contains(&site) {
            return None;
        }
        let d = &self.deltas[&site];
        Some(x.iter().zip(d).map(|(a, b)| a + self.gamma * b).collect())
    }
}

fn question_state(
    vlm: &ifcd::vlm::ToyVlmParams,
    vocab: &Vocab,
    scene: &SceneSpec,
    cat: &str,
) -> BTreeMap<LayerSite, Vec<f64>> {
    let features = encode_scene(vlm, scene).unwrap();
    let prompt = vocab.encode(&color_prompt(cat)).unwrap();
    let mut hooks = CaptureHooks::default();
    forward(vlm, &features, &prompt, &[], &mut hooks).unwrap();
    hooks.captured.into_iter().map(|(s, mut v)| (s, v.pop().unwrap())).collect()
}

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    let corpus = build_corpus(&config, &vocab, 3000, &mut rng).unwrap();
    let (vlm, _) = train_toy_vlm(vocab.clone(), &corpus, &VlmHyper::default()).unwrap();

    // per-category displacement: mean(consistent) - mean(contradicting)
    let mut disp: BTreeMap<String, BTreeMap<LayerSite, Vec<f64>>> = BTreeMap::new();
    let mut prng = Rng::from_seed(9);
    for cat in &config.categories {
        let canon = config.canonical(cat).unwrap().clone();
        let others: Vec<&String> = config.colors.iter().filter(|c| **c != canon).collect();
        let mut acc: BTreeMap<LayerSite, Vec<f64>> = BTreeMap::new();
        let reps = 20;
        for r in 0..reps {
            let wrong = (*prng.choose(&others)).clone();
            let mk = |color: &str| SceneSpec {
                scene_id: 2_000_000 + r,
                objects: vec![SceneObject {
                    category: cat.clone(),
                    color: color.to_string(),
                    count: 1,
                }],
            };
            let consist = question_state(&vlm, &vocab, &mk(&canon), cat);
            let contra = question_state(&vlm, &vocab, &mk(&wrong), cat);
            for (site, c) in consist {
                let k = contra[&site].clone();
                let e = acc.entry(site).or_insert_with(|| vec![0.0; c.len()]);
                for i in 0..c.len() {
                    e[i] += (c[i] - k[i]) / reps as f64;
                }
            }
        }
        disp.insert(cat.clone(), acc);
    }

    // global displacement: average over categories
    let mut global: BTreeMap<LayerSite, Vec<f64>> = BTreeMap::new();
    for acc in disp.values() {
        for (site, v) in acc {
            let e = global.entry(*site).or_insert_with(|| vec![0.0; v.len()]);
            for i in 0..v.len() {
                e[i] += v[i] / disp.len() as f64;
            }
        }
    }

    let mut panel = Vec::new();
    let mut eval_rng = Rng::from_seed(777);
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

    use ifcd::vlm::Site;
    let b0a = LayerSite { block: 0, site: Site::AttentionOutput };
    let b0f = LayerSite { block: 0, site: Site::FfnOutput };
    let b1a = LayerSite { block: 1, site: Site::AttentionOutput };
    let b1f = LayerSite { block: 1, site: Site::FfnOutput };
    for (label, sites) in [
        ("b0f", vec![b0f]),
        ("b1f", vec![b1f]),
        ("b1a+b1f", vec![b1a, b1f]),
        ("all-4", vec![b0a, b0f, b1a, b1f]),
        ("GLOBAL b1a+b1f", vec![b1a, b1f]),
    ] {
        let gammas = [0.0, 0.5, 1.0, 2.0];
        let mut monotone = 0;
        let mut means = [0.0f64; 4];
        for (scene, obj, canonical) in &panel {
            let features = encode_scene(&vlm, scene).unwrap();
            let prompt = vocab.encode(&color_prompt(&obj.category)).unwrap();
            let canon_id = vocab.id(canonical).unwrap();
            let last = features.len() + prompt.len();
            let deltas =
                if label.starts_with("GLOBAL") { &global } else { &disp[&obj.category] };
            let mut ps = Vec::new();
            for &gamma in &gammas {
                let mut hooks = PosEdit { deltas, sites: sites.clone(), gamma, pos: last };
                let dist = forward(&vlm, &features, &prompt, &[], &mut hooks).unwrap();
                ps.push(dist.probs[canon_id]);
            }
            for (m, p) in means.iter_mut().zip(&ps) {
                *m += p;
            }
            if ps.windows(2).all(|w| w[1] >= w[0] - 1e-12) {
                monotone += 1;
            }
        }
        println!(
            "true-displacement {label}: monotone {monotone}/100 mean P(canon) {:?}",
            means.iter().map(|m| (m / 100.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
}
