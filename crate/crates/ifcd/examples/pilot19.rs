//! Scratch: ceiling of the teacher-forced pair protocol. Applies the exact
//! per-category mean answer-state displacement (x_neg - x_pos) at the
//! question-emitting position and checks gamma-monotonicity.

use std::collections::BTreeMap;

use ifcd::rng::Rng;
use ifcd::vlm::{
    encode_scene, forward, train_toy_vlm, CaptureHooks, LayerSite, Site, VlmHooks, VlmHyper,
};
use ifcd::world::{build_corpus, color_prompt, generate_scene, Vocab, WorldConfig};

struct DispEdit<'a> {
    sites: &'a [LayerSite],
    disp: &'a BTreeMap<LayerSite, Vec<f64>>,
    gamma: f64,
    pos: usize,
}

impl VlmHooks for DispEdit<'_> {
    fn on_site(&mut self, site: LayerSite, pos: usize, x: &[f64]) -> Option<Vec<f64>> {
        if pos != self.pos || !self.sites.contains(&site) {
            return None;
        }
        let d = &self.disp[&site];
        Some(x.iter().zip(d).map(|(xi, di)| xi + self.gamma * di).collect())
    }
}

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    let corpus = build_corpus(&config, &vocab, 3000, &mut rng).unwrap();
    let (vlm, _) = train_toy_vlm(vocab.clone(), &corpus, &VlmHyper::default()).unwrap();

    // per-category mean answer-state displacement, teacher-forced protocol
    let mut disp: BTreeMap<String, BTreeMap<LayerSite, Vec<f64>>> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut prng = Rng::from_seed(42);
    let mut scene_id = 0u64;
    let per_cat = 25usize;
    while counts.values().sum::<usize>() < per_cat * config.categories.len() {
        let scene = generate_scene(&config, scene_id, &mut prng);
        scene_id += 1;
        let Some(obj) = scene
            .objects
            .iter()
            .find(|o| config.canonical(&o.category).is_some_and(|c| *c != o.color))
        else {
            continue;
        };
        let cat = obj.category.clone();
        if *counts.get(&cat).unwrap_or(&0) >= per_cat {
            continue;
        }
        *counts.entry(cat.clone()).or_insert(0) += 1;
        let features = encode_scene(&vlm, &scene).unwrap();
        let prompt = vocab.encode(&color_prompt(&cat)).unwrap();
        let truthful = vocab.id(&obj.color).unwrap();
        let untruthful = vocab.id(config.canonical(&cat).unwrap()).unwrap();
        let capture = |ans: usize| -> BTreeMap<LayerSite, Vec<f64>> {
            let mut hooks = CaptureHooks::default();
            forward(&vlm, &features, &prompt, &[ans], &mut hooks).unwrap();
            hooks.captured.into_iter().map(|(s, mut v)| (s, v.pop().unwrap())).collect()
        };
        let pos_states = capture(truthful);
        let neg_states = capture(untruthful);
        let e = disp.entry(cat).or_default();
        for (site, xp) in pos_states {
            let acc = e.entry(site).or_insert_with(|| vec![0.0; xp.len()]);
            for i in 0..xp.len() {
                acc[i] += (neg_states[&site][i] - xp[i]) / per_cat as f64;
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
        let canonical = config.canonical(&obj.category).unwrap().to_string();
        if obj.color == canonical {
            continue;
        }
        panel.push((scene, obj, canonical));
    }

    let b0a = LayerSite { block: 0, site: Site::AttentionOutput };
    let b0f = LayerSite { block: 0, site: Site::FfnOutput };
    let b1a = LayerSite { block: 1, site: Site::AttentionOutput };
    let b1f = LayerSite { block: 1, site: Site::FfnOutput };
    for (name, sites) in [
        ("b0f", vec![b0f]),
        ("b1f", vec![b1f]),
        ("b1a", vec![b1a]),
        ("b1a+b1f", vec![b1a, b1f]),
        ("all4", vec![b0a, b0f, b1a, b1f]),
    ] {
        let gammas = [0.0, 0.5, 1.0, 2.0];
        let mut monotone = 0;
        let mut means = [0.0f64; 4];
        for (scene, obj, canonical) in &panel {
            let features = encode_scene(&vlm, scene).unwrap();
            let prompt = vocab.encode(&color_prompt(&obj.category)).unwrap();
            let canon_id = vocab.id(canonical).unwrap();
            let last = features.len() + prompt.len();
            let d = &disp[&obj.category];
            let mut ps = Vec::new();
            for &gamma in &gammas {
                let mut hooks = DispEdit { sites: &sites, disp: d, gamma, pos: last };
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
            "answer-disp {name}: monotone {monotone}/100 mean P(canon) {:?}",
            means.iter().map(|m| (m / 100.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
}
