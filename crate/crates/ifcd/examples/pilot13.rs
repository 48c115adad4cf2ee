//! Scratch: ceiling check. Oracle pairs = question states from counterfactual
//! scenes (evidence contradicts vs agrees with the prior), probe trained on
//! those, negative editing at the question position.

use ifcd::probe::{
    apply_edit, compute_delta, train_probe, EditSign, ProbeHyper, ProbePair,
};
use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, forward, train_toy_vlm, CaptureHooks, LayerSite, VlmHooks, VlmHyper};
use ifcd::world::{build_corpus, color_prompt, generate_scene, SceneObject, SceneSpec, Vocab, WorldConfig};

struct PosEdit<'a> {
    sites: Vec<LayerSite>,
    probe: &'a ifcd::probe::ProbeParams,
    gamma: f64,
    pos: usize,
}

impl VlmHooks for PosEdit<'_> {
    fn on_site(&mut self, site: LayerSite, pos: usize, x: &[f64]) -> Option<Vec<f64>> {
        if pos != self.pos || !self.sites.contains(&site) {
            return None;
        }
        let delta = compute_delta(self.probe, site, x, EditSign::Negative).unwrap();
        Some(apply_edit(x, &delta, self.gamma))
    }
}

fn question_state(
    vlm: &ifcd::vlm::ToyVlmParams,
    vocab: &Vocab,
    scene: &SceneSpec,
    cat: &str,
) -> std::collections::BTreeMap<LayerSite, Vec<f64>> {
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

    // oracle pairs: natural scenes; counterfactual recolors the queried
    // object to its canonical color
    let mut pairs = Vec::new();
    let mut id = 0u64;
    let mut prng = Rng::from_seed(9);
    let mut per_cat: std::collections::BTreeMap<String, usize> = Default::default();
    let mut sid = 0u64;
    while pairs.len() < 25 * 12 * 4 {
        let scene = generate_scene(&config, 1_000_000 + sid, &mut prng);
        sid += 1;
        let Some(oi) = scene.objects.iter().position(|o| {
            o.color != *config.canonical(&o.category).unwrap()
        }) else { continue };
        let cat = scene.objects[oi].category.clone();
        let cnt = per_cat.entry(cat.clone()).or_insert(0);
        if *cnt >= 25 {
            continue;
        }
        *cnt += 1;
        let mut fixed = scene.clone();
        fixed.objects[oi].color = config.canonical(&cat).unwrap().to_string();
        let pos_states = question_state(&vlm, &vocab, &scene, &cat);
        let neg_states = question_state(&vlm, &vocab, &fixed, &cat);
        for (site, x_pos) in pos_states {
            pairs.push(ProbePair {
                layer_site: site,
                x_pos,
                x_neg: neg_states[&site].clone(),
                source_example_id: id,
            });
        }
        id += 1;
    }
    println!("oracle pairs {}", pairs.len());
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

    for (hname, hyper) in [
        ("sem0 e300", ProbeHyper { sem_noise_std: 0.0, ..ProbeHyper::default() }),
        ("sem0.3 e300", ProbeHyper { sem_noise_std: 0.3, ..ProbeHyper::default() }),
        ("sem0 e1500", ProbeHyper { sem_noise_std: 0.0, epochs: 1500, ..ProbeHyper::default() }),
        ("sem0.3 e1500", ProbeHyper { sem_noise_std: 0.3, epochs: 1500, ..ProbeHyper::default() }),
    ] {
    let (probe, pstats) = train_probe(&pairs, &hyper).unwrap();
    print!("{hname}:");
    for (s, a) in &pstats.per_site_auc {
        print!(" {}={:.3}", s.label(), a);
    }
    println!();

    use ifcd::vlm::Site;
    let b1a = LayerSite { block: 1, site: Site::AttentionOutput };
    let b1f = LayerSite { block: 1, site: Site::FfnOutput };
    let mut combos: Vec<(String, Vec<LayerSite>)> = (0..3usize)
        .map(|i| {
            let k = [1usize, 2, 4][i];
            (format!("top-{k}"), probe.layer_ranking.iter().take(k).map(|(s, _)| *s).collect())
        })
        .collect();
    combos.push(("b1a+b1f".into(), vec![b1a, b1f]));
    combos.push(("b1a".into(), vec![b1a]));
    for (name, active) in combos {
        let gammas = [0.0, 0.5, 1.0, 2.0];
        let mut monotone = 0;
        let mut means = [0.0f64; 4];
        for (scene, obj, canonical) in &panel {
            let features = encode_scene(&vlm, scene).unwrap();
            let prompt = vocab.encode(&color_prompt(&obj.category)).unwrap();
            let canon_id = vocab.id(canonical).unwrap();
            let last = features.len() + prompt.len();
            let mut ps = Vec::new();
            for &gamma in &gammas {
                let mut hooks = PosEdit { sites: active.clone(), probe: &probe, gamma, pos: last };
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
            "oracle {name}: monotone {monotone}/100 mean P(canon) {:?}",
            means.iter().map(|m| (m / 100.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
    }
}
