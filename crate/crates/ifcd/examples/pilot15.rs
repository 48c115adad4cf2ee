//! Scratch: compare the probe's decoded edit field against the true
//! per-category displacement at block-1 sites, across probe configs.

use std::collections::BTreeMap;

use ifcd::numerics::l2_norm;
use ifcd::probe::{
    compute_delta, train_probe, EditSign, ProbeHyper, ProbePair,
};
use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, forward, train_toy_vlm, CaptureHooks, LayerSite, Site, VlmHyper};
use ifcd::world::{color_prompt, SceneObject, SceneSpec, Vocab, WorldConfig};

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
    let corpus = ifcd::world::build_corpus(&config, &vocab, 3000, &mut rng).unwrap();
    let (vlm, _) = train_toy_vlm(vocab.clone(), &corpus, &VlmHyper::default()).unwrap();

    // oracle pairs + per-category displacement from the same states
    let mut pairs: Vec<ProbePair> = Vec::new();
    let mut disp: BTreeMap<String, BTreeMap<LayerSite, Vec<f64>>> = BTreeMap::new();
    let mut sample_states: BTreeMap<String, BTreeMap<LayerSite, Vec<f64>>> = BTreeMap::new();
    let mut prng = Rng::from_seed(9);
    let mut id = 0u64;
    let reps = 25u64;
    for cat in &config.categories {
        let canon = config.canonical(cat).unwrap().clone();
        let others: Vec<&String> = config.colors.iter().filter(|c| **c != canon).collect();
        let mut acc: BTreeMap<LayerSite, Vec<f64>> = BTreeMap::new();
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
            let contra = question_state(&vlm, &vocab, &mk(&wrong), cat);
            let consist = question_state(&vlm, &vocab, &mk(&canon), cat);
            for (site, x_pos) in &contra {
                let e = acc.entry(*site).or_insert_with(|| vec![0.0; x_pos.len()]);
                for i in 0..x_pos.len() {
                    e[i] += (consist[site][i] - x_pos[i]) / reps as f64;
                }
                pairs.push(ProbePair {
                    layer_site: *site,
                    x_pos: x_pos.clone(),
                    x_neg: consist[site].clone(),
                    source_example_id: id,
                });
            }
            if r == 0 {
                sample_states.insert(cat.clone(), contra);
            }
            id += 1;
        }
        disp.insert(cat.clone(), acc);
    }
    println!("oracle pairs {}", pairs.len());

    let b1a = LayerSite { block: 1, site: Site::AttentionOutput };
    let b1f = LayerSite { block: 1, site: Site::FfnOutput };
    for (label, hyper) in [
        ("sem0 e300", ProbeHyper { sem_noise_std: 0.0, ..ProbeHyper::default() }),
        ("sem0.3 e300", ProbeHyper { sem_noise_std: 0.3, ..ProbeHyper::default() }),
        ("sem1 e300", ProbeHyper { sem_noise_std: 1.0, ..ProbeHyper::default() }),
        ("sem0.3 e1500", ProbeHyper { sem_noise_std: 0.3, epochs: 1500, ..ProbeHyper::default() }),
        ("sem1 e1500", ProbeHyper { sem_noise_std: 1.0, epochs: 1500, ..ProbeHyper::default() }),
    ] {
        let (probe, _) = train_probe(&pairs, &hyper).unwrap();
        for site in [b1a, b1f] {
            let mut mean_cos = 0.0;
            let mut mean_ratio = 0.0;
            for (cat, states) in &sample_states {
                let x = &states[&site];
                let d = compute_delta(&probe, site, x, EditSign::Negative).unwrap();
                let t = &disp[cat][&site];
                let dot: f64 = d.iter().zip(t).map(|(a, b)| a * b).sum();
                let nd = l2_norm(&d);
                let nt = l2_norm(t);
                mean_cos += dot / (nd * nt).max(1e-12);
                mean_ratio += nd / nt.max(1e-12);
            }
            let n = sample_states.len() as f64;
            println!(
                "{label} {}: cos(delta, true-disp) {:.3} norm ratio {:.2}",
                site.label(),
                mean_cos / n,
                mean_ratio / n
            );
        }
    }
}
