//! Scratch: end-to-end probe check — train VLM, collect pairs, train probe,
//! then look at per-site AUC and negative-editing monotonicity on a
//! prior-contradicting color panel.

use ifcd::numerics::l2_norm;
use ifcd::probe::{
    apply_edit, collect_pairs, compute_delta, train_probe, EditSign, ProbeHyper,
};
use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, forward, train_toy_vlm, EditHooks, VlmHyper};
use ifcd::world::{build_corpus, color_prompt, generate_scene, Vocab, WorldConfig};

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    let corpus = build_corpus(&config, &vocab, 3000, &mut rng).unwrap();
    let (vlm, stats) = train_toy_vlm(vocab.clone(), &corpus, &VlmHyper::default()).unwrap();
    println!("vlm held-out ce {:.4}", stats.held_out_ce);

    let mut pair_rng = Rng::from_seed(42);
    let pairs = collect_pairs(&vlm, &config, 300, &mut pair_rng).unwrap();
    println!("collected {} site-pairs", pairs.len());
    let (probe, pstats) = train_probe(&pairs, &ProbeHyper::default()).unwrap();
    for (site, auc) in &pstats.per_site_auc {
        println!("site {} auc {:.4}", site.label(), auc);
    }

    // ||Delta|| on a hallucination-prone input
    let sample = pairs.iter().find(|p| p.layer_site == probe.layer_ranking[0].0).unwrap();
    let d = compute_delta(&probe, sample.layer_site, &sample.x_neg, EditSign::Positive).unwrap();
    println!("||Delta|| at top site on a neg input: {:.4}", l2_norm(&d));

    // negative-editing monotonicity on contradicting color questions
    let active: Vec<_> = probe.layer_ranking.iter().take(2).map(|(s, _)| *s).collect();
    let mut eval_rng = Rng::from_seed(777);
    let gammas = [0.0, 0.5, 1.0, 2.0];
    let mut panel = 0;
    let mut monotone = 0;
    let mut means = [0.0f64; 4];
    let mut i = 0u64;
    while panel < 100 {
        let scene = generate_scene(&config, 300_000 + i, &mut eval_rng);
        i += 1;
        let obj = &scene.objects[0];
        let canonical = config.canonical(&obj.category).unwrap().clone();
        if obj.color == canonical {
            continue;
        }
        panel += 1;
        let features = encode_scene(&vlm, &scene).unwrap();
        let prompt = vocab.encode(&color_prompt(&obj.category)).unwrap();
        let canon_id = vocab.id(&canonical).unwrap();
        let mut ps = Vec::new();
        for &gamma in &gammas {
            let probe_ref = &probe;
            let mut hooks = EditHooks::new(active.clone(), |site, x: &[f64]| {
                let delta = compute_delta(probe_ref, site, x, EditSign::Negative).unwrap();
                apply_edit(x, &delta, gamma)
            });
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
        "negative-edit monotonicity: {monotone}/{panel} mean P(canonical) per gamma {:?}",
        means.iter().map(|m| (m / panel as f64 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
}
