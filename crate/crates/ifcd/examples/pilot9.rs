//! Scratch: all-position negative editing per site and site combinations.

use ifcd::probe::{apply_edit, collect_pairs, compute_delta, train_probe, EditSign, ProbeHyper};
use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, forward, train_toy_vlm, EditHooks, LayerSite, Site, VlmHyper};
use ifcd::world::{build_corpus, color_prompt, generate_scene, Vocab, WorldConfig};

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    let corpus = build_corpus(&config, &vocab, 3000, &mut rng).unwrap();
    let (vlm, _) = train_toy_vlm(vocab.clone(), &corpus, &VlmHyper::default()).unwrap();

    let mut pair_rng = Rng::from_seed(42);
    let pairs = collect_pairs(&vlm, &config, 300, &mut pair_rng).unwrap();
    for epochs in [300usize, 800] {
        let hyper = ProbeHyper { epochs, ..ProbeHyper::default() };
        let (probe, pstats) = train_probe(&pairs, &hyper).unwrap();
        print!("epochs {epochs} aucs:");
        for (site, auc) in &pstats.per_site_auc {
            print!(" {}={:.3}", site.label(), auc);
        }
        println!();

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

        let b0a = LayerSite { block: 0, site: Site::AttentionOutput };
        let b0f = LayerSite { block: 0, site: Site::FfnOutput };
        let b1a = LayerSite { block: 1, site: Site::AttentionOutput };
        let b1f = LayerSite { block: 1, site: Site::FfnOutput };
        let combos: Vec<(&str, Vec<LayerSite>)> = vec![
            ("b0.attn", vec![b0a]),
            ("b0.ffn", vec![b0f]),
            ("b1.attn", vec![b1a]),
            ("b1.ffn", vec![b1f]),
            ("attn-both", vec![b0a, b1a]),
            ("all-4", vec![b0a, b0f, b1a, b1f]),
        ];
        for (label, sites) in &combos {
            let gammas = [0.0, 0.5, 1.0, 2.0];
            let mut monotone = 0;
            let mut means = [0.0f64; 4];
            for (scene, obj, canonical) in &panel {
                let features = encode_scene(&vlm, scene).unwrap();
                let prompt = vocab.encode(&color_prompt(&obj.category)).unwrap();
                let canon_id = vocab.id(canonical).unwrap();
                let mut ps = Vec::new();
                for &gamma in &gammas {
                    let probe_ref = &probe;
                    let mut hooks = EditHooks::new(sites.clone(), |site, x: &[f64]| {
                        let d = compute_delta(probe_ref, site, x, EditSign::Negative).unwrap();
                        apply_edit(x, &d, gamma)
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
                "  all-pos {label}: monotone {monotone}/100 mean P(canon) {:?}",
                means.iter().map(|m| (m / 100.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
        }
    }
}
