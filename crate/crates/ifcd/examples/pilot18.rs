//! Scratch: head-space drift analysis at b1.ffn. With a linear head, a panel
//! question is gamma-monotone under a b1.ffn edit iff the canonical token has
//! the maximal drift E*Delta. Measures canon drift rank across probe configs.

use ifcd::probe::{collect_pairs, compute_delta, train_probe, EditSign, ProbeHyper};
use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, forward, train_toy_vlm, CaptureHooks, LayerSite, Site, VlmHyper};
use ifcd::world::{build_corpus, color_prompt, generate_scene, Vocab, WorldConfig};

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

    let b1f = LayerSite { block: 1, site: Site::FfnOutput };
    for (label, hyper) in [
        ("in0 sem1", ProbeHyper::default()),
        ("in0.5 sem1", ProbeHyper { input_noise_std: 0.5, ..ProbeHyper::default() }),
        ("in1 sem1", ProbeHyper { input_noise_std: 1.0, ..ProbeHyper::default() }),
        ("in0.5 sem0.3", ProbeHyper { input_noise_std: 0.5, sem_noise_std: 0.3, ..ProbeHyper::default() }),
        ("in2 sem1", ProbeHyper { input_noise_std: 2.0, ..ProbeHyper::default() }),
    ] {
        let mut pair_rng = Rng::from_seed(42);
        let pairs = collect_pairs(&vlm, &config, 600, &mut pair_rng).unwrap();
        let (probe, _) = train_probe(&pairs, &hyper).unwrap();
        let mut rank_hist = [0usize; 4]; // rank 0, 1, 2, >=3
        let mut margin_sum = 0.0;
        for (scene, _obj, canonical) in &panel {
            let features = encode_scene(&vlm, scene).unwrap();
            let prompt = vocab.encode(&color_prompt(&_obj.category)).unwrap();
            let mut hooks = CaptureHooks::default();
            forward(&vlm, &features, &prompt, &[], &mut hooks).unwrap();
            let x = hooks.captured[&b1f][features.len() + prompt.len()].clone();
            let d = compute_delta(&probe, b1f, &x, EditSign::Negative).unwrap();
            let drift = vlm.tok_emb.matvec(&d);
            let canon_id = vocab.id(canonical).unwrap();
            let rank = drift.iter().filter(|&&v| v > drift[canon_id]).count();
            rank_hist[rank.min(3)] += 1;
            let best_other = drift
                .iter()
                .enumerate()
                .filter(|(t, _)| *t != canon_id)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            margin_sum += drift[canon_id] - best_other;
        }
        println!(
            "{label}: canon drift rank hist [r0 {} r1 {} r2 {} r3+ {}] mean margin {:.3}",
            rank_hist[0], rank_hist[1], rank_hist[2], rank_hist[3],
            margin_sum / 100.0
        );
    }
}
