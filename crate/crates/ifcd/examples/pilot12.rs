//! Scratch: project the negative-edit vector at the question state onto
//! color token embeddings — does it point at the canonical color?

use ifcd::probe::{collect_pairs, compute_delta, train_probe, EditSign, ProbeHyper};
use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, forward, train_toy_vlm, CaptureHooks, VlmHyper};
use ifcd::world::{build_corpus, color_prompt, generate_scene, Vocab, WorldConfig};

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    let corpus = build_corpus(&config, &vocab, 3000, &mut rng).unwrap();
    let (vlm, _) = train_toy_vlm(vocab.clone(), &corpus, &VlmHyper::default()).unwrap();
    let mut pair_rng = Rng::from_seed(42);
    let pairs = collect_pairs(&vlm, &config, 600, &mut pair_rng).unwrap();
    let (probe, _) = train_probe(&pairs, &ProbeHyper::default()).unwrap();
    let site = probe.layer_ranking[0].0;

    let mut eval_rng = Rng::from_seed(777);
    let mut seen = 0;
    let mut i = 0u64;
    let mut canon_top = 0;
    let mut true_top = 0;
    let mut other: Vec<String> = Vec::new();
    while seen < 100 {
        let scene = generate_scene(&config, 300_000 + i, &mut eval_rng);
        i += 1;
        let obj = scene.objects[0].clone();
        let canonical = config.canonical(&obj.category).unwrap().clone();
        if obj.color == canonical {
            continue;
        }
        seen += 1;
        let features = encode_scene(&vlm, &scene).unwrap();
        let prompt = vocab.encode(&color_prompt(&obj.category)).unwrap();
        let mut hooks = CaptureHooks::default();
        forward(&vlm, &features, &prompt, &[], &mut hooks).unwrap();
        let xq = hooks.captured[&site].last().unwrap();
        let d = compute_delta(&probe, site, xq, EditSign::Negative).unwrap();
        // dot with color embeddings
        let mut best = (f64::NEG_INFINITY, String::new());
        for c in &config.colors {
            let id = vocab.id(c).unwrap();
            let row = &vlm.tok_emb.data[id * vlm.d_model..(id + 1) * vlm.d_model];
            let dot: f64 = row.iter().zip(&d).map(|(a, b)| a * b).sum();
            if dot > best.0 {
                best = (dot, c.clone());
            }
        }
        if best.1 == canonical {
            canon_top += 1;
        } else if best.1 == obj.color {
            true_top += 1;
        } else {
            other.push(format!("{}:{}>{}", obj.category, best.1, canonical));
        }
    }
    println!("delta-argmax = canonical {canon_top}/100, = true {true_top}/100");
    println!("misses: {:?}", &other[..other.len().min(12)]);
}
