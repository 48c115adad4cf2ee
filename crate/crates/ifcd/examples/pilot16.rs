//! Scratch: phenomenon check after head changes. Existence rates, color
//! accuracy gap (evidence-consistent vs prior-contradicting), held-out CE.

use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, greedy_answer, train_toy_vlm, VlmHyper};
use ifcd::world::{
    build_corpus, color_prompt, existence_prompt, generate_scene, Vocab, WorldConfig,
};

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    let corpus = build_corpus(&config, &vocab, 3000, &mut rng).unwrap();
    let (params, stats) = train_toy_vlm(vocab.clone(), &corpus, &VlmHyper::default()).unwrap();
    println!("held-out ce {:.3}", stats.held_out_ce);

    let mut eval_rng = Rng::from_seed(1000);
    let (mut yes_ok, mut yes_n) = (0, 0);
    let (mut rand_ok, mut rand_n) = (0, 0);
    let (mut adv_yes, mut adv_n) = (0, 0);
    let (mut col_ok, mut col_n) = (0, 0);
    let (mut con_ok, mut con_n) = (0, 0);
    for i in 0..400 {
        let scene = generate_scene(&config, 100_000 + i, &mut eval_rng);
        let features = encode_scene(&params, &scene).unwrap();
        let obj = &scene.objects[eval_rng.below(scene.objects.len())];
        let p = vocab.encode(&existence_prompt(&obj.category)).unwrap();
        yes_n += 1;
        if greedy_answer(&params, &features, &p).unwrap() == vocab.yes {
            yes_ok += 1;
        }
        let absent: Vec<&String> =
            config.categories.iter().filter(|c| !scene.contains_category(c)).collect();
        if !absent.is_empty() {
            let c = absent[eval_rng.below(absent.len())];
            let p = vocab.encode(&existence_prompt(c)).unwrap();
            rand_n += 1;
            if greedy_answer(&params, &features, &p).unwrap() == vocab.no {
                rand_ok += 1;
            }
        }
        let first_idx =
            config.categories.iter().position(|c| c == &scene.objects[0].category).unwrap();
        let mates: Vec<usize> = config
            .cluster_of(first_idx)
            .filter(|&i| !scene.contains_category(&config.categories[i]))
            .collect();
        if !mates.is_empty() {
            let c = &config.categories[mates[eval_rng.below(mates.len())]];
            let p = vocab.encode(&existence_prompt(c)).unwrap();
            adv_n += 1;
            if greedy_answer(&params, &features, &p).unwrap() == vocab.yes {
                adv_yes += 1;
            }
        }
        // color question about the first object
        let obj = &scene.objects[0];
        let p = vocab.encode(&color_prompt(&obj.category)).unwrap();
        let got = greedy_answer(&params, &features, &p).unwrap();
        let want = vocab.id(&obj.color).unwrap();
        if obj.color == *config.canonical(&obj.category).unwrap() {
            con_n += 1;
            if got == want {
                con_ok += 1;
            }
        } else {
            col_n += 1;
            if got == want {
                col_ok += 1;
            }
        }
    }
    println!(
        "yes-acc {:.3} rand-no-acc {:.3} adv-yes {:.3}",
        yes_ok as f64 / yes_n as f64,
        rand_ok as f64 / rand_n as f64,
        adv_yes as f64 / adv_n as f64
    );
    println!(
        "color acc consistent {:.3} (n={con_n}) contradicting {:.3} (n={col_n}) gap {:.3}",
        con_ok as f64 / con_n as f64,
        col_ok as f64 / col_n as f64,
        con_ok as f64 / con_n as f64 - col_ok as f64 / col_n as f64
    );
}
