//! Scratch pilot: verify the toy phenomenon (bias gap) appears.

use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, greedy_answer, train_toy_vlm, VlmHyper};
use ifcd::world::{
    build_corpus, color_prompt, existence_prompt, generate_scene, Vocab, WorldConfig,
};

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    let t0 = std::time::Instant::now();
    let corpus = build_corpus(&config, &vocab, 3000, &mut rng).unwrap();
    let hyper = VlmHyper { epochs: 40, ..Default::default() };
    let (params, stats) = train_toy_vlm(vocab.clone(), &corpus, &hyper).unwrap();
    println!(
        "train loss {:.4} held-out ce {:.4} ln|V| {:.4} time {:?}",
        stats.final_train_loss,
        stats.held_out_ce,
        (vocab.len() as f64).ln(),
        t0.elapsed()
    );

    // existence accuracy + adversarial yes-rate
    let mut eval_rng = Rng::from_seed(1000);
    let mut correct_yes = 0;
    let mut total_yes = 0;
    let mut correct_rand_no = 0;
    let mut total_rand_no = 0;
    let mut adv_yes = 0;
    let mut total_adv = 0;
    for i in 0..400 {
        let scene = generate_scene(&config, 100_000 + i, &mut eval_rng);
        let features = encode_scene(&params, &scene).unwrap();
        // present object
        let obj = &scene.objects[eval_rng.below(scene.objects.len())];
        let p = vocab.encode(&existence_prompt(&obj.category)).unwrap();
        let a = greedy_answer(&params, &features, &p).unwrap();
        total_yes += 1;
        if a == vocab.yes {
            correct_yes += 1;
        }
        // random absent
        let absent: Vec<&String> =
            config.categories.iter().filter(|c| !scene.contains_category(c)).collect();
        if !absent.is_empty() {
            let c = absent[eval_rng.below(absent.len())];
            let p = vocab.encode(&existence_prompt(c)).unwrap();
            let a = greedy_answer(&params, &features, &p).unwrap();
            total_rand_no += 1;
            if a == vocab.no {
                correct_rand_no += 1;
            }
        }
        // adversarial absent: cluster mate of a present object
        let first_idx = config.categories.iter().position(|c| c == &scene.objects[0].category).unwrap();
        let mates: Vec<usize> = config
            .cluster_of(first_idx)
            .filter(|&i| !scene.contains_category(&config.categories[i]))
            .collect();
        if !mates.is_empty() {
            let c = &config.categories[mates[eval_rng.below(mates.len())]];
            let p = vocab.encode(&existence_prompt(c)).unwrap();
            let a = greedy_answer(&params, &features, &p).unwrap();
            total_adv += 1;
            if a == vocab.yes {
                adv_yes += 1;
            }
        }
    }
    println!(
        "existence: yes-acc {:.3} rand-no-acc {:.3} adversarial yes-rate {:.3} ({} q)",
        correct_yes as f64 / total_yes as f64,
        correct_rand_no as f64 / total_rand_no as f64,
        adv_yes as f64 / total_adv as f64,
        total_adv
    );

    // color questions: prior-consistent vs prior-contradicting
    let mut cons_ok = 0;
    let mut cons_n = 0;
    let mut contr_ok = 0;
    let mut contr_prior = 0;
    let mut contr_n = 0;
    for i in 0..2000 {
        let scene = generate_scene(&config, 200_000 + i, &mut eval_rng);
        let features = encode_scene(&params, &scene).unwrap();
        let obj = &scene.objects[0];
        let canonical = config.canonical(&obj.category).unwrap();
        let p = vocab.encode(&color_prompt(&obj.category)).unwrap();
        let a = greedy_answer(&params, &features, &p).unwrap();
        if obj.color == canonical {
            cons_n += 1;
            if a == vocab.id(&obj.color).unwrap() {
                cons_ok += 1;
            }
        } else {
            contr_n += 1;
            if a == vocab.id(&obj.color).unwrap() {
                contr_ok += 1;
            }
            if a == vocab.id(canonical).unwrap() {
                contr_prior += 1;
            }
        }
    }
    println!(
        "color: consistent-acc {:.3} ({} q)  contradicting-acc {:.3} prior-rate {:.3} ({} q)",
        cons_ok as f64 / cons_n as f64,
        cons_n,
        contr_ok as f64 / contr_n as f64,
        contr_prior as f64 / contr_n as f64,
        contr_n
    );
}
