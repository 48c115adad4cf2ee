//! Scratch: scan cluster-local category noise vs training length on the full
//! mixed corpus, watching the existence-QA metrics that POPE will use.

use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, greedy_answer, train_toy_vlm, VlmHyper};
use ifcd::world::{build_corpus, existence_prompt, generate_scene, Vocab, WorldConfig};

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    let corpus = build_corpus(&config, &vocab, 3000, &mut rng).unwrap();
    for sigma in [0.6, 0.8] {
        for epochs in [40, 80] {
            let hyper =
                VlmHyper { epochs, category_noise_std: sigma, ..Default::default() };
            let t0 = std::time::Instant::now();
            let (params, stats) = train_toy_vlm(vocab.clone(), &corpus, &hyper).unwrap();
            let mut eval_rng = Rng::from_seed(1000);
            let (mut yes_ok, mut yes_n) = (0, 0);
            let (mut rand_ok, mut rand_n) = (0, 0);
            let (mut adv_yes, mut adv_n) = (0, 0);
            for i in 0..400 {
                let scene = generate_scene(&config, 100_000 + i, &mut eval_rng);
                let features = encode_scene(&params, &scene).unwrap();
                let obj = &scene.objects[eval_rng.below(scene.objects.len())];
                let p = vocab.encode(&existence_prompt(&obj.category)).unwrap();
                yes_n += 1;
                if greedy_answer(&params, &features, &p).unwrap() == vocab.yes {
                    yes_ok += 1;
                }
                let absent: Vec<&String> = config
                    .categories
                    .iter()
                    .filter(|c| !scene.contains_category(c))
                    .collect();
                if !absent.is_empty() {
                    let c = absent[eval_rng.below(absent.len())];
                    let p = vocab.encode(&existence_prompt(c)).unwrap();
                    rand_n += 1;
                    if greedy_answer(&params, &features, &p).unwrap() == vocab.no {
                        rand_ok += 1;
                    }
                }
                let first_idx = config
                    .categories
                    .iter()
                    .position(|c| c == &scene.objects[0].category)
                    .unwrap();
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
            }
            println!(
                "sigma {sigma} epochs {epochs}: ho-ce {:.3} yes-acc {:.3} rand-no-acc {:.3} adv-yes {:.3} time {:?}",
                stats.held_out_ce,
                yes_ok as f64 / yes_n as f64,
                rand_ok as f64 / rand_n as f64,
                adv_yes as f64 / adv_n as f64,
                t0.elapsed()
            );
        }
    }
}
