//! Scratch: can the model learn pure existence QA at all?

use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, greedy_answer, train_toy_vlm, VlmHyper};
use ifcd::world::{
    existence_prompt, generate_scene, ExampleKind, TrainingExample, Vocab, WorldConfig,
};

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    // hand-built existence-only corpus, exactly 50/50 yes/no
    let mut corpus = Vec::new();
    for i in 0..2000u64 {
        let scene = generate_scene(&config, i, &mut rng);
        let (cat, ans) = if i % 2 == 0 {
            (scene.objects[rng.below(scene.objects.len())].category.clone(), "yes")
        } else {
            let absent: Vec<&String> =
                config.categories.iter().filter(|c| !scene.contains_category(c)).collect();
            (absent[rng.below(absent.len())].clone(), "no")
        };
        let mut tokens = vec![vocab.bos];
        tokens.extend(vocab.encode(&existence_prompt(&cat)).unwrap());
        tokens.extend(vocab.encode(ans).unwrap());
        tokens.push(vocab.eos);
        corpus.push(TrainingExample { scene: Some(scene), tokens, kind: ExampleKind::ExistenceQa });
    }
    for epochs in [10, 30, 60] {
        let hyper = VlmHyper { epochs, ..Default::default() };
        let t0 = std::time::Instant::now();
        let (params, stats) = train_toy_vlm(vocab.clone(), &corpus, &hyper).unwrap();
        let mut eval_rng = Rng::from_seed(999);
        let mut ok = [0usize; 2];
        let mut n = [0usize; 2];
        for i in 0..400 {
            let scene = generate_scene(&config, 50_000 + i, &mut eval_rng);
            let features = encode_scene(&params, &scene).unwrap();
            let (cat, want, cls) = if i % 2 == 0 {
                (scene.objects[eval_rng.below(scene.objects.len())].category.clone(), vocab.yes, 0)
            } else {
                let absent: Vec<&String> =
                    config.categories.iter().filter(|c| !scene.contains_category(c)).collect();
                (absent[eval_rng.below(absent.len())].clone(), vocab.no, 1)
            };
            let p = vocab.encode(&existence_prompt(&cat)).unwrap();
            let a = greedy_answer(&params, &features, &p).unwrap();
            n[cls] += 1;
            if a == want {
                ok[cls] += 1;
            }
        }
        println!(
            "epochs {epochs}: loss {:.4} yes-acc {:.3} no-acc {:.3} time {:?}",
            stats.final_train_loss,
            ok[0] as f64 / n[0] as f64,
            ok[1] as f64 / n[1] as f64,
            t0.elapsed()
        );
    }
}
