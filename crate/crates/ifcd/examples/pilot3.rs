//! Scratch: hyperparameter scan on pure existence QA. Reports train and eval
//! accuracy to separate underfitting from generalization failure.

use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, greedy_answer, train_toy_vlm, ToyVlmParams, VlmHyper};
use ifcd::world::{
    existence_prompt, generate_scene, ExampleKind, SceneSpec, TrainingExample, Vocab, WorldConfig,
};

fn make_case(
    config: &WorldConfig,
    vocab: &Vocab,
    scene: SceneSpec,
    yes: bool,
    rng: &mut Rng,
) -> Option<(SceneSpec, String, &'static str)> {
    if yes {
        let cat = scene.objects[rng.below(scene.objects.len())].category.clone();
        Some((scene, cat, "yes"))
    } else {
        let absent: Vec<&String> =
            config.categories.iter().filter(|c| !scene.contains_category(c)).collect();
        if absent.is_empty() {
            return None;
        }
        let cat = absent[rng.below(absent.len())].clone();
        Some((scene, cat, "no"))
    }
}

fn accuracy(
    params: &ToyVlmParams,
    vocab: &Vocab,
    cases: &[(SceneSpec, String, &'static str)],
) -> (f64, f64) {
    let mut ok = [0usize; 2];
    let mut n = [0usize; 2];
    for (scene, cat, ans) in cases {
        let features = encode_scene(params, scene).unwrap();
        let p = vocab.encode(&existence_prompt(cat)).unwrap();
        let a = greedy_answer(params, &features, &p).unwrap();
        let cls = if *ans == "yes" { 0 } else { 1 };
        n[cls] += 1;
        if a == vocab.id(ans).unwrap() {
            ok[cls] += 1;
        }
    }
    (ok[0] as f64 / n[0] as f64, ok[1] as f64 / n[1] as f64)
}

fn main() {
    let config = WorldConfig::default();
    let vocab = Vocab::build(&config);
    let mut rng = Rng::from_seed(0);
    let mut corpus = Vec::new();
    let mut train_cases = Vec::new();
    for i in 0..1500u64 {
        let scene = generate_scene(&config, i, &mut rng);
        let Some((scene, cat, ans)) = make_case(&config, &vocab, scene, i % 2 == 0, &mut rng)
        else {
            continue;
        };
        let mut tokens = vec![vocab.bos];
        tokens.extend(vocab.encode(&existence_prompt(&cat)).unwrap());
        tokens.extend(vocab.encode(ans).unwrap());
        tokens.push(vocab.eos);
        corpus.push(TrainingExample {
            scene: Some(scene.clone()),
            tokens,
            kind: ExampleKind::ExistenceQa,
        });
        if train_cases.len() < 300 {
            train_cases.push((scene, cat, ans));
        }
    }
    let mut eval_rng = Rng::from_seed(999);
    let mut eval_cases = Vec::new();
    for i in 0..400u64 {
        let scene = generate_scene(&config, 50_000 + i, &mut eval_rng);
        if let Some(case) = make_case(&config, &vocab, scene, i % 2 == 0, &mut eval_rng) {
            eval_cases.push(case);
        }
    }

    let base = VlmHyper::default();
    let scans: Vec<(&str, VlmHyper)> = vec![
        ("base e40", VlmHyper { epochs: 40, ..base.clone() }),
        (
            "d64 ff128 e40",
            VlmHyper { d_model: 64, d_ff: 128, epochs: 40, ..base.clone() },
        ),
        (
            "lr3e-3 e40",
            VlmHyper {
                epochs: 40,
                adam: ifcd::numerics::AdamHyper { lr: 3e-3, ..Default::default() },
                ..base.clone()
            },
        ),
        (
            "d64 ff128 b3 lr3e-3 e80",
            VlmHyper {
                d_model: 64,
                d_ff: 128,
                n_blocks: 3,
                epochs: 80,
                adam: ifcd::numerics::AdamHyper { lr: 3e-3, ..Default::default() },
                ..base.clone()
            },
        ),
    ];
    for (name, hyper) in scans {
        let t0 = std::time::Instant::now();
        let (params, stats) = train_toy_vlm(vocab.clone(), &corpus, &hyper).unwrap();
        let (tr_y, tr_n) = accuracy(&params, &vocab, &train_cases);
        let (ev_y, ev_n) = accuracy(&params, &vocab, &eval_cases);
        println!(
            "{name}: loss {:.4} ho-ce {:.4} train y/n {:.3}/{:.3} eval y/n {:.3}/{:.3} time {:?}",
            stats.final_train_loss,
            stats.held_out_ce,
            tr_y,
            tr_n,
            ev_y,
            ev_n,
            t0.elapsed()
        );
    }
}
