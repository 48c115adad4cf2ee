//! Scratch: probe training length vs negative-edit monotonicity (top-1 site,
//! last-position editing).

use ifcd::probe::{apply_edit, collect_pairs, compute_delta, train_probe, EditSign, ProbeHyper};
use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, forward, train_toy_vlm, LayerSite, VlmHooks, VlmHyper};
use ifcd::world::{build_corpus, color_prompt, generate_scene, Vocab, WorldConfig};

struct PosEdit<'a> {
    sites: Vec<LayerSite>,
    probe: &'a ifcd::probe::ProbeParams,
    gamma: f64,
    pos: usize,
    all_pos: bool,
}

impl VlmHooks for PosEdit<'_> {
    fn on_site(&mut self, site: LayerSite, pos: usize, x: &[f64]) -> Option<Vec<f64>> {
        if (!self.all_pos && pos != self.pos) || !self.sites.contains(&site) {
            return None;
        }
        let delta = compute_delta(self.probe, site, x, EditSign::Negative).unwrap();
        Some(apply_edit(x, &delta, self.gamma))
    }
}

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
        let canonical = config.canonical(&obj.category).unwrap().clone();
        if obj.color == canonical {
            continue;
        }
        panel.push((scene, obj, canonical));
    }

    use ifcd::vlm::Site;
    let b0a = LayerSite { block: 0, site: Site::AttentionOutput };
    let b0f = LayerSite { block: 0, site: Site::FfnOutput };
    let b1a = LayerSite { block: 1, site: Site::AttentionOutput };
    let b1f = LayerSite { block: 1, site: Site::FfnOutput };
    let grid: Vec<(usize, f64, usize, Vec<LayerSite>, bool)> = vec![
        (600, 0.3, 600, vec![b0f], false),
        (1200, 0.3, 600, vec![b0f], false),
        (1200, 1.0, 300, vec![b0f], false),
        (1200, 0.3, 600, vec![b0f, b1a], false),
        (1200, 0.3, 600, vec![b0f], true),
        (1200, 0.3, 600, vec![b0a, b0f, b1a, b1f], true),
    ];
    for (n_pairs, sem, epochs, active, all_pos) in grid {
        let mut pair_rng = Rng::from_seed(42);
        let pairs = collect_pairs(&vlm, &config, n_pairs, &mut pair_rng).unwrap();
        let hyper = ProbeHyper { sem_noise_std: sem, epochs, ..ProbeHyper::default() };
        let (probe, pstats) = train_probe(&pairs, &hyper).unwrap();
        print!("pairs {n_pairs} sem{sem} e{epochs} all_pos {all_pos}");
        let gammas = [0.0, 0.5, 1.0, 2.0];
        let mut monotone = 0;
        let mut means = [0.0f64; 4];
        for (scene, obj, canonical) in &panel {
            let features = encode_scene(&vlm, scene).unwrap();
            let prompt = vocab.encode(&color_prompt(&obj.category)).unwrap();
            let canon_id = vocab.id(canonical).unwrap();
            let last = features.len() + prompt.len();
            let mut ps = Vec::new();
            for &gamma in &gammas {
                let mut hooks = PosEdit { sites: active.clone(), probe: &probe, gamma, pos: last, all_pos };
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
        let _ = &pstats;
        println!(
            " sites {:?}: monotone {monotone}/100 mean P(canon) {:?}",
            active.iter().map(|s| s.label()).collect::<Vec<_>>(),
            means.iter().map(|m| (m / 100.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
}
