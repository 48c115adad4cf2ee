//! Scratch: inspect non-monotone panel questions under negative editing.

use ifcd::probe::{apply_edit, collect_pairs, compute_delta, train_probe, EditSign, ProbeHyper};
use ifcd::rng::Rng;
use ifcd::vlm::{encode_scene, forward, train_toy_vlm, LayerSite, VlmHooks, VlmHyper};
use ifcd::world::{build_corpus, color_prompt, generate_scene, Vocab, WorldConfig};

struct PosEdit<'a> {
    sites: Vec<LayerSite>,
    probe: &'a ifcd::probe::ProbeParams,
    gamma: f64,
    pos: usize,
}

impl VlmHooks for PosEdit<'_> {
    fn on_site(&mut self, site: LayerSite, pos: usize, x: &[f64]) -> Option<Vec<f64>> {
        if pos != self.pos || !self.sites.contains(&site) {
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

    let mut pair_rng = Rng::from_seed(42);
    let pairs = collect_pairs(&vlm, &config, 600, &mut pair_rng).unwrap();
    let (probe, _) = train_probe(&pairs, &ProbeHyper::default()).unwrap();
    let active = vec![probe.layer_ranking[0].0];

    let mut eval_rng = Rng::from_seed(777);
    let mut seen = 0;
    let mut i = 0u64;
    let gammas = [0.0, 0.5, 1.0, 2.0];
    let mut dips = Vec::new();
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
        let canon_id = vocab.id(&canonical).unwrap();
        let last = features.len() + prompt.len();
        let mut ps = Vec::new();
        let mut dists = Vec::new();
        for &gamma in &gammas {
            let mut hooks = PosEdit { sites: active.clone(), probe: &probe, gamma, pos: last };
            let dist = forward(&vlm, &features, &prompt, &[], &mut hooks).unwrap();
            ps.push(dist.probs[canon_id]);
            dists.push(dist.probs);
        }
        if !ps.windows(2).all(|w| w[1] >= w[0] - 1e-12) {
            let max_dip = ps
                .windows(2)
                .map(|w| (w[0] - w[1]).max(0.0))
                .fold(0.0f64, f64::max);
            dips.push(max_dip);
            if dips.len() <= 15 {
                let gain = (0..dists[0].len())
                    .max_by(|&a, &b| {
                        (dists[3][a] - dists[0][a]).total_cmp(&(dists[3][b] - dists[0][b]))
                    })
                    .unwrap();
                println!(
                    "cat {} true {} canon {} gainer {} (+{:.3}): {:?}",
                    obj.category, obj.color, canonical,
                    vocab.token(gain), dists[3][gain] - dists[0][gain],
                    ps.iter().map(|p| (p * 10000.0).round() / 10000.0).collect::<Vec<_>>()
                );
            }
        }
    }
    let _ = &dips;
    dips.sort_by(f64::total_cmp);
    println!("{} non-monotone; dips quartiles {:?}", dips.len(),
        [dips.first(), dips.get(dips.len()/2), dips.last()]);
}
