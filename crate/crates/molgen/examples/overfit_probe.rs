//! Scratch experiment: single-molecule overfit of stages 2 and 3.
//! Measures per-element mode probability of the data molecule under the
//! trained generators.

use molgen::chem::smiles::parse_smiles;
use molgen::chem::valence::ValenceTable;
use molgen::dataset::Dataset;
use molgen::gnn::MountedParams;
use molgen::graph::BOND_TYPES;
use molgen::stages::model::{relax_rows, StageArch};
use molgen::stages::train::{sample_latent, train_stage};
use molgen::stages::{CriticInput, Lipschitz, StageConfig, StageId};
use molgen::tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let critic = match args.get(3).map(|s| s.as_str()) {
        Some("st") => CriticInput::StraightThrough,
        _ => CriticInput::Soft,
    };
    let smiles = args
        .get(4)
        .cloned()
        .unwrap_or_else(|| "CC(=O)N".to_string());

    let table = ValenceTable::default();
    let target = parse_smiles(&smiles, &table).unwrap();
    let n = target.node_count();
    let ds = Dataset::from_graphs(vec![target.clone()]);
    let k = ds.vocab.len();
    println!("molecule {smiles}: n={n}, vocab={k}");

    let cfg = StageConfig {
        d_z: 4,
        layers: 3,
        d_h: 16,
        d_r: 12,
        learning_rate: lr,
        batch_size: 4,
        d_steps: 2,
        lipschitz: Lipschitz::GradientPenalty(10.0),
        tau_start: 1.0,
        tau_end: 0.3,
        tau_decay: 2e-3,
        max_steps: steps,
        seed: 7,
        critic_input: critic,
        ..StageConfig::default()
    };

    let t0 = std::time::Instant::now();
    let (p2, log2) = train_stage(StageId::NodeAttrs, &ds, &cfg).unwrap();
    println!(
        "stage2 trained in {:.1?}; last W estimate {:+.4}",
        t0.elapsed(),
        log2.last().unwrap().wasserstein
    );
    let t1 = std::time::Instant::now();
    let (p3, log3) = train_stage(StageId::EdgeAttrs, &ds, &cfg).unwrap();
    println!(
        "stage3 trained in {:.1?}; last W estimate {:+.4}",
        t1.elapsed(),
        log3.last().unwrap().wasserstein
    );

    // Mode probability of the target assignment, averaged over latents,
    // minimum over elements.
    let arch2 = StageArch::new(StageId::NodeAttrs, &cfg, k);
    let arch3 = StageArch::new(StageId::EdgeAttrs, &cfg, k);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 100;
    let mut node_probs = vec![0.0f64; n];
    let mut edge_probs: Vec<f64> = Vec::new();
    let x_target = target.x_onehot(&ds.vocab).unwrap();
    let w_target = target.w_onehot();

    for _ in 0..draws {
        let tape = Tape::new();
        let g2 = MountedParams::mount(&tape, &p2.generator, false);
        let g3 = MountedParams::mount(&tape, &p3.generator, false);
        let a = tape.constant([n * n, 1], target.a_column());
        let z2 = tape.constant([n, cfg.d_z], sample_latent(n, cfg.d_z, &mut rng).unwrap());
        let probs2 = relax_rows(&arch2.stage2_logits(&g2, &z2, &a).unwrap(), cfg.tau_end);
        let pv = probs2.values();
        for i in 0..n {
            let t = (0..k).find(|&c| x_target[i * k + c] == 1.0).unwrap();
            node_probs[i] += pv[i * k + t] / draws as f64;
        }
        let z3 = tape.constant([n, cfg.d_z], sample_latent(n, cfg.d_z, &mut rng).unwrap());
        let xt = tape.constant([n, k], x_target.clone());
        let probs3 = relax_rows(&arch3.stage3_logits(&g3, &z3, &xt, &a).unwrap(), cfg.tau_end);
        let wv = probs3.values();
        let mut eidx = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if target.has_edge(i, j) {
                    let t = (0..BOND_TYPES)
                        .find(|&c| w_target[(i * n + j) * BOND_TYPES + c] == 1.0)
                        .unwrap();
                    if edge_probs.len() <= eidx {
                        edge_probs.push(0.0);
                    }
                    edge_probs[eidx] += wv[(i * n + j) * BOND_TYPES + t] / draws as f64;
                    eidx += 1;
                }
            }
        }
    }

    let min_node = node_probs.iter().cloned().fold(1.0f64, f64::min);
    let min_edge = edge_probs.iter().cloned().fold(1.0f64, f64::min);
    println!("node mode probabilities: {node_probs:?}");
    println!("edge mode probabilities: {edge_probs:?}");
    println!("min node {min_node:.4}  min edge {min_edge:.4}");
}
