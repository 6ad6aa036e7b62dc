//! Scratch experiment: small-corpus learning signal. Synthesizes a
//! 500-molecule corpus, pins the random-assignment baseline validity, then
//! trains stages 2 and 3 and compares generated validity.

use molgen::chem::synth::random_valid_molecule;
use molgen::chem::valence::ValenceTable;
use molgen::dataset::Dataset;
use molgen::metrics::{baseline_random, evaluate};
use molgen::stages::generate::{generate, Discretization, Pipeline, SkeletonSource};
use molgen::stages::train::train_stage;
use molgen::stages::{CriticInput, Lipschitz, StageConfig, StageId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let critic = match args.get(3).map(|s| s.as_str()) {
        Some("soft") => CriticInput::Soft,
        _ => CriticInput::StraightThrough,
    };

    let table = ValenceTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_817);
    let graphs: Vec<_> = (0..500)
        .map(|_| random_valid_molecule(&mut rng, 9, &table))
        .collect();
    let ds = Dataset::from_graphs(graphs);
    println!(
        "corpus: {} molecules, vocab {} descriptors",
        ds.len(),
        ds.vocab.len()
    );

    let mut brng = ChaCha8Rng::seed_from_u64(4242);
    let baseline = baseline_random(&ds.graphs, &ds.vocab, &mut brng, 500, &table).unwrap();
    println!("baseline validity: {:.2}% ({} / 500)", baseline.val, baseline.valid);

    let cfg = StageConfig {
        d_z: 4,
        layers: 3,
        d_h: 16,
        d_r: 12,
        learning_rate: 1e-3,
        batch_size: batch,
        d_steps: 2,
        lipschitz: Lipschitz::GradientPenalty(10.0),
        tau_start: 1.0,
        tau_end: 0.3,
        tau_decay: 5e-4,
        max_steps: steps,
        seed: 11,
        critic_input: critic,
        ..StageConfig::default()
    };

    let t0 = std::time::Instant::now();
    let (p2, log2) = train_stage(StageId::NodeAttrs, &ds, &cfg).unwrap();
    println!(
        "stage2: {:.0?}, W {:+.4}",
        t0.elapsed(),
        log2.last().unwrap().wasserstein
    );
    let t1 = std::time::Instant::now();
    let (p3, log3) = train_stage(StageId::EdgeAttrs, &ds, &cfg).unwrap();
    println!(
        "stage3: {:.0?}, W {:+.4}",
        t1.elapsed(),
        log3.last().unwrap().wasserstein
    );

    let pipe = Pipeline {
        stage2: &p2,
        cfg2: &cfg,
        stage3: &p3,
        cfg3: &cfg,
        vocab: &ds.vocab,
    };
    let out = generate(
        500,
        &SkeletonSource::Data(&ds.graphs),
        &pipe,
        777,
        Discretization::Argmax,
    )
    .unwrap();
    let report = evaluate(&out, &ds.certs, &table).unwrap();
    println!("generated metrics:\n{}", report.render_table());
    println!(
        "validity ratio over baseline: {:.2}x (need >= 2)",
        report.val / baseline.val.max(1e-9)
    );
    println!("total time {:.0?}", t0.elapsed());
}
