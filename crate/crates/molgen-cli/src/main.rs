//! Command-line surface: preprocess, train, generate, eval, verify.
//!
//! Every subcommand is deterministic given `--seed`. Exit codes: 0 success,
//! 2 validation or verification failure, 3 I/O or parse abort.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use molgen::chem::smiles::{parse_smiles, write_smiles};
use molgen::chem::valence::ValenceTable;
use molgen::config::parse_stage_config;
use molgen::dataset::{
    load_certs, load_dataset, preprocess, save_certs, save_dataset, save_vocab,
};
use molgen::gnn::MountedParams;
use molgen::graph::MolecularGraph;
use molgen::metrics::evaluate;
use molgen::stages::checkpoint::{load_checkpoint, save_checkpoint};
use molgen::stages::generate::{generate, Discretization, Pipeline, SkeletonSource};
use molgen::stages::model::StageArch;
use molgen::stages::train::Trainer;
use molgen::stages::{StageConfig, StageId};
use molgen::tensor::Tape;
use molgen::verify::{
    check_decomposition_invariance, check_equivariance, equiprobability_test, skeleton_graph,
    RowSet,
};

#[derive(Parser)]
#[command(name = "molgen", about = "Three-stage molecular graph GAN", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a SMILES file into dataset, vocabulary, and certificate files.
    Preprocess(PreprocessArgs),
    /// Train one stage on a preprocessed dataset.
    Train(TrainArgs),
    /// Generate molecules from trained stage checkpoints.
    Generate(GenerateArgs),
    /// Evaluate a generated SMILES file against training certificates.
    Eval(EvalArgs),
    /// Run a verification suite on a checkpoint or a fresh random model.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input SMILES file, one molecule per line.
    input: PathBuf,
    /// Output dataset file (SMILES lines, canonical).
    #[arg(long, default_value = "dataset.smi")]
    out_dataset: PathBuf,
    /// Output vocabulary file.
    #[arg(long, default_value = "vocab.txt")]
    out_vocab: PathBuf,
    /// Output training-certificate file.
    #[arg(long, default_value = "certs.txt")]
    out_certs: PathBuf,
    /// Skip molecules with more heavy atoms than this.
    #[arg(long, default_value_t = 9)]
    max_heavy_atoms: usize,
    /// Warn when the built vocabulary size differs from this.
    #[arg(long)]
    expect_vocab: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Which stage to train: skeleton, node-attrs, or edge-attrs.
    stage: String,
    /// Preprocessed dataset file.
    dataset: PathBuf,
    /// Flat key = value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long, default_value = "stage.ckpt")]
    out: PathBuf,
    /// Step-indexed loss log output path.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Overrides the config seed when set.
    #[arg(long)]
    seed: Option<u64>,
    /// Write an intermediate checkpoint every this many steps.
    #[arg(long, default_value_t = 1000)]
    checkpoint_every: usize,
}

#[derive(Args)]
struct GenerateArgs {
    /// Stage-2 (node attributes) checkpoint.
    #[arg(long)]
    stage2: PathBuf,
    /// Stage-3 (edge attributes) checkpoint.
    #[arg(long)]
    stage3: PathBuf,
    /// Skeleton source: a dataset file (default) or a stage-1 checkpoint.
    #[arg(long)]
    skeletons: Option<PathBuf>,
    /// Experimental: draw skeletons from this stage-1 checkpoint instead.
    #[arg(long)]
    stage1: Option<PathBuf>,
    /// Node counts for stage-1 skeletons (comma separated); defaults to 9.
    #[arg(long)]
    stage1_nodes: Option<String>,
    /// Number of molecules to generate.
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample categorically instead of taking the argmax.
    #[arg(long)]
    sample: bool,
    /// Output SMILES file; invalid molecules get a leading '!'.
    #[arg(long, default_value = "generated.smi")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Generated SMILES file (from `generate`).
    generated: PathBuf,
    /// Training certificate file (from `preprocess`).
    certs: PathBuf,
    /// Also write the report as key=value lines here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite: equivariance, decomposition, or equiprobability.
    #[arg(long)]
    suite: String,
    /// Checkpoint to verify; a fresh random model when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Node count for the equiprobability suite.
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Sample count for the equiprobability suite.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Permutation trials for the equivariance suites.
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match code {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn cmd_preprocess(a: PreprocessArgs) -> CmdResult {
    let table = ValenceTable::default();
    let text = std::fs::read_to_string(&a.input)?;
    let (ds, report) = preprocess(
        text.lines().map(str::to_string),
        a.max_heavy_atoms,
        &table,
    )?;
    for (line, reason) in &report.skipped {
        eprintln!("skip line {line}: {reason}");
    }
    println!(
        "parsed {} of {} molecules; vocabulary has {} atom types",
        report.parsed,
        report.total,
        ds.vocab.len()
    );
    if let Some(expect) = a.expect_vocab {
        if ds.vocab.len() != expect {
            eprintln!(
                "warning: vocabulary has {} entries, expected {expect}",
                ds.vocab.len()
            );
        }
    }
    save_dataset(&ds, &a.out_dataset, &table)?;
    save_vocab(&ds.vocab, &a.out_vocab)?;
    save_certs(&ds.certs, &a.out_certs)?;
    println!(
        "wrote {}, {}, {}",
        a.out_dataset.display(),
        a.out_vocab.display(),
        a.out_certs.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_stage(name: &str) -> Result<StageId, String> {
    match name {
        "skeleton" | "1" => Ok(StageId::Skeleton),
        "node-attrs" | "2" => Ok(StageId::NodeAttrs),
        "edge-attrs" | "3" => Ok(StageId::EdgeAttrs),
        other => Err(format!(
            "unknown stage '{other}' (use skeleton, node-attrs, or edge-attrs)"
        )),
    }
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let stage = parse_stage(&a.stage)?;
    let table = ValenceTable::default();
    let ds = load_dataset(&a.dataset, &table)?;
    let mut cfg = match &a.config {
        Some(path) => parse_stage_config(&std::fs::read_to_string(path)?)?,
        None => StageConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    print!("effective config:\n{}", cfg.dump());
    println!(
        "training stage {stage} on {} molecules ({} atom types)",
        ds.len(),
        ds.vocab.len()
    );

    let mut trainer = Trainer::new(stage, &ds, &cfg)?;
    let mut full_log = Vec::with_capacity(cfg.max_steps);
    let every = a.checkpoint_every.max(1);
    while trainer.step_index() < cfg.max_steps {
        full_log.push(trainer.step()?);
        let done = trainer.step_index();
        if done % every == 0 && done < cfg.max_steps {
            save_checkpoint(&a.out, trainer.params(), &cfg, &ds.vocab)?;
            println!("step {done}/{}: checkpoint written", cfg.max_steps);
        }
    }
    let params = trainer.into_params();
    save_checkpoint(&a.out, &params, &cfg, &ds.vocab)?;

    if let Some(log_path) = &a.log {
        let mut f = std::fs::File::create(log_path)?;
        for r in &full_log {
            writeln!(
                f,
                "{}\t{}\t{}\t{}",
                r.step, r.d_loss, r.g_loss, r.wasserstein
            )?;
        }
    }
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    let table = ValenceTable::default();
    let (p2, cfg2, vocab2) = load_checkpoint(&a.stage2, None)?;
    let (p3, cfg3, _vocab3) = load_checkpoint(&a.stage3, None)?;

    let data;
    let s1;
    let counts: Vec<usize>;
    let source = if let Some(ck) = &a.stage1 {
        let (p1, cfg1, _) = load_checkpoint(ck, None)?;
        counts = match &a.stage1_nodes {
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()?,
            None => vec![9],
        };
        s1 = (p1, cfg1);
        SkeletonSource::Stage1 {
            params: &s1.0,
            cfg: &s1.1,
            node_counts: &counts,
        }
    } else {
        let path = a
            .skeletons
            .as_ref()
            .ok_or("either --skeletons or --stage1 is required")?;
        data = load_dataset(path, &table)?;
        SkeletonSource::Data(&data.graphs)
    };

    let pipe = Pipeline {
        stage2: &p2,
        cfg2: &cfg2,
        stage3: &p3,
        cfg3: &cfg3,
        vocab: &vocab2,
    };
    let disc = if a.sample {
        Discretization::Categorical
    } else {
        Discretization::Argmax
    };
    let out = generate(a.count, &source, &pipe, a.seed, disc)?;

    let mut f = std::fs::File::create(&a.out)?;
    let mut invalid = 0usize;
    for g in &out {
        let marker = if molgen::chem::valence::check_valence(g, &table) {
            ""
        } else {
            invalid += 1;
            "!"
        };
        writeln!(f, "{marker}{}", write_smiles(g, &table)?)?;
    }
    println!(
        "wrote {} molecules to {} ({} marked invalid)",
        out.len(),
        a.out.display(),
        invalid
    );
    Ok(ExitCode::SUCCESS)
}

fn read_generated(path: &Path, table: &ValenceTable) -> Result<Vec<MolecularGraph>, Box<dyn std::error::Error>> {
    let mut out = Vec::new();
    for (i, raw) in std::fs::read_to_string(path)?.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let smiles = line.strip_prefix('!').unwrap_or(line);
        let g = parse_smiles(smiles, table)
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        out.push(g);
    }
    Ok(out)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let table = ValenceTable::default();
    let generated = read_generated(&a.generated, &table)?;
    let certs = load_certs(&a.certs)?;
    let report = evaluate(&generated, &certs, &table)?;
    print!("{}", report.render_table());
    if let Some(path) = &a.out {
        std::fs::write(path, report.render_kv())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    match a.suite.as_str() {
        "equivariance" => {
            // Either a checkpointed stage-2 generator or a fresh random one.
            let (params, cfg, vocab_len) = match &a.checkpoint {
                Some(path) => {
                    let (p, c, v) = load_checkpoint(path, None)?;
                    if p.stage != StageId::NodeAttrs {
                        return Err("equivariance suite expects a stage-2 checkpoint".into());
                    }
                    (p, c, v.len())
                }
                None => {
                    let cfg = StageConfig::default();
                    let arch = StageArch::new(StageId::NodeAttrs, &cfg, 8);
                    (arch.init_params(&mut rng), cfg, 8)
                }
            };
            let arch = StageArch::new(StageId::NodeAttrs, &cfg, vocab_len);
            let n = 6usize;
            // Joint (Z, A) equivariance with a fixed random skeleton.
            let mut a_vals = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    if rand::Rng::gen_bool(&mut rng, 0.5) {
                        a_vals[i * n + j] = 1.0;
                        a_vals[j * n + i] = 1.0;
                    }
                }
            }
            let input = (
                RowSet {
                    n,
                    d: cfg.d_z,
                    values: (0..n * cfg.d_z)
                        .map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
                        .collect(),
                },
                molgen::verify::PairGrid {
                    n,
                    k: 1,
                    values: a_vals,
                },
            );
            let f = |zin: &(RowSet, molgen::verify::PairGrid)| -> RowSet {
                let tape = Tape::new();
                let g = MountedParams::mount(&tape, &params.generator, false);
                let z = tape.constant([zin.0.n, zin.0.d], zin.0.values.clone());
                let ac = tape.constant([n * n, 1], zin.1.values.clone());
                let logits = arch.stage2_logits(&g, &z, &ac).unwrap();
                let probs = molgen::stages::model::relax_rows(&logits, cfg.tau_end);
                RowSet {
                    n,
                    d: probs.cols(),
                    values: probs.values(),
                }
            };
            let rep = check_equivariance(f, &input, a.trials, &mut rng);
            println!("suite: equivariance");
            println!("trials: {}", rep.trials);
            println!("max_deviation: {:.3e}", rep.max_deviation);
            if rep.max_deviation <= 1e-9 {
                println!("status: pass");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("status: fail (bound 1e-9)");
                Ok(ExitCode::from(2))
            }
        }
        "decomposition" => {
            let d = 3usize;
            let z_i: Vec<f64> = (0..d).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            let z_rest: Vec<Vec<f64>> = (0..7)
                .map(|_| (0..d).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect())
                .collect();
            let f = |z_i: &[f64], rest: &[Vec<f64>]| -> Vec<f64> {
                let mut acc = vec![0.0f64; d];
                for z_j in rest {
                    for c in 0..d {
                        acc[c] += (z_i[c] * z_j[c]).tanh();
                    }
                }
                acc.iter().zip(z_i).map(|(s, z)| s + z).collect()
            };
            let dev = check_decomposition_invariance(f, &z_i, &z_rest, a.trials, &mut rng);
            println!("suite: decomposition");
            println!("max_deviation: {dev:.3e}");
            if dev <= 1e-9 {
                println!("status: pass");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("status: fail (bound 1e-9)");
                Ok(ExitCode::from(2))
            }
        }
        "equiprobability" => {
            let (params, cfg) = match &a.checkpoint {
                Some(path) => {
                    let (p, c, _) = load_checkpoint(path, None)?;
                    if p.stage != StageId::Skeleton {
                        return Err("equiprobability suite expects a stage-1 checkpoint".into());
                    }
                    (p, c)
                }
                None => {
                    let cfg = StageConfig::default();
                    let arch = StageArch::new(StageId::Skeleton, &cfg, 0);
                    (arch.init_params(&mut rng), cfg)
                }
            };
            let arch = StageArch::new(StageId::Skeleton, &cfg, 0);
            let n = a.n;
            let generator = |zv: &[f64]| {
                let tape = Tape::new();
                let g = MountedParams::mount(&tape, &params.generator, false);
                let z = tape.constant([n, cfg.d_z], zv.to_vec());
                let probs = arch.stage1_probs(&g, &z).unwrap();
                let skel =
                    molgen::stages::model::threshold_skeleton(&probs.values(), n);
                skeleton_graph(n, &skel)
            };
            let rep = equiprobability_test(generator, n, cfg.d_z, a.samples, &mut rng)?;
            println!("suite: equiprobability");
            println!("samples: {}", rep.samples);
            println!("classes: {}", rep.classes.len());
            println!("excluded_classes: {}", rep.excluded_classes);
            println!("chi_square: {:.4}", rep.chi_square);
            println!("degrees_of_freedom: {}", rep.degrees_of_freedom);
            println!("p_value: {:.6}", rep.p_value);
            if rep.p_value > 0.01 {
                println!("status: pass");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("status: fail (significance 0.01)");
                Ok(ExitCode::from(2))
            }
        }
        other => Err(format!(
            "unknown suite '{other}' (use equivariance, decomposition, or equiprobability)"
        )
        .into()),
    }
}
