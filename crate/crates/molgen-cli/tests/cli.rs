//! End-to-end runs of the binary: preprocess, train, generate, eval,
//! verify, exercising the file formats and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_molgen")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("molgen-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

const CORPUS: &str = "C\nCC\nCCO\nCC(=O)N\nc1ccccc1\nC1CC1\nCCCC(=O)CC\n[NH4+]\nC#N\nCO\nN\nO\nCC=O\nCCN\nOCC=O\n";

const TINY_CFG: &str = "d_z = 3\nlayers = 1\nd_h = 6\nd_r = 4\nbatch_size = 2\nd_steps = 1\nmax_steps = 30\nlearning_rate = 1e-3\nseed = 5\n";

fn preprocess(dir: &Path) {
    std::fs::write(dir.join("input.smi"), CORPUS).unwrap();
    let (code, out, _err) = run(dir, &["preprocess", "input.smi"]);
    assert_eq!(code, 0);
    assert!(out.contains("parsed 15 of 15"), "{out}");
}

#[test]
fn full_pipeline_roundtrip() {
    let dir = workdir("pipe");
    preprocess(&dir);
    std::fs::write(dir.join("tiny.cfg"), TINY_CFG).unwrap();

    for (stage, ckpt) in [("node-attrs", "s2.ckpt"), ("edge-attrs", "s3.ckpt")] {
        let (code, out, err) = run(
            &dir,
            &[
                "train", stage, "dataset.smi", "--config", "tiny.cfg", "--out", ckpt,
                "--log", &format!("{stage}.log"),
            ],
        );
        assert_eq!(code, 0, "{out}\n{err}");
        assert!(out.contains("effective config"), "{out}");
    }

    // Loss log format: step, d_loss, g_loss, wasserstein, tab separated.
    let log = std::fs::read_to_string(dir.join("node-attrs.log")).unwrap();
    let first = log.lines().next().unwrap();
    assert_eq!(first.split('\t').count(), 4, "{first}");

    let (code, out, err) = run(
        &dir,
        &[
            "generate", "--stage2", "s2.ckpt", "--stage3", "s3.ckpt", "--skeletons",
            "dataset.smi", "--count", "30", "--seed", "9", "--out", "gen.smi",
        ],
    );
    assert_eq!(code, 0, "{out}\n{err}");
    let gen = std::fs::read_to_string(dir.join("gen.smi")).unwrap();
    assert_eq!(gen.lines().count(), 30);

    let (code, out, _) = run(&dir, &["eval", "gen.smi", "certs.txt", "--out", "report.txt"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("val"), "{out}");
    let report = std::fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(report.contains("generated=30"), "{report}");

    // Same seed reproduces the same file.
    let (code, _, _) = run(
        &dir,
        &[
            "generate", "--stage2", "s2.ckpt", "--stage3", "s3.ckpt", "--skeletons",
            "dataset.smi", "--count", "30", "--seed", "9", "--out", "gen2.smi",
        ],
    );
    assert_eq!(code, 0);
    assert_eq!(gen, std::fs::read_to_string(dir.join("gen2.smi")).unwrap());

    // The SMILES file format is metric-transparent: evaluating the file
    // equals evaluating the same run in memory.
    {
        use molgen::chem::valence::ValenceTable;
        use molgen::dataset::{load_certs, load_dataset};
        use molgen::metrics::evaluate;
        use molgen::stages::checkpoint::load_checkpoint;
        use molgen::stages::generate::{generate, Discretization, Pipeline, SkeletonSource};

        let table = ValenceTable::default();
        let (p2, cfg2, vocab) = load_checkpoint(&dir.join("s2.ckpt"), None).unwrap();
        let (p3, cfg3, _) = load_checkpoint(&dir.join("s3.ckpt"), None).unwrap();
        let ds = load_dataset(&dir.join("dataset.smi"), &table).unwrap();
        let pipe = Pipeline {
            stage2: &p2,
            cfg2: &cfg2,
            stage3: &p3,
            cfg3: &cfg3,
            vocab: &vocab,
        };
        let in_memory = generate(
            30,
            &SkeletonSource::Data(&ds.graphs),
            &pipe,
            9,
            Discretization::Argmax,
        )
        .unwrap();
        let certs = load_certs(&dir.join("certs.txt")).unwrap();
        let mem_report = evaluate(&in_memory, &certs, &table).unwrap();
        let file_kv = std::fs::read_to_string(dir.join("report.txt")).unwrap();
        assert_eq!(file_kv, mem_report.render_kv());
    }

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_against_its_own_training_set_has_zero_novelty() {
    let dir = workdir("nov");
    preprocess(&dir);
    // Evaluate the training file itself: everything valid is in the set.
    let (code, out, _) = run(&dir, &["eval", "dataset.smi", "certs.txt"]);
    assert_eq!(code, 0);
    let nov_line = out.lines().find(|l| l.trim_start().starts_with("nov")).unwrap();
    assert!(nov_line.contains("0.0"), "{out}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn verify_suites_pass_on_fresh_models() {
    let dir = workdir("verify");
    for suite in ["equivariance", "decomposition"] {
        let (code, out, err) = run(
            &dir,
            &["verify", "--suite", suite, "--seed", "3", "--trials", "25"],
        );
        assert_eq!(code, 0, "{suite}: {out}\n{err}");
        assert!(out.contains("status: pass"), "{suite}: {out}");
    }
    let (code, out, err) = run(
        &dir,
        &[
            "verify", "--suite", "equiprobability", "--n", "3", "--samples", "20000",
            "--seed", "3",
        ],
    );
    assert_eq!(code, 0, "{out}\n{err}");
    assert!(out.contains("p_value"), "{out}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn preprocess_aborts_on_garbage_majority_with_exit_3() {
    let dir = workdir("abort");
    std::fs::write(dir.join("bad.smi"), "Cl\nBr\nXx\nC\n").unwrap();
    let (code, _, err) = run(&dir, &["preprocess", "bad.smi"]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("aborting"), "{err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn checkpoint_config_digest_guards_generation() {
    let dir = workdir("digest");
    preprocess(&dir);
    std::fs::write(dir.join("tiny.cfg"), TINY_CFG).unwrap();
    let (code, _, _) = run(
        &dir,
        &["train", "node-attrs", "dataset.smi", "--config", "tiny.cfg", "--out", "s2.ckpt"],
    );
    assert_eq!(code, 0);
    // Truncated checkpoint must be rejected with the I/O exit code.
    let bytes = std::fs::read(dir.join("s2.ckpt")).unwrap();
    std::fs::write(dir.join("broken.ckpt"), &bytes[..bytes.len() / 2]).unwrap();
    let (code, _, err) = run(
        &dir,
        &[
            "generate", "--stage2", "broken.ckpt", "--stage3", "s2.ckpt", "--skeletons",
            "dataset.smi",
        ],
    );
    assert_eq!(code, 3, "{err}");
    std::fs::remove_dir_all(&dir).ok();
}
