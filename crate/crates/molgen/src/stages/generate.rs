//! Sequential generation: skeleton, node attributes, edge attributes.
//!
//! Skeletons come from the data by default; the experimental stage-1
//! generator is available as an alternative source. Validity is not
//! enforced here; the metrics measure it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gnn::MountedParams;
use crate::graph::{AtomVocab, BondKind, MolecularGraph, BOND_TYPES};
use crate::stages::model::{argmax_onehot, categorical_onehot, relax_rows, StageArch};
use crate::stages::train::sample_latent;
use crate::stages::{ModelParams, StageConfig, StageId};
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("stage {0} parameters missing or mismatched")]
    UntrainedStage(StageId),
    #[error("skeleton source is empty")]
    EmptySource,
    #[error("vocabulary size {vocab} does not match generator output {model}")]
    VocabMismatch { vocab: usize, model: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("latent sampling: {0}")]
    Latent(String),
}

/// Where skeletons come from.
pub enum SkeletonSource<'a> {
    /// Sample A uniformly from these graphs.
    Data(&'a [MolecularGraph]),
    /// Experimental: sample node counts from `node_counts`, then run the
    /// stage-1 generator and threshold at 1/2.
    Stage1 {
        params: &'a ModelParams,
        cfg: &'a StageConfig,
        node_counts: &'a [usize],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discretization {
    Argmax,
    Categorical,
}

/// Trained stages 2 and 3 plus the vocabulary they index into.
pub struct Pipeline<'a> {
    pub stage2: &'a ModelParams,
    pub cfg2: &'a StageConfig,
    pub stage3: &'a ModelParams,
    pub cfg3: &'a StageConfig,
    pub vocab: &'a AtomVocab,
}

fn draw_skeleton(
    source: &SkeletonSource,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, Vec<u8>), GenerateError> {
    match source {
        SkeletonSource::Data(graphs) => {
            if graphs.is_empty() {
                return Err(GenerateError::EmptySource);
            }
            let g = &graphs[rng.gen_range(0..graphs.len())];
            let n = g.node_count();
            let a: Vec<u8> = g.a_column().iter().map(|&v| v as u8).collect();
            Ok((n, a))
        }
        SkeletonSource::Stage1 {
            params,
            cfg,
            node_counts,
        } => {
            if params.stage != StageId::Skeleton {
                return Err(GenerateError::UntrainedStage(StageId::Skeleton));
            }
            if node_counts.is_empty() {
                return Err(GenerateError::EmptySource);
            }
            let arch = StageArch::new(StageId::Skeleton, cfg, 0);
            let n = node_counts[rng.gen_range(0..node_counts.len())];
            let tape = Tape::new();
            let g = MountedParams::mount(&tape, &params.generator, false);
            let zv = sample_latent(n, cfg.d_z, rng)
                .map_err(|e| GenerateError::Latent(e.to_string()))?;
            let z = tape.constant([n, cfg.d_z], zv);
            let probs = arch.stage1_probs(&g, &z)?;
            Ok((
                n,
                crate::stages::model::threshold_skeleton(&probs.values(), n),
            ))
        }
    }
}

/// Generates exactly `count` graphs. Every output passes `validate`;
/// valence validity is up to the metrics.
pub fn generate(
    count: usize,
    source: &SkeletonSource,
    pipe: &Pipeline,
    seed: u64,
    discretization: Discretization,
) -> Result<Vec<MolecularGraph>, GenerateError> {
    if pipe.stage2.stage != StageId::NodeAttrs {
        return Err(GenerateError::UntrainedStage(StageId::NodeAttrs));
    }
    if pipe.stage3.stage != StageId::EdgeAttrs {
        return Err(GenerateError::UntrainedStage(StageId::EdgeAttrs));
    }
    let k = pipe.vocab.len();
    let arch2 = StageArch::new(StageId::NodeAttrs, pipe.cfg2, k);
    let arch3 = StageArch::new(StageId::EdgeAttrs, pipe.cfg3, k);
    let model_k = pipe.stage2.generator.get("g.out.w").shape[1];
    if model_k != k {
        return Err(GenerateError::VocabMismatch {
            vocab: k,
            model: model_k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);

    for _ in 0..count {
        let (n, a) = draw_skeleton(source, &mut rng)?;
        let tape = Tape::new();
        let g2 = MountedParams::mount(&tape, &pipe.stage2.generator, false);
        let g3 = MountedParams::mount(&tape, &pipe.stage3.generator, false);
        let a_col = tape.constant([n * n, 1], a.iter().map(|&v| v as f64).collect());

        // Stage 2: node attributes from the skeleton.
        let z2v = sample_latent(n, pipe.cfg2.d_z, &mut rng)
            .map_err(|e| GenerateError::Latent(e.to_string()))?;
        let z2 = tape.constant([n, pipe.cfg2.d_z], z2v.clone());
        let logits2 = arch2.stage2_logits(&g2, &z2, &a_col)?;
        let probs2 = relax_rows(&logits2, pipe.cfg2.tau_end).values();
        let x_hot = match discretization {
            Discretization::Argmax => argmax_onehot(&probs2, n, k),
            Discretization::Categorical => categorical_onehot(&probs2, n, k, &mut rng),
        };

        // Stage 3: edge attributes from the skeleton and node attributes.
        let z3v = if pipe.cfg3.shared_z && pipe.cfg3.d_z == pipe.cfg2.d_z {
            z2v
        } else {
            sample_latent(n, pipe.cfg3.d_z, &mut rng)
                .map_err(|e| GenerateError::Latent(e.to_string()))?
        };
        let z3 = tape.constant([n, pipe.cfg3.d_z], z3v);
        let x_t = tape.constant([n, k], x_hot.clone());
        let logits3 = arch3.stage3_logits(&g3, &z3, &x_t, &a_col)?;
        let probs3 = relax_rows(&logits3, pipe.cfg3.tau_end).values();
        let w_hot = match discretization {
            Discretization::Argmax => argmax_onehot(&probs3, n * n, BOND_TYPES),
            Discretization::Categorical => {
                // Sample the upper triangle, mirror for symmetry.
                let mut w = vec![0.0; n * n * BOND_TYPES];
                for i in 0..n {
                    for j in (i + 1)..n {
                        let row = &probs3
                            [(i * n + j) * BOND_TYPES..(i * n + j + 1) * BOND_TYPES];
                        let one = categorical_onehot(row, 1, BOND_TYPES, &mut rng);
                        for c in 0..BOND_TYPES {
                            w[(i * n + j) * BOND_TYPES + c] = one[c];
                            w[(j * n + i) * BOND_TYPES + c] = one[c];
                        }
                    }
                }
                w
            }
        };

        // Assemble (A, X, W) into a graph.
        let mut descriptors = Vec::with_capacity(n);
        for i in 0..n {
            let idx = (0..k).find(|&c| x_hot[i * k + c] == 1.0).expect("one-hot row");
            descriptors.push(pipe.vocab.get(idx).expect("index in vocab"));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if a[i * n + j] == 1 {
                    let c = (0..BOND_TYPES)
                        .find(|&c| w_hot[(i * n + j) * BOND_TYPES + c] == 1.0)
                        .expect("one-hot edge row");
                    edges.push((i, j, BondKind::from_channel(c).unwrap()));
                }
            }
        }
        let graph = MolecularGraph::from_edges(descriptors, &edges)
            .expect("assembled encoding is valid");
        out.push(graph);
    }
    Ok(out)
}
