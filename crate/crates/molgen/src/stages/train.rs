//! Per-stage adversarial training with teacher forcing.
//!
//! Each stage owns its parameters; conditioning inputs always come from the
//! data sample, never from another stage's generator. Alternation is
//! `d_steps` critic updates per generator update, Adam for both.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::dataset::{BatchSampler, Dataset};
use crate::gnn::{MountedParams, ParamSet};
use crate::graph::{MolecularGraph, BOND_TYPES};
use crate::stages::loss::{wgan_stage_loss, LossError, LossSample};
use crate::stages::model::{argmax_onehot, relax_rows, straight_through, StageArch};
use crate::stages::{CriticInput, Lipschitz, ModelParams, StageConfig, StageId};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at step {step} (d {d_loss}, g {g_loss})")]
    DivergedLoss {
        step: usize,
        d_loss: f64,
        g_loss: f64,
    },
    #[error(transparent)]
    Config(#[from] crate::stages::ConfigError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One log line per training step.
#[derive(Debug, Clone, Copy)]
pub struct LogRecord {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub wasserstein: f64,
}

/// Adaptive-moment gradient descent, state keyed by parameter name.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Adam {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Gradient-descent step on every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Vec<f64>>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get_mut(name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Standard-normal latent set, rows iid; deterministic given the RNG state.
pub fn sample_latent(n: usize, d_z: usize, rng: &mut impl Rng) -> Result<Vec<f64>, TrainError> {
    if n == 0 {
        return Err(TrainError::EmptyDataset);
    }
    Ok((0..n * d_z).map(|_| rng.sample(StandardNormal)).collect())
}

/// Builds one stage sample (real, fake, conditioning) on `tape`. Fresh
/// latents per call; the fake follows `critic_input`.
#[allow(clippy::too_many_arguments)]
fn build_sample(
    tape: &Tape,
    arch: &StageArch,
    g: &MountedParams,
    graph: &MolecularGraph,
    ds: &Dataset,
    tau: f64,
    critic_input: CriticInput,
    rng: &mut impl Rng,
) -> Result<LossSample, TrainError> {
    let n = graph.node_count();
    let zv = sample_latent(n, arch.d_z, rng)?;
    let z = tape.constant([n, arch.d_z], zv);
    let a_col = tape.constant([n * n, 1], graph.a_column());
    let eps = rng.gen_range(0.0..1.0);

    let sample = match arch.stage {
        StageId::Skeleton => {
            let probs = arch.stage1_probs(g, &z)?;
            let fake = match critic_input {
                CriticInput::Soft => probs,
                CriticInput::StraightThrough => {
                    let hard: Vec<f64> = probs
                        .values()
                        .iter()
                        .map(|&p| if p >= 0.5 { 1.0 } else { 0.0 })
                        .collect();
                    straight_through(&probs, hard)?
                }
            };
            LossSample {
                n,
                real: a_col.clone(),
                fake,
                cond_a: None,
                cond_x: None,
                eps,
            }
        }
        StageId::NodeAttrs => {
            let logits = arch.stage2_logits(g, &z, &a_col)?;
            let soft = relax_rows(&logits, tau);
            let fake = match critic_input {
                CriticInput::Soft => soft,
                CriticInput::StraightThrough => {
                    let hard = argmax_onehot(&soft.values(), n, arch.k);
                    straight_through(&soft, hard)?
                }
            };
            let x_real = tape.constant(
                [n, arch.k],
                graph.x_onehot(&ds.vocab).expect("vocab covers corpus"),
            );
            LossSample {
                n,
                real: x_real,
                fake,
                cond_a: Some(a_col),
                cond_x: None,
                eps,
            }
        }
        StageId::EdgeAttrs => {
            let logits = arch.stage3_logits(g, &z, &x_const(tape, graph, ds), &a_col)?;
            let soft = relax_rows(&logits, tau);
            let mask = a_col.expand_cols(BOND_TYPES)?;
            let soft_masked = soft.mul(&mask)?;
            let fake = match critic_input {
                CriticInput::Soft => soft_masked,
                CriticInput::StraightThrough => {
                    let mut hard = argmax_onehot(&soft.values(), n * n, BOND_TYPES);
                    let a = graph.a_column();
                    for (p, &av) in a.iter().enumerate() {
                        if av == 0.0 {
                            for c in 0..BOND_TYPES {
                                hard[p * BOND_TYPES + c] = 0.0;
                            }
                        }
                    }
                    straight_through(&soft_masked, hard)?
                }
            };
            let w_real = tape.constant([n * n, BOND_TYPES], graph.w_onehot());
            LossSample {
                n,
                real: w_real,
                fake,
                cond_a: Some(a_col),
                cond_x: Some(x_const(tape, graph, ds)),
                eps,
            }
        }
    };
    Ok(sample)
}

fn x_const(tape: &Tape, graph: &MolecularGraph, ds: &Dataset) -> Tensor {
    let n = graph.node_count();
    tape.constant(
        [n, ds.vocab.len()],
        graph.x_onehot(&ds.vocab).expect("vocab covers corpus"),
    )
}

/// Incremental training driver: one [`Trainer::step`] per alternation
/// round. Lets callers checkpoint mid-run while keeping the run identical
/// to a single uninterrupted one (one RNG stream).
pub struct Trainer<'a> {
    ds: &'a Dataset,
    cfg: StageConfig,
    arch: StageArch,
    params: ModelParams,
    sampler: BatchSampler,
    adam_d: Adam,
    adam_g: Adam,
    rng: ChaCha8Rng,
    step: usize,
    penalty_coef: Option<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(stage: StageId, ds: &'a Dataset, cfg: &StageConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        if ds.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let arch = StageArch::new(stage, cfg, ds.vocab.len());
        let params = arch.init_params(&mut rng);
        let penalty_coef = match cfg.lipschitz {
            Lipschitz::GradientPenalty(c) => Some(c),
            Lipschitz::WeightClip(_) => None,
        };
        Ok(Trainer {
            ds,
            cfg: cfg.clone(),
            arch,
            params,
            sampler: BatchSampler::new(ds),
            adam_d: Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2),
            adam_g: Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2),
            rng,
            step: 0,
            penalty_coef,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// One round: `d_steps` critic updates followed by a generator update.
    pub fn step(&mut self) -> Result<LogRecord, TrainError> {
        let step = self.step;
        let tau = self.cfg.temperature(step);
        let mut d_loss = 0.0;
        let mut wasserstein = 0.0;

        for _ in 0..self.cfg.d_steps {
            let tape = Tape::new();
            let d = MountedParams::mount(&tape, &self.params.discriminator, true);
            let g = MountedParams::mount(&tape, &self.params.generator, false);
            let batch = self.sampler.sample(self.cfg.batch_size, &mut self.rng);
            let samples: Vec<LossSample> = batch
                .iter()
                .map(|&i| {
                    build_sample(
                        &tape,
                        &self.arch,
                        &g,
                        &self.ds.graphs[i],
                        self.ds,
                        tau,
                        self.cfg.critic_input,
                        &mut self.rng,
                    )
                })
                .collect::<Result<_, _>>()?;
            let loss = wgan_stage_loss(&self.arch, &d, &samples, self.penalty_coef)?;
            // Critic maximizes its objective: descend on the negation.
            let neg = loss.d_objective.scale(-1.0);
            neg.backward()?;
            d_loss = neg.scalar_value();
            wasserstein = loss.wasserstein;
            self.adam_d
                .step(&mut self.params.discriminator, &d.collect_grads());
            if let Lipschitz::WeightClip(c) = self.cfg.lipschitz {
                for (_, t) in self.params.discriminator.iter_mut() {
                    for v in t.values.iter_mut() {
                        *v = v.clamp(-c, c);
                    }
                }
            }
        }

        let g_loss = {
            let tape = Tape::new();
            let d = MountedParams::mount(&tape, &self.params.discriminator, false);
            let g = MountedParams::mount(&tape, &self.params.generator, true);
            let batch = self.sampler.sample(self.cfg.batch_size, &mut self.rng);
            let samples: Vec<LossSample> = batch
                .iter()
                .map(|&i| {
                    build_sample(
                        &tape,
                        &self.arch,
                        &g,
                        &self.ds.graphs[i],
                        self.ds,
                        tau,
                        self.cfg.critic_input,
                        &mut self.rng,
                    )
                })
                .collect::<Result<_, _>>()?;
            let loss = wgan_stage_loss(&self.arch, &d, &samples, None)?;
            loss.g_objective.backward()?;
            self.adam_g
                .step(&mut self.params.generator, &g.collect_grads());
            loss.g_objective.scalar_value()
        };

        if !d_loss.is_finite() || !g_loss.is_finite() || !wasserstein.is_finite() {
            return Err(TrainError::DivergedLoss {
                step,
                d_loss,
                g_loss,
            });
        }
        self.step += 1;
        Ok(LogRecord {
            step,
            d_loss,
            g_loss,
            wasserstein,
        })
    }
}

/// Trains one stage from scratch for `cfg.max_steps` rounds. Conditioning
/// comes from the dataset only; the returned parameters are this stage's
/// generator and critic.
pub fn train_stage(
    stage: StageId,
    ds: &Dataset,
    cfg: &StageConfig,
) -> Result<(ModelParams, Vec<LogRecord>), TrainError> {
    let mut trainer = Trainer::new(stage, ds, cfg)?;
    let mut log = Vec::with_capacity(cfg.max_steps);
    for _ in 0..cfg.max_steps {
        log.push(trainer.step()?);
    }
    Ok((trainer.into_params(), log))
}
