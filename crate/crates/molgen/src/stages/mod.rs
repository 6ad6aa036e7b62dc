//! The three-stage GAN: skeleton, node attributes, edge attributes.
//!
//! Stages train independently with conditioning drawn from data (teacher
//! forcing) and chain only at generation time. Stage 1 is experimental: it
//! trains and generates, but evaluation normally samples skeletons from
//! data.

pub mod checkpoint;
pub mod generate;
pub mod loss;
pub mod model;
pub mod train;

use std::fmt;

use thiserror::Error;

use crate::gnn::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StageId {
    Skeleton,
    NodeAttrs,
    EdgeAttrs,
}

impl StageId {
    pub fn code(self) -> u8 {
        match self {
            StageId::Skeleton => 1,
            StageId::NodeAttrs => 2,
            StageId::EdgeAttrs => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<StageId> {
        match c {
            1 => Some(StageId::Skeleton),
            2 => Some(StageId::NodeAttrs),
            3 => Some(StageId::EdgeAttrs),
            _ => None,
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageId::Skeleton => write!(f, "skeleton"),
            StageId::NodeAttrs => write!(f, "node-attrs"),
            StageId::EdgeAttrs => write!(f, "edge-attrs"),
        }
    }
}

/// Lipschitz mechanism for the critic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lipschitz {
    /// Gradient penalty on real/fake interpolates with this coefficient.
    GradientPenalty(f64),
    /// Per-parameter clipping to [-c, c] after each critic update.
    WeightClip(f64),
}

/// What the critic sees as the fake sample during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticInput {
    /// Relaxed softmax probabilities at the current temperature.
    Soft,
    /// Hard one-hot with straight-through gradients.
    StraightThrough,
}

/// Hyperparameters and schedule for training one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub d_z: usize,
    pub layers: usize,
    pub d_h: usize,
    pub d_r: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub d_steps: usize,
    pub lipschitz: Lipschitz,
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_decay: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub critic_input: CriticInput,
    /// Draw a fresh latent set per stage at generation time (default) or
    /// share one across stages.
    pub shared_z: bool,
    /// Literal pair form h(z_i, z_j) in the deep-sets layer; `false` uses
    /// the classic h(z_j).
    pub pair_form: bool,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            d_z: 8,
            layers: 3,
            d_h: 32,
            d_r: 32,
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            batch_size: 16,
            d_steps: 2,
            lipschitz: Lipschitz::GradientPenalty(10.0),
            tau_start: 1.0,
            tau_end: 0.3,
            tau_decay: 5e-4,
            max_steps: 1000,
            seed: 0,
            critic_input: CriticInput::StraightThrough,
            shared_z: false,
            pair_form: true,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} must be positive")]
    NonPositive { field: &'static str },
    #[error("temperature end {end} exceeds start {start}")]
    TemperatureOrder { start: f64, end: f64 },
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = [
            ("d_z", self.d_z),
            ("layers", self.layers),
            ("d_h", self.d_h),
            ("d_r", self.d_r),
            ("batch_size", self.batch_size),
            ("d_steps", self.d_steps),
            ("max_steps", self.max_steps),
        ];
        for (field, v) in pos {
            if v == 0 && field != "layers" {
                return Err(ConfigError::NonPositive { field });
            }
        }
        if self.learning_rate <= 0.0 {
            return Err(ConfigError::NonPositive {
                field: "learning_rate",
            });
        }
        if self.tau_start <= 0.0 || self.tau_end <= 0.0 {
            return Err(ConfigError::NonPositive { field: "tau" });
        }
        if self.tau_end > self.tau_start {
            return Err(ConfigError::TemperatureOrder {
                start: self.tau_start,
                end: self.tau_end,
            });
        }
        Ok(())
    }

    /// Exponential anneal from `tau_start` to `tau_end`.
    pub fn temperature(&self, step: usize) -> f64 {
        self.tau_end + (self.tau_start - self.tau_end) * (-self.tau_decay * step as f64).exp()
    }

    /// Canonical flat `key = value` rendering; also the digest input for
    /// checkpoints.
    pub fn dump(&self) -> String {
        let lip = match self.lipschitz {
            Lipschitz::GradientPenalty(c) => format!("lipschitz = gp\nlipschitz_coef = {c}"),
            Lipschitz::WeightClip(c) => format!("lipschitz = clip\nlipschitz_coef = {c}"),
        };
        let critic = match self.critic_input {
            CriticInput::Soft => "soft",
            CriticInput::StraightThrough => "straight_through",
        };
        format!(
            "d_z = {}\nlayers = {}\nd_h = {}\nd_r = {}\nlearning_rate = {}\nbeta1 = {}\nbeta2 = {}\nbatch_size = {}\nd_steps = {}\n{}\ntau_start = {}\ntau_end = {}\ntau_decay = {}\nmax_steps = {}\nseed = {}\ncritic_input = {}\nshared_z = {}\npair_form = {}\n",
            self.d_z,
            self.layers,
            self.d_h,
            self.d_r,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.batch_size,
            self.d_steps,
            lip,
            self.tau_start,
            self.tau_end,
            self.tau_decay,
            self.max_steps,
            self.seed,
            critic,
            self.shared_z,
            self.pair_form,
        )
    }
}

/// Weight collections for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub stage: StageId,
    pub generator: ParamSet,
    pub discriminator: ParamSet,
}

/// Per-stage generator invocation counters; instrumentation for the
/// teacher-forcing isolation check. Thread-local because training is
/// single-threaded: each run observes only its own calls.
pub mod counters {
    use super::StageId;
    use std::cell::Cell;

    thread_local! {
        static GEN_CALLS: [Cell<u64>; 3] = const { [Cell::new(0), Cell::new(0), Cell::new(0)] };
    }

    pub(crate) fn record_generator_call(stage: StageId) {
        GEN_CALLS.with(|c| {
            let cell = &c[stage.code() as usize - 1];
            cell.set(cell.get() + 1);
        });
    }

    pub fn generator_calls(stage: StageId) -> u64 {
        GEN_CALLS.with(|c| c[stage.code() as usize - 1].get())
    }

    pub fn reset() {
        GEN_CALLS.with(|c| {
            for cell in c {
                cell.set(0);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temperature_schedule_monotone_and_bounded() {
        let cfg = StageConfig::default();
        let mut prev = cfg.temperature(0);
        assert!((prev - cfg.tau_start).abs() < 1e-12);
        for step in [10, 100, 1000, 100_000] {
            let t = cfg.temperature(step);
            assert!(t <= prev + 1e-15);
            assert!(t >= cfg.tau_end - 1e-15);
            prev = t;
        }
    }

    #[test]
    fn config_validation_catches_bad_temperature() {
        let cfg = StageConfig {
            tau_start: 0.2,
            tau_end: 0.5,
            ..StageConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::TemperatureOrder { .. })
        ));
        assert!(StageConfig::default().validate().is_ok());
    }
}
