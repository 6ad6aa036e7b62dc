//! Wasserstein objectives for the three stages.
//!
//! Per stage the min-max value is E[-d(real)] + E[d(fake)], with
//! conditioning drawn from data. The critic maximizes it (minus the
//! Lipschitz penalty when enabled); the generator minimizes E[d(fake)].

use thiserror::Error;

use crate::stages::model::{DiscInput, StageArch};
use crate::stages::StageId;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One real/fake pairing with its teacher-forced conditioning. All tensors
/// live on the same tape as the mounted critic parameters.
pub struct LossSample {
    pub n: usize,
    /// Real modality for this stage: A probabilities, X one-hot, or W one-hot.
    pub real: Tensor,
    /// Generated counterpart (relaxed or straight-through).
    pub fake: Tensor,
    /// Skeleton conditioning (stages 2 and 3).
    pub cond_a: Option<Tensor>,
    /// Node-attribute conditioning (stage 3 only).
    pub cond_x: Option<Tensor>,
    /// Interpolation coefficient for the gradient penalty, drawn uniform
    /// per sample by the caller.
    pub eps: f64,
}

fn disc_input<'a>(stage: StageId, modality: &'a Tensor, s: &'a LossSample) -> DiscInput<'a> {
    match stage {
        StageId::Skeleton => DiscInput::Skeleton {
            a: modality,
            n: s.n,
        },
        StageId::NodeAttrs => DiscInput::NodeAttrs {
            x: modality,
            a: s.cond_a.as_ref().expect("stage 2 needs A"),
        },
        StageId::EdgeAttrs => DiscInput::EdgeAttrs {
            w: modality,
            x: s.cond_x.as_ref().expect("stage 3 needs X"),
            a: s.cond_a.as_ref().expect("stage 3 needs A"),
        },
    }
}

/// Value of one stage's objective on a batch.
pub struct StageLoss {
    /// Critic objective to maximize: V − λ·penalty.
    pub d_objective: Tensor,
    /// Generator objective to minimize: E[d(fake)].
    pub g_objective: Tensor,
    /// V = E[d(fake)] − E[d(real)], the Wasserstein estimate.
    pub wasserstein: f64,
    /// Mean penalty term (0 when disabled).
    pub penalty: f64,
}

/// Builds the stage objective on the samples' tape. The critic parameters
/// are whatever `d` was mounted with (trainable for critic steps, constant
/// for generator steps). `penalty_coef` enables the gradient penalty;
/// generator steps pass `None` since the penalty never touches g.
pub fn wgan_stage_loss(
    arch: &StageArch,
    d: &crate::gnn::MountedParams,
    samples: &[LossSample],
    penalty_coef: Option<f64>,
) -> Result<StageLoss, LossError> {
    if samples.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let tape = samples[0].real.tape();
    let inv = 1.0 / samples.len() as f64;

    let mut v_acc: Option<Tensor> = None;
    let mut g_acc: Option<Tensor> = None;
    let mut gp_acc: Option<Tensor> = None;

    for s in samples {
        let d_real = arch.disc_forward(d, &disc_input(arch.stage, &s.real, s))?;
        let d_fake = arch.disc_forward(d, &disc_input(arch.stage, &s.fake, s))?;
        let v = d_fake.sub(&d_real)?;
        v_acc = Some(match v_acc {
            None => v,
            Some(prev) => prev.add(&v)?,
        });
        g_acc = Some(match g_acc {
            None => d_fake.clone(),
            Some(prev) => prev.add(&d_fake)?,
        });

        if penalty_coef.is_some() {
            // Interpolate between real and the (detached) fake, then
            // penalize the critic's gradient norm at the interpolate.
            let interp = s
                .real
                .scale(s.eps)
                .add(&s.fake.detach().scale(1.0 - s.eps))?;
            let d_interp = arch.disc_forward(d, &disc_input(arch.stage, &interp, s))?;
            let grad = d_interp.grad_tensors(&[&interp])?.remove(0);
            let norm = grad.mul(&grad)?.sum_all().add_scalar(1e-12).sqrt();
            let gp = norm.add_scalar(-1.0);
            let gp = gp.mul(&gp)?;
            gp_acc = Some(match gp_acc {
                None => gp,
                Some(prev) => prev.add(&gp)?,
            });
        }
    }

    let v_mean = v_acc.unwrap().scale(inv);
    let g_objective = g_acc.unwrap().scale(inv);
    let wasserstein = v_mean.scalar_value();

    let (d_objective, penalty) = match (penalty_coef, gp_acc) {
        (Some(coef), Some(gp)) => {
            let gp_mean = gp.scale(inv);
            let p = gp_mean.scalar_value();
            (v_mean.sub(&gp_mean.scale(coef))?, p)
        }
        _ => (v_mean, 0.0),
    };

    let _ = tape;
    Ok(StageLoss {
        d_objective,
        g_objective,
        wasserstein,
        penalty,
    })
}
