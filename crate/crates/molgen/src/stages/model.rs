//! Generator and discriminator architectures for the three stages.
//!
//! All three share the interaction-layer trunk; the stage-1 generator is
//! the pairwise deep-sets map because no topology exists yet at that point.
//! Generators emit categorical logits; relaxation and discretization happen
//! here so every consumer treats outputs uniformly.

use rand::Rng;

use crate::gnn::{
    deepsets_pairwise_scores, interaction_layer, invariant_readout, LayerSpec,
    LinearSpec, MountedParams, NodeEdgeState, ParamSet,
};
use crate::graph::BOND_TYPES;
use crate::stages::{counters, ModelParams, StageConfig, StageId};
use crate::tensor::{Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

pub const CELU_ALPHA: f64 = 1.0;

/// Architecture description for one stage: every linear map and layer
/// width, fixed by (stage, config, vocab size).
pub struct StageArch {
    pub stage: StageId,
    pub d_z: usize,
    pub d_h: usize,
    pub d_r: usize,
    pub k: usize,
    pub pair_form: bool,
    g_embed_node: Option<LinearSpec>,
    g_embed_edge: Option<LinearSpec>,
    g_layers: Vec<LayerSpec>,
    g_out: Option<LinearSpec>,
    g_deepsets_m: Vec<LinearSpec>,
    g_deepsets_u: Vec<LinearSpec>,
    d_embed_node: LinearSpec,
    d_embed_edge: LinearSpec,
    d_layers: Vec<LayerSpec>,
    d_head: Vec<LinearSpec>,
}

impl StageArch {
    /// `k` is the atom-vocabulary size; unused by stage 1.
    pub fn new(stage: StageId, cfg: &StageConfig, k: usize) -> StageArch {
        let (d_z, d_h, d_r) = (cfg.d_z, cfg.d_h, cfg.d_r);
        let g_layers: Vec<LayerSpec> = match stage {
            StageId::Skeleton => Vec::new(),
            _ => (0..cfg.layers)
                .map(|i| LayerSpec::new(&format!("g.layer{i}"), d_h, d_r))
                .collect(),
        };
        let d_layers: Vec<LayerSpec> = (0..cfg.layers)
            .map(|i| LayerSpec::new(&format!("d.layer{i}"), d_h, d_r))
            .collect();

        let (g_embed_node, g_embed_edge, g_out) = match stage {
            StageId::Skeleton => (None, None, None),
            StageId::NodeAttrs => (
                Some(LinearSpec::new("g.embed_node", d_z, d_h)),
                Some(LinearSpec::new("g.embed_edge", 1, d_r)),
                Some(LinearSpec::new("g.out", d_h, k)),
            ),
            StageId::EdgeAttrs => (
                Some(LinearSpec::new("g.embed_node", d_z + k, d_h)),
                Some(LinearSpec::new("g.embed_edge", 1, d_r)),
                Some(LinearSpec::new("g.out", d_r, BOND_TYPES)),
            ),
        };
        let (g_deepsets_m, g_deepsets_u) = match stage {
            StageId::Skeleton => (
                vec![
                    LinearSpec::new("g.pair0", 2 * d_z, d_h),
                    LinearSpec::new("g.pair1", d_h, d_h),
                ],
                vec![LinearSpec::new("g.score", d_h, 1)],
            ),
            _ => (Vec::new(), Vec::new()),
        };

        let d_embed_node = match stage {
            // No attributes exist at stage 1: constant initial features.
            StageId::Skeleton => LinearSpec::new("d.embed_node", 1, d_h),
            _ => LinearSpec::new("d.embed_node", k, d_h),
        };
        let d_embed_edge = match stage {
            StageId::EdgeAttrs => LinearSpec::new("d.embed_edge", BOND_TYPES + 1, d_r),
            _ => LinearSpec::new("d.embed_edge", 1, d_r),
        };
        let d_head = vec![
            LinearSpec::new("d.head0", d_h, d_h),
            LinearSpec::new("d.head1", d_h, 1),
        ];

        StageArch {
            stage,
            d_z,
            d_h,
            d_r,
            k,
            pair_form: cfg.pair_form,
            g_embed_node,
            g_embed_edge,
            g_layers,
            g_out,
            g_deepsets_m,
            g_deepsets_u,
            d_embed_node,
            d_embed_edge,
            d_layers,
            d_head,
        }
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ModelParams {
        let mut generator = ParamSet::new();
        let mut discriminator = ParamSet::new();
        for l in self
            .g_embed_node
            .iter()
            .chain(self.g_embed_edge.iter())
            .chain(self.g_out.iter())
            .chain(self.g_deepsets_m.iter())
            .chain(self.g_deepsets_u.iter())
        {
            l.init(&mut generator, rng);
        }
        for l in &self.g_layers {
            l.init(&mut generator, rng);
        }
        discriminator_specs(self, |l| l.init(&mut discriminator, rng));
        ModelParams {
            stage: self.stage,
            generator,
            discriminator,
        }
    }

    /// Stage-1 generator: symmetric edge probabilities `[n², 1]` with a
    /// zero diagonal.
    pub fn stage1_probs(&self, g: &MountedParams, z: &Tensor) -> Result<Tensor> {
        assert_eq!(self.stage, StageId::Skeleton);
        counters::record_generator_call(StageId::Skeleton);
        let scores = deepsets_pairwise_scores(
            z,
            &self.g_deepsets_m,
            &self.g_deepsets_u,
            g,
            CELU_ALPHA,
        )?;
        let n = z.rows();
        // Mask after the sigmoid too: sigmoid(0) is 1/2, not 0.
        let mut diag_mask = vec![1.0; n * n];
        for i in 0..n {
            diag_mask[i * n + i] = 0.0;
        }
        let mask = z.tape().constant([n * n, 1], diag_mask);
        scores.sigmoid().mul(&mask)
    }

    fn run_trunk(
        &self,
        layers: &[LayerSpec],
        mounted: &MountedParams,
        h0: Tensor,
        r0: Tensor,
        a_col: &Tensor,
        n: usize,
    ) -> Result<NodeEdgeState> {
        let mut state = NodeEdgeState { h: h0, r: r0, n };
        for spec in layers {
            state = interaction_layer(&state, a_col, spec, mounted, CELU_ALPHA)?;
        }
        Ok(state)
    }

    /// Stage-2 generator logits `[n, k]` given latents and the skeleton.
    pub fn stage2_logits(&self, g: &MountedParams, z: &Tensor, a_col: &Tensor) -> Result<Tensor> {
        assert_eq!(self.stage, StageId::NodeAttrs);
        counters::record_generator_call(StageId::NodeAttrs);
        let n = z.rows();
        let h0 = self.g_embed_node.as_ref().unwrap().bind(g).apply(z)?;
        let r0 = self.g_embed_edge.as_ref().unwrap().bind(g).apply(a_col)?;
        let state = self.run_trunk(&self.g_layers, g, h0, r0, a_col, n)?;
        self.g_out.as_ref().unwrap().bind(g).apply(&state.h)
    }

    /// Stage-3 generator logits `[n², 4]`, symmetrized; masking to the
    /// skeleton happens in the relaxation step.
    pub fn stage3_logits(
        &self,
        g: &MountedParams,
        z: &Tensor,
        x: &Tensor,
        a_col: &Tensor,
    ) -> Result<Tensor> {
        assert_eq!(self.stage, StageId::EdgeAttrs);
        counters::record_generator_call(StageId::EdgeAttrs);
        let n = z.rows();
        let zx = z.concat_cols(x)?;
        let h0 = self.g_embed_node.as_ref().unwrap().bind(g).apply(&zx)?;
        let r0 = self.g_embed_edge.as_ref().unwrap().bind(g).apply(a_col)?;
        let state = self.run_trunk(&self.g_layers, g, h0, r0, a_col, n)?;
        let logits = self.g_out.as_ref().unwrap().bind(g).apply(&state.r)?;
        let flipped = logits.gather_rows(&crate::gnn::pair_transpose_index(n))?;
        Ok(logits.add(&flipped)?.scale(0.5))
    }

    /// Critic score for one graph.
    pub fn disc_forward(&self, d: &MountedParams, input: &DiscInput) -> Result<Tensor> {
        let head: Vec<_> = self.d_head.iter().map(|l| l.bind(d)).collect();
        let (h0, r0, a_col, n) = match (self.stage, input) {
            (StageId::Skeleton, DiscInput::Skeleton { a, n }) => {
                let ones = a.tape().constant([*n, 1], vec![1.0; *n]);
                let h0 = self.d_embed_node.bind(d).apply(&ones)?;
                let r0 = self.d_embed_edge.bind(d).apply(a)?;
                (h0, r0, (*a).clone(), *n)
            }
            (StageId::NodeAttrs, DiscInput::NodeAttrs { x, a }) => {
                let h0 = self.d_embed_node.bind(d).apply(x)?;
                let r0 = self.d_embed_edge.bind(d).apply(a)?;
                (h0, r0, (*a).clone(), x.rows())
            }
            (StageId::EdgeAttrs, DiscInput::EdgeAttrs { w, x, a }) => {
                let h0 = self.d_embed_node.bind(d).apply(x)?;
                let wa = w.concat_cols(a)?;
                let r0 = self.d_embed_edge.bind(d).apply(&wa)?;
                (h0, r0, (*a).clone(), x.rows())
            }
            _ => panic!("discriminator input does not match stage {}", self.stage),
        };
        let state = self.run_trunk(&self.d_layers, d, h0, r0, &a_col, n)?;
        invariant_readout(&state.h, &head, CELU_ALPHA)
    }
}

fn discriminator_specs(arch: &StageArch, mut f: impl FnMut(&LinearSpec)) {
    f(&arch.d_embed_node);
    f(&arch.d_embed_edge);
    for l in &arch.d_layers {
        f(&l.f_rp);
        f(&l.f_r);
        f(&l.f_h);
    }
    for l in &arch.d_head {
        f(l);
    }
}

/// Conditioning plus sample seen by a critic.
pub enum DiscInput<'a> {
    Skeleton { a: &'a Tensor, n: usize },
    NodeAttrs { x: &'a Tensor, a: &'a Tensor },
    EdgeAttrs { w: &'a Tensor, x: &'a Tensor, a: &'a Tensor },
}

/// Softmax relaxation of logits at temperature `tau`, rows as categories.
pub fn relax_rows(logits: &Tensor, tau: f64) -> Tensor {
    logits.scale(1.0 / tau).softmax_cols()
}

/// Row-wise argmax one-hot of a probability matrix (host side). Ties pick
/// the lowest index, so bit-identical inputs discretize identically.
pub fn argmax_onehot(probs: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = &probs[i * cols..(i + 1) * cols];
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        out[i * cols + best] = 1.0;
    }
    out
}

/// Row-wise categorical sample from a probability matrix (host side).
pub fn categorical_onehot(
    probs: &[f64],
    rows: usize,
    cols: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = &probs[i * cols..(i + 1) * cols];
        let total: f64 = row.iter().sum();
        let mut u = rng.gen_range(0.0..1.0) * total;
        let mut pick = cols - 1;
        for (c, &v) in row.iter().enumerate() {
            if u < v {
                pick = c;
                break;
            }
            u -= v;
        }
        out[i * cols + pick] = 1.0;
    }
    out
}

/// Straight-through output: forward equals `hard`, backward follows `soft`.
pub fn straight_through(soft: &Tensor, hard: Vec<f64>) -> Result<Tensor> {
    let h = soft.tape().constant(soft.shape(), hard);
    h.add(&soft.sub(&soft.detach())?)
}

/// Symmetric binary skeleton from stage-1 probabilities by thresholding at
/// 1/2 (host side).
pub fn threshold_skeleton(probs: &[f64], n: usize) -> Vec<u8> {
    let mut a = vec![0u8; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && probs[i * n + j] >= 0.5 {
                a[i * n + j] = 1;
            }
        }
    }
    a
}
