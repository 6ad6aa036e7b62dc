//! Permutation-equivariant building blocks.
//!
//! Two layer families: an interaction-network layer that updates node and
//! edge embeddings jointly, and the pairwise deep-sets layer
//! `out_i = g(z_i, Σ_{j≠i} h(z_i, z_j))` that defines equivariance by
//! construction. Aggregations are plain sums over ascending indices, so a
//! permuted input differs from a permuted output only by reassociation
//! error.
//!
//! Edge tensors live as `[n², k]` matrices with pair (i, j) at row i·n+j.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Tape, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Host-side tensor: shape plus values, no tape attached.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainTensor {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl PlainTensor {
    pub fn zeros(shape: [usize; 2]) -> Self {
        PlainTensor {
            shape,
            values: vec![0.0; shape[0] * shape[1]],
        }
    }
}

/// Named parameter collection; iteration order is the name order, which
/// keeps checkpoints and optimizer state deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, PlainTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: PlainTensor) {
        assert!(
            self.map.insert(name.to_string(), t).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> &PlainTensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut PlainTensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &PlainTensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut PlainTensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.map.values().map(|t| t.values.len()).sum()
    }
}

/// Tape-side view of a ParamSet. `trainable` mounts leaves (gradients
/// accumulate); otherwise constants.
pub struct MountedParams {
    map: BTreeMap<String, Tensor>,
}

impl MountedParams {
    pub fn from_map(map: BTreeMap<String, Tensor>) -> Self {
        MountedParams { map }
    }

    pub fn mount(tape: &Tape, params: &ParamSet, trainable: bool) -> Self {
        let mut map = BTreeMap::new();
        for (name, t) in params.iter() {
            let tensor = if trainable {
                tape.leaf(t.shape, t.values.clone())
            } else {
                tape.constant(t.shape, t.values.clone())
            };
            map.insert(name.clone(), tensor);
        }
        MountedParams { map }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not mounted"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    /// Copies gradients back into a host-side gradient map after backward.
    pub fn collect_grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.map
            .iter()
            .filter_map(|(k, t)| t.grad().map(|g| (k.clone(), g)))
            .collect()
    }
}

/// One linear map `x ↦ x W + b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearSpec {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl LinearSpec {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        LinearSpec {
            name: name.into(),
            d_in,
            d_out,
        }
    }

    /// Xavier-normal weights, zero bias.
    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        let std = (2.0 / (self.d_in + self.d_out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std > 0");
        let w: Vec<f64> = (0..self.d_in * self.d_out)
            .map(|_| normal.sample(rng))
            .collect();
        params.insert(
            &format!("{}.w", self.name),
            PlainTensor {
                shape: [self.d_in, self.d_out],
                values: w,
            },
        );
        params.insert(
            &format!("{}.b", self.name),
            PlainTensor::zeros([1, self.d_out]),
        );
    }

    pub fn bind<'a>(&self, mounted: &'a MountedParams) -> LinearRef<'a> {
        LinearRef {
            w: mounted.get(&format!("{}.w", self.name)),
            b: mounted.get(&format!("{}.b", self.name)),
        }
    }
}

/// Mounted linear layer.
#[derive(Clone, Copy)]
pub struct LinearRef<'a> {
    pub w: &'a Tensor,
    pub b: &'a Tensor,
}

impl LinearRef<'_> {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(self.w)?.add_bias(self.b)
    }
}

/// Linear chain with celu between layers (not after the last), so a
/// single-layer net is purely linear.
pub fn apply_mlp(x: &Tensor, layers: &[LinearRef], alpha: f64) -> Result<Tensor> {
    let mut cur = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        cur = layer.apply(&cur)?;
        if i + 1 < layers.len() {
            cur = cur.celu(alpha);
        }
    }
    Ok(cur)
}

/// Row index of node i for every pair row (i, j).
pub fn pair_index_i(n: usize) -> Vec<usize> {
    (0..n * n).map(|p| p / n).collect()
}

/// Row index of node j for every pair row (i, j).
pub fn pair_index_j(n: usize) -> Vec<usize> {
    (0..n * n).map(|p| p % n).collect()
}

/// Pair-row permutation that swaps (i, j) to (j, i).
pub fn pair_transpose_index(n: usize) -> Vec<usize> {
    (0..n * n).map(|p| (p % n) * n + p / n).collect()
}

/// Constant selector `[n, n²]` summing each node's pair rows: out_i = Σ_j x_{ij}.
pub fn row_sum_selector(tape: &Tape, n: usize) -> Tensor {
    let mut v = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * (n * n) + i * n + j] = 1.0;
        }
    }
    tape.constant([n, n * n], v)
}

/// Same as [`row_sum_selector`] but skipping the diagonal: out_i = Σ_{j≠i} x_{ij}.
pub fn offdiag_sum_selector(tape: &Tape, n: usize) -> Tensor {
    let mut v = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                v[i * (n * n) + i * n + j] = 1.0;
            }
        }
    }
    tape.constant([n, n * n], v)
}

/// Widths and names of one interaction layer; the chain condition is the
/// type invariant.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub f_rp: LinearSpec,
    pub f_r: LinearSpec,
    pub f_h: LinearSpec,
    pub d_h: usize,
    pub d_r: usize,
}

impl LayerSpec {
    pub fn new(prefix: &str, d_h: usize, d_r: usize) -> Self {
        let d_rp = d_r;
        LayerSpec {
            f_rp: LinearSpec::new(format!("{prefix}.f_rp"), 2 * d_h, d_rp),
            f_r: LinearSpec::new(format!("{prefix}.f_r"), d_r + d_rp, d_r),
            f_h: LinearSpec::new(format!("{prefix}.f_h"), d_h + d_r, d_h),
            d_h,
            d_r,
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        self.f_rp.init(params, rng);
        self.f_r.init(params, rng);
        self.f_h.init(params, rng);
    }
}

/// Node and edge embeddings for one graph.
pub struct NodeEdgeState {
    /// `[n, d_h]`
    pub h: Tensor,
    /// `[n², d_r]`
    pub r: Tensor,
    pub n: usize,
}

/// One interaction layer: pair update from endpoint embeddings
/// (symmetrized over edge direction), edge update from the previous edge
/// state, then node update from the masked neighbor sum with a celu.
///
/// `a_col` is the flattened adjacency `[n², 1]`; it may be a constant (hard
/// skeleton) or a tensor (relaxed skeleton), and weights the neighbor sum
/// either way.
pub fn interaction_layer(
    state: &NodeEdgeState,
    a_col: &Tensor,
    spec: &LayerSpec,
    mounted: &MountedParams,
    alpha: f64,
) -> Result<NodeEdgeState> {
    let n = state.n;
    let f_rp = spec.f_rp.bind(mounted);
    let f_r = spec.f_r.bind(mounted);
    let f_h = spec.f_h.bind(mounted);

    let hi = state.h.gather_rows(&pair_index_i(n))?;
    let hj = state.h.gather_rows(&pair_index_j(n))?;
    let rp = f_rp.apply(&hi.concat_cols(&hj)?)?;
    // The concat [h_i, h_j] is direction-dependent; averaging both orders
    // keeps edge embeddings well-defined on undirected graphs.
    let rp_sym = rp
        .add(&rp.gather_rows(&pair_transpose_index(n))?)?
        .scale(0.5);
    let r_new = f_r.apply(&state.r.concat_cols(&rp_sym)?)?;

    let mask = a_col.expand_cols(spec.d_r)?;
    let masked = r_new.mul(&mask)?;
    let agg = row_sum_selector(&tape_of(&state.h), n).matmul(&masked)?;
    let h_new = f_h.apply(&state.h.concat_cols(&agg)?)?.celu(alpha);

    Ok(NodeEdgeState {
        h: h_new,
        r: r_new,
        n,
    })
}

fn tape_of(t: &Tensor) -> Tape {
    t.tape()
}

/// Architecture of the pairwise deep-sets layer.
#[derive(Debug, Clone)]
pub struct DeepSetsSpec {
    pub h_net: Vec<LinearSpec>,
    pub g_net: Vec<LinearSpec>,
    /// Literal pair form h(z_i, z_j); `false` gives the classic h(z_j).
    pub pair_form: bool,
}

impl DeepSetsSpec {
    /// `widths_h` chains from the pair input to the aggregated message
    /// width; `widths_g` from `d_z + message` to the output width.
    pub fn new(prefix: &str, d_z: usize, widths_h: &[usize], widths_g: &[usize], pair_form: bool) -> Self {
        let h_in = if pair_form { 2 * d_z } else { d_z };
        let mut h_net = Vec::new();
        let mut cur = h_in;
        for (i, &w) in widths_h.iter().enumerate() {
            h_net.push(LinearSpec::new(format!("{prefix}.h{i}"), cur, w));
            cur = w;
        }
        let msg = cur;
        let mut g_net = Vec::new();
        cur = d_z + msg;
        for (i, &w) in widths_g.iter().enumerate() {
            g_net.push(LinearSpec::new(format!("{prefix}.g{i}"), cur, w));
            cur = w;
        }
        DeepSetsSpec {
            h_net,
            g_net,
            pair_form,
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        for l in self.h_net.iter().chain(self.g_net.iter()) {
            l.init(params, rng);
        }
    }
}

/// `out_i = g(z_i, Σ_{j≠i} h(z_i, z_j))` over the rows of `z`.
pub fn deepsets_pair_layer(
    z: &Tensor,
    spec: &DeepSetsSpec,
    mounted: &MountedParams,
    alpha: f64,
) -> Result<Tensor> {
    let n = z.rows();
    let h_layers: Vec<LinearRef> = spec.h_net.iter().map(|l| l.bind(mounted)).collect();
    let g_layers: Vec<LinearRef> = spec.g_net.iter().map(|l| l.bind(mounted)).collect();

    let zj = z.gather_rows(&pair_index_j(n))?;
    let pair_in = if spec.pair_form {
        z.gather_rows(&pair_index_i(n))?.concat_cols(&zj)?
    } else {
        zj
    };
    let msgs = apply_mlp(&pair_in, &h_layers, alpha)?;
    let agg = offdiag_sum_selector(&z.tape(), n).matmul(&msgs)?;
    apply_mlp(&z.concat_cols(&agg)?, &g_layers, alpha)
}

/// Pairwise variant for skeleton logits:
/// `s_ij = u(m(z_i, z_j) + m(z_j, z_i))`, returned as `[n², 1]` with a
/// zeroed diagonal. Symmetric bit-exactly because f64 addition commutes.
pub fn deepsets_pairwise_scores(
    z: &Tensor,
    m_net: &[LinearSpec],
    u_net: &[LinearSpec],
    mounted: &MountedParams,
    alpha: f64,
) -> Result<Tensor> {
    let n = z.rows();
    let m_layers: Vec<LinearRef> = m_net.iter().map(|l| l.bind(mounted)).collect();
    let u_layers: Vec<LinearRef> = u_net.iter().map(|l| l.bind(mounted)).collect();

    let zi = z.gather_rows(&pair_index_i(n))?;
    let zj = z.gather_rows(&pair_index_j(n))?;
    let m = apply_mlp(&zi.concat_cols(&zj)?, &m_layers, alpha)?;
    let sym = m.add(&m.gather_rows(&pair_transpose_index(n))?)?;
    let s = apply_mlp(&sym, &u_layers, alpha)?;
    // Zero the diagonal: no self loops.
    let mut diag_mask = vec![1.0; n * n];
    for i in 0..n {
        diag_mask[i * n + i] = 0.0;
    }
    let mask = z.tape().constant([n * n, 1], diag_mask);
    s.mul(&mask.expand_cols(s.cols())?)
}

/// Sum-pool over nodes followed by a feed-forward head; permutation
/// invariant up to reassociation.
pub fn invariant_readout(h: &Tensor, head: &[LinearRef], alpha: f64) -> Result<Tensor> {
    let pooled = h.sum_rows();
    apply_mlp(&pooled, head, alpha)
}
