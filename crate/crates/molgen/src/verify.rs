//! Executable checks of the equivariance properties.
//!
//! Three checks: equivariance of set-to-set maps under sampled
//! permutations, ordering-invariance of the deep-sets row decomposition,
//! and the equiprobability consequence: an equivariant generator fed iid
//! latents must put equal probability on every labeling of an isomorphism
//! class, tested with a chi-square statistic over generated samples.

use std::collections::BTreeMap;

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::chem::canon::canonical_certificate;
use crate::graph::{AtomDescriptor, BondKind, Element, MolecularGraph, Permutation};

/// Values that permutations act on.
pub trait PermAct: Clone {
    fn size(&self) -> usize;
    fn permute(&self, p: &Permutation) -> Self;
    fn max_abs_diff(&self, other: &Self) -> f64;
}

/// An n×d matrix under the row action.
#[derive(Debug, Clone)]
pub struct RowSet {
    pub n: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl PermAct for RowSet {
    fn size(&self) -> usize {
        self.n
    }

    fn permute(&self, p: &Permutation) -> Self {
        RowSet {
            n: self.n,
            d: self.d,
            values: p.permute_rows(&self.values, self.d),
        }
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// An n²×k pair tensor under the conjugation action.
#[derive(Debug, Clone)]
pub struct PairGrid {
    pub n: usize,
    pub k: usize,
    pub values: Vec<f64>,
}

impl PermAct for PairGrid {
    fn size(&self) -> usize {
        self.n
    }

    fn permute(&self, p: &Permutation) -> Self {
        PairGrid {
            n: self.n,
            k: self.k,
            values: p.permute_pair_rows(&self.values, self.k),
        }
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl<A: PermAct, B: PermAct> PermAct for (A, B) {
    fn size(&self) -> usize {
        self.0.size()
    }

    fn permute(&self, p: &Permutation) -> Self {
        (self.0.permute(p), self.1.permute(p))
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0.max_abs_diff(&other.0).max(self.1.max_abs_diff(&other.1))
    }
}

#[derive(Debug)]
pub struct EquivarianceReport {
    pub max_deviation: f64,
    pub worst: Permutation,
    pub trials: usize,
}

/// Samples random permutations and reports the worst
/// `‖f(input^π) − f(input)^π‖∞`.
pub fn check_equivariance<I: PermAct, O: PermAct>(
    f: impl Fn(&I) -> O,
    input: &I,
    trials: usize,
    rng: &mut impl Rng,
) -> EquivarianceReport {
    let base = f(input);
    let mut worst = Permutation::identity(input.size());
    let mut max_deviation = 0.0f64;
    for _ in 0..trials {
        let p = Permutation::random(input.size(), rng);
        let out = f(&input.permute(&p));
        let dev = out.max_abs_diff(&base.permute(&p));
        if dev > max_deviation {
            max_deviation = dev;
            worst = p;
        }
    }
    EquivarianceReport {
        max_deviation,
        worst,
        trials,
    }
}

/// Shuffles the ordering of the context rows `z_rest` and reports the worst
/// output deviation of `f_row(z_i, Z_{−i})` across orderings.
pub fn check_decomposition_invariance(
    f_row: impl Fn(&[f64], &[Vec<f64>]) -> Vec<f64>,
    z_i: &[f64],
    z_rest: &[Vec<f64>],
    trials: usize,
    rng: &mut impl Rng,
) -> f64 {
    let base = f_row(z_i, z_rest);
    let mut max_dev = 0.0f64;
    let mut order: Vec<usize> = (0..z_rest.len()).collect();
    for _ in 0..trials {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| z_rest[i].clone()).collect();
        let out = f_row(z_i, &shuffled);
        let dev = out
            .iter()
            .zip(base.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        max_dev = max_dev.max(dev);
    }
    max_dev
}

#[derive(Debug, Error, PartialEq)]
pub enum EquiprobError {
    #[error("all {0} isomorphism classes fell below the expected-count floor")]
    TooFewSamples(usize),
}

/// Per-class tallies of the equiprobability test.
#[derive(Debug)]
pub struct ClassTally {
    /// Distinct labelings of the class (n!/|Aut|).
    pub labelings: usize,
    pub observed_total: u64,
    pub included: bool,
}

#[derive(Debug)]
pub struct EquiprobReport {
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub classes: Vec<ClassTally>,
    pub excluded_classes: usize,
    pub samples: usize,
}

/// Wraps a bare skeleton as an attributed graph (uniform carbon nodes,
/// single bonds) so certificates and labelings apply.
pub fn skeleton_graph(n: usize, a: &[u8]) -> MolecularGraph {
    let c = AtomDescriptor::new(Element::C, 0, 0).unwrap();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if a[i * n + j] == 1 {
                edges.push((i, j, BondKind::Single));
            }
        }
    }
    MolecularGraph::from_edges(vec![c; n], &edges).expect("skeleton encoding")
}

/// Chi-square test of labeling uniformity within isomorphism classes.
///
/// `generator` maps an iid standard-normal latent set (row-major n×d_z) to
/// a labeled graph. Classes whose expected per-labeling count falls below 5
/// are excluded and reported. A high p-value is consistent with
/// equiprobability of labelings.
pub fn equiprobability_test(
    mut generator: impl FnMut(&[f64]) -> MolecularGraph,
    n: usize,
    d_z: usize,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<EquiprobReport, EquiprobError> {
    use rand_distr::StandardNormal;
    assert!(n <= 5, "labelings are enumerated exhaustively; keep n small");

    // labeled serialization -> count, plus one representative per class.
    let mut counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    let mut class_of: BTreeMap<Vec<u8>, Vec<u8>> = BTreeMap::new();
    let mut representative: BTreeMap<Vec<u8>, MolecularGraph> = BTreeMap::new();

    for _ in 0..samples {
        let z: Vec<f64> = (0..n * d_z).map(|_| rng.sample(StandardNormal)).collect();
        let g = generator(&z);
        let labeled = g.labeled_bytes();
        *counts.entry(labeled.clone()).or_insert(0) += 1;
        if let std::collections::btree_map::Entry::Vacant(slot) = class_of.entry(labeled) {
            let cert = canonical_certificate(&g).bytes().to_vec();
            slot.insert(cert.clone());
            representative.entry(cert).or_insert(g);
        }
    }

    // Group observed labelings by class.
    let mut by_class: BTreeMap<Vec<u8>, BTreeMap<Vec<u8>, u64>> = BTreeMap::new();
    for (labeled, count) in &counts {
        by_class
            .entry(class_of[labeled].clone())
            .or_default()
            .insert(labeled.clone(), *count);
    }

    let mut chi_square = 0.0f64;
    let mut dof = 0usize;
    let mut classes = Vec::new();
    let mut excluded = 0usize;

    for (cert, observed) in &by_class {
        // All distinct labelings of this class, via every relabeling of the
        // representative.
        let rep = &representative[cert];
        let mut labelings: std::collections::BTreeSet<Vec<u8>> = Default::default();
        for p in Permutation::all(n) {
            labelings.insert(rep.apply_permutation(&p).unwrap().labeled_bytes());
        }
        let l = labelings.len();
        let total: u64 = observed.values().sum();
        let expected = total as f64 / l as f64;
        let included = expected >= 5.0 && l > 1;
        if !included {
            if expected < 5.0 {
                excluded += 1;
            }
            classes.push(ClassTally {
                labelings: l,
                observed_total: total,
                included: false,
            });
            continue;
        }
        for labeled in &labelings {
            let obs = observed.get(labeled).copied().unwrap_or(0) as f64;
            chi_square += (obs - expected) * (obs - expected) / expected;
        }
        dof += l - 1;
        classes.push(ClassTally {
            labelings: l,
            observed_total: total,
            included: true,
        });
    }

    // No testable class left and at least one was excluded for sample
    // starvation: the test cannot say anything. Singleton-labeling classes
    // alone (dof 0, nothing excluded) pass trivially instead.
    if dof == 0 && excluded > 0 {
        return Err(EquiprobError::TooFewSamples(excluded));
    }

    let p_value = if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).expect("dof > 0");
        1.0 - dist.cdf(chi_square)
    };
    Ok(EquiprobReport {
        chi_square,
        degrees_of_freedom: dof,
        p_value,
        classes,
        excluded_classes: excluded,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{deepsets_pair_layer, DeepSetsSpec, MountedParams, ParamSet};
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_map_has_zero_deviation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = RowSet {
            n: 5,
            d: 3,
            values: (0..15).map(|i| i as f64).collect(),
        };
        let rep = check_equivariance(|z: &RowSet| z.clone(), &input, 20, &mut rng);
        assert_eq!(rep.max_deviation, 0.0);
    }

    #[test]
    fn deepsets_layer_is_equivariant_to_1e9() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = DeepSetsSpec::new("ds", 3, &[6, 6], &[4], true);
        let mut ps = ParamSet::new();
        spec.init(&mut ps, &mut rng);
        let n = 6;
        let input = RowSet {
            n,
            d: 3,
            values: (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let f = |z: &RowSet| -> RowSet {
            let tape = Tape::new();
            let mounted = MountedParams::mount(&tape, &ps, false);
            let zt = tape.constant([z.n, z.d], z.values.clone());
            let out = deepsets_pair_layer(&zt, &spec, &mounted, 1.0).unwrap();
            RowSet {
                n: z.n,
                d: out.cols(),
                values: out.values(),
            }
        };
        let rep = check_equivariance(f, &input, 50, &mut rng);
        assert!(rep.max_deviation <= 1e-9, "{rep:?}");
    }

    #[test]
    fn positional_ids_break_equivariance() {
        // Concatenating a fixed per-position identification vector to each
        // row before an equivariant trunk makes the map depend on the
        // ordering; any positive deviation confirms non-equivariance.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = DeepSetsSpec::new("ds", 6, &[8], &[4], true);
        let mut ps = ParamSet::new();
        spec.init(&mut ps, &mut rng);
        let n = 5;
        let input = RowSet {
            n,
            d: 3,
            values: (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let f = |z: &RowSet| -> RowSet {
            let tape = Tape::new();
            let mounted = MountedParams::mount(&tape, &ps, false);
            // Fixed ordered identification vectors: row index features.
            let mut vals = Vec::with_capacity(z.n * 6);
            for i in 0..z.n {
                vals.extend_from_slice(&z.values[i * 3..(i + 1) * 3]);
                vals.extend_from_slice(&[i as f64, (i * i) as f64, 1.0]);
            }
            let zt = tape.constant([z.n, 6], vals);
            let out = deepsets_pair_layer(&zt, &spec, &mounted, 1.0).unwrap();
            RowSet {
                n: z.n,
                d: out.cols(),
                values: out.values(),
            }
        };
        let rep = check_equivariance(f, &input, 30, &mut rng);
        assert!(rep.max_deviation > 1e-3, "{rep:?}");
    }

    #[test]
    fn sum_decomposition_is_ordering_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z_i = vec![0.3, -0.8];
        let z_rest: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        // Eq-1 style row: g(z_i, sum_j h(z_i, z_j)) with h = tanh of a dot.
        let f = |z_i: &[f64], rest: &[Vec<f64>]| -> Vec<f64> {
            let mut acc = [0.0f64; 2];
            for z_j in rest {
                let dot = z_i[0] * z_j[0] + z_i[1] * z_j[1];
                acc[0] += dot.tanh();
                acc[1] += (z_j[0] - z_j[1]).tanh();
            }
            vec![z_i[0] + acc[0], z_i[1] * acc[1]]
        };
        let dev = check_decomposition_invariance(f, &z_i, &z_rest, 50, &mut rng);
        assert!(dev <= 1e-9, "{dev}");

        // Empty context: single ordering.
        let dev0 = check_decomposition_invariance(f, &z_i, &[], 10, &mut rng);
        assert_eq!(dev0, 0.0);
    }

    #[test]
    fn recurrent_reader_is_ordering_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z_i = vec![0.5];
        let z_rest: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        // Fold with a non-commutative update.
        let f = |z_i: &[f64], rest: &[Vec<f64>]| -> Vec<f64> {
            let mut state = z_i[0];
            for z_j in rest {
                state = (state * 1.3 + z_j[0]).tanh();
            }
            vec![state]
        };
        let dev = check_decomposition_invariance(f, &z_i, &z_rest, 50, &mut rng);
        assert!(dev > 1e-6, "{dev}");
    }

    #[test]
    fn fixed_asymmetric_output_rejects() {
        // A generator that ignores Z and emits one fixed labeling of a
        // path: all mass on one labeling of a 3-labeling class.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let path = skeleton_graph(3, &{
            let mut a = vec![0u8; 9];
            a[1] = 1;
            a[3] = 1;
            a[5] = 1;
            a[7] = 1;
            a
        });
        let rep = equiprobability_test(|_z| path.clone(), 3, 2, 3000, &mut rng).unwrap();
        assert!(rep.p_value < 1e-6, "{rep:?}");
    }

    #[test]
    fn single_node_passes_trivially() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rep = equiprobability_test(
            |_z| skeleton_graph(1, &[0]),
            1,
            2,
            100,
            &mut rng,
        )
        .unwrap();
        assert_eq!(rep.degrees_of_freedom, 0);
        assert_eq!(rep.p_value, 1.0);
    }

    #[test]
    fn fair_labeled_coin_passes() {
        // Uniform over the three labelings of a single-edge class: the
        // statistic should be comfortably unrejected.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mk = |i: usize, j: usize| {
            let mut a = vec![0u8; 9];
            a[i * 3 + j] = 1;
            a[j * 3 + i] = 1;
            skeleton_graph(3, &a)
        };
        let variants = [mk(0, 1), mk(0, 2), mk(1, 2)];
        let mut k = 0usize;
        let rep = equiprobability_test(
            move |_z| {
                k += 1;
                variants[k % 3].clone()
            },
            3,
            2,
            3000,
            &mut rng,
        )
        .unwrap();
        assert!(rep.p_value > 0.01, "{rep:?}");
    }
}
