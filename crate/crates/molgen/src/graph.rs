//! Attributed molecular graphs in the (A, X, W) tensor encoding.
//!
//! `A` is the binary skeleton, `X` holds one-hot node attributes over an
//! [`AtomVocab`], and `W` holds one-hot bond-type vectors on edges (the
//! all-zero vector off edges). Values are immutable after construction and
//! safe to share across threads.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Bond-type channel order of the `W` tensor.
pub const BOND_TYPES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondKind {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondKind {
    pub fn channel(self) -> usize {
        match self {
            BondKind::Single => 0,
            BondKind::Double => 1,
            BondKind::Triple => 2,
            BondKind::Aromatic => 3,
        }
    }

    pub fn from_channel(c: usize) -> Option<BondKind> {
        match c {
            0 => Some(BondKind::Single),
            1 => Some(BondKind::Double),
            2 => Some(BondKind::Triple),
            3 => Some(BondKind::Aromatic),
            _ => None,
        }
    }

    /// Bond order in half units: single=2, double=4, triple=6, aromatic=3.
    /// Integer arithmetic keeps valence sums exact.
    pub fn half_order(self) -> u32 {
        match self {
            BondKind::Single => 2,
            BondKind::Double => 4,
            BondKind::Triple => 6,
            BondKind::Aromatic => 3,
        }
    }
}

/// A node attribute: element, formal charge, and explicit hydrogen count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomDescriptor {
    pub element: Element,
    pub formal_charge: i8,
    pub explicit_h: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    C,
    N,
    O,
    F,
}

impl Element {
    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        match s {
            "C" => Some(Element::C),
            "N" => Some(Element::N),
            "O" => Some(Element::O),
            "F" => Some(Element::F),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Element::C => 0,
            Element::N => 1,
            Element::O => 2,
            Element::F => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Element> {
        match c {
            0 => Some(Element::C),
            1 => Some(Element::N),
            2 => Some(Element::O),
            3 => Some(Element::F),
            _ => None,
        }
    }
}

impl AtomDescriptor {
    pub fn new(element: Element, formal_charge: i8, explicit_h: u8) -> Result<Self, GraphError> {
        if !(-2..=2).contains(&formal_charge) {
            return Err(GraphError::BadDescriptor {
                what: "formal_charge outside [-2, 2]",
            });
        }
        if explicit_h > 4 {
            return Err(GraphError::BadDescriptor {
                what: "explicit_h outside [0, 4]",
            });
        }
        Ok(AtomDescriptor {
            element,
            formal_charge,
            explicit_h,
        })
    }
}

impl fmt::Display for AtomDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{:+}H{}",
            self.element.symbol(),
            self.formal_charge,
            self.explicit_h
        )
    }
}

/// Ordered set of distinct descriptors; index positions are stable for the
/// lifetime of the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomVocab {
    entries: Vec<AtomDescriptor>,
    index: BTreeMap<AtomDescriptor, usize>,
}

impl AtomVocab {
    pub fn new(entries: Vec<AtomDescriptor>) -> Result<Self, GraphError> {
        let mut index = BTreeMap::new();
        for (i, d) in entries.iter().enumerate() {
            if index.insert(*d, i).is_some() {
                return Err(GraphError::DuplicateDescriptor(*d));
            }
        }
        Ok(AtomVocab { entries, index })
    }

    /// Builds a vocabulary from all descriptors occurring in a corpus, in
    /// sorted order so the index assignment is reproducible.
    pub fn from_corpus<'a>(graphs: impl IntoIterator<Item = &'a MolecularGraph>) -> Self {
        let mut set: Vec<AtomDescriptor> = graphs
            .into_iter()
            .flat_map(|g| g.descriptors.iter().copied())
            .collect();
        set.sort_unstable();
        set.dedup();
        AtomVocab::new(set).expect("deduped corpus descriptors")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<AtomDescriptor> {
        self.entries.get(i).copied()
    }

    pub fn index_of(&self, d: &AtomDescriptor) -> Option<usize> {
        self.index.get(d).copied()
    }

    pub fn entries(&self) -> &[AtomDescriptor] {
        &self.entries
    }
}

/// The (A, X, W) triple. Node attributes are stored as descriptors; the
/// one-hot `X` matrix against a vocabulary is derived on demand, so a graph
/// is meaningful independent of any particular vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolecularGraph {
    n: usize,
    /// Row-major n×n, entries 0/1.
    adjacency: Vec<u8>,
    descriptors: Vec<AtomDescriptor>,
    /// Row-major n×n bond kinds; `None` off edges.
    bonds: Vec<Option<BondKind>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("A[{i},{j}] != A[{j},{i}]")]
    AsymmetricA { i: usize, j: usize },
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("row {0} of X is not one-hot")]
    NonOneHotRow(usize),
    #[error("edge attribute mismatch at ({i},{j}): W one-hot iff A=1")]
    EdgeAttrMismatch { i: usize, j: usize },
    #[error("W[{i},{j}] != W[{j},{i}]")]
    AsymmetricW { i: usize, j: usize },
    #[error("permutation size {perm} does not match graph size {graph}")]
    SizeMismatch { perm: usize, graph: usize },
    #[error("node index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("invalid descriptor: {what}")]
    BadDescriptor { what: &'static str },
    #[error("duplicate descriptor {0} in vocabulary")]
    DuplicateDescriptor(AtomDescriptor),
    #[error("not a permutation of 0..{0}")]
    NotABijection(usize),
    #[error("descriptor {0} missing from vocabulary")]
    UnknownDescriptor(AtomDescriptor),
}

impl MolecularGraph {
    /// Builds and validates a graph from per-node descriptors and an
    /// undirected edge list.
    pub fn from_edges(
        descriptors: Vec<AtomDescriptor>,
        edges: &[(usize, usize, BondKind)],
    ) -> Result<Self, GraphError> {
        let n = descriptors.len();
        let mut adjacency = vec![0u8; n * n];
        let mut bonds = vec![None; n * n];
        for &(i, j, k) in edges {
            if i >= n {
                return Err(GraphError::IndexOutOfRange { index: i, n });
            }
            if j >= n {
                return Err(GraphError::IndexOutOfRange { index: j, n });
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            adjacency[i * n + j] = 1;
            adjacency[j * n + i] = 1;
            bonds[i * n + j] = Some(k);
            bonds[j * n + i] = Some(k);
        }
        let g = MolecularGraph {
            n,
            adjacency,
            descriptors,
            bonds,
        };
        g.validate()?;
        Ok(g)
    }

    /// Assembles a graph from raw encoding parts without symmetrizing;
    /// useful for constructing deliberately broken encodings in tests and
    /// for assembling generator output. Call [`validate`] to check it.
    pub fn from_parts(
        n: usize,
        adjacency: Vec<u8>,
        descriptors: Vec<AtomDescriptor>,
        bonds: Vec<Option<BondKind>>,
    ) -> Self {
        assert_eq!(adjacency.len(), n * n);
        assert_eq!(descriptors.len(), n);
        assert_eq!(bonds.len(), n * n);
        MolecularGraph {
            n,
            adjacency,
            descriptors,
            bonds,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn descriptor(&self, i: usize) -> AtomDescriptor {
        self.descriptors[i]
    }

    pub fn descriptors(&self) -> &[AtomDescriptor] {
        &self.descriptors
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j] == 1
    }

    pub fn bond(&self, i: usize, j: usize) -> Option<BondKind> {
        self.bonds[i * self.n + j]
    }

    pub fn edges(&self) -> Vec<(usize, usize, BondKind)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if let Some(k) = self.bonds[i * self.n + j] {
                    out.push((i, j, k));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.has_edge(i, j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    /// Checks every encoding invariant; the error names the first violation.
    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.n;
        for i in 0..n {
            if self.adjacency[i * n + i] != 0 || self.bonds[i * n + i].is_some() {
                return Err(GraphError::SelfLoop(i));
            }
        }
        for i in 0..n {
            for j in 0..n {
                if self.adjacency[i * n + j] != self.adjacency[j * n + i] {
                    return Err(GraphError::AsymmetricA { i, j });
                }
                let a = self.adjacency[i * n + j] == 1;
                let w = self.bonds[i * n + j].is_some();
                if a != w {
                    return Err(GraphError::EdgeAttrMismatch { i, j });
                }
                if self.bonds[i * n + j] != self.bonds[j * n + i] {
                    return Err(GraphError::AsymmetricW { i, j });
                }
            }
        }
        // Descriptor rows are one-hot by construction here; the bound checks
        // stand in for the one-hot row invariant of the X matrix.
        for (i, d) in self.descriptors.iter().enumerate() {
            if !(-2..=2).contains(&d.formal_charge) || d.explicit_h > 4 {
                return Err(GraphError::NonOneHotRow(i));
            }
        }
        Ok(())
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm(i)`.
    pub fn apply_permutation(&self, perm: &Permutation) -> Result<MolecularGraph, GraphError> {
        if perm.len() != self.n {
            return Err(GraphError::SizeMismatch {
                perm: perm.len(),
                graph: self.n,
            });
        }
        let n = self.n;
        let mut adjacency = vec![0u8; n * n];
        let mut bonds = vec![None; n * n];
        let mut descriptors = vec![self.descriptors[0]; n];
        for i in 0..n {
            descriptors[perm.apply(i)] = self.descriptors[i];
            for j in 0..n {
                let (pi, pj) = (perm.apply(i), perm.apply(j));
                adjacency[pi * n + pj] = self.adjacency[i * n + j];
                bonds[pi * n + pj] = self.bonds[i * n + j];
            }
        }
        Ok(MolecularGraph {
            n,
            adjacency,
            descriptors,
            bonds,
        })
    }

    /// The (x_i, {{w_{i,j}}}) pair: node attributes plus the canonically
    /// sorted multiset of incident edge-attribute vectors.
    pub fn node_tuple(&self, i: usize) -> Result<(AtomDescriptor, Vec<Option<BondKind>>), GraphError> {
        if i >= self.n {
            return Err(GraphError::IndexOutOfRange { index: i, n: self.n });
        }
        let mut multiset: Vec<Option<BondKind>> = (0..self.n)
            .filter(|&j| j != i)
            .map(|j| self.bonds[i * self.n + j])
            .collect();
        multiset.sort_unstable();
        Ok((self.descriptors[i], multiset))
    }

    /// One-hot X matrix (n × |vocab|) against the given vocabulary.
    pub fn x_onehot(&self, vocab: &AtomVocab) -> Result<Vec<f64>, GraphError> {
        let k = vocab.len();
        let mut x = vec![0.0; self.n * k];
        for (i, d) in self.descriptors.iter().enumerate() {
            let idx = vocab
                .index_of(d)
                .ok_or(GraphError::UnknownDescriptor(*d))?;
            x[i * k + idx] = 1.0;
        }
        Ok(x)
    }

    /// Flattened adjacency column (n² × 1) as floats.
    pub fn a_column(&self) -> Vec<f64> {
        self.adjacency.iter().map(|&a| a as f64).collect()
    }

    /// Flattened one-hot bond tensor (n² × 4).
    pub fn w_onehot(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n * self.n * BOND_TYPES];
        for (p, b) in self.bonds.iter().enumerate() {
            if let Some(k) = b {
                w[p * BOND_TYPES + k.channel()] = 1.0;
            }
        }
        w
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Serializes the labeled graph (no canonicalization): node count,
    /// descriptors in index order, upper-triangle bond codes.
    pub fn labeled_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.n * 3 + self.n * self.n / 2);
        out.push(self.n as u8);
        for d in &self.descriptors {
            out.push(d.element.code());
            out.push((d.formal_charge + 2) as u8);
            out.push(d.explicit_h);
        }
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                out.push(match self.bonds[i * self.n + j] {
                    None => 0,
                    Some(k) => k.channel() as u8 + 1,
                });
            }
        }
        out
    }
}

/// A bijection on {0, …, n−1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            mapping: (0..n).collect(),
        }
    }

    pub fn new(mapping: Vec<usize>) -> Result<Self, GraphError> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                return Err(GraphError::NotABijection(n));
            }
            seen[m] = true;
        }
        Ok(Permutation { mapping })
    }

    /// Uniform random permutation by Fisher–Yates.
    pub fn random(n: usize, rng: &mut impl rand::Rng) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            mapping.swap(i, j);
        }
        Permutation { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        assert_eq!(self.len(), other.len());
        Permutation {
            mapping: (0..self.len()).map(|i| self.apply(other.apply(i))).collect(),
        }
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Permutation { mapping: inv }
    }

    /// Row action on an n×d matrix stored row-major: row i moves to π(i).
    pub fn permute_rows(&self, values: &[f64], d: usize) -> Vec<f64> {
        let n = self.len();
        assert_eq!(values.len(), n * d);
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let pi = self.apply(i);
            out[pi * d..(pi + 1) * d].copy_from_slice(&values[i * d..(i + 1) * d]);
        }
        out
    }

    /// Pair action on an n²×k tensor stored with pair (i, j) at row i·n+j:
    /// entry (i, j) moves to (π(i), π(j)).
    pub fn permute_pair_rows(&self, values: &[f64], k: usize) -> Vec<f64> {
        let n = self.len();
        assert_eq!(values.len(), n * n * k);
        let mut out = vec![0.0; n * n * k];
        for i in 0..n {
            for j in 0..n {
                let src = (i * n + j) * k;
                let dst = (self.apply(i) * n + self.apply(j)) * k;
                out[dst..dst + k].copy_from_slice(&values[src..src + k]);
            }
        }
        out
    }

    /// Enumerates all n! permutations in lexicographic order.
    pub fn all(n: usize) -> Vec<Permutation> {
        let mut out = Vec::new();
        let mut cur: Vec<usize> = (0..n).collect();
        loop {
            out.push(Permutation {
                mapping: cur.clone(),
            });
            // Next lexicographic permutation.
            let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
                break;
            };
            let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).unwrap();
            cur.swap(i, j);
            cur[i + 1..].reverse();
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn carbon() -> AtomDescriptor {
        AtomDescriptor::new(Element::C, 0, 0).unwrap()
    }

    fn oxygen() -> AtomDescriptor {
        AtomDescriptor::new(Element::O, 0, 0).unwrap()
    }

    #[test]
    fn single_node_validates() {
        let g = MolecularGraph::from_edges(vec![carbon()], &[]).unwrap();
        assert!(g.validate().is_ok());
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn edge_attr_mismatch_detected() {
        let mut bonds = vec![None; 4];
        bonds[1] = None; // A says edge at (0,1), W says none
        let mut adj = vec![0u8; 4];
        adj[1] = 1;
        adj[2] = 1;
        let g = MolecularGraph::from_parts(2, adj, vec![carbon(), carbon()], bonds);
        assert_eq!(
            g.validate(),
            Err(GraphError::EdgeAttrMismatch { i: 0, j: 1 })
        );
    }

    #[test]
    fn asymmetric_a_detected() {
        let mut adj = vec![0u8; 9];
        adj[1] = 1; // A[0,1] set without its mirror
        let mut bonds = vec![None; 9];
        bonds[1] = Some(BondKind::Single);
        let g = MolecularGraph::from_parts(3, adj, vec![carbon(); 3], bonds);
        assert_eq!(g.validate(), Err(GraphError::AsymmetricA { i: 0, j: 1 }));
    }

    #[test]
    fn identity_permutation_is_noop() {
        let g = MolecularGraph::from_edges(
            vec![carbon(), oxygen()],
            &[(0, 1, BondKind::Double)],
        )
        .unwrap();
        let p = Permutation::identity(2);
        assert_eq!(g.apply_permutation(&p).unwrap(), g);
    }

    #[test]
    fn swap_on_two_nodes_swaps_descriptors() {
        let g = MolecularGraph::from_edges(
            vec![carbon(), oxygen()],
            &[(0, 1, BondKind::Single)],
        )
        .unwrap();
        let p = Permutation::new(vec![1, 0]).unwrap();
        let h = g.apply_permutation(&p).unwrap();
        assert_eq!(h.descriptor(0), oxygen());
        assert_eq!(h.descriptor(1), carbon());
        assert!(h.has_edge(0, 1));
    }

    #[test]
    fn path_relabeling_matches_explicit_oracle() {
        // Path 0-1-2 under pi = (0->2, 1->0, 2->1) becomes edges {2-0, 0-1}.
        let g = MolecularGraph::from_edges(
            vec![carbon(), carbon(), oxygen()],
            &[(0, 1, BondKind::Single), (1, 2, BondKind::Single)],
        )
        .unwrap();
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        let h = g.apply_permutation(&p).unwrap();
        // Oracle: brute-force index relabeling of the edge list.
        let mut expect: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .map(|&(i, j, _)| {
                let (a, b) = (p.apply(i), p.apply(j));
                (a.min(b), a.max(b))
            })
            .collect();
        expect.sort_unstable();
        let mut got: Vec<(usize, usize)> =
            h.edges().iter().map(|&(i, j, _)| (i, j)).collect();
        got.sort_unstable();
        assert_eq!(got, expect);
        assert_eq!(h.descriptor(2), g.descriptor(0));
        assert!(h.validate().is_ok());
    }

    #[test]
    fn node_tuple_star_matches_enumeration() {
        // Star centered at 0 over 3 nodes.
        let g = MolecularGraph::from_edges(
            vec![carbon(), oxygen(), oxygen()],
            &[(0, 1, BondKind::Single), (0, 2, BondKind::Double)],
        )
        .unwrap();
        let (d0, m0) = g.node_tuple(0).unwrap();
        assert_eq!(d0, carbon());
        assert_eq!(m0.iter().filter(|b| b.is_some()).count(), 2);
        let (_, m1) = g.node_tuple(1).unwrap();
        assert_eq!(m1.iter().filter(|b| b.is_some()).count(), 1);
        // Enumeration oracle: multiset from direct scan.
        let mut expect: Vec<Option<BondKind>> =
            (1..3).map(|j| g.bond(0, j)).collect();
        expect.sort_unstable();
        assert_eq!(m0, expect);
    }

    #[test]
    fn node_tuple_empty_for_singleton() {
        let g = MolecularGraph::from_edges(vec![carbon()], &[]).unwrap();
        let (_, m) = g.node_tuple(0).unwrap();
        assert!(m.is_empty());
        assert!(matches!(
            g.node_tuple(1),
            Err(GraphError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn vocab_rejects_duplicates_and_indexes_stably() {
        let v = AtomVocab::new(vec![carbon(), oxygen()]).unwrap();
        assert_eq!(v.index_of(&carbon()), Some(0));
        assert_eq!(v.index_of(&oxygen()), Some(1));
        assert!(AtomVocab::new(vec![carbon(), carbon()]).is_err());
    }

    fn arb_graph() -> impl Strategy<Value = MolecularGraph> {
        (1usize..6, any::<u64>()).prop_map(|(n, seed)| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            random_graph(n, &mut rng)
        })
    }

    pub(crate) fn random_graph(n: usize, rng: &mut impl rand::Rng) -> MolecularGraph {
        let elems = [Element::C, Element::N, Element::O, Element::F];
        let descriptors: Vec<AtomDescriptor> = (0..n)
            .map(|_| {
                AtomDescriptor::new(
                    elems[rng.gen_range(0..4)],
                    rng.gen_range(-2..=2),
                    rng.gen_range(0..=4),
                )
                .unwrap()
            })
            .collect();
        let kinds = [
            BondKind::Single,
            BondKind::Double,
            BondKind::Triple,
            BondKind::Aromatic,
        ];
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(0.5) {
                    edges.push((i, j, kinds[rng.gen_range(0..4)]));
                }
            }
        }
        MolecularGraph::from_edges(descriptors, &edges).unwrap()
    }

    proptest! {
        #[test]
        fn permutation_composition_law(g in arb_graph(), s1 in any::<u64>(), s2 in any::<u64>()) {
            let n = g.node_count();
            let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(s1);
            let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(s2);
            let p = Permutation::random(n, &mut r1);
            let q = Permutation::random(n, &mut r2);
            let lhs = g.apply_permutation(&p).unwrap().apply_permutation(&q).unwrap();
            let rhs = g.apply_permutation(&q.compose(&p)).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn permutation_preserves_validity(g in arb_graph(), seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = Permutation::random(g.node_count(), &mut rng);
            let h = g.apply_permutation(&p).unwrap();
            prop_assert!(h.validate().is_ok());
        }

        #[test]
        fn node_tuple_multiset_is_permutation_invariant(g in arb_graph(), seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = Permutation::random(g.node_count(), &mut rng);
            let h = g.apply_permutation(&p).unwrap();
            let mut tg: Vec<_> = (0..g.node_count()).map(|i| g.node_tuple(i).unwrap()).collect();
            let mut th: Vec<_> = (0..h.node_count()).map(|i| h.node_tuple(i).unwrap()).collect();
            tg.sort();
            th.sort();
            prop_assert_eq!(tg, th);
        }
    }
}
