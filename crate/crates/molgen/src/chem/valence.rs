//! Valence-based validity predicate.
//!
//! Bond orders are tracked in half units (single=2, aromatic=3, double=4,
//! triple=6) so sums stay in integer arithmetic and the allowed-valence
//! comparison is exact. A graph is valid when every atom's total bond order
//! plus explicit hydrogens lands exactly on an allowed valence, every
//! aromatic bond lies on an all-aromatic cycle, and the graph is connected.

use std::collections::BTreeMap;

use crate::graph::{BondKind, Element, MolecularGraph};

/// Map from (element, formal charge) to the allowed total valences in half
/// units (so neutral carbon is `{8}` = 4 full bonds).
#[derive(Debug, Clone)]
pub struct ValenceTable {
    allowed: BTreeMap<(Element, i8), Vec<u32>>,
}

impl Default for ValenceTable {
    fn default() -> Self {
        use Element::*;
        let mut allowed = BTreeMap::new();
        let mut put = |e: Element, q: i8, v: &[u32]| {
            allowed.insert((e, q), v.iter().map(|x| x * 2).collect());
        };
        put(C, 0, &[4]);
        put(N, 0, &[3]);
        put(N, 1, &[4]);
        put(N, -1, &[2]);
        put(O, 0, &[2]);
        put(O, -1, &[1]);
        put(O, 1, &[3]);
        put(F, 0, &[1]);
        ValenceTable { allowed }
    }
}

impl ValenceTable {
    /// Allowed totals in half units for an (element, charge) pair.
    pub fn allowed_half(&self, element: Element, charge: i8) -> Option<&[u32]> {
        self.allowed.get(&(element, charge)).map(|v| v.as_slice())
    }

    /// Smallest allowed total (half units), used for implicit-H filling.
    pub fn lowest_half(&self, element: Element, charge: i8) -> Option<u32> {
        self.allowed_half(element, charge)
            .and_then(|v| v.iter().min().copied())
    }
}

/// Total bond order of node `i` in half units, not counting hydrogens.
pub fn bond_order_sum_half(g: &MolecularGraph, i: usize) -> u32 {
    (0..g.node_count())
        .filter_map(|j| g.bond(i, j))
        .map(|k| k.half_order())
        .sum()
}

/// True iff the edge (i, j) lies on a cycle all of whose edges are aromatic.
fn aromatic_edge_on_aromatic_cycle(g: &MolecularGraph, i: usize, j: usize) -> bool {
    // BFS from i to j through aromatic edges, excluding (i, j) itself.
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    seen[i] = true;
    queue.push_back(i);
    while let Some(u) = queue.pop_front() {
        let aromatic_nbrs: Vec<usize> = (0..n)
            .filter(|&v| !seen[v] && g.bond(u, v) == Some(BondKind::Aromatic))
            .collect();
        for v in aromatic_nbrs {
            if (u == i && v == j) || (u == j && v == i) {
                continue;
            }
            if v == j {
                return true;
            }
            seen[v] = true;
            queue.push_back(v);
        }
    }
    false
}

/// The validity predicate behind the `val` metric. Total on valid encodings;
/// assumes `g.validate()` holds.
pub fn check_valence(g: &MolecularGraph, table: &ValenceTable) -> bool {
    if g.node_count() == 0 {
        return false;
    }
    for i in 0..g.node_count() {
        let d = g.descriptor(i);
        let Some(allowed) = table.allowed_half(d.element, d.formal_charge) else {
            return false;
        };
        let total = bond_order_sum_half(g, i) + 2 * d.explicit_h as u32;
        if !allowed.contains(&total) {
            return false;
        }
    }
    for (i, j, k) in g.edges() {
        if k == BondKind::Aromatic && !aromatic_edge_on_aromatic_cycle(g, i, j) {
            return false;
        }
    }
    g.is_connected()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AtomDescriptor, Element, MolecularGraph};

    fn atom(e: Element, q: i8, h: u8) -> AtomDescriptor {
        AtomDescriptor::new(e, q, h).unwrap()
    }

    #[test]
    fn methane_like_carbon_is_valid() {
        let g = MolecularGraph::from_edges(vec![atom(Element::C, 0, 4)], &[]).unwrap();
        assert!(check_valence(&g, &ValenceTable::default()));
    }

    #[test]
    fn pentavalent_carbon_is_invalid() {
        // C bonded to 4 neighbors plus one double bond: order 5.
        let c = atom(Element::C, 0, 0);
        let f = atom(Element::F, 0, 0);
        let o = atom(Element::O, 0, 1);
        let g = MolecularGraph::from_edges(
            vec![c, f, f, f, o],
            &[
                (0, 1, BondKind::Single),
                (0, 2, BondKind::Single),
                (0, 3, BondKind::Single),
                (0, 4, BondKind::Double),
            ],
        )
        .unwrap();
        assert!(!check_valence(&g, &ValenceTable::default()));
    }

    #[test]
    fn charged_oxygen_single_bond_is_valid() {
        // O(-1) with one single bond and no H, e.g. alkoxide oxygen.
        let g = MolecularGraph::from_edges(
            vec![atom(Element::O, -1, 0), atom(Element::C, 0, 3)],
            &[(0, 1, BondKind::Single)],
        )
        .unwrap();
        assert!(check_valence(&g, &ValenceTable::default()));
    }

    #[test]
    fn stray_aromatic_bond_is_invalid() {
        let g = MolecularGraph::from_edges(
            vec![atom(Element::C, 0, 2), atom(Element::C, 0, 2)],
            &[(0, 1, BondKind::Aromatic)],
        )
        .unwrap();
        // 1.5 order cannot land on an integer valence, and there is no ring.
        assert!(!check_valence(&g, &ValenceTable::default()));
    }

    #[test]
    fn aromatic_six_ring_is_valid() {
        // Benzene: six aromatic carbons, one H each.
        let c = atom(Element::C, 0, 1);
        let edges: Vec<_> = (0..6)
            .map(|i| (i, (i + 1) % 6, BondKind::Aromatic))
            .collect();
        let g = MolecularGraph::from_edges(vec![c; 6], &edges).unwrap();
        assert!(check_valence(&g, &ValenceTable::default()));
    }

    #[test]
    fn disconnected_graph_is_invalid() {
        let g = MolecularGraph::from_edges(
            vec![atom(Element::C, 0, 4), atom(Element::C, 0, 4)],
            &[],
        )
        .unwrap();
        assert!(!check_valence(&g, &ValenceTable::default()));
    }

    #[test]
    fn check_valence_is_permutation_invariant() {
        use crate::graph::Permutation;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let table = ValenceTable::default();
        for _ in 0..50 {
            let g = crate::chem::synth::random_valid_molecule(&mut rng, 7, &table);
            let p = Permutation::random(g.node_count(), &mut rng);
            let h = g.apply_permutation(&p).unwrap();
            assert_eq!(check_valence(&g, &table), check_valence(&h, &table));
        }
    }
}
