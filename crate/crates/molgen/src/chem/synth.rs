//! Random valence-valid molecule generator.
//!
//! Used as a source of round-trip test inputs and to synthesize training
//! corpora with the same envelope as small organic datasets (C/N/O/F heavy
//! atoms, n ≤ 9, charges, aromatic rings).

use rand::Rng;

use super::valence::{check_valence, ValenceTable};
use crate::graph::{AtomDescriptor, BondKind, Element, MolecularGraph};

fn pick_element(rng: &mut impl Rng) -> Element {
    match rng.gen_range(0..100) {
        0..=64 => Element::C,
        65..=79 => Element::N,
        80..=93 => Element::O,
        _ => Element::F,
    }
}

fn pick_charge(rng: &mut impl Rng, element: Element) -> i8 {
    if rng.gen_range(0..100) < 94 {
        return 0;
    }
    match element {
        Element::N => {
            if rng.gen_bool(0.7) {
                1
            } else {
                -1
            }
        }
        Element::O => {
            if rng.gen_bool(0.7) {
                -1
            } else {
                1
            }
        }
        _ => 0,
    }
}

/// Generates one connected, valence-valid molecule with at most `max_heavy`
/// heavy atoms. Deterministic given the RNG state.
pub fn random_valid_molecule(
    rng: &mut impl Rng,
    max_heavy: usize,
    table: &ValenceTable,
) -> MolecularGraph {
    loop {
        if let Some(g) = try_molecule(rng, max_heavy, table) {
            debug_assert!(g.validate().is_ok());
            debug_assert!(check_valence(&g, table));
            return g;
        }
    }
}

fn try_molecule(
    rng: &mut impl Rng,
    max_heavy: usize,
    table: &ValenceTable,
) -> Option<MolecularGraph> {
    let n = rng.gen_range(1..=max_heavy);
    let mut elements = Vec::with_capacity(n);
    let mut charges = Vec::with_capacity(n);
    // Remaining half-unit capacity per atom.
    let mut cap = Vec::with_capacity(n);
    let aromatic_ring = n >= 6 && rng.gen_bool(0.3);

    for i in 0..n {
        let (e, q) = if aromatic_ring && i < 6 {
            // Ring members: neutral C or N only.
            if rng.gen_bool(0.8) {
                (Element::C, 0)
            } else {
                (Element::N, 0)
            }
        } else {
            let e = pick_element(rng);
            (e, pick_charge(rng, e))
        };
        elements.push(e);
        charges.push(q);
        cap.push(table.lowest_half(e, q)?);
    }

    let mut edges: Vec<(usize, usize, BondKind)> = Vec::new();
    let mut bonded = vec![false; n];
    let start_tree;
    if aromatic_ring {
        for i in 0..6 {
            let j = (i + 1) % 6;
            edges.push((i, j, BondKind::Aromatic));
        }
        for i in 0..6 {
            cap[i] = cap[i].checked_sub(6)?;
            bonded[i] = true;
        }
        start_tree = 6;
    } else {
        bonded[0] = true;
        start_tree = 1;
    }

    // Attach remaining atoms as a random tree over atoms with capacity.
    for i in start_tree..n {
        let candidates: Vec<usize> = (0..i)
            .filter(|&j| bonded[j] && cap[j] >= 2)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let j = candidates[rng.gen_range(0..candidates.len())];
        edges.push((j, i, BondKind::Single));
        cap[j] -= 2;
        cap[i] = cap[i].checked_sub(2)?;
        bonded[i] = true;
    }

    // Occasionally close extra (non-aromatic) rings.
    let extra_rings = if n >= 3 { rng.gen_range(0..=1) } else { 0 };
    for _ in 0..extra_rings {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| {
                cap[i] >= 2
                    && cap[j] >= 2
                    && !edges.iter().any(|&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i))
            })
            .collect();
        if pairs.is_empty() {
            break;
        }
        let (i, j) = pairs[rng.gen_range(0..pairs.len())];
        edges.push((i, j, BondKind::Single));
        cap[i] -= 2;
        cap[j] -= 2;
    }

    // Upgrade some single bonds to double/triple where capacity allows.
    for e in edges.iter_mut() {
        let (i, j, k) = *e;
        if k != BondKind::Single || !rng.gen_bool(0.25) {
            continue;
        }
        if cap[i] >= 4 && cap[j] >= 4 && rng.gen_bool(0.3) {
            *e = (i, j, BondKind::Triple);
            cap[i] -= 4;
            cap[j] -= 4;
        } else if cap[i] >= 2 && cap[j] >= 2 {
            *e = (i, j, BondKind::Double);
            cap[i] -= 2;
            cap[j] -= 2;
        }
    }

    // Leftover capacity becomes explicit hydrogens; all-bond sums are in
    // whole units here, so the half-unit remainder is always even.
    let mut descriptors = Vec::with_capacity(n);
    for i in 0..n {
        debug_assert_eq!(cap[i] % 2, 0);
        let h = (cap[i] / 2) as u8;
        if h > 4 {
            return None;
        }
        descriptors.push(AtomDescriptor::new(elements[i], charges[i], h).ok()?);
    }

    let g = MolecularGraph::from_edges(descriptors, &edges).ok()?;
    check_valence(&g, table).then_some(g)
}
