//! SMILES-subset reader and writer.
//!
//! Supported grammar: organic-subset atoms `C N O F`, aromatic lowercase
//! `c n o`, bracket atoms with hydrogen count and charge (`[NH4+]`, `[O-]`),
//! bond symbols `- = # :`, ring-closure digits (plus `%nn`), parenthesized
//! branches, and `.` fragment separators. No stereochemistry, isotopes, or
//! wildcards.
//!
//! Bare atoms get implicit hydrogens filled to the lowest allowed valence;
//! bracket atoms carry their hydrogen count verbatim. A bond with no symbol
//! is aromatic when both endpoints are aromatic, single otherwise.

use std::collections::BTreeMap;

use thiserror::Error;

use super::canon::canonical_order;
use super::valence::{bond_order_sum_half, ValenceTable};
use crate::graph::{AtomDescriptor, BondKind, Element, GraphError, MolecularGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SmilesError {
    #[error("syntax error at byte {pos}: {what}")]
    Syntax { pos: usize, what: String },
    #[error("unknown element '{symbol}' at byte {pos}")]
    UnknownElement { pos: usize, symbol: String },
    #[error("ring bond {ring} opened but never closed")]
    UnclosedRing { ring: u8 },
    #[error("branch opened at byte {pos} never closed")]
    UnclosedBranch { pos: usize },
    #[error("valence overflow on atom at byte {pos}")]
    ValenceOverflow { pos: usize },
    #[error("graph not expressible in the supported grammar: {0}")]
    UnsupportedGraph(String),
    #[error("encoding error: {0}")]
    Graph(#[from] GraphError),
}

struct PendingAtom {
    element: Element,
    aromatic: bool,
    charge: i8,
    explicit_h: Option<u8>,
    pos: usize,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn syntax(&self, what: impl Into<String>) -> SmilesError {
        SmilesError::Syntax {
            pos: self.pos,
            what: what.into(),
        }
    }

    fn parse_bracket_atom(&mut self) -> Result<PendingAtom, SmilesError> {
        let start = self.pos;
        self.bump(); // '['
        let (element, aromatic) = match self.bump() {
            Some(b @ (b'C' | b'N' | b'O' | b'F' | b'c' | b'n' | b'o')) => {
                // A trailing lowercase letter means a two-letter symbol we
                // do not support (Cl, Na, ...).
                if let Some(next) = self.peek().filter(u8::is_ascii_lowercase) {
                    return Err(SmilesError::UnknownElement {
                        pos: start + 1,
                        symbol: format!("{}{}", b as char, next as char),
                    });
                }
                match b {
                    b'C' => (Element::C, false),
                    b'N' => (Element::N, false),
                    b'O' => (Element::O, false),
                    b'F' => (Element::F, false),
                    b'c' => (Element::C, true),
                    b'n' => (Element::N, true),
                    _ => (Element::O, true),
                }
            }
            Some(b) if b.is_ascii_alphabetic() => {
                let mut symbol = (b as char).to_string();
                if let Some(n) = self.peek().filter(u8::is_ascii_lowercase) {
                    symbol.push(n as char);
                }
                return Err(SmilesError::UnknownElement {
                    pos: start + 1,
                    symbol,
                });
            }
            _ => return Err(self.syntax("expected element symbol after '['")),
        };
        let mut explicit_h: u8 = 0;
        let mut charge: i32 = 0;
        loop {
            match self.peek() {
                Some(b'H') => {
                    self.bump();
                    let mut count = 1u8;
                    if let Some(d @ b'0'..=b'9') = self.peek() {
                        self.bump();
                        count = d - b'0';
                    }
                    explicit_h = count;
                }
                Some(b'+') | Some(b'-') => {
                    let sign: i32 = if self.bump() == Some(b'+') { 1 } else { -1 };
                    let mut mag = 1i32;
                    if let Some(d @ b'0'..=b'9') = self.peek() {
                        self.bump();
                        mag = (d - b'0') as i32;
                    } else {
                        // Repeated signs: ++ / --.
                        while self.peek() == Some(if sign > 0 { b'+' } else { b'-' }) {
                            self.bump();
                            mag += 1;
                        }
                    }
                    charge += sign * mag;
                }
                Some(b']') => {
                    self.bump();
                    break;
                }
                Some(b) => {
                    return Err(self.syntax(format!(
                        "unexpected '{}' in bracket atom",
                        b as char
                    )))
                }
                None => return Err(self.syntax("unterminated bracket atom")),
            }
        }
        if !(-2..=2).contains(&charge) {
            return Err(SmilesError::Syntax {
                pos: start,
                what: format!("formal charge {charge} outside [-2, 2]"),
            });
        }
        if explicit_h > 4 {
            return Err(SmilesError::Syntax {
                pos: start,
                what: format!("hydrogen count {explicit_h} outside [0, 4]"),
            });
        }
        Ok(PendingAtom {
            element,
            aromatic,
            charge: charge as i8,
            explicit_h: Some(explicit_h),
            pos: start,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum BondSym {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondSym {
    fn from_byte(b: u8) -> Option<BondSym> {
        match b {
            b'-' => Some(BondSym::Single),
            b'=' => Some(BondSym::Double),
            b'#' => Some(BondSym::Triple),
            b':' => Some(BondSym::Aromatic),
            _ => None,
        }
    }

    fn kind(self) -> BondKind {
        match self {
            BondSym::Single => BondKind::Single,
            BondSym::Double => BondKind::Double,
            BondSym::Triple => BondKind::Triple,
            BondSym::Aromatic => BondKind::Aromatic,
        }
    }
}

/// Parses a SMILES string into a validate-passing graph, filling implicit
/// hydrogens from the valence table.
pub fn parse_smiles(s: &str, table: &ValenceTable) -> Result<MolecularGraph, SmilesError> {
    let mut p = Parser {
        bytes: s.as_bytes(),
        pos: 0,
    };
    let mut atoms: Vec<PendingAtom> = Vec::new();
    let mut raw_edges: Vec<(usize, usize, Option<BondSym>)> = Vec::new();
    // (previous atom, branch-open position) stack.
    let mut branch_stack: Vec<(usize, usize)> = Vec::new();
    let mut prev_atom: Option<usize> = None;
    let mut pending_bond: Option<BondSym> = None;
    let mut rings: BTreeMap<u8, (usize, Option<BondSym>, usize)> = BTreeMap::new();

    let attach = |atoms: &mut Vec<PendingAtom>,
                      raw_edges: &mut Vec<(usize, usize, Option<BondSym>)>,
                      prev_atom: &mut Option<usize>,
                      pending_bond: &mut Option<BondSym>,
                      atom: PendingAtom|
     -> usize {
        let idx = atoms.len();
        atoms.push(atom);
        if let Some(prev) = *prev_atom {
            raw_edges.push((prev, idx, pending_bond.take()));
        }
        *prev_atom = Some(idx);
        idx
    };

    while let Some(b) = p.peek() {
        match b {
            b'C' | b'N' | b'O' | b'F' | b'c' | b'n' | b'o' => {
                let pos = p.pos;
                p.bump();
                // "Cl", "Nb", ... : two-letter symbols outside the grammar.
                if let Some(next) = p
                    .peek()
                    .filter(|c| c.is_ascii_lowercase() && !matches!(c, b'c' | b'n' | b'o'))
                {
                    return Err(SmilesError::UnknownElement {
                        pos,
                        symbol: format!("{}{}", b as char, next as char),
                    });
                }
                let (element, aromatic) = match b {
                    b'C' => (Element::C, false),
                    b'N' => (Element::N, false),
                    b'O' => (Element::O, false),
                    b'F' => (Element::F, false),
                    b'c' => (Element::C, true),
                    b'n' => (Element::N, true),
                    _ => (Element::O, true),
                };
                attach(
                    &mut atoms,
                    &mut raw_edges,
                    &mut prev_atom,
                    &mut pending_bond,
                    PendingAtom {
                        element,
                        aromatic,
                        charge: 0,
                        explicit_h: None,
                        pos,
                    },
                );
            }
            b'[' => {
                let atom = p.parse_bracket_atom()?;
                attach(
                    &mut atoms,
                    &mut raw_edges,
                    &mut prev_atom,
                    &mut pending_bond,
                    atom,
                );
            }
            b'-' | b'=' | b'#' | b':' => {
                if pending_bond.is_some() {
                    return Err(p.syntax("two bond symbols in a row"));
                }
                pending_bond = BondSym::from_byte(b);
                p.bump();
            }
            b'(' => {
                let Some(prev) = prev_atom else {
                    return Err(p.syntax("branch before any atom"));
                };
                branch_stack.push((prev, p.pos));
                p.bump();
            }
            b')' => {
                let Some((prev, _)) = branch_stack.pop() else {
                    return Err(p.syntax("unmatched ')'"));
                };
                prev_atom = Some(prev);
                p.bump();
            }
            b'0'..=b'9' | b'%' => {
                let ring = if b == b'%' {
                    p.bump();
                    let d1 = p.bump().filter(u8::is_ascii_digit);
                    let d2 = p.bump().filter(u8::is_ascii_digit);
                    match (d1, d2) {
                        (Some(a), Some(c)) => (a - b'0') * 10 + (c - b'0'),
                        _ => return Err(p.syntax("'%' needs two digits")),
                    }
                } else {
                    p.bump();
                    b - b'0'
                };
                let Some(here) = prev_atom else {
                    return Err(p.syntax("ring closure before any atom"));
                };
                let sym = pending_bond.take();
                match rings.remove(&ring) {
                    None => {
                        rings.insert(ring, (here, sym, p.pos));
                    }
                    Some((other, open_sym, _)) => {
                        if other == here {
                            return Err(p.syntax("ring closure to the same atom"));
                        }
                        let bond = match (open_sym, sym) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(p.syntax("conflicting ring bond symbols"))
                            }
                            (a, b) => a.or(b),
                        };
                        raw_edges.push((other, here, bond));
                    }
                }
            }
            b'.' => {
                p.bump();
                prev_atom = None;
                if pending_bond.is_some() {
                    return Err(p.syntax("bond symbol before '.'"));
                }
            }
            b' ' | b'\t' => {
                // Trailing whitespace ends the molecule.
                break;
            }
            other => {
                return Err(p.syntax(format!("unexpected character '{}'", other as char)))
            }
        }
    }
    if let Some(&(_, pos)) = branch_stack.first() {
        return Err(SmilesError::UnclosedBranch { pos });
    }
    if let Some((&ring, _)) = rings.iter().next() {
        return Err(SmilesError::UnclosedRing { ring });
    }
    if pending_bond.is_some() {
        return Err(p.syntax("dangling bond symbol"));
    }
    if atoms.is_empty() {
        return Err(p.syntax("empty SMILES"));
    }

    // Resolve bond kinds: explicit symbol wins; otherwise aromatic between
    // two aromatic atoms, single elsewhere.
    let mut edges: Vec<(usize, usize, BondKind)> = Vec::new();
    let mut seen_pairs = std::collections::BTreeSet::new();
    for (i, j, sym) in raw_edges {
        if !seen_pairs.insert((i.min(j), i.max(j))) {
            return Err(SmilesError::Syntax {
                pos: atoms[j].pos,
                what: "duplicate bond between the same atoms".into(),
            });
        }
        let kind = match sym {
            Some(s) => s.kind(),
            None if atoms[i].aromatic && atoms[j].aromatic => BondKind::Aromatic,
            None => BondKind::Single,
        };
        edges.push((i, j, kind));
    }

    // Fill implicit hydrogens on bare atoms.
    let mut half_sum = vec![0u32; atoms.len()];
    for &(i, j, k) in &edges {
        half_sum[i] += k.half_order();
        half_sum[j] += k.half_order();
    }
    let mut descriptors = Vec::with_capacity(atoms.len());
    for (i, a) in atoms.iter().enumerate() {
        let h = match a.explicit_h {
            Some(h) => h,
            None => {
                let allowed = table
                    .allowed_half(a.element, a.charge)
                    .ok_or(SmilesError::ValenceOverflow { pos: a.pos })?;
                let target = allowed
                    .iter()
                    .filter(|&&v| v >= half_sum[i])
                    .min()
                    .copied()
                    .ok_or(SmilesError::ValenceOverflow { pos: a.pos })?;
                ((target - half_sum[i]) / 2) as u8
            }
        };
        descriptors.push(
            AtomDescriptor::new(a.element, a.charge, h).map_err(|_| SmilesError::Syntax {
                pos: a.pos,
                what: "descriptor out of range".into(),
            })?,
        );
    }

    Ok(MolecularGraph::from_edges(descriptors, &edges)?)
}

fn bond_symbol(kind: BondKind) -> Option<char> {
    match kind {
        BondKind::Single => None,
        BondKind::Double => Some('='),
        BondKind::Triple => Some('#'),
        BondKind::Aromatic => Some(':'),
    }
}

/// Writes a SMILES string in canonical atom order. Atoms are emitted in the
/// organic subset when re-parsing would infer the same hydrogen count, and
/// as bracket atoms otherwise, so `parse(write(g))` is isomorphic to `g`.
pub fn write_smiles(g: &MolecularGraph, table: &ValenceTable) -> Result<String, SmilesError> {
    let n = g.node_count();
    if n == 0 {
        return Err(SmilesError::UnsupportedGraph("empty graph".into()));
    }
    let order = canonical_order(g);
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    // Spanning forest by DFS in canonical rank order; non-tree edges become
    // ring closures.
    let mut visited = vec![false; n];
    let mut ring_digit_of: BTreeMap<(usize, usize), u8> = BTreeMap::new();
    let mut out = String::new();
    let mut free_digits: Vec<u8> = (1..=99).rev().collect();
    // Per-atom ring digits to emit, in open order.
    let mut ring_marks: Vec<Vec<(u8, BondKind)>> = vec![Vec::new(); n];

    // Pre-compute DFS tree and ring closures for the whole forest.
    let mut tree_children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut roots = Vec::new();
    {
        let mut stack: Vec<usize> = Vec::new();
        for &start in &order {
            if visited[start] {
                continue;
            }
            roots.push(start);
            visited[start] = true;
            stack.push(start);
            while let Some(u) = stack.pop() {
                let mut nbrs: Vec<usize> = g.neighbors(u).collect();
                nbrs.sort_unstable_by_key(|&v| rank[v]);
                for v in nbrs {
                    if !visited[v] {
                        visited[v] = true;
                        tree_children[u].push(v);
                        stack.push(v);
                    } else if !tree_children[u].contains(&v)
                        && !tree_children[v].contains(&u)
                        && !ring_digit_of.contains_key(&(v.min(u), v.max(u)))
                    {
                        let digit = free_digits.pop().ok_or_else(|| {
                            SmilesError::UnsupportedGraph(
                                "more than 99 simultaneous ring bonds".into(),
                            )
                        })?;
                        ring_digit_of.insert((v.min(u), v.max(u)), digit);
                        let kind = g.bond(u, v).expect("ring edge");
                        ring_marks[u].push((digit, kind));
                        ring_marks[v].push((digit, kind));
                    }
                }
            }
        }
    }

    fn atom_token(
        g: &MolecularGraph,
        i: usize,
        table: &ValenceTable,
    ) -> String {
        let d = g.descriptor(i);
        let half = bond_order_sum_half(g, i);
        let bare_ok = d.formal_charge == 0
            && table
                .allowed_half(d.element, 0)
                .and_then(|allowed| allowed.iter().filter(|&&v| v >= half).min())
                .map(|&target| ((target - half) / 2) as u8 == d.explicit_h)
                .unwrap_or(false);
        if bare_ok {
            d.element.symbol().to_string()
        } else {
            let mut t = String::from("[");
            t.push_str(d.element.symbol());
            match d.explicit_h {
                0 => {}
                1 => t.push('H'),
                h => {
                    t.push('H');
                    t.push_str(&h.to_string());
                }
            }
            match d.formal_charge {
                0 => {}
                1 => t.push('+'),
                -1 => t.push('-'),
                q if q > 0 => t.push_str(&format!("+{q}")),
                q => t.push_str(&format!("-{}", -q)),
            }
            t.push(']');
            t
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(
        g: &MolecularGraph,
        u: usize,
        parent_bond: Option<BondKind>,
        tree_children: &[Vec<usize>],
        ring_marks: &[Vec<(u8, BondKind)>],
        rank: &[usize],
        table: &ValenceTable,
        out: &mut String,
    ) {
        if let Some(k) = parent_bond.and_then(bond_symbol) {
            out.push(k);
        }
        out.push_str(&atom_token(g, u, table));
        for &(digit, kind) in &ring_marks[u] {
            if let Some(sym) = bond_symbol(kind) {
                out.push(sym);
            }
            if digit < 10 {
                out.push((b'0' + digit) as char);
            } else {
                out.push('%');
                out.push_str(&format!("{digit:02}"));
            }
        }
        let mut children = tree_children[u].clone();
        children.sort_unstable_by_key(|&v| rank[v]);
        for (idx, &v) in children.iter().enumerate() {
            let bond = g.bond(u, v);
            let last = idx + 1 == children.len();
            if !last {
                out.push('(');
            }
            emit(g, v, bond, tree_children, ring_marks, rank, table, out);
            if !last {
                out.push(')');
            }
        }
    }

    for (i, &root) in roots.iter().enumerate() {
        if i > 0 {
            out.push('.');
        }
        emit(
            g,
            root,
            None,
            &tree_children,
            &ring_marks,
            &rank,
            table,
            &mut out,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::canon::canonical_certificate;
    use crate::chem::valence::check_valence;
    use crate::graph::Element;
    use rand::SeedableRng;

    fn table() -> ValenceTable {
        ValenceTable::default()
    }

    #[test]
    fn bare_carbon_gets_four_hydrogens() {
        let g = parse_smiles("C", &table()).unwrap();
        assert_eq!(g.node_count(), 1);
        let d = g.descriptor(0);
        assert_eq!(d.element, Element::C);
        assert_eq!(d.formal_charge, 0);
        assert_eq!(d.explicit_h, 4);
    }

    #[test]
    fn carbonyl_fills_hydrogens_by_valence() {
        let g = parse_smiles("C=O", &table()).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.bond(0, 1), Some(BondKind::Double));
        assert_eq!(g.descriptor(0).explicit_h, 2);
        assert_eq!(g.descriptor(1).explicit_h, 0);
    }

    #[test]
    fn ammonium_bracket_atom() {
        let g = parse_smiles("[NH4+]", &table()).unwrap();
        let d = g.descriptor(0);
        assert_eq!(d.element, Element::N);
        assert_eq!(d.formal_charge, 1);
        assert_eq!(d.explicit_h, 4);
        assert!(check_valence(&g, &table()));
    }

    #[test]
    fn alkoxide_bracket_atom() {
        let g = parse_smiles("C[O-]", &table()).unwrap();
        assert_eq!(g.descriptor(1).formal_charge, -1);
        assert_eq!(g.descriptor(1).explicit_h, 0);
        assert!(check_valence(&g, &table()));
    }

    #[test]
    fn unclosed_branch_is_reported() {
        assert_eq!(
            parse_smiles("C(", &table()),
            Err(SmilesError::UnclosedBranch { pos: 1 })
        );
    }

    #[test]
    fn unclosed_ring_is_reported() {
        assert_eq!(
            parse_smiles("C1CC", &table()),
            Err(SmilesError::UnclosedRing { ring: 1 })
        );
    }

    #[test]
    fn unknown_element_is_reported() {
        assert!(matches!(
            parse_smiles("[Cl]", &table()),
            Err(SmilesError::UnknownElement { .. })
        ));
    }

    #[test]
    fn pentavalent_carbon_overflows() {
        assert!(matches!(
            parse_smiles("C(F)(F)(F)(F)F", &table()),
            Err(SmilesError::ValenceOverflow { .. })
        ));
    }

    #[test]
    fn benzene_lowercase_parses_aromatic() {
        let g = parse_smiles("c1ccccc1", &table()).unwrap();
        assert_eq!(g.node_count(), 6);
        assert_eq!(g.edges().len(), 6);
        assert!(g.edges().iter().all(|&(_, _, k)| k == BondKind::Aromatic));
        assert!(g.descriptors().iter().all(|d| d.explicit_h == 1));
        assert!(check_valence(&g, &table()));
    }

    #[test]
    fn pyridine_nitrogen_has_no_hydrogen() {
        let g = parse_smiles("c1ccncc1", &table()).unwrap();
        let n_idx = (0..6).find(|&i| g.descriptor(i).element == Element::N).unwrap();
        assert_eq!(g.descriptor(n_idx).explicit_h, 0);
        assert!(check_valence(&g, &table()));
    }

    #[test]
    fn branches_and_rings() {
        // Methylcyclopropane.
        let g = parse_smiles("CC1CC1", &table()).unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.edges().len(), 4);
        assert!(check_valence(&g, &table()));
    }

    #[test]
    fn single_carbon_writes_bare() {
        let g = parse_smiles("C", &table()).unwrap();
        assert_eq!(write_smiles(&g, &table()).unwrap(), "C");
    }

    #[test]
    fn carbonyl_roundtrip_is_canonical() {
        let g = parse_smiles("C=O", &table()).unwrap();
        let s = write_smiles(&g, &table()).unwrap();
        let h = parse_smiles(&s, &table()).unwrap();
        assert_eq!(canonical_certificate(&g), canonical_certificate(&h));
        // Writing twice gives the same string (canonical orientation).
        assert_eq!(s, write_smiles(&h, &table()).unwrap());
    }

    #[test]
    fn random_valid_molecules_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let t = table();
        for _ in 0..200 {
            let g = crate::chem::synth::random_valid_molecule(&mut rng, 9, &t);
            let s = write_smiles(&g, &t).unwrap();
            let h = parse_smiles(&s, &t)
                .unwrap_or_else(|e| panic!("re-parse of {s}: {e}"));
            assert_eq!(
                canonical_certificate(&g),
                canonical_certificate(&h),
                "round trip broke isomorphism for {s}"
            );
        }
    }

    #[test]
    fn permuted_molecule_writes_identically() {
        use crate::graph::Permutation;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100);
        let t = table();
        for _ in 0..50 {
            let g = crate::chem::synth::random_valid_molecule(&mut rng, 8, &t);
            let p = Permutation::random(g.node_count(), &mut rng);
            let h = g.apply_permutation(&p).unwrap();
            assert_eq!(
                write_smiles(&g, &t).unwrap(),
                write_smiles(&h, &t).unwrap()
            );
        }
    }

    #[test]
    fn invalid_molecule_roundtrips_via_brackets() {
        // A lone nitrogen cation with no bonds and 0 H is not valence-valid
        // but must still serialize and re-parse exactly.
        let g = parse_smiles("[N+]", &table()).unwrap();
        assert!(!check_valence(&g, &table()));
        let s = write_smiles(&g, &table()).unwrap();
        assert_eq!(s, "[N+]");
        let h = parse_smiles(&s, &table()).unwrap();
        assert_eq!(canonical_certificate(&g), canonical_certificate(&h));
    }

    #[test]
    fn disconnected_fragments_use_dot() {
        let g = parse_smiles("C.O", &table()).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edges().len(), 0);
        let s = write_smiles(&g, &table()).unwrap();
        assert!(s.contains('.'), "{s}");
        let h = parse_smiles(&s, &table()).unwrap();
        assert_eq!(canonical_certificate(&g), canonical_certificate(&h));
    }
}
