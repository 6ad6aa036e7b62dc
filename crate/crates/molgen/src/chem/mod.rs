//! Chemistry layer: SMILES I/O, valence validity, canonical certificates.

pub mod canon;
pub mod smiles;
pub mod synth;
pub mod valence;

pub use canon::{canonical_certificate, canonical_order, isomorphic_bruteforce, Certificate};
pub use smiles::{parse_smiles, write_smiles, SmilesError};
pub use valence::{check_valence, ValenceTable};
