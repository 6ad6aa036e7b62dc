//! Dataset preprocessing and the text file formats shared by the CLI.
//!
//! A dataset file holds one canonical SMILES per line; vocab files hold one
//! `element charge hydrogens` triple per line; certificate files hold one
//! hex-encoded canonical certificate per line. Empty lines and `#` comments
//! are ignored everywhere.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::chem::canon::{canonical_certificate, Certificate};
use crate::chem::smiles::{parse_smiles, write_smiles};
use crate::chem::valence::ValenceTable;
use crate::graph::{AtomDescriptor, AtomVocab, Element, MolecularGraph};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{skipped} of {total} lines unusable (> 50%), aborting")]
    TooManySkipped { skipped: usize, total: usize },
    #[error("no parseable molecules in input")]
    Empty,
    #[error("bad record at line {line}: {what}")]
    BadRecord { line: usize, what: String },
}

/// In-memory training corpus.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<MolecularGraph>,
    pub vocab: AtomVocab,
    pub certs: BTreeSet<Certificate>,
}

impl Dataset {
    pub fn from_graphs(graphs: Vec<MolecularGraph>) -> Dataset {
        let vocab = AtomVocab::from_corpus(graphs.iter());
        let certs = graphs.iter().map(canonical_certificate).collect();
        Dataset {
            graphs,
            vocab,
            certs,
        }
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct PreprocessReport {
    pub total: usize,
    pub parsed: usize,
    /// (line number, reason) of skipped lines.
    pub skipped: Vec<(usize, String)>,
}

/// Parses SMILES lines into a dataset, skipping unusable lines with a
/// reason. Aborts when more than half of the non-comment lines are
/// unusable. `max_heavy` bounds the node count.
pub fn preprocess(
    lines: impl IntoIterator<Item = String>,
    max_heavy: usize,
    table: &ValenceTable,
) -> Result<(Dataset, PreprocessReport), DatasetError> {
    let mut report = PreprocessReport::default();
    let mut graphs = Vec::new();
    for (lineno, raw) in lines.into_iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        report.total += 1;
        match parse_smiles(line, table) {
            Err(e) => report.skipped.push((lineno + 1, e.to_string())),
            Ok(g) => {
                if g.node_count() > max_heavy {
                    report
                        .skipped
                        .push((lineno + 1, format!("{} heavy atoms > {max_heavy}", g.node_count())));
                } else if let Err(e) = g.validate() {
                    report.skipped.push((lineno + 1, e.to_string()));
                } else {
                    report.parsed += 1;
                    graphs.push(g);
                }
            }
        }
    }
    if report.total == 0 || graphs.is_empty() {
        return Err(DatasetError::Empty);
    }
    if report.skipped.len() * 2 > report.total {
        return Err(DatasetError::TooManySkipped {
            skipped: report.skipped.len(),
            total: report.total,
        });
    }
    Ok((Dataset::from_graphs(graphs), report))
}

fn read_to_lines(path: &Path) -> Result<Vec<String>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

fn write_text(path: &Path, text: &str) -> Result<(), DatasetError> {
    std::fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path, table: &ValenceTable) -> Result<(), DatasetError> {
    let mut out = String::from("# molgen dataset v1\n");
    for g in &ds.graphs {
        let s = write_smiles(g, table).map_err(|e| DatasetError::BadRecord {
            line: 0,
            what: e.to_string(),
        })?;
        out.push_str(&s);
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn load_dataset(path: &Path, table: &ValenceTable) -> Result<Dataset, DatasetError> {
    let (ds, report) = preprocess(read_to_lines(path)?, usize::MAX, table)?;
    if let Some((line, what)) = report.skipped.first() {
        return Err(DatasetError::BadRecord {
            line: *line,
            what: what.clone(),
        });
    }
    Ok(ds)
}

pub fn save_vocab(vocab: &AtomVocab, path: &Path) -> Result<(), DatasetError> {
    let mut out = String::from("# molgen vocab v1: element charge hydrogens\n");
    for d in vocab.entries() {
        let _ = writeln!(
            out,
            "{} {} {}",
            d.element.symbol(),
            d.formal_charge,
            d.explicit_h
        );
    }
    write_text(path, &out)
}

pub fn load_vocab(path: &Path) -> Result<AtomVocab, DatasetError> {
    let mut entries = Vec::new();
    for (lineno, raw) in read_to_lines(path)?.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| DatasetError::BadRecord {
            line: lineno + 1,
            what: what.to_string(),
        };
        let mut parts = line.split_whitespace();
        let element = parts
            .next()
            .and_then(Element::from_symbol)
            .ok_or_else(|| bad("bad element"))?;
        let charge: i8 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad charge"))?;
        let h: u8 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad hydrogen count"))?;
        entries.push(
            AtomDescriptor::new(element, charge, h)
                .map_err(|e| bad(&e.to_string()))?,
        );
    }
    AtomVocab::new(entries).map_err(|e| DatasetError::BadRecord {
        line: 0,
        what: e.to_string(),
    })
}

pub fn save_certs(certs: &BTreeSet<Certificate>, path: &Path) -> Result<(), DatasetError> {
    let mut out = String::from("# molgen certificates v1\n");
    for c in certs {
        out.push_str(&c.to_hex());
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn load_certs(path: &Path) -> Result<BTreeSet<Certificate>, DatasetError> {
    let mut certs = BTreeSet::new();
    for (lineno, raw) in read_to_lines(path)?.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        certs.insert(Certificate::from_hex(line).ok_or(DatasetError::BadRecord {
            line: lineno + 1,
            what: "bad hex".into(),
        })?);
    }
    Ok(certs)
}

/// Samples batches of graphs sharing one node count, weighting node counts
/// by their frequency in the corpus. No padding anywhere downstream.
pub struct BatchSampler {
    groups: Vec<Vec<usize>>,
    /// Cumulative sizes for weighted group choice.
    cumulative: Vec<usize>,
}

impl BatchSampler {
    pub fn new(ds: &Dataset) -> BatchSampler {
        let mut by_n: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, g) in ds.graphs.iter().enumerate() {
            by_n.entry(g.node_count()).or_default().push(i);
        }
        let groups: Vec<Vec<usize>> = by_n.into_values().collect();
        let mut cumulative = Vec::with_capacity(groups.len());
        let mut acc = 0;
        for g in &groups {
            acc += g.len();
            cumulative.push(acc);
        }
        BatchSampler { groups, cumulative }
    }

    /// Indices of `batch_size` graphs sharing a node count, sampled with
    /// replacement.
    pub fn sample(&self, batch_size: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
        let total = *self.cumulative.last().expect("nonempty dataset");
        let pick = rng.gen_range(0..total);
        let gi = self.cumulative.partition_point(|&c| c <= pick);
        let group = &self.groups[gi];
        (0..batch_size)
            .map(|_| group[rng.gen_range(0..group.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn table() -> ValenceTable {
        ValenceTable::default()
    }

    #[test]
    fn preprocess_keeps_valid_lines_and_reports_skips() {
        let lines = vec![
            "# comment".to_string(),
            "C".to_string(),
            "C=O".to_string(),
            "Cl".to_string(),
            "".to_string(),
            "[NH4+]".to_string(),
        ];
        let (ds, report) = preprocess(lines, 9, &table()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(report.total, 4);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].1.contains("Cl"));
        assert!(ds.vocab.len() >= 3);
    }

    #[test]
    fn preprocess_aborts_on_majority_garbage() {
        let lines = vec![
            "C".to_string(),
            "Xx".to_string(),
            "Yy".to_string(),
            "Zz".to_string(),
        ];
        assert!(matches!(
            preprocess(lines, 9, &table()),
            Err(DatasetError::TooManySkipped { skipped: 3, total: 4 })
        ));
    }

    #[test]
    fn dataset_files_roundtrip() {
        let dir = std::env::temp_dir().join(format!("molgen-ds-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let graphs: Vec<_> = (0..30)
            .map(|_| crate::chem::synth::random_valid_molecule(&mut rng, 9, &table()))
            .collect();
        let ds = Dataset::from_graphs(graphs);

        let dpath = dir.join("data.smi");
        let vpath = dir.join("vocab.txt");
        let cpath = dir.join("certs.txt");
        save_dataset(&ds, &dpath, &table()).unwrap();
        save_vocab(&ds.vocab, &vpath).unwrap();
        save_certs(&ds.certs, &cpath).unwrap();

        let ds2 = load_dataset(&dpath, &table()).unwrap();
        assert_eq!(ds2.len(), ds.len());
        assert_eq!(ds2.certs, ds.certs);
        assert_eq!(load_vocab(&vpath).unwrap(), ds.vocab);
        assert_eq!(load_certs(&cpath).unwrap(), ds.certs);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn batch_sampler_groups_by_node_count() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let graphs: Vec<_> = (0..50)
            .map(|_| crate::chem::synth::random_valid_molecule(&mut rng, 6, &table()))
            .collect();
        let ds = Dataset::from_graphs(graphs);
        let sampler = BatchSampler::new(&ds);
        for _ in 0..30 {
            let batch = sampler.sample(8, &mut rng);
            assert_eq!(batch.len(), 8);
            let n0 = ds.graphs[batch[0]].node_count();
            assert!(batch.iter().all(|&i| ds.graphs[i].node_count() == n0));
        }
    }
}
