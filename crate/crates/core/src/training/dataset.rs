use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::{featurize, parse_smiles, FeaturedGraph, Molecule};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column {0:?} in header")]
    MissingColumn(&'static str),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("dataset has no usable samples")]
    EmptyDataset,
}

/// One labelled drug pair as it appears in a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DDISample {
    pub smiles_1: String,
    pub smiles_2: String,
    pub label: usize,
}

/// A row that was dropped because one of its SMILES failed to parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Quarantined {
    pub line: u64,
    pub reason: String,
}

/// A distinct drug, parsed and featurized once.
#[derive(Debug, Clone, PartialEq)]
pub struct Drug {
    pub smiles: String,
    pub molecule: Molecule,
    pub graph: FeaturedGraph,
}

/// Usable samples in file order with a shared drug table.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<DDISample>,
    /// Drug-table indices of each sample's two drugs.
    pub pairs: Vec<(usize, usize)>,
    pub drugs: Vec<Drug>,
    pub classes: usize,
    pub quarantined: Vec<Quarantined>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label(&self, sample: usize) -> usize {
        self.samples[sample].label
    }

    pub fn graphs(&self, sample: usize) -> (&FeaturedGraph, &FeaturedGraph) {
        let (a, b) = self.pairs[sample];
        (&self.drugs[a].graph, &self.drugs[b].graph)
    }

    /// Builds a dataset from in-memory rows; row `i` is reported as line `i + 2`
    /// (as if a header occupied line 1).
    pub fn from_samples(samples: Vec<DDISample>) -> Result<Self, DatasetError> {
        let rows = samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| (i as u64 + 2, s))
            .collect();
        Self::assemble(rows)
    }

    /// Overrides the class count, e.g. to match a checkpoint trained on a
    /// larger label space.
    pub fn with_classes(mut self, classes: usize) -> Result<Self, DatasetError> {
        if let Some(s) = self.samples.iter().find(|s| s.label >= classes) {
            return Err(DatasetError::MalformedRow {
                line: 0,
                reason: format!("label {} does not fit {classes} classes", s.label),
            });
        }
        self.classes = classes;
        Ok(self)
    }

    fn assemble(rows: Vec<(u64, DDISample)>) -> Result<Self, DatasetError> {
        let mut index: HashMap<String, Option<usize>> = HashMap::new();
        let mut errors: HashMap<String, String> = HashMap::new();
        let mut drugs = Vec::new();
        let mut samples = Vec::new();
        let mut pairs = Vec::new();
        let mut quarantined = Vec::new();

        let mut resolve = |smiles: &str| -> Result<usize, String> {
            if let Some(slot) = index.get(smiles) {
                return slot.ok_or_else(|| errors[smiles].clone());
            }
            match parse_smiles(smiles) {
                Ok(molecule) => {
                    let graph = featurize(&molecule);
                    drugs.push(Drug {
                        smiles: smiles.to_string(),
                        molecule,
                        graph,
                    });
                    index.insert(smiles.to_string(), Some(drugs.len() - 1));
                    Ok(drugs.len() - 1)
                }
                Err(e) => {
                    let reason = format!("{smiles:?}: {e}");
                    index.insert(smiles.to_string(), None);
                    errors.insert(smiles.to_string(), reason.clone());
                    Err(reason)
                }
            }
        };

        for (line, sample) in rows {
            let first = resolve(&sample.smiles_1);
            let second = resolve(&sample.smiles_2);
            match (first, second) {
                (Ok(a), Ok(b)) => {
                    pairs.push((a, b));
                    samples.push(sample);
                }
                (Err(reason), _) | (_, Err(reason)) => {
                    warn!("quarantined line {line}: {reason}");
                    quarantined.push(Quarantined { line, reason });
                }
            }
        }
        if samples.is_empty() {
            return Err(DatasetError::EmptyDataset);
        }
        let classes = 1 + samples.iter().map(|s| s.label).max().expect("nonempty");
        Ok(Dataset {
            samples,
            pairs,
            drugs,
            classes,
            quarantined,
        })
    }
}

/// Reads a comma- or tab-delimited file with header columns
/// `smiles_1`, `smiles_2`, `label` (any order, extra columns ignored).
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Dataset, DatasetError> {
    let header = text.lines().next().unwrap_or("");
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let column = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(DatasetError::MissingColumn(name))
    };
    let (c1, c2, cl) = (column("smiles_1")?, column("smiles_2")?, column("label")?);

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if record.len() != headers.len() {
            return Err(DatasetError::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let raw_label = record[cl].trim();
        let label = raw_label
            .parse::<usize>()
            .map_err(|_| DatasetError::MalformedRow {
                line,
                reason: format!("label {raw_label:?} is not a nonnegative integer"),
            })?;
        rows.push((
            line,
            DDISample {
                smiles_1: record[c1].trim().to_string(),
                smiles_2: record[c2].trim().to_string(),
                label,
            },
        ));
    }
    Dataset::assemble(rows)
}
