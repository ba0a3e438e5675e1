#![allow(dead_code)]

use std::path::Path;

use molbridge_core::smiles::{parse_smiles, Molecule};
use molbridge_core::training::{DDISample, Dataset};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Drug-like molecules within the supported SMILES subset.
pub const DRUGS: &[&str] = &[
    "CCO",
    "CC(=O)O",
    "CC(=O)Oc1ccccc1C(=O)O",
    "CC(=O)Nc1ccc(O)cc1",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "c1ccccc1",
    "Cc1ccccc1",
    "c1ccc2ccccc2c1",
    "C1CCNCC1",
    "C1CCCCC1",
    "CCCCCC",
    "CC(C)C",
    "CCN(CC)CC",
    "c1ccncc1",
    "OCC(O)CO",
    "NCCc1ccc(O)c(O)c1",
    "CN(C)CCOC(c1ccccc1)c1ccccc1",
    "Clc1ccc(cc1)C(=O)N",
    "FC(F)(F)c1ccccc1",
    "CC(C)NCC(O)COc1cccc2ccccc12",
    "C1CCC(CC1)N",
    "O=C1NC(=O)c2ccccc12",
    "CSCCC(N)C(=O)O",
    "CC1=CC(=O)C=CC1=O",
    "OC(=O)c1ccccc1O",
    "CCOC(=O)c1ccccc1",
    "Clc1ccccc1Cl",
    "Brc1ccccc1",
    "CCCl",
    "ClCCCl",
    "CC(C)(C)c1ccccc1",
    "CCCCN",
    "NC(=O)N",
    "CC#N",
    "C=CC=C",
    "CCS",
    "CSC",
    "CC(=O)C",
    "OC1CCCCC1",
    "c1ccc(cc1)N",
    "c1ccc(cc1)Cl",
    "c1ccoc1",
    "c1ccsc1",
    "c1cc[nH]c1",
    "CCCCCCCC",
    "NCCN",
    "OCCO",
    "FCCF",
    "CC(F)(F)F",
    "C1CC1",
    "C1CCOC1",
    "CN1CCCC1",
    "CC(N)C(=O)O",
    "NCC(=O)O",
    "OC(=O)CCC(=O)O",
    "CCC(=O)OC",
    "c1ccc2[nH]ccc2c1",
    "c1cnc2ccccc2c1",
    "ClC(Cl)Cl",
];

pub fn molecule(smiles: &str) -> Molecule {
    parse_smiles(smiles).unwrap_or_else(|e| panic!("{smiles}: {e}"))
}

pub fn has_oxygen(m: &Molecule) -> bool {
    m.contains_element("O")
}

pub fn has_nitrogen(m: &Molecule) -> bool {
    m.contains_element("N")
}

pub fn has_halogen(m: &Molecule) -> bool {
    ["F", "Cl", "Br", "I"].iter().any(|e| m.contains_element(e))
}

pub fn is_aromatic(m: &Molecule) -> bool {
    m.atoms().iter().any(|a| a.aromatic)
}

/// Four classes from oxygen and nitrogen anywhere in the pair. The model
/// cannot tell which drug came first, so rules must not either.
pub fn four_class_label(a: &Molecule, b: &Molecule) -> usize {
    2 * usize::from(has_oxygen(a) || has_oxygen(b))
        + usize::from(has_nitrogen(a) || has_nitrogen(b))
}

/// Five-class event rule over the unordered pair; class 4 overrides when both
/// drugs are halogenated.
pub fn event_label(a: &Molecule, b: &Molecule) -> usize {
    if has_halogen(a) && has_halogen(b) {
        4
    } else {
        2 * usize::from(has_nitrogen(a) || has_nitrogen(b))
            + usize::from(is_aromatic(a) && is_aromatic(b))
    }
}

/// `n` random drug pairs labelled by `rule`, balanced across classes when
/// possible.
pub fn balanced_pairs(
    n: usize,
    classes: usize,
    seed: u64,
    rule: fn(&Molecule, &Molecule) -> usize,
) -> Vec<DDISample> {
    let mols: Vec<Molecule> = DRUGS.iter().map(|s| molecule(s)).collect();
    let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); classes];
    for i in 0..DRUGS.len() {
        for j in 0..DRUGS.len() {
            if i != j {
                buckets[rule(&mols[i], &mols[j])].push((i, j));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in &mut buckets {
        b.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(n);
    let mut cursor = vec![0usize; classes];
    let mut c = 0;
    while out.len() < n {
        if cursor[c] < buckets[c].len() {
            let (i, j) = buckets[c][cursor[c]];
            cursor[c] += 1;
            out.push(DDISample {
                smiles_1: DRUGS[i].to_string(),
                smiles_2: DRUGS[j].to_string(),
                label: c,
            });
        }
        c = (c + 1) % classes;
        assert!(
            cursor.iter().zip(&buckets).any(|(k, b)| *k < b.len()),
            "pool exhausted"
        );
    }
    out.shuffle(&mut rng);
    out
}

/// A noisy multi-class interaction file: pairs drawn uniformly, labelled by
/// [`event_label`] with a fraction of labels replaced at random.
pub fn write_event_file(path: &Path, n: usize, noise: f64, seed: u64) {
    let mols: Vec<Molecule> = DRUGS.iter().map(|s| molecule(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("smiles_1,smiles_2,label\n");
    for _ in 0..n {
        let i = rng.random_range(0..DRUGS.len());
        let mut j = rng.random_range(0..DRUGS.len() - 1);
        if j >= i {
            j += 1;
        }
        let mut label = event_label(&mols[i], &mols[j]);
        if rng.random::<f64>() < noise {
            label = rng.random_range(0..5);
        }
        text.push_str(&format!("{},{},{label}\n", DRUGS[i], DRUGS[j]));
    }
    std::fs::write(path, text).unwrap();
}

/// `m` distinct chain/branch drugs with random pairs among them.
pub fn drug_universe(m: usize, pairs: usize, seed: u64) -> Dataset {
    let names: Vec<String> = (0..m)
        .map(|k| {
            let chain = "C".repeat(1 + k % 12);
            let tail = ["", "O", "N", "Cl", "F"][k / 12 % 5];
            format!("{chain}{tail}")
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let a = rng.random_range(0..m);
        let mut b = rng.random_range(0..m - 1);
        if b >= a {
            b += 1;
        }
        samples.push(DDISample {
            smiles_1: names[a].clone(),
            smiles_2: names[b].clone(),
            label: rng.random_range(0..3),
        });
    }
    Dataset::from_samples(samples).unwrap()
}
