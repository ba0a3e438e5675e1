//! SMILES front end: a strict subset parser and the per-atom feature encoder.
//!
//! Supported grammar:
//!
//! * organic-subset atoms `B C N O P S F Cl Br I` and aromatic `b c n o p s`
//! * bracket atoms `[NH4+]`, `[O-]`, `[nH]`, `[Fe+2]` with hydrogen count and charge
//! * bond symbols `-` `=` `#` `:`
//! * branches `( … )`
//! * ring closures `1`..`9` and `%nn`
//!
//! Stereochemistry (`/`, `\`, `@`), isotopes, atom classes, quadruple bonds and
//! dot-separated components are rejected with [`SmilesError::UnsupportedToken`].

use std::collections::HashMap;

use ndarray::Array2;
use thiserror::Error;

/// Per-drug atom cap; joint graphs therefore hold at most 100 atoms.
pub const MAX_ATOMS: usize = 50;

/// Organic-subset symbols in feature order. Index 10 of the element block is "other".
pub const ELEMENTS: [&str; 10] = ["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"];

const ELEMENT_SLOTS: usize = ELEMENTS.len() + 1;
const DEGREE_SLOTS: usize = 7;
const CHARGE_SLOTS: usize = 5;
const HYDROGEN_SLOTS: usize = 5;

/// Width of a feature row: element(11) + degree(7) + charge(5) + hydrogens(5) + aromatic(1).
pub const FEATURE_DIM: usize = ELEMENT_SLOTS + DEGREE_SLOTS + CHARGE_SLOTS + HYDROGEN_SLOTS + 1;

/// Column offsets of the feature blocks, in order.
pub const FEATURE_BLOCKS: [(usize, usize); 4] = [
    (0, ELEMENT_SLOTS),
    (ELEMENT_SLOTS, DEGREE_SLOTS),
    (ELEMENT_SLOTS + DEGREE_SLOTS, CHARGE_SLOTS),
    (ELEMENT_SLOTS + DEGREE_SLOTS + CHARGE_SLOTS, HYDROGEN_SLOTS),
];
pub const AROMATIC_COLUMN: usize = FEATURE_DIM - 1;

#[rustfmt::skip]
const PERIODIC_TABLE: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga",
    "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd",
    "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm",
    "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os",
    "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa",
    "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg",
    "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    Empty,
    #[error("unsupported token {token:?} at position {pos}")]
    UnsupportedToken { pos: usize, token: String },
    #[error("unclosed branch opened at position {pos}")]
    UnclosedBranch { pos: usize },
    #[error("unmatched ring bond {label} at position {pos}")]
    UnmatchedRingBond { pos: usize, label: u32 },
    #[error("molecule exceeds the {MAX_ATOMS}-atom cap at position {pos}")]
    AtomCapExceeded { pos: usize },
    #[error("syntax error at position {pos}: {reason}")]
    Syntax { pos: usize, reason: &'static str },
    #[error("invalid molecule: {0}")]
    InvalidMolecule(String),
}

impl SmilesError {
    /// Byte offset of the offending token, when there is one.
    pub fn position(&self) -> Option<usize> {
        match self {
            SmilesError::UnsupportedToken { pos, .. }
            | SmilesError::UnclosedBranch { pos }
            | SmilesError::UnmatchedRingBond { pos, .. }
            | SmilesError::AtomCapExceeded { pos }
            | SmilesError::Syntax { pos, .. } => Some(*pos),
            SmilesError::Empty | SmilesError::InvalidMolecule(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    fn valence_contribution(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub element: String,
    pub charge: i32,
    pub aromatic: bool,
    pub hydrogens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

/// A parsed molecular graph with atoms in SMILES order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
}

impl Molecule {
    /// Builds a molecule, checking bond endpoints and duplicate bonds.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, SmilesError> {
        if atoms.is_empty() {
            return Err(SmilesError::InvalidMolecule("no atoms".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for bond in &bonds {
            if bond.a == bond.b {
                return Err(SmilesError::InvalidMolecule(format!(
                    "self bond on atom {}",
                    bond.a
                )));
            }
            if bond.a >= atoms.len() || bond.b >= atoms.len() {
                return Err(SmilesError::InvalidMolecule(format!(
                    "bond ({}, {}) out of range for {} atoms",
                    bond.a,
                    bond.b,
                    atoms.len()
                )));
            }
            if !seen.insert((bond.a.min(bond.b), bond.a.max(bond.b))) {
                return Err(SmilesError::InvalidMolecule(format!(
                    "duplicate bond ({}, {})",
                    bond.a, bond.b
                )));
            }
        }
        Ok(Molecule { atoms, bonds })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// Neighbor lists indexed by atom.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for bond in &self.bonds {
            adj[bond.a].push(bond.b);
            adj[bond.b].push(bond.a);
        }
        adj
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .count()
    }

    pub fn contains_element(&self, symbol: &str) -> bool {
        self.atoms.iter().any(|a| a.element == symbol)
    }
}

/// Per-drug node features and binary adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturedGraph {
    pub features: Array2<f64>,
    pub adjacency: Array2<f64>,
}

impl FeaturedGraph {
    pub fn atom_count(&self) -> usize {
        self.features.nrows()
    }
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    /// Atoms written in bracket form keep their explicit hydrogen count.
    bracketed: Vec<bool>,
    bonds: Vec<Bond>,
    rings: HashMap<u32, (usize, Option<BondOrder>, usize)>,
    branches: Vec<(usize, usize)>,
    prev: Option<usize>,
    pending_bond: Option<(BondOrder, usize)>,
}

/// Parses a SMILES string in the supported subset.
pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    if text.trim().is_empty() {
        return Err(SmilesError::Empty);
    }
    let mut parser = Parser {
        text: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bracketed: Vec::new(),
        bonds: Vec::new(),
        rings: HashMap::new(),
        branches: Vec::new(),
        prev: None,
        pending_bond: None,
    };
    parser.run()?;
    parser.finish()
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn unsupported(&self, pos: usize, len: usize) -> SmilesError {
        let end = (pos + len).min(self.text.len());
        SmilesError::UnsupportedToken {
            pos,
            token: String::from_utf8_lossy(&self.text[pos..end]).into_owned(),
        }
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    let Some(prev) = self.prev else {
                        return Err(SmilesError::Syntax {
                            pos: start,
                            reason: "branch without a preceding atom",
                        });
                    };
                    if self.pending_bond.is_some() {
                        return Err(SmilesError::Syntax {
                            pos: start,
                            reason: "bond symbol before branch",
                        });
                    }
                    self.branches.push((prev, start));
                    self.pos += 1;
                    if self.peek() == Some(b')') {
                        return Err(SmilesError::Syntax {
                            pos: start,
                            reason: "empty branch",
                        });
                    }
                }
                b')' => {
                    if self.pending_bond.is_some() {
                        return Err(SmilesError::Syntax {
                            pos: start,
                            reason: "dangling bond symbol",
                        });
                    }
                    let Some((anchor, _)) = self.branches.pop() else {
                        return Err(SmilesError::Syntax {
                            pos: start,
                            reason: "unmatched closing parenthesis",
                        });
                    };
                    self.prev = Some(anchor);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if self.prev.is_none() {
                        return Err(SmilesError::Syntax {
                            pos: start,
                            reason: "bond without a preceding atom",
                        });
                    }
                    if self.pending_bond.is_some() {
                        return Err(SmilesError::Syntax {
                            pos: start,
                            reason: "consecutive bond symbols",
                        });
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    self.pending_bond = Some((order, start));
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    self.pos += 1;
                    self.ring_closure((c - b'0') as u32, start)?;
                }
                b'%' => {
                    let digits = self.text.get(start + 1..start + 3);
                    match digits {
                        Some(d) if d.iter().all(u8::is_ascii_digit) => {
                            let label = ((d[0] - b'0') as u32) * 10 + (d[1] - b'0') as u32;
                            self.pos += 3;
                            self.ring_closure(label, start)?;
                        }
                        _ => return Err(self.unsupported(start, 3)),
                    }
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom, true, start)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom, false, start)?;
                }
            }
        }
        if let Some(&(_, pos)) = self.branches.last() {
            return Err(SmilesError::UnclosedBranch { pos });
        }
        if let Some((_, pos)) = self.pending_bond {
            return Err(SmilesError::Syntax {
                pos,
                reason: "dangling bond symbol",
            });
        }
        if let Some((&label, &(_, _, pos))) = self.rings.iter().min_by_key(|(_, v)| v.2) {
            return Err(SmilesError::UnmatchedRingBond { pos, label });
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let two = self.text.get(start..start + 2);
        let (symbol, aromatic, len) = match two {
            Some(b"Cl") => ("Cl", false, 2),
            Some(b"Br") => ("Br", false, 2),
            _ => match self.text[start] {
                b'B' => ("B", false, 1),
                b'C' => ("C", false, 1),
                b'N' => ("N", false, 1),
                b'O' => ("O", false, 1),
                b'P' => ("P", false, 1),
                b'S' => ("S", false, 1),
                b'F' => ("F", false, 1),
                b'I' => ("I", false, 1),
                b'b' => ("B", true, 1),
                b'c' => ("C", true, 1),
                b'n' => ("N", true, 1),
                b'o' => ("O", true, 1),
                b'p' => ("P", true, 1),
                b's' => ("S", true, 1),
                _ => {
                    let len = std::str::from_utf8(&self.text[start..])
                        .ok()
                        .and_then(|s| s.chars().next())
                        .map_or(1, char::len_utf8);
                    return Err(self.unsupported(start, len));
                }
            },
        };
        self.pos += len;
        Ok(Atom {
            element: symbol.to_string(),
            charge: 0,
            aromatic,
            hydrogens: 0,
        })
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        let Some(close_rel) = self.text[open..].iter().position(|&c| c == b']') else {
            return Err(SmilesError::Syntax {
                pos: open,
                reason: "unterminated bracket atom",
            });
        };
        let close = open + close_rel;
        let body = &self.text[open + 1..close];
        let mut i;
        if body.first().is_some_and(u8::is_ascii_digit) {
            return Err(self.unsupported(open + 1, 1));
        }
        // Element symbol, aromatic forms first.
        let (element, aromatic) = if body.starts_with(b"se") || body.starts_with(b"as") {
            i = 2;
            let sym = if body[0] == b's' { "Se" } else { "As" };
            (sym.to_string(), true)
        } else if let Some(&c) = body.first() {
            if matches!(c, b'b' | b'c' | b'n' | b'o' | b'p' | b's') {
                i = 1;
                ((c.to_ascii_uppercase() as char).to_string(), true)
            } else if c.is_ascii_uppercase() {
                let two_letter = body
                    .get(..2)
                    .filter(|s| s[1].is_ascii_lowercase())
                    .and_then(|s| std::str::from_utf8(s).ok())
                    .filter(|s| PERIODIC_TABLE.contains(s));
                match two_letter {
                    Some(s) => {
                        i = 2;
                        (s.to_string(), false)
                    }
                    None => {
                        let s = (c as char).to_string();
                        if !PERIODIC_TABLE.contains(&s.as_str()) {
                            return Err(self.unsupported(open + 1, 1));
                        }
                        i = 1;
                        (s, false)
                    }
                }
            } else {
                return Err(self.unsupported(open + 1, 1));
            }
        } else {
            return Err(SmilesError::Syntax {
                pos: open,
                reason: "empty bracket atom",
            });
        };

        let mut hydrogens = 0u32;
        if body.get(i) == Some(&b'H') {
            i += 1;
            hydrogens = 1;
            if let Some(d) = body.get(i).filter(|d| d.is_ascii_digit()) {
                hydrogens = (d - b'0') as u32;
                i += 1;
            }
        }

        let mut charge = 0i32;
        if let Some(&sign) = body.get(i).filter(|c| **c == b'+' || **c == b'-') {
            let unit = if sign == b'+' { 1 } else { -1 };
            i += 1;
            charge = unit;
            if let Some(d) = body.get(i).filter(|d| d.is_ascii_digit()) {
                charge = unit * (d - b'0') as i32;
                i += 1;
            } else {
                while body.get(i) == Some(&sign) {
                    charge += unit;
                    i += 1;
                }
            }
        }

        if i != body.len() {
            // chirality, atom classes, anything else
            return Err(self.unsupported(open + 1 + i, 1));
        }
        self.pos = close + 1;
        Ok(Atom {
            element,
            charge,
            aromatic,
            hydrogens,
        })
    }

    fn add_atom(&mut self, atom: Atom, bracketed: bool, pos: usize) -> Result<(), SmilesError> {
        if self.atoms.len() == MAX_ATOMS {
            return Err(SmilesError::AtomCapExceeded { pos });
        }
        let idx = self.atoms.len();
        self.atoms.push(atom);
        self.bracketed.push(bracketed);
        if let Some(prev) = self.prev {
            let written = self.pending_bond.take().map(|(o, _)| o);
            self.push_bond(prev, idx, written);
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn push_bond(&mut self, a: usize, b: usize, written: Option<BondOrder>) {
        let order = written.unwrap_or(if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        });
        self.bonds.push(Bond { a, b, order });
    }

    fn ring_closure(&mut self, label: u32, pos: usize) -> Result<(), SmilesError> {
        let Some(current) = self.prev else {
            return Err(SmilesError::Syntax {
                pos,
                reason: "ring closure without a preceding atom",
            });
        };
        let written = self.pending_bond.take().map(|(o, _)| o);
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(label, (current, written, pos));
            }
            Some((opener, opened_with, _)) => {
                let order = match (opened_with, written) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(SmilesError::UnmatchedRingBond { pos, label })
                    }
                    (x, y) => x.or(y),
                };
                let duplicate = self.bonds.iter().any(|b| {
                    (b.a == opener && b.b == current) || (b.a == current && b.b == opener)
                });
                if opener == current || duplicate {
                    return Err(SmilesError::UnmatchedRingBond { pos, label });
                }
                self.push_bond(opener, current, order);
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Molecule, SmilesError> {
        for idx in 0..self.atoms.len() {
            if self.bracketed[idx] {
                continue;
            }
            let bond_sum: u32 = self
                .bonds
                .iter()
                .filter(|b| b.a == idx || b.b == idx)
                .map(|b| b.order.valence_contribution())
                .sum();
            let atom = &self.atoms[idx];
            let demand = bond_sum + u32::from(atom.aromatic);
            let implicit = standard_valences(&atom.element)
                .iter()
                .find(|&&v| v >= demand)
                .map_or(0, |v| v - demand);
            self.atoms[idx].hydrogens = implicit;
        }
        Molecule::new(self.atoms, self.bonds)
    }
}

fn standard_valences(element: &str) -> &'static [u32] {
    match element {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        _ => &[],
    }
}

/// Encodes every atom into the fixed 29-column descriptor row and builds the
/// binary heavy-atom adjacency.
///
/// Column layout: element one-hot (`ELEMENTS` then "other"), degree 0..=6,
/// formal charge -2..=+2, attached hydrogens 0..=4, aromatic flag. Out-of-range
/// degree/charge/hydrogen values clamp to the nearest bucket.
pub fn featurize(mol: &Molecule) -> FeaturedGraph {
    let n = mol.atom_count();
    let mut features = Array2::zeros((n, FEATURE_DIM));
    let mut adjacency = Array2::zeros((n, n));
    for bond in mol.bonds() {
        adjacency[[bond.a, bond.b]] = 1.0;
        adjacency[[bond.b, bond.a]] = 1.0;
    }
    for (i, atom) in mol.atoms().iter().enumerate() {
        let element = ELEMENTS
            .iter()
            .position(|&e| e == atom.element)
            .unwrap_or(ELEMENTS.len());
        let degree = mol.degree(i).min(DEGREE_SLOTS - 1);
        let charge = (atom.charge.clamp(-2, 2) + 2) as usize;
        let hydrogens = (atom.hydrogens as usize).min(HYDROGEN_SLOTS - 1);
        let [e, d, c, h] = FEATURE_BLOCKS;
        features[[i, e.0 + element]] = 1.0;
        features[[i, d.0 + degree]] = 1.0;
        features[[i, c.0 + charge]] = 1.0;
        features[[i, h.0 + hydrogens]] = 1.0;
        if atom.aromatic {
            features[[i, AROMATIC_COLUMN]] = 1.0;
        }
    }
    FeaturedGraph {
        features,
        adjacency,
    }
}
