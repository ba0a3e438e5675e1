//! Diagnostics: over-smoothing depth probe, path-length stratification and
//! strongest cross-molecular edges.

use std::collections::VecDeque;
use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::joint::build_joint;
use crate::metrics::{accumulate, macro_metrics, Metrics, MetricsError};
use crate::model::{gformer_layer, refine, ModelConfig, ModelError, ModelParams};
use crate::smiles::{featurize, parse_smiles, Molecule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("requested {k} edges but only {available} cross-molecular entries exist")]
    KExceedsEdges { k: usize, available: usize },
    #[error("boundary {boundary} outside matrix of size {size}")]
    BadBoundary { boundary: usize, size: usize },
    #[error("{stats} statistics for {samples} samples")]
    LengthMismatch { stats: usize, samples: usize },
    #[error("nothing to stratify")]
    Empty,
    #[error("quantile count must be at least 1")]
    ZeroQuantiles,
    #[error("depth probe needs max_depth >= 2 and trials >= 1")]
    ProbeArgs,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn bfs(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].expect("queued nodes are reached");
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Mean shortest-path length over unordered atom pairs. Pairs in different
/// components are skipped; with no connected pair the result is 0.
pub fn avg_shortest_path(mol: &Molecule) -> f64 {
    let n = mol.atom_count();
    let adj = mol.neighbors();
    let (mut total, mut pairs) = (0usize, 0usize);
    for s in 0..n {
        for d in bfs(&adj, s).into_iter().skip(s + 1).flatten() {
            total += d;
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total as f64 / pairs as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatistic {
    /// Mean of both drugs' values.
    #[default]
    PairMean,
    FirstDrug,
}

pub fn pair_path_statistic(first: &Molecule, second: &Molecule, which: PathStatistic) -> f64 {
    match which {
        PathStatistic::PairMean => 0.5 * (avg_shortest_path(first) + avg_shortest_path(second)),
        PathStatistic::FirstDrug => avg_shortest_path(first),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stratum {
    pub index: usize,
    /// Inclusive upper statistic bound; `None` for the last stratum.
    pub upper: Option<f64>,
    pub count: usize,
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceStrata {
    pub statistics: Vec<f64>,
    /// `quantiles - 1` cut points, nondecreasing.
    pub boundaries: Vec<f64>,
    pub assignment: Vec<usize>,
    pub strata: Vec<Stratum>,
}

impl DistanceStrata {
    /// Tab-separated `stratum, upper, count, accuracy, macro_f1` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("stratum\tupper\tcount\taccuracy\tmacro_f1\n");
        for s in &self.strata {
            let upper = s.upper.map_or("inf".to_string(), |u| u.to_string());
            let (acc, f1) = s
                .metrics
                .map_or(("nan".to_string(), "nan".to_string()), |m| {
                    (m.accuracy.to_string(), m.macro_f1.to_string())
                });
            writeln!(out, "{}\t{upper}\t{}\t{acc}\t{f1}", s.index, s.count).expect("string write");
        }
        out
    }
}

/// Cut points `sorted[ceil(k·n/q) - 1]` for `k = 1..q`.
pub fn quantile_boundaries(stats: &[f64], quantiles: usize) -> Vec<f64> {
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (1..quantiles)
        .map(|k| sorted[(k * n).div_ceil(quantiles) - 1])
        .collect()
}

/// Buckets samples by their path statistic. A value equal to a cut point
/// belongs to the lower stratum.
pub fn stratify_by_distance(
    stats: &[f64],
    preds: &[usize],
    labels: &[usize],
    classes: usize,
    quantiles: usize,
) -> Result<DistanceStrata, AnalysisError> {
    if quantiles == 0 {
        return Err(AnalysisError::ZeroQuantiles);
    }
    if stats.len() != labels.len() {
        return Err(AnalysisError::LengthMismatch {
            stats: stats.len(),
            samples: labels.len(),
        });
    }
    if stats.is_empty() {
        return Err(AnalysisError::Empty);
    }
    accumulate(preds, labels, classes)?;
    let boundaries = quantile_boundaries(stats, quantiles);
    let assignment: Vec<usize> = stats
        .iter()
        .map(|&s| {
            boundaries
                .iter()
                .position(|&b| s <= b)
                .unwrap_or(quantiles - 1)
        })
        .collect();
    let strata = (0..quantiles)
        .map(|index| {
            let members: Vec<usize> = (0..stats.len())
                .filter(|&i| assignment[i] == index)
                .collect();
            let metrics = if members.is_empty() {
                None
            } else {
                let p: Vec<usize> = members.iter().map(|&i| preds[i]).collect();
                let l: Vec<usize> = members.iter().map(|&i| labels[i]).collect();
                Some(macro_metrics(&accumulate(&p, &l, classes)?)?)
            };
            Ok(Stratum {
                index,
                upper: boundaries.get(index).copied(),
                count: members.len(),
                metrics,
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(DistanceStrata {
        statistics: stats.to_vec(),
        boundaries,
        assignment,
        strata,
    })
}

/// Mean cosine similarity over unordered row pairs; zero rows count as 0.
pub fn mean_pairwise_cosine(x: &Array2<f64>) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 1.0;
    }
    let norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let denom = norms[i] * norms[j];
            if denom > 0.0 {
                total += (x.row(i).dot(&x.row(j)) / denom).clamp(-1.0, 1.0);
            }
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// `D^{-1/2}(A + I)D^{-1/2}·F` with `D` the row sums of `A + I`.
pub fn plain_propagate(adjacency: &Array2<f64>, features: &Array2<f64>) -> Array2<f64> {
    let n = adjacency.nrows();
    let a = adjacency + &Array2::<f64>::eye(n);
    let inv_sqrt: Vec<f64> = a.sum_axis(Axis(1)).iter().map(|d| 1.0 / d.sqrt()).collect();
    let norm = Array2::from_shape_fn((n, n), |(i, j)| inv_sqrt[i] * a[[i, j]] * inv_sqrt[j]);
    norm.dot(features)
}

/// Small drug-like molecules the probe draws its random pairs from.
pub const PROBE_MOLECULES: &[&str] = &[
    "CCO",
    "CC(=O)O",
    "c1ccccc1",
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "CC(=O)Nc1ccc(O)cc1",
    "c1ccc2ccccc2c1",
    "C1CCNCC1",
    "OC(=O)CCC(=O)O",
    "NCCc1ccc(O)c(O)c1",
    "CN(C)CCOC(c1ccccc1)c1ccccc1",
    "Clc1ccc(cc1)C(=O)N",
    "CCN(CC)CC",
    "c1ccncc1",
    "OCC(O)CO",
    "CC(C)NCC(O)COc1cccc2ccccc12",
    "C1CCC(CC1)N",
    "O=C1NC(=O)c2ccccc12",
    "CSCCC(N)C(=O)O",
    "FC(F)(F)c1ccccc1",
    "CC1=CC(=O)C=CC1=O",
    "OC(=O)c1ccccc1O",
    "CCOC(=O)C1=CC=CC=C1",
];

/// Per-depth mean pairwise cosine similarity of node embeddings for both
/// stacks. Index `d` holds the value after `d + 1` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthProbeReport {
    pub plain: Vec<f64>,
    pub gformer: Vec<f64>,
    pub per_trial: Vec<TrialTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    pub first: String,
    pub second: String,
    pub plain: Vec<f64>,
    pub gformer: Vec<f64>,
}

impl DepthProbeReport {
    /// Trials whose plain-stack similarity at `depth` (1-based) exceeds the
    /// GFormer stack's.
    pub fn plain_wins_at(&self, depth: usize) -> usize {
        self.per_trial
            .iter()
            .filter(|t| t.plain[depth - 1] > t.gformer[depth - 1])
            .count()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("depth\tplain\tgformer\n");
        for (d, (p, g)) in self.plain.iter().zip(&self.gformer).enumerate() {
            writeln!(out, "{}\t{p}\t{g}", d + 1).expect("string write");
        }
        out
    }
}

/// Probe width; small enough to keep 100 trials well under a second each.
const PROBE_DIM: usize = 32;
const PROBE_HEADS: usize = 4;

/// Untrained over-smoothing probe. Each trial draws a random drug pair and a
/// randomly initialized model, builds the refined joint adjacency and
/// projected features, then applies `max_depth` layers of plain normalized
/// propagation and of GFormer layers from the same starting point.
pub fn depth_probe(
    seed: u64,
    max_depth: usize,
    trials: usize,
) -> Result<DepthProbeReport, AnalysisError> {
    if max_depth < 2 || trials == 0 {
        return Err(AnalysisError::ProbeArgs);
    }
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| probe_trial(seed, t as u64, max_depth))
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    let mean = |pick: fn(&TrialTrace) -> &Vec<f64>| -> Vec<f64> {
        (0..max_depth)
            .map(|d| per_trial.iter().map(|t| pick(t)[d]).sum::<f64>() / trials as f64)
            .collect()
    };
    Ok(DepthProbeReport {
        plain: mean(|t| &t.plain),
        gformer: mean(|t| &t.gformer),
        per_trial,
    })
}

fn probe_trial(seed: u64, trial: u64, max_depth: usize) -> Result<TrialTrace, AnalysisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let first = PROBE_MOLECULES[rng.random_range(0..PROBE_MOLECULES.len())];
    let second = PROBE_MOLECULES[rng.random_range(0..PROBE_MOLECULES.len())];
    let a = featurize(&parse_smiles(first).expect("probe molecules parse"));
    let b = featurize(&parse_smiles(second).expect("probe molecules parse"));
    build_joint(&a, &b).map_err(ModelError::from)?;

    let config = ModelConfig {
        dim: PROBE_DIM,
        hidden: 2 * PROBE_DIM,
        heads: PROBE_HEADS,
        layers: max_depth,
        ..ModelConfig::new(2)
    };
    let params = ModelParams::init(config, rng.random())?;
    let refined = refine(&a, &b, &params)?;

    let mut plain = Vec::with_capacity(max_depth);
    let mut f = refined.hidden.clone();
    for _ in 0..max_depth {
        f = plain_propagate(&refined.integrated, &f);
        plain.push(mean_pairwise_cosine(&f));
    }

    let mut gformer = Vec::with_capacity(max_depth);
    let mut tape = params.tape();
    let adjacency = tape.constant(refined.integrated.clone());
    let mut f = tape.constant(refined.hidden);
    for layer in &params.layers {
        f = gformer_layer(&mut tape, f, adjacency, layer, config.ln_eps)?;
        gformer.push(mean_pairwise_cosine(tape.value(f)));
    }
    Ok(TrialTrace {
        first: first.to_string(),
        second: second.to_string(),
        plain,
        gformer,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub p: usize,
    pub q: usize,
    pub weight: f64,
}

/// The `k` heaviest entries `A[p][q]` with `p < boundary <= q`, heaviest
/// first, equal weights ordered by `(p, q)`.
pub fn top_edges(a: &Array2<f64>, k: usize, boundary: usize) -> Result<Vec<Edge>, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::ZeroK);
    }
    let (n, m) = a.dim();
    if boundary > n || boundary > m {
        return Err(AnalysisError::BadBoundary { boundary, size: n });
    }
    let mut edges: Vec<Edge> = (0..boundary)
        .flat_map(|p| (boundary..m).map(move |q| (p, q)))
        .map(|(p, q)| Edge {
            p,
            q,
            weight: a[[p, q]],
        })
        .collect();
    if k > edges.len() {
        return Err(AnalysisError::KExceedsEdges {
            k,
            available: edges.len(),
        });
    }
    edges.sort_by(|x, y| {
        y.weight
            .total_cmp(&x.weight)
            .then((x.p, x.q).cmp(&(y.p, y.q)))
    });
    edges.truncate(k);
    Ok(edges)
}
