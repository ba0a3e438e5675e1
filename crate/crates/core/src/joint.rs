//! Joint two-drug graph: block-diagonal assembly, feature projection,
//! attention-based adjacency reconstruction and the learnable blend of the
//! two adjacencies.

use ndarray::{s, Array2};
use thiserror::Error;

use crate::autodiff::{ParamId, Tape, TensorError, Var};
use crate::smiles::{FeaturedGraph, MAX_ATOMS};

/// Largest joint graph: two drugs at the per-drug cap.
pub const MAX_JOINT_ATOMS: usize = 2 * MAX_ATOMS;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JointError {
    #[error("joint graph has {atoms} atoms, cap is {MAX_JOINT_ATOMS}")]
    SizeCapExceeded { atoms: usize },
    #[error("hidden size {dim} is not divisible by {heads} heads")]
    HeadsNotDividing { dim: usize, heads: usize },
    #[error("feature widths differ: {left} vs {right}")]
    FeatureWidth { left: usize, right: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Two drugs placed as diagonal blocks of one graph. Atoms of the second
/// drug start at `boundary`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGraph {
    pub features: Array2<f64>,
    pub adjacency: Array2<f64>,
    pub boundary: usize,
}

impl JointGraph {
    pub fn atom_count(&self) -> usize {
        self.features.nrows()
    }

    /// True when `p` and `q` belong to different drugs.
    pub fn is_cross(&self, p: usize, q: usize) -> bool {
        (p < self.boundary) != (q < self.boundary)
    }
}

pub fn build_joint(
    first: &FeaturedGraph,
    second: &FeaturedGraph,
) -> Result<JointGraph, JointError> {
    let (n1, n2) = (first.atom_count(), second.atom_count());
    let n = n1 + n2;
    if n > MAX_JOINT_ATOMS {
        return Err(JointError::SizeCapExceeded { atoms: n });
    }
    let (d1, d2) = (first.features.ncols(), second.features.ncols());
    if d1 != d2 {
        return Err(JointError::FeatureWidth {
            left: d1,
            right: d2,
        });
    }
    let mut features = Array2::zeros((n, d1));
    features.slice_mut(s![..n1, ..]).assign(&first.features);
    features.slice_mut(s![n1.., ..]).assign(&second.features);
    let mut adjacency = Array2::zeros((n, n));
    adjacency.slice_mut(s![..n1, ..n1]).assign(&first.adjacency);
    adjacency
        .slice_mut(s![n1.., n1..])
        .assign(&second.adjacency);
    Ok(JointGraph {
        features,
        adjacency,
        boundary: n1,
    })
}

/// Affine map from atom descriptors to the hidden size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectionParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Per-head query and key maps, each `dim × dim/heads`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadParams {
    pub query: ParamId,
    pub key: ParamId,
}

/// `H = F′·W + b`
pub fn project(
    tape: &mut Tape<'_>,
    features: Var,
    params: &ProjectionParams,
) -> Result<Var, JointError> {
    let w = tape.param(params.weight);
    let b = tape.param(params.bias);
    let xw = tape.matmul(features, w)?;
    Ok(tape.add_row(xw, b)?)
}

/// Reconstructed adjacency: the head-averaged attention weights
/// `softmax(Q_h K_hᵀ / √(dim/heads))`. Each row is a probability distribution
/// over all atoms of both drugs.
pub fn cross_attention(
    tape: &mut Tape<'_>,
    hidden: Var,
    params: &AttentionParams,
) -> Result<Var, JointError> {
    let heads = params.heads.len();
    let dim = tape.shape(hidden).1;
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(JointError::HeadsNotDividing { dim, heads });
    }
    let scale = 1.0 / ((dim / heads) as f64).sqrt();
    let mut total: Option<Var> = None;
    for head in &params.heads {
        let wq = tape.param(head.query);
        let wk = tape.param(head.key);
        let q = tape.matmul(hidden, wq)?;
        let k = tape.matmul(hidden, wk)?;
        let scores = tape.matmul_transposed(q, k)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scores)?;
        total = Some(match total {
            None => weights,
            Some(acc) => tape.add(acc, weights)?,
        });
    }
    let total = total.expect("at least one head");
    Ok(if heads == 1 {
        total
    } else {
        tape.scale(total, 1.0 / heads as f64)
    })
}

/// `A = (1 − α)·A′ + α·A_r` with `α = logistic(θ)`. Returns `(A, α)`.
pub fn integrate(
    tape: &mut Tape<'_>,
    joint_adjacency: Var,
    reconstructed: Var,
    theta: ParamId,
) -> Result<(Var, Var), JointError> {
    let t = tape.param(theta);
    let alpha = tape.sigmoid(t);
    let blended = tape.lerp(joint_adjacency, reconstructed, alpha)?;
    Ok((blended, alpha))
}

/// Materialized adjacency refinement for one drug pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedAdjacency {
    pub hidden: Array2<f64>,
    pub reconstructed: Array2<f64>,
    pub integrated: Array2<f64>,
    pub alpha: f64,
    pub boundary: usize,
}
