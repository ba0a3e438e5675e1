//! Structure-consistency stack, multi-scale readout and classifier.
//!
//! One forward pass over a drug pair with `N = N₁ + N₂` atoms:
//!
//! 1. `F′, A′` ← block-diagonal joint graph
//! 2. `H = F′W_p + b_p`
//! 3. `A_r` ← head-averaged attention weights over `H`
//! 4. `A = (1 − α)A′ + αA_r`
//! 5. `L` GFormer layers: `X = LN((A + I)F) + F`, `F ← LN(FFN(X) + X)`
//! 6. `h = Σ_l Σ_i F^l_i` over every layer including `F⁰ = H`
//! 7. `ŷ = softmax(MLP(h))`
//!
//! Cost is `O(N²·dim + L·(N²·dim + N·dim·d_hid))`, dominated by the
//! quadratic attention and propagation terms; `N ≤ 100` keeps dense kernels
//! cheap.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softmax_rows, ParamId, ParamStore, Tape, TensorError, Var};
use crate::joint::{
    build_joint, cross_attention, integrate, project, AttentionParams, HeadParams, JointError,
    JointGraph, ProjectionParams, RefinedAdjacency,
};
use crate::smiles::{FeaturedGraph, FEATURE_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Joint(#[from] JointError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub dim: usize,
    /// FFN hidden width.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub classes: usize,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// Defaults: 3 layers, 4 heads, `dim = 64`, `d_hid = 2·dim`.
    pub fn new(classes: usize) -> Self {
        ModelConfig {
            feature_dim: FEATURE_DIM,
            dim: 64,
            hidden: 128,
            layers: 3,
            heads: 4,
            classes,
            ln_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.layers == 0 {
            return fail("at least one GFormer layer is required".into());
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.feature_dim == 0 || self.dim == 0 || self.hidden == 0 {
            return fail("feature_dim, dim and hidden must be positive".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(JointError::HeadsNotDividing {
                dim: self.dim,
                heads: self.heads,
            }
            .into());
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return fail("ln_eps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GFormerLayerParams {
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Two-layer MLP head: `dim → dim (ReLU) → classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Every learnable tensor of the predictor plus handles into the store.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub projection: ProjectionParams,
    pub attention: AttentionParams,
    pub theta: ParamId,
    pub layers: Vec<GFormerLayerParams>,
    pub classifier: ClassifierParams,
}

enum Init {
    Glorot,
    Zeros,
    Ones,
}

fn build_layout(
    config: &ModelConfig,
    mut get: impl FnMut(String, (usize, usize), Init) -> Result<ParamId, ModelError>,
) -> Result<
    (
        ProjectionParams,
        AttentionParams,
        ParamId,
        Vec<GFormerLayerParams>,
        ClassifierParams,
    ),
    ModelError,
> {
    let (d, dim, hid, c) = (
        config.feature_dim,
        config.dim,
        config.hidden,
        config.classes,
    );
    let head_dim = dim / config.heads;
    let projection = ProjectionParams {
        weight: get("projection.weight".into(), (d, dim), Init::Glorot)?,
        bias: get("projection.bias".into(), (1, dim), Init::Zeros)?,
    };
    let heads = (0..config.heads)
        .map(|h| {
            Ok(HeadParams {
                query: get(
                    format!("attention.{h}.query"),
                    (dim, head_dim),
                    Init::Glorot,
                )?,
                key: get(format!("attention.{h}.key"), (dim, head_dim), Init::Glorot)?,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let theta = get("integration.theta".into(), (1, 1), Init::Zeros)?;
    let layers = (0..config.layers)
        .map(|l| {
            Ok(GFormerLayerParams {
                norm1_gain: get(format!("gformer.{l}.norm1.gain"), (1, dim), Init::Ones)?,
                norm1_bias: get(format!("gformer.{l}.norm1.bias"), (1, dim), Init::Zeros)?,
                norm2_gain: get(format!("gformer.{l}.norm2.gain"), (1, dim), Init::Ones)?,
                norm2_bias: get(format!("gformer.{l}.norm2.bias"), (1, dim), Init::Zeros)?,
                w1: get(format!("gformer.{l}.ffn.w1"), (dim, hid), Init::Glorot)?,
                b1: get(format!("gformer.{l}.ffn.b1"), (1, hid), Init::Zeros)?,
                w2: get(format!("gformer.{l}.ffn.w2"), (hid, dim), Init::Glorot)?,
                b2: get(format!("gformer.{l}.ffn.b2"), (1, dim), Init::Zeros)?,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let classifier = ClassifierParams {
        w1: get("classifier.w1".into(), (dim, dim), Init::Glorot)?,
        b1: get("classifier.b1".into(), (1, dim), Init::Zeros)?,
        w2: get("classifier.w2".into(), (dim, c), Init::Glorot)?,
        b2: get("classifier.b2".into(), (1, c), Init::Zeros)?,
    };
    Ok((
        projection,
        AttentionParams { heads },
        theta,
        layers,
        classifier,
    ))
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains and
    /// `θ = 0` (so `α = 0.5`).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (projection, attention, theta, layers, classifier) =
            build_layout(&config, |name, (r, c), init| {
                let value = match init {
                    Init::Zeros => Array2::zeros((r, c)),
                    Init::Ones => Array2::ones((r, c)),
                    Init::Glorot => {
                        let limit = (6.0 / (r + c) as f64).sqrt();
                        Array2::from_shape_fn((r, c), |_| rng.random_range(-limit..limit))
                    }
                };
                Ok(store.register(name, value))
            })?;
        Ok(ModelParams {
            config,
            store,
            projection,
            attention,
            theta,
            layers,
            classifier,
        })
    }

    /// Rebinds a loaded store to the layout implied by `config`, checking
    /// that every expected parameter is present with the right shape.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let (projection, attention, theta, layers, classifier) =
            build_layout(&config, |name, shape, _| {
                let id = store
                    .find(&name)
                    .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
                let found = store.value(id).dim();
                if found != shape {
                    return Err(ModelError::ParamShape {
                        name,
                        expected: shape,
                        found,
                    });
                }
                Ok(id)
            })?;
        Ok(ModelParams {
            config,
            store,
            projection,
            attention,
            theta,
            layers,
            classifier,
        })
    }

    pub fn tape(&self) -> Tape<'_> {
        Tape::new(&self.store)
    }

    /// Current blend weight `α = logistic(θ)`.
    pub fn alpha(&self) -> f64 {
        crate::autodiff::logistic(self.store.value(self.theta)[[0, 0]])
    }
}

/// `(A + I)·F`: self-loop propagation with no weight and no degree
/// normalization.
pub fn gcn_propagate(
    tape: &mut Tape<'_>,
    features: Var,
    adjacency: Var,
) -> Result<Var, ModelError> {
    let (ar, ac) = tape.shape(adjacency);
    let fr = tape.shape(features).0;
    if ar != ac || ar != fr {
        return Err(TensorError::ShapeMismatch {
            op: "gcn_propagate",
            left: (ar, ac),
            right: tape.shape(features),
        }
        .into());
    }
    let neighbors = tape.matmul(adjacency, features)?;
    Ok(tape.add(neighbors, features)?)
}

/// `X = LN₁((A + I)F) + F`, then `LN₂(FFN(X) + X)` with a ReLU FFN.
pub fn gformer_layer(
    tape: &mut Tape<'_>,
    features: Var,
    adjacency: Var,
    params: &GFormerLayerParams,
    eps: f64,
) -> Result<Var, ModelError> {
    let propagated = gcn_propagate(tape, features, adjacency)?;
    let (g1, b1) = (tape.param(params.norm1_gain), tape.param(params.norm1_bias));
    let normed = tape.layer_norm(propagated, g1, b1, eps)?;
    let x = tape.add(normed, features)?;

    let (w1, bias1) = (tape.param(params.w1), tape.param(params.b1));
    let (w2, bias2) = (tape.param(params.w2), tape.param(params.b2));
    let inner = tape.matmul(x, w1)?;
    let inner = tape.add_row(inner, bias1)?;
    let inner = tape.relu(inner);
    let ffn = tape.matmul(inner, w2)?;
    let ffn = tape.add_row(ffn, bias2)?;

    let residual = tape.add(ffn, x)?;
    let (g2, b2) = (tape.param(params.norm2_gain), tape.param(params.norm2_bias));
    Ok(tape.layer_norm(residual, g2, b2, eps)?)
}

/// Node features after each layer; `layers[0]` is the projected input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTrace {
    pub layers: Vec<Var>,
}

pub fn scm_forward(
    tape: &mut Tape<'_>,
    hidden: Var,
    adjacency: Var,
    layers: &[GFormerLayerParams],
    eps: f64,
) -> Result<LayerTrace, ModelError> {
    if layers.is_empty() {
        return Err(ModelError::InvalidConfig(
            "at least one GFormer layer is required".into(),
        ));
    }
    let mut trace = vec![hidden];
    for (l, params) in layers.iter().enumerate() {
        let prev = *trace.last().expect("nonempty");
        let next = gformer_layer(tape, prev, adjacency, params, eps)?;
        if tape.ensure_finite(next, "gformer_layer").is_err() {
            return Err(ModelError::NonFiniteActivation { layer: l + 1 });
        }
        trace.push(next);
    }
    Ok(LayerTrace { layers: trace })
}

/// `h = Σ_l Σ_i F^l_i` as a `1 × dim` row.
pub fn aggregate(tape: &mut Tape<'_>, trace: &LayerTrace) -> Result<Var, ModelError> {
    let mut total: Option<Var> = None;
    for &layer in &trace.layers {
        let col_sum = tape.sum_rows(layer);
        total = Some(match total {
            None => col_sum,
            Some(acc) => tape.add(acc, col_sum)?,
        });
    }
    total.ok_or_else(|| ModelError::InvalidConfig("empty layer trace".into()))
}

/// Handles to every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub joint: JointGraph,
    pub joint_adjacency: Var,
    pub hidden: Var,
    pub reconstructed: Var,
    pub integrated: Var,
    pub alpha: Var,
    pub trace: LayerTrace,
    pub pooled: Var,
    pub logits: Var,
}

/// Records the full forward computation for a drug pair on `tape`, which must
/// be backed by `params.store`.
pub fn forward(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    first: &FeaturedGraph,
    second: &FeaturedGraph,
) -> Result<ForwardPass, ModelError> {
    let joint = build_joint(first, second)?;
    let features = tape.constant(joint.features.clone());
    let joint_adjacency = tape.constant(joint.adjacency.clone());
    let hidden = project(tape, features, &params.projection)?;
    let reconstructed = cross_attention(tape, hidden, &params.attention)?;
    let (integrated, alpha) = integrate(tape, joint_adjacency, reconstructed, params.theta)?;
    let trace = scm_forward(
        tape,
        hidden,
        integrated,
        &params.layers,
        params.config.ln_eps,
    )?;
    let pooled = aggregate(tape, &trace)?;

    let c = &params.classifier;
    let (w1, b1, w2, b2) = (
        tape.param(c.w1),
        tape.param(c.b1),
        tape.param(c.w2),
        tape.param(c.b2),
    );
    let z = tape.matmul(pooled, w1)?;
    let z = tape.add_row(z, b1)?;
    let z = tape.relu(z);
    let logits = tape.matmul(z, w2)?;
    let logits = tape.add_row(logits, b2)?;
    tape.ensure_finite(logits, "classifier")?;
    Ok(ForwardPass {
        joint,
        joint_adjacency,
        hidden,
        reconstructed,
        integrated,
        alpha,
        trace,
        pooled,
        logits,
    })
}

/// Class probabilities for a drug pair.
pub fn predict(
    first: &FeaturedGraph,
    second: &FeaturedGraph,
    params: &ModelParams,
) -> Result<Vec<f64>, ModelError> {
    let mut tape = params.tape();
    let pass = forward(&mut tape, params, first, second)?;
    Ok(softmax_rows(tape.value(pass.logits)).into_iter().collect())
}

/// Adjacency refinement intermediates for a drug pair.
pub fn refine(
    first: &FeaturedGraph,
    second: &FeaturedGraph,
    params: &ModelParams,
) -> Result<RefinedAdjacency, ModelError> {
    let joint = build_joint(first, second)?;
    let mut tape = params.tape();
    let features = tape.constant(joint.features.clone());
    let adjacency = tape.constant(joint.adjacency.clone());
    let hidden = project(&mut tape, features, &params.projection)?;
    let reconstructed = cross_attention(&mut tape, hidden, &params.attention)?;
    let (integrated, alpha) = integrate(&mut tape, adjacency, reconstructed, params.theta)?;
    Ok(RefinedAdjacency {
        hidden: tape.value(hidden).clone(),
        reconstructed: tape.value(reconstructed).clone(),
        integrated: tape.value(integrated).clone(),
        alpha: tape.scalar(alpha)?,
        boundary: joint.boundary,
    })
}

/// Records the training loss for one labelled pair; returns `(loss, logits)`.
pub fn sample_loss(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    first: &FeaturedGraph,
    second: &FeaturedGraph,
    label: usize,
) -> Result<(Var, Var), ModelError> {
    if label >= params.config.classes {
        return Err(ModelError::LabelOutOfRange {
            label,
            classes: params.config.classes,
        });
    }
    let pass = forward(tape, params, first, second)?;
    let loss = tape.softmax_cross_entropy(pass.logits, label)?;
    Ok((loss, pass.logits))
}

/// `−ln p[label]` for an already normalized distribution.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64, ModelError> {
    let p = probs.get(label).ok_or(ModelError::LabelOutOfRange {
        label,
        classes: probs.len(),
    })?;
    Ok(-p.ln())
}
