use ndarray::{Array1, Array2, Axis};

use super::param::{ParamGrads, ParamId, ParamStore};
use super::TensorError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Matmul(Var, Var),
    MatmulTransposed(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Array2<f64>,
        inv_std: Array1<f64>,
    },
    SoftmaxRows(Var),
    Sigmoid(Var),
    Lerp {
        a: Var,
        b: Var,
        t: Var,
    },
    SumRows(Var),
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Array2<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records a forward computation over dense matrices for reverse-mode
/// differentiation. Parameters are read from the borrowed store; gradients
/// come back as [`ParamGrads`] so one store can serve many tapes at once.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.dim(),
        right: b.dim(),
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> Result<f64, TensorError> {
        let value = self.value(v);
        if value.dim() != (1, 1) {
            return Err(TensorError::NonScalarLoss { shape: value.dim() });
        }
        Ok(value[[0, 0]])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for a stored parameter; repeated calls reuse the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let v = self.push(self.store.value(id).clone(), Op::Param(id));
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn ensure_finite(&self, v: Var, op: &'static str) -> Result<(), TensorError> {
        if self.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(shape_err("matmul", av, bv));
        }
        let out = av.dot(bv);
        Ok(self.push(out, Op::Matmul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_transposed(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.ncols() {
            return Err(shape_err("matmul_transposed", av, bv));
        }
        let out = av.dot(&bv.t());
        Ok(self.push(out, Op::MatmulTransposed(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("add", av, bv));
        }
        let out = av + bv;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 × cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != av.ncols() {
            return Err(shape_err("add_row", av, rv));
        }
        let out = av + rv;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Row-wise layer normalization with population variance, followed by the
    /// `1 × cols` gain and bias.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let cols = xv.ncols();
        for p in [gain, bias] {
            let pv = self.value(p);
            if pv.dim() != (1, cols) {
                return Err(shape_err("layer_norm", xv, pv));
            }
        }
        let n = cols as f64;
        let mut normalized = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            *s = 1.0 / (var + eps).sqrt();
            let inv = *s;
            row.mapv_inplace(|v| v * inv);
        }
        let out = &normalized * self.value(gain) + self.value(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        ))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        if !av.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFiniteInput { op: "softmax_rows" });
        }
        let out = softmax_rows(av);
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(logistic);
        self.push(out, Op::Sigmoid(a))
    }

    /// `(1 − t)·a + t·b` for a 1×1 node `t`.
    pub fn lerp(&mut self, a: Var, b: Var, t: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("lerp", av, bv));
        }
        let tv = self.scalar(t)?;
        let out = av * (1.0 - tv) + bv * tv;
        Ok(self.push(out, Op::Lerp { a, b, t }))
    }

    /// Column sums as a `1 × cols` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = av.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(out, Op::SumRows(a))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Cross-entropy of `softmax(logits)` against `label`, evaluated through
    /// log-sum-exp. `logits` must be a single row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        if lv.nrows() != 1 {
            return Err(TensorError::NonScalarLoss { shape: lv.dim() });
        }
        if label >= lv.ncols() {
            return Err(TensorError::LabelOutOfRange {
                label,
                classes: lv.ncols(),
            });
        }
        if !lv.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFiniteInput {
                op: "softmax_cross_entropy",
            });
        }
        let max = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - lv[[0, label]];
        let probs = softmax_rows(lv);
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
        ))
    }

    /// Reverse pass from a 1×1 node; returns gradients for every parameter
    /// reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads, TensorError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = ParamGrads::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.push(*id, g),
                Op::Matmul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatmulTransposed(a, b) => {
                    let da = g.dot(self.value(*b));
                    let db = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, dr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, factor) => accumulate(&mut grads, *a, g * *factor),
                Op::Relu(a) => {
                    let mut da = g;
                    da.zip_mut_with(self.value(*a), |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let dbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dgain = (&g * normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dnorm = &g * gv;
                    let n = normalized.ncols() as f64;
                    let mut dx = Array2::zeros(normalized.raw_dim());
                    for (((mut dx_row, dn_row), xh_row), &inv) in dx
                        .rows_mut()
                        .into_iter()
                        .zip(dnorm.rows())
                        .zip(normalized.rows())
                        .zip(inv_std.iter())
                    {
                        let sum_dn = dn_row.sum();
                        let sum_dn_xh = dn_row.dot(&xh_row);
                        for ((d, &dn), &xh) in dx_row.iter_mut().zip(dn_row).zip(xh_row) {
                            *d = inv / n * (n * dn - sum_dn - xh * sum_dn_xh);
                        }
                    }
                    accumulate(&mut grads, *bias, dbias);
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = &g * y;
                    for (mut row, yrow) in da.rows_mut().into_iter().zip(y.rows()) {
                        let s = row.sum();
                        row.zip_mut_with(&yrow, |d, &yv| *d -= yv * s);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = &g * &node.value.mapv(|y| y * (1.0 - y));
                    accumulate(&mut grads, *a, da);
                }
                Op::Lerp { a, b, t } => {
                    let tv = self.value(*t)[[0, 0]];
                    let diff = self.value(*b) - self.value(*a);
                    let dt = Array2::from_elem((1, 1), (&g * &diff).sum());
                    accumulate(&mut grads, *t, dt);
                    accumulate(&mut grads, *b, &g * tv);
                    accumulate(&mut grads, *a, g * (1.0 - tv));
                }
                Op::SumRows(a) => {
                    let rows = self.value(*a).nrows();
                    let da = g
                        .broadcast((rows, g.ncols()))
                        .expect("row broadcast")
                        .to_owned();
                    accumulate(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let da = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let mut da = probs * g[[0, 0]];
                    da[[0, *label]] -= g[[0, 0]];
                    accumulate(&mut grads, *logits, da);
                }
            }
        }
        Ok(out)
    }

    /// Runs [`Tape::backward`] and adds the result into `store`'s gradients.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<(), TensorError> {
        let grads = self.backward(loss)?;
        store.accumulate(&grads)
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a plain matrix, stabilized by subtracting the row max.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}
