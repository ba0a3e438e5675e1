use ndarray::Array2;

use super::TensorError;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

/// Owns every learnable tensor of a model, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn register(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds a set of parameter gradients into the stored accumulators.
    pub fn accumulate(&mut self, grads: &ParamGrads) -> Result<(), TensorError> {
        for (id, g) in grads.iter() {
            let p = &mut self.params[id.0];
            if p.grad.dim() != g.dim() {
                return Err(TensorError::ShapeMismatch {
                    op: "accumulate",
                    left: p.grad.dim(),
                    right: g.dim(),
                });
            }
            p.grad += g;
        }
        Ok(())
    }

    /// Multiplies every accumulated gradient by `factor`.
    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad *= factor;
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }
}

/// Gradients of a single backward pass, keyed by parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrads {
    entries: Vec<(ParamId, Array2<f64>)>,
}

impl ParamGrads {
    pub(crate) fn push(&mut self, id: ParamId, grad: Array2<f64>) {
        match self.entries.iter_mut().find(|(i, _)| *i == id) {
            Some((_, g)) => *g += &grad,
            None => self.entries.push((id, grad)),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.entries.iter().map(|(i, g)| (*i, g))
    }
}
