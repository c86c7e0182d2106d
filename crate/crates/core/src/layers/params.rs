use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::real::Real;

/// Index of a parameter in its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// `U(-√(6/fan_in), √(6/fan_in))`, for ReLU-facing weights.
    HeUniform {
        fan_in: usize,
    },
    /// `U(-√(6/(fan_in+fan_out)), ..)`, for attention projections.
    XavierUniform {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

impl Init {
    pub fn sample<T: Real, R: Rng>(self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        let bound = match self {
            Init::Zeros => return Tensor::zeros(shape),
            Init::Ones => return Tensor::full(shape, T::one()),
            Init::HeUniform { fan_in } => (6.0 / fan_in as f64).sqrt(),
            Init::XavierUniform { fan_in, fan_out } => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(bound * (2.0 * rng.random::<f64>() - 1.0)))
            .collect();
        Tensor::new(shape, data).expect("shape and data agree")
    }
}

/// Ordered, named registry of model parameters.
///
/// Enumeration order is insertion order, which is what checkpoints and the
/// optimizer rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Registers a parameter. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter on `tape` as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, requires_grad: bool) -> BoundParams<'t, T> {
        BoundParams::from_tensors(tape, &self.values, requires_grad)
    }
}

/// A [`ParamStore`]'s values recorded on one tape.
pub struct BoundParams<'t, T> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> BoundParams<'t, T> {
    /// Binds a bare tensor list laid out like some store's values.
    pub fn from_tensors(tape: &'t Tape<T>, values: &[Tensor<T>], requires_grad: bool) -> Self {
        Self {
            vars: values
                .iter()
                .map(|v| tape.leaf(v.clone(), requires_grad))
                .collect(),
        }
    }

    /// Wraps vars already on a tape, in store order.
    pub fn from_vars(vars: Vec<Var<'t, T>>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    /// Gradients in store order; zeros for parameters without one.
    pub fn grads(&self) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }
}
