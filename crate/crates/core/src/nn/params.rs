use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{grad_check, GradCheckOptions, GradCheckReport, Scalar, Tape, Tensor, Var};

/// Handle to one tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, named parameter tensors. Order is creation order and is the
/// order used by optimizers and checkpoints.
#[derive(Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name `{name}`");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
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

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let old = &self.values[id.0];
        if old.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "param_set",
                shapes: vec![old.shape().to_vec(), value.shape().to_vec()],
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn set_by_name(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter `{name}`")))?;
        self.set(id, value)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Binds every parameter for one forward pass: as tape leaves when a
    /// tape is given, otherwise as constants.
    pub fn bind(&self, tape: Option<&Tape<T>>) -> Bound<T> {
        let vars = self
            .values
            .iter()
            .map(|v| match tape {
                Some(t) => t.leaf(v.clone()),
                None => Var::constant(v.clone()),
            })
            .collect();
        Bound { vars }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for ParamStore<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.names.iter().zip(self.values.iter().map(Tensor::shape)))
            .finish()
    }
}

/// Parameters bound for one forward pass.
pub struct Bound<T> {
    vars: Vec<Var<T>>,
}

impl<T: Scalar> Bound<T> {
    pub fn from_vars(vars: Vec<Var<T>>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    /// Copy with one parameter replaced.
    pub fn with_override(&self, id: ParamId, var: Var<T>) -> Self {
        let mut vars = self.vars.clone();
        vars[id.0] = var;
        Self { vars }
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}

/// Creates parameters under a dotted name prefix with seeded
/// fan-in-scaled uniform initialization.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Scalar> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: String::new(),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Runs `f` with `name` appended to the prefix.
    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        let saved = self.prefix.clone();
        self.prefix = self.full_name(name);
        let out = f(self);
        self.prefix = saved;
        out
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(self.rng.random_range(-bound..bound)))
            .collect();
        let full = self.full_name(name);
        self.store.insert(full, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let full = self.full_name(name);
        self.store.insert(full, Tensor::full(shape, T::from_f64_lossy(value)))
    }
}

/// Finite-difference check of `loss` with respect to one parameter, all
/// others held constant.
pub fn grad_check_param(
    store: &ParamStore<f64>,
    id: ParamId,
    loss: impl Fn(&Bound<f64>) -> Result<Var<f64>>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let base = store.bind(None);
    grad_check(|p| loss(&base.with_override(id, p.clone())), store.get(id), opts)
}
