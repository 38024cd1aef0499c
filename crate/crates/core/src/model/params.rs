use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FameError, Result};
use crate::tensor::{Scalar, Shape, Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Weight initialization recorded in the config fingerprint.
pub const INIT_SCHEME: &str = "he-uniform(sqrt(6/fan_in)),bias=0,output-scale=0.1";

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces every tensor from `(name, tensor)` pairs; the names must
    /// match this store one-to-one.
    pub fn load_named(&mut self, items: Vec<(String, Tensor<T>)>) -> Result<()> {
        if items.len() != self.len() {
            return Err(FameError::Contract(format!(
                "expected {} parameters, got {}",
                self.len(),
                items.len()
            )));
        }
        let mut next = self.tensors.clone();
        let mut seen = vec![false; self.len()];
        for (name, t) in items {
            let id = self
                .find(&name)
                .ok_or_else(|| FameError::Contract(format!("unknown parameter {name}")))?;
            if seen[id.0] {
                return Err(FameError::Contract(format!("parameter {name} given twice")));
            }
            if t.shape() != self.tensors[id.0].shape() {
                return Err(FameError::shape(
                    "load_params",
                    format!(
                        "{name}: {} vs expected {}",
                        t.shape(),
                        self.tensors[id.0].shape()
                    ),
                ));
            }
            seen[id.0] = true;
            next[id.0] = t;
        }
        self.tensors = next;
        Ok(())
    }

    /// Records every parameter on `tape`, as differentiable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles of a bound [`ParamStore`], indexed like the store.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Builds parameters with fan-in scaled uniform initialization.
pub struct Initializer<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Initializer<'_, T> {
    pub fn uniform(&mut self, name: String, shape: Shape, fan_in: usize, scale: f64) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt() * scale;
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::cst(rng.random_range(-bound..bound)));
        self.store.add(name, t)
    }

    pub fn zeros(&mut self, name: String, shape: Shape) -> ParamId {
        self.store.add(name, Tensor::zeros(shape))
    }
}
