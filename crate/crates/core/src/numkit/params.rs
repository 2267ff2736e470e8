use indexmap::IndexMap;
use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors in insertion order.
///
/// Insertion order is the serialization order of checkpoints and the
/// reduction order of gradient accumulation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: IndexMap<String, Tensor>,
}

/// Gradients keyed by parameter name.
pub type GradMap = IndexMap<String, Tensor>;

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Inserts `rows×cols` uniform(−bound, bound) values.
    pub fn init_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::from_parts(rows, cols, data));
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Tensor::zeros(rows, cols));
    }

    /// Copies every tensor whose name starts with `prefix` from `other`.
    pub fn copy_prefix_from(&mut self, other: &ParamSet, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (name, t) in other.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let dst = self.tensors.get_mut(name).ok_or_else(|| {
                Error::Checkpoint(format!("parameter `{name}` not present in target model"))
            })?;
            if !dst.same_shape(t) {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}`: shape {}x{} vs {}x{}",
                    dst.rows(),
                    dst.cols(),
                    t.rows(),
                    t.cols()
                )));
            }
            *dst = t.clone();
            copied += 1;
        }
        Ok(copied)
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }
}

/// Parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub(crate) fn from_vars(vars: IndexMap<String, Var>) -> Self {
        Bound { vars }
    }

    /// Panics on an unknown name: model code asks only for names it created.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter `{name}` is not bound"),
        }
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Collects gradients of every bound parameter.
    pub fn gradients(&self, grads: &Gradients) -> GradMap {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.wrt(*v)))
            .collect()
    }
}

/// Adds `src` into `dst` in `src` order.
pub fn accumulate(dst: &mut GradMap, src: &GradMap) {
    for (k, g) in src {
        match dst.get_mut(k) {
            Some(d) => d.add_assign(g),
            None => {
                dst.insert(k.clone(), g.clone());
            }
        }
    }
}
