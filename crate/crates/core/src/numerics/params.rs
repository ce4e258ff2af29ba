//! Named trainable parameters and their accumulated gradients.
//!
//! Model layers allocate parameters here and remember the returned ids;
//! each forward pass leases the current values onto a fresh tape and, after
//! `backward`, pulls the leaf gradients back into the store where the
//! optimizer consumes them.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = vec![0.0; value.numel()];
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Lease a parameter's value onto a tape as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape, id: ParamId) -> Binding {
        let var = tape.leaf(self.params[id.0].value.clone(), true);
        Binding { param: id, var }
    }

    /// Pull accumulated leaf gradients back into the store.
    pub fn absorb_grads(&mut self, tape: &Tape, bindings: &[Binding]) -> Result<()> {
        for b in bindings {
            if let Some(g) = tape.grad(b.var) {
                let param = &mut self.params[b.param.0];
                if g.len() != param.grad.len() {
                    return Err(Error::config(format!(
                        "gradient length {} does not match parameter '{}' ({})",
                        g.len(),
                        param.name,
                        param.grad.len()
                    )));
                }
                for (s, v) in param.grad.iter_mut().zip(g) {
                    *s += v;
                }
            }
        }
        Ok(())
    }

    /// Name of the first parameter whose value or gradient is non-finite.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| !p.value.is_finite() || p.grad.iter().any(|g| !g.is_finite()))
            .map(|p| p.name.as_str())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Binding {
    pub param: ParamId,
    pub var: Var,
}
