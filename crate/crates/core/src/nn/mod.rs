//! Layers, parameters and the optimiser built on [`crate::autodiff`].

mod adam;
pub mod checkpoint;
mod layers;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use layers::{BatchNorm, Init, Linear, Mode};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    /// Frozen parameters enter the tape as constants.
    pub frozen: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

/// Tape handles for every parameter of a store, valid for one tape.
#[derive(Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set_frozen(&mut self, ids: &[ParamId], frozen: bool) {
        for id in ids {
            self.params[id.0].frozen = frozen;
        }
    }

    /// Puts every parameter on `tape`, trainable ones as gradient leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if p.frozen {
                    tape.constant(p.value.clone())
                } else {
                    tape.param(p.value.clone())
                }
            })
            .collect();
        Binding { vars }
    }

    /// Moves gradients of trainable parameters out of `grads`. Parameters
    /// unreachable from the loss receive an explicit zero gradient.
    pub fn collect_grads(&mut self, grads: &mut Gradients<T>, binding: &Binding) {
        for (p, &v) in self.params.iter_mut().zip(&binding.vars) {
            if p.frozen {
                p.grad = None;
                continue;
            }
            p.grad = Some(
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape())),
            );
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Copies values from another store with identical names and shapes.
    pub fn load_values(&mut self, other: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, value) in other {
            let id = self
                .find(name)
                .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != value.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {name}: expected shape {:?}, got {:?}",
                    p.value.shape(),
                    value.shape()
                )));
            }
            p.value = value.clone();
        }
        Ok(())
    }
}
