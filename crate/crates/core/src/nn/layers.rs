use rand::Rng;

use super::{Binding, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weight initialisation scheme; biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `U(±√(6/fan_in))`, for layers feeding a ReLU.
    HeUniform,
    /// `U(±√(6/(fan_in+fan_out)))`, for linear or sigmoid outputs.
    XavierUniform,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let bound = match init {
            Init::HeUniform => (6.0 / in_dim as f64).sqrt(),
            Init::XavierUniform => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let w: Vec<T> = (0..in_dim * out_dim)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::new(vec![in_dim, out_dim], w).expect("shape"),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// `x·W + b` for `x: B×in_dim`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, binding: &Binding, x: Var) -> Result<Var> {
        let (_, i) = tape.value(x).dims2()?;
        if i != self.in_dim {
            return Err(Error::Dimension(format!(
                "linear layer expects width {}, got {i}",
                self.in_dim
            )));
        }
        let h = tape.matmul(x, binding.var(self.weight))?;
        tape.add_row(h, binding.var(self.bias))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, features: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[features], T::one()));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[features]));
        Self {
            gamma,
            beta,
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    /// Train mode normalises with batch statistics and folds them into the
    /// running estimates (unbiased variance); eval mode uses the running
    /// estimates only.
    pub fn forward<T: Scalar>(
        &mut self,
        tape: &mut Tape<T>,
        binding: &Binding,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let (gamma, beta) = (binding.var(self.gamma), binding.var(self.beta));
        match mode {
            Mode::Train => {
                let (b, _) = tape.value(x).dims2()?;
                let (y, mean, var) = tape.batch_norm(x, gamma, beta, self.eps, None)?;
                let unbias = b as f64 / (b - 1) as f64;
                let m = self.momentum;
                for j in 0..self.features() {
                    self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
                    self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j] * unbias;
                }
                Ok(y)
            }
            Mode::Eval => {
                let stats = (self.running_mean.as_slice(), self.running_var.as_slice());
                let (y, _, _) = tape.batch_norm(x, gamma, beta, self.eps, Some(stats))?;
                Ok(y)
            }
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gamma, self.beta]
    }
}
