use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sweep limit and coefficient-change tolerance of coordinate descent.
pub const MAX_SWEEPS: usize = 1000;
pub const TOLERANCE: f64 = 1e-6;

/// Columns with a standard deviation below this are treated as constant.
const CONSTANT_STD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    /// Coefficients on the original feature scale.
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// `|coef|` on the standardised feature scale.
    pub importance: Vec<f64>,
    /// Objective after each sweep.
    pub objective: Vec<f64>,
}

impl LassoFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.coef).map(|(x, c)| x * c).sum::<f64>()
    }

    pub fn predict(&self, x: &Tensor<f64>) -> Vec<f64> {
        let rows = x.shape()[0];
        (0..rows).map(|r| self.predict_row(x.row(r))).collect()
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on `½n⁻¹‖y − Xβ − b‖² + α‖β‖₁` with the
/// columns of `X` standardised internally (constant columns get 0).
pub fn fit_lasso(x: &Tensor<f64>, y: &[f64], alpha: f64) -> Result<LassoFit> {
    let (n, m) = x.dims2()?;
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} targets", y.len())));
    }
    if n == 0 {
        return Err(Error::Contract("lasso needs at least one row".into()));
    }
    if !alpha.is_finite() || alpha < 0.0 || x.data().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Contract("lasso inputs must be finite with alpha ≥ 0".into()));
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut means = vec![0.0; m];
    let mut stds = vec![0.0; m];
    for j in 0..m {
        let col = (0..n).map(|r| x.data()[r * m + j]);
        means[j] = col.clone().sum::<f64>() / nf;
        stds[j] = (col.map(|v| (v - means[j]).powi(2)).sum::<f64>() / nf).sqrt();
    }
    let active: Vec<usize> = (0..m).filter(|&j| stds[j] > CONSTANT_STD).collect();
    // standardised design, column-major over active features
    let cols: Vec<Vec<f64>> = active
        .iter()
        .map(|&j| (0..n).map(|r| (x.data()[r * m + j] - means[j]) / stds[j]).collect())
        .collect();

    let mut beta = vec![0.0; active.len()];
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let objective_of = |resid: &[f64], beta: &[f64]| {
        0.5 * resid.iter().map(|r| r * r).sum::<f64>() / nf + alpha * beta.iter().map(|b| b.abs()).sum::<f64>()
    };
    let mut objective = Vec::new();
    for _ in 0..MAX_SWEEPS {
        let mut max_delta: f64 = 0.0;
        for (a, col) in cols.iter().enumerate() {
            // standardised columns have (1/n)·Σx² = 1
            let rho = col.iter().zip(&resid).map(|(c, r)| c * r).sum::<f64>() / nf + beta[a];
            let new = soft_threshold(rho, alpha);
            let delta = new - beta[a];
            if delta != 0.0 {
                resid.iter_mut().zip(col).for_each(|(r, c)| *r -= delta * c);
                beta[a] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        objective.push(objective_of(&resid, &beta));
        if max_delta < TOLERANCE {
            break;
        }
    }

    let mut coef = vec![0.0; m];
    let mut importance = vec![0.0; m];
    for (a, &j) in active.iter().enumerate() {
        coef[j] = beta[a] / stds[j];
        importance[j] = beta[a].abs();
    }
    let intercept = y_mean - coef.iter().zip(&means).map(|(c, mu)| c * mu).sum::<f64>();
    Ok(LassoFit {
        coef,
        intercept,
        importance,
        objective,
    })
}
