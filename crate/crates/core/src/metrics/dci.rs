use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::forest::{fit_random_forest, ForestConfig};
use super::lasso::fit_lasso;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Regressor used to read factor importances off the latent embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regressor {
    Lasso { alpha: f64 },
    RandomForest { trees: usize, max_depth: usize },
}

impl Regressor {
    pub const LASSO_DEFAULT: Regressor = Regressor::Lasso { alpha: 0.02 };
    pub const FOREST_DEFAULT: Regressor = Regressor::RandomForest { trees: 10, max_depth: 12 };

    pub fn name(&self) -> &'static str {
        match self {
            Regressor::Lasso { .. } => "lasso",
            Regressor::RandomForest { .. } => "rf",
        }
    }
}

/// Latent means `z` and normalised factors `v` of the same images, with a
/// disjoint train/test split of the rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub z: Tensor<f64>,
    pub v: Tensor<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl EmbeddingSet {
    /// Splits rows by a seeded shuffle, the first `train_fraction` going to
    /// training.
    pub fn new(z: Tensor<f64>, v: Tensor<f64>, train_fraction: f64, seed: u64) -> Result<Self> {
        let (n, _) = z.dims2()?;
        let (nv, _) = v.dims2()?;
        if n != nv {
            return Err(Error::Dimension(format!("{n} embeddings but {nv} factor rows")));
        }
        if z.data().iter().chain(v.data()).any(|x| !x.is_finite()) {
            return Err(Error::Contract("embedding contains non-finite values".into()));
        }
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (n as f64 * train_fraction).round() as usize;
        if cut == 0 || cut >= n {
            return Err(Error::Contract(format!(
                "train fraction {train_fraction} leaves an empty split of {n} rows"
            )));
        }
        let test = rows.split_off(cut);
        Ok(Self { z, v, train: rows, test })
    }

    pub fn latents(&self) -> usize {
        self.z.shape()[1]
    }

    pub fn factors(&self) -> usize {
        self.v.shape()[1]
    }

    fn rows_of(&self, rows: &[usize]) -> Tensor<f64> {
        let m = self.latents();
        let data = rows.iter().flat_map(|&r| self.z.row(r).iter().copied()).collect();
        Tensor::new(vec![rows.len(), m], data).expect("row selection")
    }

    fn factor(&self, rows: &[usize], k: usize) -> Vec<f64> {
        rows.iter().map(|&r| self.v.row(r)[k]).collect()
    }
}

/// `min(size, n)` distinct row indices chosen by a seeded shuffle.
pub fn select_eval_rows(n: usize, size: usize, seed: u64) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (picked, _) = rows.partial_shuffle(&mut rng, size.min(n));
    picked.to_vec()
}

/// Non-negative `M × K` importances of latent `i` for factor `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub latents: usize,
    pub factors: usize,
    values: Vec<f64>,
}

impl ImportanceMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let factors = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != factors) {
            return Err(Error::Dimension("ragged importance rows".into()));
        }
        let values: Vec<f64> = rows.concat();
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("importances must be finite and non-negative".into()));
        }
        Ok(Self {
            latents: rows.len(),
            factors,
            values,
        })
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.factors + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.factors..(i + 1) * self.factors]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.latents).map(|i| self.get(i, k)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.latents).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// `1 − H_base(p / Σp)` with `0·log 0 = 0`; 0 for an all-zero vector.
fn one_minus_entropy(p: &[f64], base: usize) -> f64 {
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    if base < 2 {
        return 1.0;
    }
    let h: f64 = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| {
            let q = x / total;
            -q * q.ln()
        })
        .sum::<f64>()
        / (base as f64).ln();
    (1.0 - h).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Disentanglement {
    pub per_latent: Vec<f64>,
    /// Share of total importance held by each latent.
    pub weights: Vec<f64>,
    pub weighted: f64,
}

pub fn disentanglement(r: &ImportanceMatrix) -> Disentanglement {
    let per_latent: Vec<f64> = (0..r.latents).map(|i| one_minus_entropy(r.row(i), r.factors)).collect();
    let total: f64 = r.values.iter().sum();
    let weights: Vec<f64> = (0..r.latents)
        .map(|i| if total > 0.0 { r.row(i).iter().sum::<f64>() / total } else { 0.0 })
        .collect();
    let weighted = per_latent.iter().zip(&weights).map(|(d, w)| d * w).sum();
    Disentanglement {
        per_latent,
        weights,
        weighted,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completeness {
    pub per_factor: Vec<f64>,
    pub mean: f64,
}

pub fn completeness(r: &ImportanceMatrix) -> Completeness {
    let per_factor: Vec<f64> = (0..r.factors).map(|k| one_minus_entropy(&r.column(k), r.latents)).collect();
    let mean = per_factor.iter().sum::<f64>() / per_factor.len().max(1) as f64;
    Completeness { per_factor, mean }
}

/// RMSE of `pred` divided by the population standard deviation of `truth`.
pub fn nrmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let sd = (truth.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Contract("factor has zero variance on the test split".into()));
    }
    let rmse = (pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n).sqrt();
    Ok(rmse / sd)
}

/// One regressor fit per factor on the train split.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorFits {
    pub importance: ImportanceMatrix,
    /// Test-split predictions, one vector per factor.
    pub predictions: Vec<Vec<f64>>,
}

pub fn fit_factors(emb: &EmbeddingSet, regressor: Regressor, seed: u64) -> Result<FactorFits> {
    let (m, k) = (emb.latents(), emb.factors());
    let x_train = emb.rows_of(&emb.train);
    let x_test = emb.rows_of(&emb.test);
    let mut columns = Vec::with_capacity(k);
    let mut predictions = Vec::with_capacity(k);
    for f in 0..k {
        let y = emb.factor(&emb.train, f);
        let (imp, pred) = match regressor {
            Regressor::Lasso { alpha } => {
                let fit = fit_lasso(&x_train, &y, alpha)?;
                (fit.importance.clone(), fit.predict(&x_test))
            }
            Regressor::RandomForest { trees, max_depth } => {
                let config = ForestConfig { trees, max_depth };
                let fit = fit_random_forest(&x_train, &y, config, derive_seed(seed, &[f as u64]))?;
                (fit.importance.clone(), fit.predict(&x_test))
            }
        };
        columns.push(imp);
        predictions.push(pred);
    }
    let rows: Vec<Vec<f64>> = (0..m).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    Ok(FactorFits {
        importance: ImportanceMatrix::from_rows(&rows)?,
        predictions,
    })
}

pub fn importance_matrix(emb: &EmbeddingSet, regressor: Regressor, seed: u64) -> Result<ImportanceMatrix> {
    Ok(fit_factors(emb, regressor, seed)?.importance)
}

/// Per-factor test NRMSE of existing fits and their uniform mean.
pub fn informativeness(emb: &EmbeddingSet, fits: &FactorFits) -> Result<(Vec<f64>, f64)> {
    let per: Vec<f64> = (0..emb.factors())
        .map(|f| nrmse(&fits.predictions[f], &emb.factor(&emb.test, f)))
        .collect::<Result<_>>()?;
    let mean = per.iter().sum::<f64>() / per.len().max(1) as f64;
    Ok((per, mean))
}

/// Disentanglement, completeness and informativeness of one embedding
/// under one regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DciReport {
    pub regressor: Regressor,
    pub importance: Vec<Vec<f64>>,
    pub disentanglement: Vec<f64>,
    pub latent_weights: Vec<f64>,
    pub weighted_disentanglement: f64,
    pub completeness: Vec<f64>,
    pub mean_completeness: f64,
    pub nrmse: Vec<f64>,
    pub mean_nrmse: f64,
    /// How per-factor NRMSE values are averaged.
    pub nrmse_weighting: String,
    pub train_rows: usize,
    pub test_rows: usize,
}

impl DciReport {
    pub fn importance_matrix(&self) -> Result<ImportanceMatrix> {
        ImportanceMatrix::from_rows(&self.importance)
    }
}

pub fn evaluate(emb: &EmbeddingSet, regressor: Regressor, seed: u64) -> Result<DciReport> {
    let fits = fit_factors(emb, regressor, seed)?;
    let d = disentanglement(&fits.importance);
    let c = completeness(&fits.importance);
    let (nrmse, mean_nrmse) = informativeness(emb, &fits)?;
    Ok(DciReport {
        regressor,
        importance: fits.importance.rows(),
        disentanglement: d.per_latent,
        latent_weights: d.weights,
        weighted_disentanglement: d.weighted,
        completeness: c.per_factor,
        mean_completeness: c.mean,
        nrmse,
        mean_nrmse,
        nrmse_weighting: "uniform".into(),
        train_rows: emb.train.len(),
        test_rows: emb.test.len(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn matrix(rows: &[&[f64]]) -> ImportanceMatrix {
        ImportanceMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn entropy_cases() {
        let r = matrix(&[&[0.0, 3.0, 0.0, 0.0, 0.0], &[1.0; 5], &[0.5, 0.5, 0.0, 0.0, 0.0], &[0.0; 5]]);
        let d = disentanglement(&r);
        assert!((d.per_latent[0] - 1.0).abs() < 1e-12);
        assert!(d.per_latent[1].abs() < 1e-12);
        assert!((d.per_latent[2] - (1.0 - 2f64.ln() / 5f64.ln())).abs() < 1e-9);
        assert!((d.per_latent[2] - 0.5693).abs() < 1e-4);
        assert_eq!((d.per_latent[3], d.weights[3]), (0.0, 0.0));
        assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d.weights[0] - 3.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn completeness_cases() {
        let mut rows = vec![vec![0.0; 3]; 8];
        rows[2][0] = 1.0;
        for r in rows.iter_mut() {
            r[1] = 0.7;
        }
        rows[0][2] = 0.5;
        rows[5][2] = 0.5;
        let c = completeness(&ImportanceMatrix::from_rows(&rows).unwrap());
        assert!((c.per_factor[0] - 1.0).abs() < 1e-12);
        assert!(c.per_factor[1].abs() < 1e-12);
        assert!((c.per_factor[2] - 2.0 / 3.0).abs() < 1e-12);

        let zero = completeness(&ImportanceMatrix::from_rows(&vec![vec![0.0; 5]; 8]).unwrap());
        assert_eq!(zero.per_factor, vec![0.0; 5]);
        assert_eq!(disentanglement(&ImportanceMatrix::from_rows(&vec![vec![0.0; 5]; 8]).unwrap()).weighted, 0.0);
    }

    proptest! {
        #[test]
        fn scores_are_bounded_and_scale_invariant(
            vals in prop::collection::vec(0.0f64..10.0, 40),
            scale in 0.01f64..100.0,
        ) {
            let rows: Vec<Vec<f64>> = vals.chunks(5).map(|c| c.to_vec()).collect();
            let r = ImportanceMatrix::from_rows(&rows).unwrap();
            let scaled = ImportanceMatrix::from_rows(
                &rows.iter().map(|row| row.iter().map(|v| v * scale).collect()).collect::<Vec<_>>(),
            ).unwrap();
            let (d, ds) = (disentanglement(&r), disentanglement(&scaled));
            let (c, cs) = (completeness(&r), completeness(&scaled));
            for (a, b) in d.per_latent.iter().zip(&ds.per_latent).chain(c.per_factor.iter().zip(&cs.per_factor)) {
                prop_assert!((0.0..=1.0).contains(a));
                prop_assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in d.weights.iter().zip(&ds.weights) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nrmse_baselines() {
        let truth: Vec<f64> = (0..2000).map(|i| (i % 7) as f64 / 6.0).collect();
        assert_eq!(nrmse(&truth, &truth).unwrap(), 0.0);
        let mean = truth.iter().sum::<f64>() / truth.len() as f64;
        let e = nrmse(&vec![mean; truth.len()], &truth).unwrap();
        assert!((e - 1.0).abs() < 0.05);
        assert!(matches!(nrmse(&[0.0; 3], &[1.0; 3]), Err(Error::Contract(_))));
    }

    #[test]
    fn split_is_disjoint_seeded_and_checked() {
        let z = Tensor::zeros(&[10, 2]);
        let v = Tensor::zeros(&[10, 1]);
        let e = EmbeddingSet::new(z.clone(), v.clone(), 0.8, 3).unwrap();
        assert_eq!((e.train.len(), e.test.len()), (8, 2));
        let mut all: Vec<usize> = e.train.iter().chain(&e.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(e, EmbeddingSet::new(z.clone(), v.clone(), 0.8, 3).unwrap());
        assert!(EmbeddingSet::new(z.clone(), v.clone(), 1.0, 3).is_err());
        let mut bad = z.clone();
        bad.data_mut()[0] = f64::NAN;
        assert!(EmbeddingSet::new(bad, v, 0.8, 3).is_err());

        let rows = select_eval_rows(50, 20, 1);
        let mut sorted = rows.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 20);
        assert_eq!(select_eval_rows(5, 20, 1).len(), 5);
    }

    /// Factors on a grid, embedded as a permuted copy plus noise dimensions.
    fn planted(n: usize, seed: u64) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 5;
        let m = 8;
        let perm = [3usize, 0, 4, 1, 2];
        let mut z = Vec::with_capacity(n * m);
        let mut v = Vec::with_capacity(n * k);
        for _ in 0..n {
            let f: Vec<f64> = (0..k).map(|_| rng.random_range(0..8) as f64 / 7.0).collect();
            for i in 0..m {
                z.push(if i < k { 2.0 * f[perm[i]] - 1.0 } else { rng.random::<f64>() });
            }
            v.extend(f);
        }
        EmbeddingSet::new(
            Tensor::new(vec![n, m], z).unwrap(),
            Tensor::new(vec![n, k], v).unwrap(),
            0.8,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn planted_identity_is_recovered_by_both_regressors() {
        let emb = planted(2000, 4);
        for reg in [Regressor::LASSO_DEFAULT, Regressor::FOREST_DEFAULT] {
            let rep = evaluate(&emb, reg, 9).unwrap();
            assert_eq!((rep.importance.len(), rep.importance[0].len()), (8, 5));
            let r = rep.importance_matrix().unwrap();
            for k in 0..5 {
                let col = r.column(k);
                let on = col.iter().copied().fold(0.0, f64::max);
                let off = col.iter().filter(|&&x| x != on).copied().fold(0.0, f64::max);
                assert!(off < 0.1 * on, "{reg:?} factor {k}: {col:?}");
            }
            assert!(rep.weighted_disentanglement > 0.9, "{reg:?}: {rep:?}");
            assert!(rep.mean_completeness > 0.9, "{reg:?}: {rep:?}");
            if reg == Regressor::FOREST_DEFAULT {
                assert!(rep.nrmse.iter().all(|&e| e < 0.1), "{:?}", rep.nrmse);
            }
        }
    }

    #[test]
    fn zero_embedding_has_zero_importance() {
        let mut emb = planted(300, 5);
        emb.z = Tensor::zeros(&[300, 8]);
        for reg in [Regressor::LASSO_DEFAULT, Regressor::FOREST_DEFAULT] {
            let rep = evaluate(&emb, reg, 1).unwrap();
            assert!(rep.importance.iter().flatten().all(|&x| x == 0.0));
            assert_eq!(rep.weighted_disentanglement, 0.0);
            assert!(rep.nrmse.iter().all(|&e| (e - 1.0).abs() < 0.15));
        }
    }
}
