//! Disentanglement, completeness and informativeness of a latent embedding,
//! read off Lasso and random-forest regressors fitted per factor.

mod dci;
mod forest;
mod lasso;

pub use dci::{
    completeness, disentanglement, evaluate, fit_factors, importance_matrix, informativeness, nrmse, select_eval_rows,
    Completeness, DciReport, Disentanglement, EmbeddingSet, FactorFits, ImportanceMatrix, Regressor,
};
pub use forest::{fit_random_forest, Forest, ForestConfig, RegressionTree};
pub use lasso::{fit_lasso, LassoFit};

/// Mixes a master seed with a path of indices (factor, tree, ...) so every
/// unit of work has its own reproducible stream.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    fn splitmix(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^ (x >> 31)
    }
    path.iter().fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}
