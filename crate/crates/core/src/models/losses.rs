//! Objective terms, each built on the tape so gradients follow automatically.

use super::vae::{DipCovariance, KernelKind, MmdKernel};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` inside the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Pixel BCE summed over pixels, averaged over the batch.
pub fn reconstruction_loss<T: Scalar>(tape: &mut Tape<T>, x_hat: Var, target: &Tensor<T>) -> Result<Var> {
    tape.bce(x_hat, target, T::lit(BCE_CLAMP))
}

/// `(1/B)·Σ_b ½·Σ_i (exp(lv) − lv − 1 + μ²)`, zero when the posterior is the prior.
pub fn kl_loss<T: Scalar>(tape: &mut Tape<T>, mu: Var, logvar: Var) -> Result<Var> {
    let (b, _) = tape.value(mu).dims2()?;
    if tape.value(logvar).shape() != tape.value(mu).shape() {
        return Err(Error::Dimension("kl: mu and logvar shapes differ".into()));
    }
    let var = tape.exp(logvar);
    let t = tape.sub(var, logvar)?;
    let t = tape.add_scalar(t, -T::one());
    let m2 = tape.square(mu);
    let t = tape.add(t, m2)?;
    let s = tape.sum(t);
    Ok(tape.scale(s, T::lit(0.5 / b.max(1) as f64)))
}

/// Batch-averaged KL contribution of each latent dimension (diagnostics).
pub fn kl_per_dim<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>) -> Vec<f64> {
    let m = *mu.shape().last().unwrap_or(&0);
    let b = mu.numel() / m.max(1);
    let mut out = vec![0.0; m];
    for (i, (&mv, &lv)) in mu.data().iter().zip(logvar.data()).enumerate() {
        let (mv, lv) = (mv.to_f64().unwrap(), lv.to_f64().unwrap());
        out[i % m] += 0.5 * (lv.exp() - lv - 1.0 + mv * mv);
    }
    out.iter_mut().for_each(|v| *v /= b.max(1) as f64);
    out
}

fn kernel_scale(kernel: &MmdKernel, m: usize) -> f64 {
    kernel.scale_per_dim * m as f64
}

fn apply_kernel<T: Scalar>(tape: &mut Tape<T>, sq_dist: Var, kernel: &MmdKernel, m: usize) -> Result<Var> {
    let c = kernel_scale(kernel, m);
    match kernel.kind {
        KernelKind::InverseMultiquadric => {
            let d = tape.add_scalar(sq_dist, T::lit(c));
            let r = tape.recip(d)?;
            Ok(tape.scale(r, T::lit(c)))
        }
        KernelKind::Gaussian => {
            let d = tape.scale(sq_dist, T::lit(-1.0 / c));
            Ok(tape.exp(d))
        }
    }
}

/// Kernel sum over a fixed sample set, excluding the diagonal.
fn constant_kernel_offdiag_sum(prior: &Tensor<f64>, kernel: &MmdKernel) -> f64 {
    let (n, m) = prior.dims2().expect("matrix");
    let c = kernel_scale(kernel, m);
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d: f64 = prior.row(i).iter().zip(prior.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            total += match kernel.kind {
                KernelKind::InverseMultiquadric => c / (c + d),
                KernelKind::Gaussian => (-d / c).exp(),
            };
        }
    }
    total
}

/// Unbiased MMD² between the rows of `z` and the rows of `prior`
/// (a same-sized draw from N(0, I)):
/// `mean_{i≠j} k(zᵢ,zⱼ) + mean_{i≠j} k(pᵢ,pⱼ) − 2·mean_{i,j} k(zᵢ,pⱼ)`.
pub fn mmd_loss<T: Scalar>(tape: &mut Tape<T>, z: Var, prior: &Tensor<T>, kernel: &MmdKernel) -> Result<Var> {
    let (b, m) = tape.value(z).dims2()?;
    if b < 2 {
        return Err(Error::Contract("mmd needs at least two rows".into()));
    }
    if prior.shape() != tape.value(z).shape() {
        return Err(Error::Dimension("mmd: prior sample shape differs from z".into()));
    }
    let bf = b as f64;
    let p = tape.constant(prior.clone());
    let d_zz = tape.pairwise_sq_dist(z, z)?;
    let k_zz = apply_kernel(tape, d_zz, kernel, m)?;
    let s_zz = tape.sum(k_zz);
    let d_zp = tape.pairwise_sq_dist(z, p)?;
    let k_zp = apply_kernel(tape, d_zp, kernel, m)?;
    let s_zp = tape.sum(k_zp);

    // k(a, a) = 1 for both kernels, so the diagonal contributes exactly B.
    let pp = constant_kernel_offdiag_sum(&prior.cast(), kernel) / (bf * (bf - 1.0));
    let zz = tape.add_scalar(s_zz, T::lit(-bf));
    let zz = tape.scale(zz, T::lit(1.0 / (bf * (bf - 1.0))));
    let zp = tape.scale(s_zp, T::lit(-2.0 / (bf * bf)));
    let total = tape.add(zz, zp)?;
    Ok(tape.add_scalar(total, T::lit(pp)))
}

/// DIP-VAE-II moment penalty `λ_od·Σ_{i≠j} C_ij² + λ_d·Σ_i (C_ii − 1)²`
/// with `C = Cov_batch[μ] + mean_batch[diag(exp(lv))]` (or `Cov[μ]` alone).
pub fn dip2_loss<T: Scalar>(
    tape: &mut Tape<T>,
    mu: Var,
    logvar: Var,
    lambda_od: f64,
    lambda_d: f64,
    covariance: DipCovariance,
) -> Result<Var> {
    let (b, m) = tape.value(mu).dims2()?;
    if b < 2 {
        return Err(Error::Contract("dip2 needs at least two rows".into()));
    }
    let mean = tape.mean_rows(mu)?;
    let neg = tape.scale(mean, -T::one());
    let centered = tape.add_row(mu, neg)?;
    let ct = tape.transpose(centered)?;
    let gram = tape.matmul(ct, centered)?;
    let cov = tape.scale(gram, T::lit(1.0 / b as f64));

    let offmask: Vec<T> = (0..m * m)
        .map(|i| if i / m == i % m { T::zero() } else { T::one() })
        .collect();
    let offmask = tape.constant(Tensor::new(vec![m, m], offmask)?);
    let sq = tape.square(cov);
    let off = tape.mul(sq, offmask)?;
    let off = tape.sum(off);

    let c2 = tape.square(centered);
    let mut diag = tape.mean_rows(c2)?;
    if covariance == DipCovariance::SecondMoment {
        let var = tape.exp(logvar);
        let mean_var = tape.mean_rows(var)?;
        diag = tape.add(diag, mean_var)?;
    }
    let dev = tape.add_scalar(diag, -T::one());
    let dev = tape.square(dev);
    let on = tape.sum(dev);

    let off = tape.scale(off, T::lit(lambda_od));
    let on = tape.scale(on, T::lit(lambda_d));
    tape.add(off, on)
}
