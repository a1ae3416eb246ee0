use rand::Rng;
use serde::Serialize;

use super::losses::{dip2_loss, kl_loss, kl_per_dim, mmd_loss, reconstruction_loss};
use super::partition::PartitionSpec;
use super::vae::{reparameterise_with, standard_normal, Variant, VaeModel};
use crate::autodiff::{GateMask, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Binding, Mode};
use crate::tensor::{Scalar, Tensor};

/// Losses of one optimisation step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepStats {
    pub recon: f64,
    /// Unweighted KL over the full latent vector.
    pub kl: f64,
    /// Everything in the objective except reconstruction.
    pub penalty: f64,
    pub total: f64,
    pub kl_per_dim: Vec<f64>,
    pub partition: usize,
}

/// How the latent gate is placed on the graph.
#[derive(Clone, Debug, PartialEq)]
pub enum Gating {
    Mask(GateMask),
    /// No gate nodes at all; reference for the reduction property.
    Off,
}

/// One matched input/target batch. Rows of `targets` share the factors of
/// `partition` with the corresponding rows of `inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch<T> {
    pub inputs: Tensor<T>,
    pub targets: Tensor<T>,
    pub partition: usize,
}

/// Noise consumed by a step, drawn up front so that equal seeds give equal
/// steps regardless of gating.
pub struct StepNoise<T> {
    pub epsilon: Tensor<T>,
    pub prior: Option<Tensor<T>>,
}

impl<T: Scalar> StepNoise<T> {
    pub fn draw<R: Rng + ?Sized>(variant: &Variant, batch: usize, latent: usize, rng: &mut R) -> Self {
        let epsilon = standard_normal(&[batch, latent], rng);
        let prior = matches!(variant, Variant::Info { .. }).then(|| standard_normal(&[batch, latent], rng));
        Self { epsilon, prior }
    }
}

struct Forward {
    loss: Var,
    recon: Var,
    kl: Var,
    penalty: Var,
    mu: Var,
    logvar: Var,
}

fn gate<T: Scalar>(tape: &mut Tape<T>, v: Var, gating: &Gating) -> Result<Var> {
    match gating {
        Gating::Mask(m) => tape.gate_gradient(v, m),
        Gating::Off => Ok(v),
    }
}

/// Builds the full training objective on `tape`.
fn objective<T: Scalar>(
    model: &mut VaeModel<T>,
    tape: &mut Tape<T>,
    batch: &TrainBatch<T>,
    gating: &Gating,
    noise: StepNoise<T>,
) -> Result<(Forward, Binding)> {
    let binding = model.store.bind(tape);
    let x = tape.constant(batch.inputs.clone());
    let (mu, logvar) = model.encode(tape, &binding, x, Mode::Train)?;
    let sample = reparameterise_with(tape, mu, logvar, noise.epsilon)?;
    let z = gate(tape, sample.z, gating)?;
    let x_hat = model.decode(tape, &binding, z, Mode::Train)?;
    let recon = reconstruction_loss(tape, x_hat, &batch.targets)?;

    let (mu_r, lv_r, z_r) = if model.config.gate_kl {
        (gate(tape, mu, gating)?, gate(tape, logvar, gating)?, z)
    } else {
        (mu, logvar, sample.z)
    };
    let kl = kl_loss(tape, mu_r, lv_r)?;
    let penalty = match model.config.variant {
        Variant::Beta { beta } => tape.scale(kl, T::lit(beta)),
        Variant::Info { lambda_v } => {
            let prior = noise
                .prior
                .ok_or_else(|| Error::Contract("info objective needs prior samples".into()))?;
            let mmd = mmd_loss(tape, z_r, &prior, &model.config.mmd_kernel)?;
            let mmd = tape.scale(mmd, T::lit(lambda_v));
            tape.add(kl, mmd)?
        }
        Variant::Dip2 { lambda_od, lambda_d } => {
            let dip = dip2_loss(tape, mu_r, lv_r, lambda_od, lambda_d, model.config.dip_covariance)?;
            tape.add(kl, dip)?
        }
    };
    let loss = tape.add(recon, penalty)?;
    let f = Forward {
        loss,
        recon,
        kl,
        penalty,
        mu,
        logvar,
    };
    Ok((f, binding))
}

fn stats<T: Scalar>(tape: &Tape<T>, f: &Forward, partition: usize) -> Result<StepStats> {
    let get = |v: Var| tape.value(v).item().to_f64().unwrap_or(f64::NAN);
    let s = StepStats {
        recon: get(f.recon),
        kl: get(f.kl),
        penalty: get(f.penalty),
        total: get(f.loss),
        kl_per_dim: kl_per_dim(tape.value(f.mu), tape.value(f.logvar)),
        partition,
    };
    if !s.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {s:?}")));
    }
    Ok(s)
}

/// Forward, backward and gradient collection without the optimiser update.
/// Parameter gradients are left in `model.store`.
pub fn compute_gradients<T: Scalar>(
    model: &mut VaeModel<T>,
    batch: &TrainBatch<T>,
    gating: &Gating,
    noise: StepNoise<T>,
) -> Result<StepStats> {
    let mut tape = Tape::new();
    let (f, binding) = objective(model, &mut tape, batch, gating, noise)?;
    let stats = stats(&tape, &f, batch.partition)?;
    let mut grads = tape.backward(f.loss)?;
    model.store.collect_grads(&mut grads, &binding);
    Ok(stats)
}

/// One gated optimisation step: the reconstruction path is gated at `z`,
/// and with `gate_kl` the regulariser sees gated copies of μ, log σ² and z.
pub fn gated_train_step<T: Scalar, R: Rng + ?Sized>(
    model: &mut VaeModel<T>,
    batch: &TrainBatch<T>,
    spec: &PartitionSpec,
    opt: &mut AdamState<T>,
    rng: &mut R,
) -> Result<StepStats> {
    if batch.partition >= spec.num_partitions() {
        return Err(Error::Contract(format!(
            "partition {} out of range for {} partitions",
            batch.partition,
            spec.num_partitions()
        )));
    }
    let gating = Gating::Mask(spec.mask(batch.partition)?);
    let (b, _) = batch.inputs.dims2()?;
    let noise = StepNoise::draw(&model.config.variant, b, model.latent_dim(), rng);
    train_step_with(model, batch, &gating, noise, opt)
}

pub fn train_step_with<T: Scalar>(
    model: &mut VaeModel<T>,
    batch: &TrainBatch<T>,
    gating: &Gating,
    noise: StepNoise<T>,
    opt: &mut AdamState<T>,
) -> Result<StepStats> {
    let stats = compute_gradients(model, batch, gating, noise)?;
    opt.step(&mut model.store)?;
    Ok(stats)
}

/// Decoder-only step on self-paired images: encoder frozen and in eval mode,
/// reconstruction loss only. `opt` must manage the decoder parameters only.
pub fn finetune_decoder_step<T: Scalar, R: Rng + ?Sized>(
    model: &mut VaeModel<T>,
    images: &Tensor<T>,
    opt: &mut AdamState<T>,
    rng: &mut R,
) -> Result<StepStats> {
    let encoder = model.encoder_params();
    model.store.set_frozen(&encoder, true);
    let result = (|| {
        let mut tape = Tape::new();
        let binding = model.store.bind(&mut tape);
        let x = tape.constant(images.clone());
        let (mu, logvar) = model.encode(&mut tape, &binding, x, Mode::Eval)?;
        let shape = tape.value(mu).shape().to_vec();
        let sample = reparameterise_with(&mut tape, mu, logvar, standard_normal(&shape, rng))?;
        let x_hat = model.decode(&mut tape, &binding, sample.z, Mode::Train)?;
        let recon = reconstruction_loss(&mut tape, x_hat, images)?;
        let value = tape.value(recon).item().to_f64().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite reconstruction loss".into()));
        }
        let mut grads = tape.backward(recon)?;
        model.store.collect_grads(&mut grads, &binding);
        opt.step(&mut model.store)?;
        Ok(StepStats {
            recon: value,
            kl: 0.0,
            penalty: 0.0,
            total: value,
            kl_per_dim: Vec::new(),
            partition: 0,
        })
    })();
    model.store.set_frozen(&encoder, false);
    model.store.zero_grads();
    result
}
