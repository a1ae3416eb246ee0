use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Binding, Checkpoint, Init, Linear, Mode, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Objective family and its weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    /// Reconstruction + β·KL.
    Beta { beta: f64 },
    /// Reconstruction + KL + λ_v·MMD.
    Info { lambda_v: f64 },
    /// Reconstruction + KL + DIP-II moment penalty.
    Dip2 { lambda_od: f64, lambda_d: f64 },
}

impl Variant {
    pub const BETA_DEFAULT: Variant = Variant::Beta { beta: 4.0 };
    pub const INFO_DEFAULT: Variant = Variant::Info { lambda_v: 500.0 };
    pub const DIP2_DEFAULT: Variant = Variant::Dip2 {
        lambda_od: 250.0,
        lambda_d: 250.0,
    };

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Beta { .. } => "beta",
            Variant::Info { .. } => "info",
            Variant::Dip2 { .. } => "dip2",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            Variant::Beta { .. } => "beta-VAE",
            Variant::Info { .. } => "InfoVAE",
            Variant::Dip2 { .. } => "DIP-VAE-II",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `C / (C + ‖a−b‖²)`
    InverseMultiquadric,
    /// `exp(−‖a−b‖² / C)`
    Gaussian,
}

/// MMD kernel with scale `C = scale_per_dim · M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmdKernel {
    pub kind: KernelKind,
    pub scale_per_dim: f64,
}

impl Default for MmdKernel {
    fn default() -> Self {
        Self {
            kind: KernelKind::InverseMultiquadric,
            scale_per_dim: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DipCovariance {
    /// Batch covariance of the means plus the mean encoder variance.
    #[default]
    SecondMoment,
    /// Batch covariance of the means only.
    MeanOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub variant: Variant,
    /// Route the regulariser gradients through the partition gate too.
    pub gate_kl: bool,
    pub mmd_kernel: MmdKernel,
    pub dip_covariance: DipCovariance,
}

impl ModelConfig {
    pub fn dsprites(variant: Variant) -> Self {
        Self {
            input_dim: 64 * 64,
            encoder_hidden: vec![1200, 600],
            decoder_hidden: vec![600, 1200],
            latent_dim: 8,
            variant,
            gate_kl: true,
            mmd_kernel: MmdKernel::default(),
            dip_covariance: DipCovariance::default(),
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    linear: Linear,
    norm: BatchNorm,
}

/// Fully connected VAE: `[Linear→BatchNorm→ReLU]*` trunk with mean and
/// log-variance heads, mirrored decoder ending in `Linear→sigmoid`.
#[derive(Clone, Debug)]
pub struct VaeModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    encoder: Vec<Block>,
    mu_head: Linear,
    logvar_head: Linear,
    decoder: Vec<Block>,
    output: Linear,
}

/// Tape handles of one reparameterised draw.
#[derive(Clone, Copy, Debug)]
pub struct LatentSample {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
    pub epsilon: Var,
}

fn blocks<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input: usize,
    widths: &[usize],
    rng: &mut R,
) -> (Vec<Block>, usize) {
    let mut prev = input;
    let mut out = Vec::new();
    for (i, &w) in widths.iter().enumerate() {
        let linear = Linear::new(store, &format!("{prefix}.fc{i}"), prev, w, Init::HeUniform, rng);
        let norm = BatchNorm::new(store, &format!("{prefix}.bn{i}"), w);
        out.push(Block { linear, norm });
        prev = w;
    }
    (out, prev)
}

impl<T: Scalar> VaeModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.latent_dim == 0 {
            return Err(Error::Config("input and latent widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (encoder, trunk) = blocks(&mut store, "enc", config.input_dim, &config.encoder_hidden, &mut rng);
        let m = config.latent_dim;
        let mu_head = Linear::new(&mut store, "enc.mu", trunk, m, Init::XavierUniform, &mut rng);
        let logvar_head = Linear::new(&mut store, "enc.logvar", trunk, m, Init::XavierUniform, &mut rng);
        let (decoder, last) = blocks(&mut store, "dec", m, &config.decoder_hidden, &mut rng);
        let output = Linear::new(&mut store, "dec.out", last, config.input_dim, Init::XavierUniform, &mut rng);
        Ok(Self {
            config,
            store,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            output,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .encoder
            .iter()
            .flat_map(|b| b.linear.params().into_iter().chain(b.norm.params()))
            .collect();
        ids.extend(self.mu_head.params());
        ids.extend(self.logvar_head.params());
        ids
    }

    pub fn decoder_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .decoder
            .iter()
            .flat_map(|b| b.linear.params().into_iter().chain(b.norm.params()))
            .collect();
        ids.extend(self.output.params());
        ids
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    /// Weight and bias ids of the mean and log-variance heads.
    pub fn head_params(&self) -> [ParamId; 4] {
        let [mw, mb] = self.mu_head.params();
        let [lw, lb] = self.logvar_head.params();
        [mw, mb, lw, lb]
    }

    fn trunk(
        blocks: &mut [Block],
        tape: &mut Tape<T>,
        binding: &Binding,
        mut h: Var,
        mode: Mode,
    ) -> Result<Var> {
        for b in blocks {
            h = b.linear.forward(tape, binding, h)?;
            h = b.norm.forward(tape, binding, h, mode)?;
            h = tape.relu(h);
        }
        Ok(h)
    }

    /// `(μ, log σ²)` for a `B×input_dim` batch; log-variance is clamped to
    /// `[LOGVAR_MIN, LOGVAR_MAX]`.
    pub fn encode(&mut self, tape: &mut Tape<T>, binding: &Binding, x: Var, mode: Mode) -> Result<(Var, Var)> {
        let (_, w) = tape.value(x).dims2()?;
        if w != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "encoder expects {} inputs per row, got {w}",
                self.config.input_dim
            )));
        }
        let h = Self::trunk(&mut self.encoder, tape, binding, x, mode)?;
        let mu = self.mu_head.forward(tape, binding, h)?;
        let lv = self.logvar_head.forward(tape, binding, h)?;
        let lv = tape.clamp(lv, T::lit(LOGVAR_MIN), T::lit(LOGVAR_MAX));
        Ok((mu, lv))
    }

    /// Pixel probabilities in `(0, 1)` for a `B×M` latent batch.
    pub fn decode(&mut self, tape: &mut Tape<T>, binding: &Binding, z: Var, mode: Mode) -> Result<Var> {
        let h = Self::trunk(&mut self.decoder, tape, binding, z, mode)?;
        let logits = self.output.forward(tape, binding, h)?;
        Ok(tape.sigmoid(logits))
    }

    /// Encoder means for `x` in eval mode.
    pub fn embed(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let binding = self.store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let (mu, _) = self.encode(&mut tape, &binding, xv, Mode::Eval)?;
        Ok(tape.value(mu).clone())
    }

    /// Eval-mode decode of fixed latents.
    pub fn decode_latents(&mut self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let binding = self.store.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let out = self.decode(&mut tape, &binding, zv, Mode::Eval)?;
        Ok(tape.value(out).clone())
    }

    /// Eval-mode reconstruction through the mean latent (ε = 0).
    pub fn reconstruct(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mu = self.embed(x)?;
        self.decode_latents(&mu)
    }

    fn norms(&self) -> impl Iterator<Item = (String, &BatchNorm)> {
        let enc = self.encoder.iter().enumerate().map(|(i, b)| (format!("enc.bn{i}"), &b.norm));
        let dec = self.decoder.iter().enumerate().map(|(i, b)| (format!("dec.bn{i}"), &b.norm));
        enc.chain(dec)
    }

    /// Parameters plus batch-norm running statistics.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut entries: Vec<(String, Tensor<f32>)> = self
            .store
            .ids()
            .map(|id| {
                let p = self.store.get(id);
                (p.name.clone(), p.value.cast())
            })
            .collect();
        for (name, bn) in self.norms() {
            let to_t = |v: &[f64]| Tensor::new(vec![v.len()], v.iter().map(|&x| x as f32).collect()).unwrap();
            entries.push((format!("{name}.running_mean"), to_t(&bn.running_mean)));
            entries.push((format!("{name}.running_var"), to_t(&bn.running_var)));
        }
        Checkpoint { entries }
    }

    pub fn from_checkpoint(config: ModelConfig, ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let mut params = Vec::new();
        for id in model.store.ids() {
            let name = &model.store.get(id).name;
            let t = ck
                .get(name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))?;
            params.push((name.clone(), t.cast::<T>()));
        }
        model.store.load_values(&params)?;
        let fetch = |name: String, width: usize| -> Result<Vec<f64>> {
            let t = ck
                .get(&name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))?;
            if t.numel() != width {
                return Err(Error::format(&name, "wrong width"));
            }
            Ok(t.data().iter().map(|&v| v as f64).collect())
        };
        let blocks = model
            .encoder
            .iter_mut()
            .enumerate()
            .map(|(i, b)| (format!("enc.bn{i}"), b))
            .chain(model.decoder.iter_mut().enumerate().map(|(i, b)| (format!("dec.bn{i}"), b)));
        for (name, b) in blocks {
            let w = b.norm.features();
            b.norm.running_mean = fetch(format!("{name}.running_mean"), w)?;
            b.norm.running_var = fetch(format!("{name}.running_var"), w)?;
        }
        Ok(model)
    }
}

/// Standard-normal noise tensor.
pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// `z = μ + ε ⊙ exp(½ log σ²)` with externally supplied `ε`; gradients reach
/// `μ` and `log σ²` but not `ε`.
pub fn reparameterise_with<T: Scalar>(tape: &mut Tape<T>, mu: Var, logvar: Var, epsilon: Tensor<T>) -> Result<LatentSample> {
    if tape.value(mu).shape() != tape.value(logvar).shape() || tape.value(mu).shape() != epsilon.shape() {
        return Err(Error::Dimension("mu, logvar and noise shapes differ".into()));
    }
    let half = tape.scale(logvar, T::lit(0.5));
    let std = tape.exp(half);
    let eps = tape.constant(epsilon);
    let noise = tape.mul(eps, std)?;
    let z = tape.add(mu, noise)?;
    Ok(LatentSample {
        mu,
        logvar,
        z,
        epsilon: eps,
    })
}

pub fn reparameterise<T: Scalar, R: Rng + ?Sized>(tape: &mut Tape<T>, mu: Var, logvar: Var, rng: &mut R) -> Result<LatentSample> {
    let shape = tape.value(mu).shape().to_vec();
    reparameterise_with(tape, mu, logvar, standard_normal(&shape, rng))
}
