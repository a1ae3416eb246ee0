//! Seeded end-to-end runs: training, evaluation, decoder fine-tuning,
//! figures and the gated-vs-ungated comparison.
//!
//! Every random choice in a run derives from the config seed through
//! [`derive_seed`] with a fixed stream id, so equal configs give
//! byte-identical outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    epoch_schedule, generate_procedural, load_archive_with_bases, Dataset, PairSampler, DESK_BASES, DSPRITES_BASES,
};
use crate::error::{Error, Result};
use crate::metrics::{derive_seed, evaluate, select_eval_rows, DciReport, EmbeddingSet, Regressor};
use crate::models::{
    finetune_decoder_step, gated_train_step, DipCovariance, MmdKernel, ModelConfig, PartitionSpec, StepStats,
    VaeModel, Variant,
};
use crate::nn::{AdamConfig, AdamState, Checkpoint};
use crate::reporting::{
    emit_comparison_table, render_hinton, render_recon_panel, render_traversals, runs_csv, ComparisonRow, HintonSpec,
    RunRecord, TraversalSpec,
};
use crate::tensor::Tensor;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// File name of the dSprites archive as distributed.
pub const DSPRITES_ARCHIVE: &str = "dsprites_ndarray_co1sh3sc6or40x32y32_64x64.npz";

// Stream ids under the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_PAIRS: u64 = 1;
const STREAM_SCHEDULE: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_EVAL_ROWS: u64 = 4;
const STREAM_SPLIT: u64 = 5;
const STREAM_REGRESSORS: u64 = 6;
const STREAM_FINETUNE: u64 = 7;

/// Rows pushed through the encoder at once when embedding.
const EMBED_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// NPZ archive in the dSprites layout; `bases` defaults to the dSprites grid.
    Archive {
        path: PathBuf,
        #[serde(default = "dsprites_bases")]
        bases: [usize; 5],
    },
    /// Rendered full factor grid with these class counts.
    Procedural { bases: [usize; 5] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full dSprites archive, 50 epochs, paper-sized network.
    Paper,
    /// 6144 procedural images and a small network; minutes on one core.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Distinct images embedded for scoring, capped at the dataset size.
    pub size: usize,
    pub train_fraction: f64,
    pub lasso_alpha: f64,
    pub rf_trees: usize,
    pub rf_max_depth: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            size: 10_000,
            train_fraction: 0.8,
            lasso_alpha: 0.02,
            rf_trees: 10,
            rf_max_depth: 12,
        }
    }
}

impl EvalConfig {
    pub fn regressors(&self) -> [Regressor; 2] {
        [
            Regressor::Lasso {
                alpha: self.lasso_alpha,
            },
            Regressor::RandomForest {
                trees: self.rf_trees,
                max_depth: self.rf_max_depth,
            },
        ]
    }
}

/// Everything a run depends on. Unknown keys are rejected on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Objective and its weights.
    pub variant: Variant,
    pub gated: bool,
    pub gate_kl: bool,
    pub seed: u64,
    pub dataset: DatasetSource,
    pub latent_dim: usize,
    pub boundaries: Vec<usize>,
    pub factor_map: Vec<Vec<usize>>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub finetune_epochs: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    #[serde(default)]
    pub mmd_kernel: MmdKernel,
    #[serde(default)]
    pub dip_covariance: DipCovariance,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, variant: Variant) -> Self {
        let spec = PartitionSpec::dsprites();
        let base = Self {
            variant,
            gated: true,
            gate_kl: true,
            seed: 0,
            dataset: DatasetSource::Archive {
                path: PathBuf::from(DSPRITES_ARCHIVE),
                bases: DSPRITES_BASES,
            },
            latent_dim: spec.latent_dim(),
            boundaries: spec.boundaries,
            factor_map: spec.factor_map,
            epochs: 50,
            batch: 128,
            lr: 1e-4,
            finetune_epochs: 1,
            encoder_hidden: vec![1200, 600],
            decoder_hidden: vec![600, 1200],
            mmd_kernel: MmdKernel::default(),
            dip_covariance: DipCovariance::default(),
            eval: EvalConfig::default(),
            out_dir: PathBuf::from("runs"),
        };
        match preset {
            Preset::Paper => base,
            Preset::Desk => Self {
                dataset: DatasetSource::Procedural { bases: DESK_BASES },
                epochs: 10,
                batch: 16,
                lr: 5e-4,
                encoder_hidden: vec![256, 128],
                decoder_hidden: vec![128, 256],
                ..base
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let spec = PartitionSpec::new(self.boundaries.clone(), self.factor_map.clone())?;
        if spec.latent_dim() != self.latent_dim {
            return fail(format!(
                "latent_dim {} but boundaries end at {}",
                self.latent_dim,
                spec.latent_dim()
            ));
        }
        let weights: Vec<f64> = match self.variant {
            Variant::Beta { beta } => vec![beta],
            Variant::Info { lambda_v } => vec![lambda_v],
            Variant::Dip2 { lambda_od, lambda_d } => vec![lambda_od, lambda_d],
        };
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return fail(format!("objective weights must be finite and non-negative: {:?}", self.variant));
        }
        if self.epochs == 0 || self.batch == 0 {
            return fail("epochs and batch must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("learning rate {} must be finite and non-negative", self.lr));
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return fail("hidden widths must be positive".into());
        }
        let e = &self.eval;
        if !(e.train_fraction > 0.0 && e.train_fraction < 1.0) || e.size < 2 {
            return fail("eval needs size ≥ 2 and a train fraction inside (0, 1)".into());
        }
        if !(e.lasso_alpha.is_finite() && e.lasso_alpha >= 0.0) || e.rf_trees == 0 || e.rf_max_depth == 0 {
            return fail("lasso alpha must be non-negative; forest needs trees and depth".into());
        }
        Ok(())
    }

    /// The partitioning actually trained: the configured one when gated,
    /// a single all-factor partition otherwise.
    pub fn training_spec(&self, num_factors: usize) -> Result<PartitionSpec> {
        let spec = if self.gated {
            PartitionSpec::new(self.boundaries.clone(), self.factor_map.clone())?
        } else {
            PartitionSpec::single(self.latent_dim, num_factors)
        };
        spec.validate(num_factors)?;
        Ok(spec)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder_hidden: self.encoder_hidden.clone(),
            decoder_hidden: self.decoder_hidden.clone(),
            latent_dim: self.latent_dim,
            variant: self.variant,
            gate_kl: self.gate_kl,
            mmd_kernel: self.mmd_kernel,
            dip_covariance: self.dip_covariance,
            ..ModelConfig::dsprites(self.variant)
        }
    }

    fn stream(&self, id: u64) -> u64 {
        derive_seed(self.seed, &[id])
    }
}

fn dsprites_bases() -> [usize; 5] {
    DSPRITES_BASES
}

pub fn load_dataset(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::Archive { path, bases } => load_archive_with_bases(path, bases),
        DatasetSource::Procedural { bases } => generate_procedural(bases),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RunInfo<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
}

/// Writes the resolved config and tool version into `dir`.
pub fn write_run_metadata(cfg: &ExperimentConfig, dir: &Path, command: &str) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("config.json"), cfg.to_json())?;
    let info = RunInfo {
        tool: "gvae",
        version: TOOL_VERSION,
        command,
        seed: cfg.seed,
    };
    write_file(&dir.join("run.json"), serde_json::to_string_pretty(&info).expect("run info"))
}

/// One logged optimisation step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub partition: usize,
    pub recon: f64,
    pub kl: f64,
    pub penalty: f64,
    pub total: f64,
}

impl LogRow {
    fn new(epoch: usize, step: usize, s: &StepStats) -> Self {
        Self {
            epoch,
            step,
            partition: s.partition,
            recon: s.recon,
            kl: s.kl,
            penalty: s.penalty,
            total: s.total,
        }
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("epoch,step,partition,recon,kl,penalty,total\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, r.step, r.partition, r.recon, r.kl, r.penalty, r.total
        );
    }
    out
}

/// Mean total loss of each epoch.
pub fn epoch_means(rows: &[LogRow]) -> Vec<f64> {
    let epochs = rows.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
    (0..epochs)
        .map(|e| {
            let sel: Vec<f64> = rows.iter().filter(|r| r.epoch == e).map(|r| r.total).collect();
            sel.iter().sum::<f64>() / sel.len().max(1) as f64
        })
        .collect()
}

pub struct TrainOutcome {
    pub model: VaeModel<f32>,
    pub log: Vec<LogRow>,
}

fn steps_per_epoch(ds: &Dataset, batch: usize) -> Result<usize> {
    let steps = ds.len() / batch;
    if steps == 0 {
        return Err(Error::Config(format!("batch {batch} exceeds the {} dataset images", ds.len())));
    }
    Ok(steps)
}

/// Trains from scratch. Gated runs visit partitions on a balanced shuffled
/// schedule with factor-matched targets; ungated runs follow the identical
/// pipeline with a single partition and target = input. With `out` set,
/// the checkpoint is rewritten after every epoch and the loss log at the end.
pub fn train(cfg: &ExperimentConfig, ds: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = cfg.training_spec(ds.factors.num_factors())?;
    let steps = steps_per_epoch(ds, cfg.batch)?;
    let mut model = VaeModel::<f32>::new(cfg.model_config(), cfg.stream(STREAM_INIT))?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut opt = AdamState::new(adam, &model.store, &model.all_params());
    let mut sampler = PairSampler::new(ds, &spec, cfg.stream(STREAM_PAIRS))?;
    let mut schedule_rng = ChaCha8Rng::seed_from_u64(cfg.stream(STREAM_SCHEDULE));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.stream(STREAM_NOISE));
    if let Some(dir) = out {
        write_run_metadata(cfg, dir, "train")?;
    }
    let mut log = Vec::with_capacity(cfg.epochs * steps);
    for epoch in 0..cfg.epochs {
        let schedule = epoch_schedule(spec.num_partitions(), steps, &mut schedule_rng);
        for (step, &partition) in schedule.iter().enumerate() {
            let pairs = if cfg.gated {
                sampler.sample(partition, cfg.batch)?
            } else {
                sampler.sample_self(cfg.batch)
            };
            let batch = pairs.to_train_batch::<f32>(ds);
            let stats = gated_train_step(&mut model, &batch, &spec, &mut opt, &mut noise_rng)?;
            log.push(LogRow::new(epoch, step, &stats));
        }
        let means = epoch_means(&log);
        log::info!("epoch {}/{}: mean loss {:.3}", epoch + 1, cfg.epochs, means[epoch]);
        if let Some(dir) = out {
            model.to_checkpoint().save(&dir.join("checkpoint.gvae"))?;
        }
    }
    if let Some(dir) = out {
        write_file(&dir.join("loss.csv"), log_csv(&log))?;
    }
    // Hand back exactly what the checkpoint holds (running statistics are
    // stored in f32), so scoring a fresh run and a reloaded one agree.
    let model = VaeModel::from_checkpoint(cfg.model_config(), &model.to_checkpoint())?;
    Ok(TrainOutcome { model, log })
}

pub fn load_model(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<VaeModel<f32>> {
    let ck = Checkpoint::load(checkpoint)?;
    VaeModel::from_checkpoint(cfg.model_config(), &ck)
}

/// Eval-mode latent means of `rows`, in order.
pub fn embed_rows(model: &mut VaeModel<f32>, ds: &Dataset, rows: &[usize]) -> Result<Tensor<f64>> {
    let m = model.latent_dim();
    let mut data = Vec::with_capacity(rows.len() * m);
    for chunk in rows.chunks(EMBED_CHUNK) {
        let mu = model.embed(&ds.batch::<f32>(chunk))?;
        data.extend(mu.data().iter().map(|&v| v as f64));
    }
    Tensor::new(vec![rows.len(), m], data)
}

/// Embedding of the evaluation images with their normalised factors,
/// split into regressor train and test rows.
pub fn embedding_set(cfg: &ExperimentConfig, model: &mut VaeModel<f32>, ds: &Dataset) -> Result<EmbeddingSet> {
    let rows = select_eval_rows(ds.len(), cfg.eval.size, cfg.stream(STREAM_EVAL_ROWS));
    let z = embed_rows(model, ds, &rows)?;
    let v = Tensor::new(vec![rows.len(), ds.factors.num_factors()], ds.factors.values(&rows))?;
    EmbeddingSet::new(z, v, cfg.eval.train_fraction, cfg.stream(STREAM_SPLIT))
}

/// Lasso then random-forest reports of one model.
pub fn evaluate_model(cfg: &ExperimentConfig, model: &mut VaeModel<f32>, ds: &Dataset) -> Result<Vec<DciReport>> {
    let emb = embedding_set(cfg, model, ds)?;
    cfg.eval
        .regressors()
        .into_iter()
        .map(|reg| evaluate(&emb, reg, cfg.stream(STREAM_REGRESSORS)))
        .collect()
}

#[derive(Serialize)]
struct EvalFile<'a> {
    variant: &'a str,
    gated: bool,
    seed: u64,
    reports: &'a [DciReport],
}

/// Long-form CSV of every per-latent and per-factor value.
pub fn report_csv(reports: &[DciReport]) -> String {
    let mut out = String::from("regressor,quantity,index,value\n");
    for r in reports {
        let name = r.regressor.name();
        let mut put = |q: &str, values: &[f64]| {
            for (i, v) in values.iter().enumerate() {
                let _ = writeln!(out, "{name},{q},{i},{v}");
            }
        };
        put("disentanglement", &r.disentanglement);
        put("latent_weight", &r.latent_weights);
        put("completeness", &r.completeness);
        put("nrmse", &r.nrmse);
        put("weighted_disentanglement", &[r.weighted_disentanglement]);
        put("mean_completeness", &[r.mean_completeness]);
        put("mean_nrmse", &[r.mean_nrmse]);
    }
    out
}

/// Writes `report.json`, `report.csv` and one Hinton SVG per regressor.
pub fn write_eval_outputs(cfg: &ExperimentConfig, reports: &[DciReport], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let file = EvalFile {
        variant: cfg.variant.name(),
        gated: cfg.gated,
        seed: cfg.seed,
        reports,
    };
    write_file(&dir.join("report.json"), serde_json::to_string_pretty(&file).expect("report"))?;
    write_file(&dir.join("report.csv"), report_csv(reports))?;
    for r in reports {
        let matrix = r.importance_matrix()?;
        let spec = HintonSpec::for_matrix(&matrix, 24.0);
        render_hinton(&matrix, &spec, &dir.join(format!("hinton_{}.svg", r.regressor.name())))?;
    }
    Ok(())
}

/// Mean per-image BCE of eval-mode reconstructions (ε = 0) over `rows`.
pub fn reconstruction_bce(model: &mut VaeModel<f32>, ds: &Dataset, rows: &[usize]) -> Result<f64> {
    let clamp = crate::models::losses::BCE_CLAMP;
    let mut total = 0.0;
    for chunk in rows.chunks(EMBED_CHUNK) {
        let x = ds.batch::<f32>(chunk);
        let p = model.reconstruct(&x)?;
        for (&t, &q) in x.data().iter().zip(p.data()) {
            let q = (q as f64).clamp(clamp, 1.0 - clamp);
            total -= if t > 0.5 { q.ln() } else { (1.0 - q).ln() };
        }
    }
    Ok(total / rows.len().max(1) as f64)
}

/// Decoder-only training on self-paired batches for `finetune_epochs`; the
/// encoder is untouched.
pub fn finetune(cfg: &ExperimentConfig, model: &mut VaeModel<f32>, ds: &Dataset) -> Result<Vec<LogRow>> {
    let steps = steps_per_epoch(ds, cfg.batch)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut opt = AdamState::new(adam, &model.store, &model.decoder_params());
    let spec = PartitionSpec::single(cfg.latent_dim, ds.factors.num_factors());
    let mut sampler = PairSampler::new(ds, &spec, cfg.stream(STREAM_FINETUNE))?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_FINETUNE, STREAM_NOISE]));
    let mut log = Vec::with_capacity(cfg.finetune_epochs * steps);
    for epoch in 0..cfg.finetune_epochs {
        for step in 0..steps {
            let rows = sampler.sample_self(cfg.batch).inputs;
            let stats = finetune_decoder_step(model, &ds.batch::<f32>(&rows), &mut opt, &mut noise_rng)?;
            log.push(LogRow::new(epoch, step, &stats));
        }
    }
    Ok(log)
}

/// Traversal grid of the first evaluation image plus a reconstruction
/// panel of the first eight, as `traversal.pgm` and `recon.pgm`.
pub fn render_figures(
    cfg: &ExperimentConfig,
    model: &mut VaeModel<f32>,
    ds: &Dataset,
    spec: &TraversalSpec,
    dir: &Path,
) -> Result<()> {
    create_dir(dir)?;
    let rows = select_eval_rows(ds.len(), cfg.eval.size, cfg.stream(STREAM_EVAL_ROWS));
    render_traversals(model, &ds.batch::<f32>(&rows[..1]), spec, &dir.join("traversal.pgm"))?;
    let panel = &rows[..rows.len().min(8)];
    render_recon_panel(model, &ds.batch::<f32>(panel), 4, &dir.join("recon.pgm"))?;
    Ok(())
}

/// One (variant, gated) cell of the comparison matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub variant: Variant,
    pub gated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Shared settings; `variant`, `gated` and `seed` are set per run.
    pub base: ExperimentConfig,
    pub cells: Vec<Cell>,
    pub runs: usize,
}

impl CompareConfig {
    /// β-VAE, InfoVAE and DIP-VAE-II, each with and without gating.
    pub fn preset(preset: Preset) -> Self {
        let cells = [Variant::BETA_DEFAULT, Variant::INFO_DEFAULT, Variant::DIP2_DEFAULT]
            .into_iter()
            .flat_map(|variant| [false, true].map(|gated| Cell { variant, gated }))
            .collect();
        Self {
            base: ExperimentConfig::preset(preset, Variant::BETA_DEFAULT),
            cells,
            runs: match preset {
                Preset::Paper => 10,
                Preset::Desk => 3,
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() || self.runs == 0 {
            return Err(Error::Config("comparison needs at least one cell and one run".into()));
        }
        self.base.validate()
    }

    /// Config of run `index` in `cell`; seeds are `base.seed + index`.
    pub fn run_config(&self, cell: &Cell, index: usize) -> ExperimentConfig {
        let seed = self.base.seed.wrapping_add(index as u64);
        ExperimentConfig {
            variant: cell.variant,
            gated: cell.gated,
            seed,
            out_dir: self.base.out_dir.join(run_dir_name(cell, seed)),
            ..self.base.clone()
        }
    }
}

fn run_dir_name(cell: &Cell, seed: u64) -> String {
    format!(
        "{}-{}-seed{seed}",
        cell.variant.name(),
        if cell.gated { "gated" } else { "ungated" }
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub model: String,
    pub gated: bool,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareOutcome {
    pub seeds: Vec<u64>,
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
    pub rows: Vec<ComparisonRow>,
}

/// Trains and scores one run, writing its directory.
pub fn run_and_evaluate(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<DciReport>> {
    let mut outcome = train(cfg, ds, Some(&cfg.out_dir))?;
    let reports = evaluate_model(cfg, &mut outcome.model, ds)?;
    write_eval_outputs(cfg, &reports, &cfg.out_dir)?;
    Ok(reports)
}

/// Runs every cell for every seed, records failed runs and aggregates the
/// completed ones into `table.csv` / `table.txt` under the base output dir.
pub fn compare(cfg: &CompareConfig, ds: &Dataset) -> Result<CompareOutcome> {
    cfg.validate()?;
    let dir = &cfg.base.out_dir;
    write_run_metadata(&cfg.base, dir, "compare")?;
    write_file(&dir.join("compare.json"), serde_json::to_string_pretty(cfg).expect("compare config"))?;
    let seeds: Vec<u64> = (0..cfg.runs).map(|i| cfg.base.seed.wrapping_add(i as u64)).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for cell in &cfg.cells {
        for index in 0..cfg.runs {
            let run = cfg.run_config(cell, index);
            log::info!("run {}", run_dir_name(cell, run.seed));
            match run_and_evaluate(&run, ds) {
                Ok(reports) => records.extend(reports.into_iter().map(|report| RunRecord {
                    model: cell.variant.display_name().to_string(),
                    gated: cell.gated,
                    seed: run.seed,
                    report,
                })),
                Err(e) => {
                    log::warn!("run {} failed: {e}", run_dir_name(cell, run.seed));
                    failures.push(RunFailure {
                        model: cell.variant.display_name().to_string(),
                        gated: cell.gated,
                        seed: run.seed,
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    let rows = if records.is_empty() {
        Vec::new()
    } else {
        write_file(&dir.join("runs.csv"), runs_csv(&records)?)?;
        emit_comparison_table(&records, &dir.join("table"))?
    };
    let outcome = CompareOutcome {
        seeds,
        records,
        failures,
        rows,
    };
    write_file(&dir.join("outcome.json"), serde_json::to_string_pretty(&outcome).expect("outcome"))?;
    if outcome.records.is_empty() {
        return Err(Error::Numeric(format!("all {} runs failed", outcome.failures.len())));
    }
    Ok(outcome)
}
