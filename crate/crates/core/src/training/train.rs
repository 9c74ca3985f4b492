//! Full-batch training of the redundancy layer.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::{loss_total, LossConfig};
use super::optim::{Optimizer, OptimizerKind};
use super::schedule::{one_cycle_lr, OneCycleSchedule};
use super::ssim::ssim_value;
use crate::data::dataset::Dataset;
use crate::data::metrics::{mse, psnr_from_mse};
use crate::data::tensor::{load_tensor, save_tensor, write_atomic, Dtype, Tensor};
use crate::error::{invalid, Error, Result};
use crate::operators::{SinogramGrid, Volume};
use crate::pca::{fit_pca, CompressedRedundancy};
use crate::pipeline::{
    filter_activations, grad_compressed, grad_wred_batch, reconstruct_batch, IntermediateCache, PipelineState,
    RedundancyMode,
};
use crate::redundancy::{analytic_redundancy_weights, RedundancyWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainMode {
    Uncompressed,
    Compressed { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Uncompressed: the analytic weights `1/n`.
    Analytic,
    /// Uncompressed: `1/2` everywhere.
    Constant,
    /// Compressed: PCA of the analytic (or supplied) weights.
    PcaInit,
    /// Compressed: mean `1/2`, random orthonormal basis, zero codes.
    Cold,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Self::Analytic),
            "constant" => Ok(Self::Constant),
            "pca-init" => Ok(Self::PcaInit),
            "cold" => Ok(Self::Cold),
            other => Err(Error::InvalidArgument(format!("unknown init strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub max_lr: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub pct_up: f64,
    pub loss: LossConfig,
    pub seed: u64,
    pub mode: TrainMode,
    pub init: InitStrategy,
    /// Also write a numbered checkpoint every this many epochs (0: best only).
    pub checkpoint_every: usize,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub stop_on_plateau: bool,
    pub precision: Dtype,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            optimizer: OptimizerKind::default(),
            max_lr: 0.02,
            div_factor: 25.0,
            final_div_factor: 1e4,
            pct_up: 0.3,
            loss: LossConfig::default(),
            seed: 0,
            mode: TrainMode::Uncompressed,
            init: InitStrategy::Analytic,
            checkpoint_every: 0,
            plateau_window: 20,
            plateau_tol: 1e-4,
            stop_on_plateau: false,
            precision: Dtype::Float64,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Result<OneCycleSchedule> {
        let s = OneCycleSchedule {
            max_lr: self.max_lr,
            div_factor: self.div_factor,
            final_div_factor: self.final_div_factor,
            total_steps: self.epochs,
            pct_up: self.pct_up,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 2 {
            return invalid("training needs at least two epochs");
        }
        self.schedule()?;
        self.loss.validate()?;
        if self.plateau_window == 0 || !(self.plateau_tol >= 0.0) {
            return invalid("plateau window must be ≥ 1 and tolerance ≥ 0");
        }
        match (self.mode, self.init) {
            (TrainMode::Uncompressed, InitStrategy::Analytic | InitStrategy::Constant) => Ok(()),
            (TrainMode::Compressed { k }, InitStrategy::PcaInit | InitStrategy::Cold) if k >= 1 => Ok(()),
            (mode, init) => invalid(format!("init strategy {init:?} does not apply to {mode:?}")),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Initial redundancy layer for `cfg`. `reference` replaces the analytic
/// weights as the PCA source when given (e.g. pretrained weights).
pub fn initial_mode(
    state: &PipelineState,
    cfg: &TrainConfig,
    reference: Option<&RedundancyWeights>,
) -> Result<RedundancyMode> {
    cfg.validate()?;
    let grid = &state.sino_grid;
    let n = state.n_views();
    let m = grid.len();
    let analytic = || match reference {
        Some(w) => w.clone(),
        None => analytic_redundancy_weights(&state.scan, grid),
    };
    match (cfg.mode, cfg.init) {
        (TrainMode::Uncompressed, InitStrategy::Analytic) => Ok(RedundancyMode::Uncompressed(analytic())),
        (TrainMode::Uncompressed, _) => Ok(RedundancyMode::Uncompressed(RedundancyWeights::constant(n, grid, 0.5))),
        (TrainMode::Compressed { k }, InitStrategy::PcaInit) => {
            let w = analytic();
            let x = DMatrix::from_row_slice(n, m, &w.values);
            let model = fit_pca(&x, k)?;
            Ok(RedundancyMode::Compressed(CompressedRedundancy::from_model(&model, &x)?))
        }
        (TrainMode::Compressed { k }, _) => {
            if k > m {
                return invalid(format!("k = {k} exceeds {m} features"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let g = DMatrix::from_fn(m, k, |_, _| StandardNormal.sample(&mut rng));
            let q = g.qr().q().columns(0, k).into_owned();
            Ok(RedundancyMode::Compressed(CompressedRedundancy::new(
                DMatrix::zeros(n, k),
                q,
                DVector::from_element(m, 0.5),
            )?))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mse: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

pub fn history_to_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_mse,val_psnr,val_ssim\n");
    for h in history {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{},{}",
            h.epoch, h.train_loss, h.val_loss, h.val_mse, h.val_psnr, h.val_ssim
        );
    }
    out
}

/// First epoch whose validation loss is at or below `target`.
pub fn epochs_to_reach(history: &[EpochMetrics], target: f64) -> Option<usize> {
    history.iter().find(|h| h.val_loss <= target).map(|h| h.epoch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn volume_dims(state: &PipelineState) -> [usize; 3] {
    let g = &state.volume_grid;
    [g.nx, g.ny, g.nz]
}

/// Mean metrics of the reconstructions of `indices` under the weights `w`.
pub fn evaluate_cached(
    caches: &[IntermediateCache],
    targets: &[&Volume],
    w: &RedundancyWeights,
    state: &PipelineState,
    loss: &LossConfig,
) -> Result<EvalMetrics> {
    if caches.is_empty() || caches.len() != targets.len() {
        return invalid("evaluation needs matching, non-empty caches and targets");
    }
    let dims = volume_dims(state);
    let mut acc = EvalMetrics {
        loss: 0.0,
        mse: 0.0,
        psnr: 0.0,
        ssim: 0.0,
    };
    let refs: Vec<&IntermediateCache> = caches.iter().collect();
    let xs = reconstruct_batch(&refs, w, state)?;
    for (x, target) in xs.iter().zip(targets) {
        let e = mse(&x.values, &target.values)?;
        let s = ssim_value(&x.values, &target.values, dims, &loss.ssim)?;
        acc.mse += e;
        acc.ssim += s;
        acc.psnr += psnr_from_mse(e, loss.ssim.dynamic_range)?;
        acc.loss += e + loss.lambda_ssim * (1.0 - s);
    }
    let n = caches.len() as f64;
    Ok(EvalMetrics {
        loss: acc.loss / n,
        mse: acc.mse / n,
        psnr: acc.psnr / n,
        ssim: acc.ssim / n,
    })
}

fn flatten(mode: &RedundancyMode) -> Vec<f64> {
    match mode {
        RedundancyMode::Uncompressed(w) => w.values.clone(),
        RedundancyMode::Compressed(c) => c
            .w_prime
            .as_slice()
            .iter()
            .chain(c.v_k.as_slice())
            .chain(c.mean.as_slice())
            .copied()
            .collect(),
    }
}

fn unflatten(mode: &mut RedundancyMode, params: &[f64]) {
    match mode {
        RedundancyMode::Uncompressed(w) => w.values.copy_from_slice(params),
        RedundancyMode::Compressed(c) => {
            let a = c.w_prime.len();
            let b = c.v_k.len();
            c.w_prime.as_mut_slice().copy_from_slice(&params[..a]);
            c.v_k.as_mut_slice().copy_from_slice(&params[a..a + b]);
            c.mean.as_mut_slice().copy_from_slice(&params[a + b..]);
        }
    }
}

/// Number of trainable parameters of a redundancy layer.
pub fn trainable_parameters(mode: &RedundancyMode) -> usize {
    match mode {
        RedundancyMode::Uncompressed(w) => w.values.len(),
        RedundancyMode::Compressed(c) => c.w_prime.len() + c.v_k.len() + c.mean.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best: RedundancyMode,
    pub last: RedundancyMode,
    /// Epoch at which the validation-loss plateau criterion first held.
    pub converged_epoch: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub epoch: usize,
    pub mode: TrainMode,
    pub n_views: usize,
    pub grid: SinogramGrid,
    pub metrics: EpochMetrics,
}

pub const CHECKPOINT_META: &str = "checkpoint.json";

pub fn save_checkpoint(dir: &Path, mode: &RedundancyMode, meta: &CheckpointMeta, dtype: Dtype) -> Result<()> {
    fs::create_dir_all(dir)?;
    let grid = &meta.grid;
    match mode {
        RedundancyMode::Uncompressed(w) => save_tensor(
            &dir.join("w_red"),
            &Tensor::new(vec![w.n_views, grid.n_mu, grid.n_s], w.values.clone())?,
            dtype,
            "w_red",
        )?,
        RedundancyMode::Compressed(c) => {
            let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
            save_tensor(
                &dir.join("w_prime"),
                &Tensor::new(vec![c.n_views(), c.k()], row_major(&c.w_prime))?,
                dtype,
                "w_prime",
            )?;
            save_tensor(&dir.join("v_k"), &Tensor::new(vec![c.n_features(), c.k()], row_major(&c.v_k))?, dtype, "v_k")?;
            save_tensor(&dir.join("mean"), &Tensor::new(vec![c.n_features()], c.mean.as_slice().to_vec())?, dtype, "mean")?;
        }
    }
    write_atomic(&dir.join(CHECKPOINT_META), serde_json::to_string_pretty(meta)?.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<(RedundancyMode, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(CHECKPOINT_META))?)
        .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    let grid = meta.grid.clone();
    let m = grid.len();
    let mode = match meta.mode {
        TrainMode::Uncompressed => {
            let (t, _) = load_tensor(&dir.join("w_red"))?;
            if t.shape != [meta.n_views, grid.n_mu, grid.n_s] {
                return Err(Error::Format(format!("w_red has shape {:?}", t.shape)));
            }
            RedundancyMode::Uncompressed(RedundancyWeights {
                n_views: meta.n_views,
                grid,
                values: t.values,
            })
        }
        TrainMode::Compressed { k } => {
            let (wp, _) = load_tensor(&dir.join("w_prime"))?;
            let (v, _) = load_tensor(&dir.join("v_k"))?;
            let (mean, _) = load_tensor(&dir.join("mean"))?;
            if wp.shape != [meta.n_views, k] || v.shape != [m, k] || mean.shape != [m] {
                return Err(Error::Format("compressed checkpoint shapes are inconsistent".into()));
            }
            RedundancyMode::Compressed(CompressedRedundancy::new(
                DMatrix::from_row_slice(meta.n_views, k, &wp.values),
                DMatrix::from_row_slice(m, k, &v.values),
                DVector::from_vec(mean.values),
            )?)
        }
    };
    Ok((mode, meta))
}

fn mode_matches(mode: &RedundancyMode, cfg: &TrainConfig) -> bool {
    matches!(
        (mode, cfg.mode),
        (RedundancyMode::Uncompressed(_), TrainMode::Uncompressed)
    ) || matches!((mode, cfg.mode), (RedundancyMode::Compressed(c), TrainMode::Compressed { k }) if c.k() == k)
}

/// Trains the redundancy layer held by `state` (its current mode is the
/// initialization). Writes checkpoints and `metrics.csv` under `out` if given.
pub fn train(ds: &Dataset, state: &PipelineState, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.train.is_empty() || ds.val.is_empty() {
        return invalid("training needs non-empty train and validation splits");
    }
    if ds.train.iter().any(|i| ds.val.contains(i)) {
        return invalid("train and validation splits overlap");
    }
    if !mode_matches(&state.mode, cfg) {
        return invalid("pipeline redundancy layer does not match the configured mode");
    }
    let schedule = cfg.schedule()?;
    let dims = volume_dims(state);
    let cache_of = |i: usize| filter_activations(&ds.projections[i], state);
    let train_caches = ds.train.iter().map(|&i| cache_of(i)).collect::<Result<Vec<_>>>()?;
    let val_caches = ds.val.iter().map(|&i| cache_of(i)).collect::<Result<Vec<_>>>()?;
    let train_refs: Vec<&IntermediateCache> = train_caches.iter().collect();
    let val_targets: Vec<&Volume> = ds.val.iter().map(|&i| &ds.volumes[i]).collect();

    let mut mode = state.mode.clone();
    let mut params = flatten(&mode);
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let mut work = state.clone();
    let n_train = ds.train.len() as f64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (0usize, f64::INFINITY, mode.clone());
    let mut converged_epoch = None;
    let hash = cfg.hash();

    for epoch in 0..cfg.epochs {
        work.mode = mode.clone();
        let w = work.effective_weights()?;
        let mut g_w = vec![0.0; w.values.len()];
        let mut train_loss = 0.0;
        let xs = reconstruct_batch(&train_refs, &w, &work)?;
        let mut gxs = Vec::with_capacity(xs.len());
        for (x, &i) in xs.iter().zip(&ds.train) {
            let (lv, gx) = loss_total(&x.values, &ds.volumes[i].values, dims, &cfg.loss)?;
            train_loss += lv.total / n_train;
            gxs.push(Volume {
                grid: work.volume_grid.clone(),
                values: gx.into_iter().map(|v| v / n_train).collect(),
            });
        }
        let gx_refs: Vec<&Volume> = gxs.iter().collect();
        grad_wred_batch(&gx_refs, &train_refs, &work, &mut g_w)?;
        if !train_loss.is_finite() {
            return Err(Error::Divergence(format!("training loss is {train_loss} at epoch {}", epoch + 1)));
        }
        let grad = match &mode {
            RedundancyMode::Uncompressed(_) => g_w,
            RedundancyMode::Compressed(c) => {
                let g = DMatrix::from_row_slice(c.n_views(), c.n_features(), &g_w);
                let gc = grad_compressed(&g, c)?;
                gc.w_prime.as_slice().iter().chain(gc.v_k.as_slice()).chain(gc.mean.as_slice()).copied().collect()
            }
        };
        let lr = one_cycle_lr(epoch, &schedule)?;
        opt.step(&mut params, &grad, lr);
        unflatten(&mut mode, &params);

        work.mode = mode.clone();
        let val = evaluate_cached(&val_caches, &val_targets, &work.effective_weights()?, &work, &cfg.loss)?;
        if !val.loss.is_finite() {
            return Err(Error::Divergence(format!("validation loss is {} at epoch {}", val.loss, epoch + 1)));
        }
        let m = EpochMetrics {
            epoch: epoch + 1,
            train_loss,
            val_loss: val.loss,
            val_mse: val.mse,
            val_psnr: val.psnr,
            val_ssim: val.ssim,
        };
        history.push(m);
        let meta = |epoch| CheckpointMeta {
            config_hash: hash.clone(),
            epoch,
            mode: cfg.mode,
            n_views: state.n_views(),
            grid: state.sino_grid.clone(),
            metrics: m,
        };
        if val.loss < best.1 {
            best = (m.epoch, val.loss, mode.clone());
            if let Some(dir) = out {
                save_checkpoint(&dir.join("best"), &mode, &meta(m.epoch), cfg.precision)?;
            }
        }
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && m.epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("epoch_{:04}", m.epoch)), &mode, &meta(m.epoch), cfg.precision)?;
            }
            write_atomic(&dir.join("metrics.csv"), history_to_csv(&history).as_bytes())?;
        }
        if converged_epoch.is_none() && history.len() > cfg.plateau_window {
            let prev = history[history.len() - 1 - cfg.plateau_window].val_loss;
            if ((val.loss - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < cfg.plateau_tol {
                converged_epoch = Some(m.epoch);
                if cfg.stop_on_plateau {
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        history,
        best_epoch: best.0,
        best_val_loss: best.1,
        best: best.2,
        last: mode,
        converged_epoch,
    })
}
