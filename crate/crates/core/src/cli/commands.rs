use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::RunConfig;
use super::slices::write_slices;
use super::Command;
use crate::data::dataset::{build_dataset, load_dataset, save_dataset, Dataset};
use crate::data::metrics::{affine_fit, data_range, mse, psnr_from_mse};
use crate::data::tensor::{load_tensor, save_tensor, write_atomic, Dtype, Tensor};
use crate::error::{invalid, Error, Result};
use crate::operators::ProjectionStack;
use crate::pca::{
    count_parameters, eigenvalue_spectrum, fit_pca, matrix_to_row_major, parameter_reduction_percent, quality_sweep,
    sweep_to_csv, CompressedRedundancy, WeightMatrix,
};
use crate::pipeline::{expand_compressed, reconstruct_volume, PipelineState, RedundancyMode};
use crate::redundancy::{plane_counts, PlaneCount, RedundancyWeights};
use crate::training::ssim::{ssim_value, SsimConfig};
use crate::training::{
    initial_mode, load_checkpoint, save_checkpoint, train, trainable_parameters, CheckpointMeta, EpochMetrics,
};

pub(super) struct Context<'a> {
    pub out: &'a Path,
    pub cfg: Option<&'a RunConfig>,
    pub precision: Dtype,
}

impl Context<'_> {
    fn cfg(&self) -> &RunConfig {
        self.cfg.expect("command loads a configuration")
    }

    fn state(&self) -> Result<PipelineState> {
        let cfg = self.cfg();
        let scan = cfg.scan()?;
        let grid = cfg.sino_grid(&scan)?;
        let w = RedundancyWeights::constant(scan.n_views(), &grid, 0.5);
        PipelineState::new(scan, grid, cfg.volume_grid()?, RedundancyMode::Uncompressed(w))
    }

    fn save(&self, name: &str, shape: Vec<usize>, values: Vec<f64>, role: &str) -> Result<()> {
        save_tensor(&self.out.join(name), &Tensor::new(shape, values)?, self.precision, role)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        write_atomic(&self.out.join(name), text.as_bytes())
    }
}

pub(super) fn dispatch(command: &Command, ctx: &Context) -> Result<()> {
    fs::create_dir_all(ctx.out)?;
    match command {
        Command::Dataset => dataset(ctx),
        Command::Train { data, init_weights } => train_cmd(ctx, data.as_deref(), init_weights.as_deref()),
        Command::Reconstruct { projections, weights } => reconstruct(ctx, projections, weights.as_deref()),
        Command::PcaFit { weights, k } => pca_fit(ctx, weights, *k),
        Command::PcaSweep { weights, ks, window } => pca_sweep(ctx, weights, ks, *window),
        Command::Redundancy => redundancy(ctx),
        Command::Evaluate {
            volume,
            reference,
            range,
            window,
            affine,
        } => evaluate(ctx, volume, reference, *range, *window, *affine),
        Command::Params { views, bins, k } => params(ctx, *views, *bins, k),
        Command::Slices {
            volume,
            reference,
            axis,
            index,
        } => write_slices(ctx.out, volume, reference.as_deref(), *axis, index),
    }
}

fn generate(cfg: &RunConfig) -> Result<Dataset> {
    let scan = cfg.scan()?;
    let grid = cfg.volume_grid()?;
    build_dataset(cfg.samples, cfg.split, &scan, &grid, cfg.seed, cfg.noise()?)
}

fn dataset(ctx: &Context) -> Result<()> {
    let ds = generate(ctx.cfg())?;
    save_dataset(ctx.out, &ds, ctx.precision)?;
    println!(
        "{} samples ({} train, {} validation) written to {}",
        ds.len(),
        ds.train.len(),
        ds.val.len(),
        ctx.out.display()
    );
    Ok(())
}

enum Layer {
    /// Row-major `[view][bin]` values.
    Full { n_views: usize, values: Vec<f64> },
    Compressed(CompressedRedundancy),
}

/// A checkpoint directory, or a weight tensor shaped `[views, n_mu, n_s]`
/// or `[views, bins]`. Returns the layer and the per-view map shape.
fn load_layer(path: &Path) -> Result<(Layer, (usize, usize))> {
    if path.is_dir() {
        let (mode, meta) = load_checkpoint(path)?;
        let map = (meta.grid.n_mu, meta.grid.n_s);
        return Ok(match mode {
            RedundancyMode::Uncompressed(w) => (
                Layer::Full {
                    n_views: w.n_views,
                    values: w.values,
                },
                map,
            ),
            RedundancyMode::Compressed(c) => (Layer::Compressed(c), map),
        });
    }
    let (t, _) = load_tensor(path)?;
    let (n_views, map) = match t.shape.as_slice() {
        [n, a, b] => (*n, (*a, *b)),
        [n, m] => (*n, (1, *m)),
        other => return invalid(format!("weights must be 2D or 3D, got shape {other:?}")),
    };
    Ok((Layer::Full { n_views, values: t.values }, map))
}

fn weight_matrix(path: &Path) -> Result<(WeightMatrix, (usize, usize))> {
    let (layer, map) = load_layer(path)?;
    let x = match layer {
        Layer::Full { n_views, values } => WeightMatrix::from_row_slice(n_views, map.0 * map.1, &values),
        Layer::Compressed(c) => c.expand(),
    };
    Ok((x, map))
}

/// Loads weights for `state`, checking that the per-view maps match its grid.
fn layer_for(path: &Path, state: &PipelineState) -> Result<RedundancyMode> {
    let (layer, map) = load_layer(path)?;
    if map != (state.sino_grid.n_mu, state.sino_grid.n_s) {
        return invalid(format!(
            "weights are {}×{} per view, configuration needs {}×{}",
            map.0, map.1, state.sino_grid.n_mu, state.sino_grid.n_s
        ));
    }
    let mode = match layer {
        Layer::Full { n_views, values } => RedundancyMode::Uncompressed(RedundancyWeights {
            n_views,
            grid: state.sino_grid.clone(),
            values,
        }),
        Layer::Compressed(c) => RedundancyMode::Compressed(c),
    };
    state.clone().set_mode(mode.clone())?;
    Ok(mode)
}

#[derive(Serialize)]
struct TrainSummary {
    epochs_run: usize,
    best_epoch: usize,
    best_val_loss: f64,
    converged_epoch: Option<usize>,
    trainable_parameters: usize,
    last: EpochMetrics,
}

fn train_cmd(ctx: &Context, data: Option<&Path>, init_weights: Option<&Path>) -> Result<()> {
    let cfg = ctx.cfg();
    let mut state = ctx.state()?;
    let ds = match data {
        Some(dir) => {
            let ds = load_dataset(dir)?;
            if ds.scan != state.scan || ds.grid != state.volume_grid {
                return invalid("dataset geometry does not match the configuration");
            }
            ds
        }
        None => generate(cfg)?,
    };
    let tc = cfg.train_config()?;
    let reference = match init_weights {
        Some(path) => Some(match layer_for(path, &state)? {
            RedundancyMode::Uncompressed(w) => w,
            RedundancyMode::Compressed(c) => expand_compressed(&c, &state.sino_grid)?,
        }),
        None => None,
    };
    state.set_mode(initial_mode(&state, &tc, reference.as_ref())?)?;
    let outcome = train(&ds, &state, &tc, Some(ctx.out))?;
    let last = *outcome.history.last().ok_or_else(|| Error::InvalidState("no epochs ran".into()))?;
    let meta = CheckpointMeta {
        config_hash: tc.hash(),
        epoch: last.epoch,
        mode: tc.mode,
        n_views: state.n_views(),
        grid: state.sino_grid.clone(),
        metrics: last,
    };
    save_checkpoint(&ctx.out.join("last"), &outcome.last, &meta, ctx.precision)?;
    let summary = TrainSummary {
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        converged_epoch: outcome.converged_epoch,
        trainable_parameters: trainable_parameters(&outcome.last),
        last,
    };
    ctx.write_text("summary.json", &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "{} epochs, best validation loss {:.6} at epoch {}, last: PSNR {:.2} dB, SSIM {:.4}",
        summary.epochs_run, summary.best_val_loss, summary.best_epoch, last.val_psnr, last.val_ssim
    );
    Ok(())
}

fn reconstruct(ctx: &Context, projections: &Path, weights: Option<&Path>) -> Result<()> {
    let mut state = ctx.state()?;
    let mode = match weights {
        Some(path) => layer_for(path, &state)?,
        None => RedundancyMode::Uncompressed(crate::redundancy::analytic_redundancy_weights(&state.scan, &state.sino_grid)),
    };
    state.set_mode(mode)?;
    let (t, _) = load_tensor(projections)?;
    let det = &state.scan.detector;
    if t.shape != [state.n_views(), det.n_v, det.n_u] {
        return invalid(format!(
            "projections have shape {:?}, configuration needs [{}, {}, {}]",
            t.shape,
            state.n_views(),
            det.n_v,
            det.n_u
        ));
    }
    let p = ProjectionStack {
        n_views: state.n_views(),
        n_u: det.n_u,
        n_v: det.n_v,
        values: t.values,
    };
    let (x, _) = reconstruct_volume(&p, &state)?;
    let g = &state.volume_grid;
    ctx.save("volume", vec![g.nz, g.ny, g.nx], x.values, "volume")?;
    println!("volume written to {}", ctx.out.join("volume.raw").display());
    Ok(())
}

fn pca_fit(ctx: &Context, weights: &Path, k: usize) -> Result<()> {
    let (x, _) = weight_matrix(weights)?;
    let model = fit_pca(&x, k)?;
    let c = CompressedRedundancy::from_model(&model, &x)?;
    let spectrum = eigenvalue_spectrum(&x)?;
    let total: f64 = spectrum.iter().sum();
    let mut csv = String::from("index,eigenvalue,explained,cumulative\n");
    let mut cum = 0.0;
    for (i, l) in spectrum.iter().enumerate() {
        cum += l;
        let (e, c) = if total > 0.0 { (l / total, cum / total) } else { (0.0, 0.0) };
        let _ = writeln!(csv, "{},{l:e},{e},{c}", i + 1);
    }
    ctx.write_text("spectrum.csv", &csv)?;
    let m = model.n_features();
    ctx.save("mean", vec![m], model.mean.as_slice().to_vec(), "pca-mean")?;
    ctx.save("components", vec![m, k], matrix_to_row_major(&model.components), "pca-components")?;
    ctx.save("eigenvalues", vec![k], model.eigenvalues.clone(), "pca-eigenvalues")?;
    ctx.save("w_prime", vec![c.n_views(), k], matrix_to_row_major(&c.w_prime), "pca-codes")?;
    let kept: f64 = model.eigenvalues.iter().sum();
    let explained = if total > 0.0 { 100.0 * kept / total } else { 100.0 };
    println!("k = {k}: {explained:.4}% of the variance retained ({} eigenvalues in spectrum.csv)", spectrum.len());
    Ok(())
}

fn pca_sweep(ctx: &Context, weights: &Path, ks: &[usize], window: usize) -> Result<()> {
    let (x, map) = weight_matrix(weights)?;
    let records = quality_sweep(&x, map, ks, window)?;
    ctx.write_text("sweep.csv", &sweep_to_csv(&records))?;
    for r in &records {
        println!("k = {:>4}: MSE {:.3e}, SSIM {:.6}, PSNR {:.2} dB", r.k, r.mse, r.ssim, r.psnr);
    }
    Ok(())
}

fn redundancy(ctx: &Context) -> Result<()> {
    let state = ctx.state()?;
    let grid = &state.sino_grid;
    let counts = plane_counts(&state.scan, grid);
    let values: Vec<f64> = counts.iter().map(|c| c.weight()).collect();
    ctx.save("w_red", vec![state.n_views(), grid.n_mu, grid.n_s], values, "redundancy-weights")?;
    let mut histogram: Vec<(String, usize)> = Vec::new();
    let mut degenerate = 0usize;
    let mut by_count = std::collections::BTreeMap::new();
    for c in &counts {
        match c {
            PlaneCount::Count(n) => *by_count.entry(*n).or_insert(0usize) += 1,
            PlaneCount::Degenerate => degenerate += 1,
        }
    }
    histogram.extend(by_count.iter().map(|(n, b)| (n.to_string(), *b)));
    histogram.push(("degenerate".into(), degenerate));
    let mut csv = String::from("count,bins\n");
    for (label, bins) in &histogram {
        let _ = writeln!(csv, "{label},{bins}");
        println!("n = {label:>10}: {bins} bins");
    }
    ctx.write_text("counts.csv", &csv)
}

/// SSIM axes for a tensor stored row-major with the last axis fastest.
fn ssim_dims(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        [n] => Ok([*n, 1, 1]),
        [a, b] => Ok([*b, *a, 1]),
        [a, b, c] => Ok([*c, *b, *a]),
        other => invalid(format!("expected a 1D to 3D tensor, got shape {other:?}")),
    }
}

#[derive(Serialize)]
struct Evaluation {
    mse: f64,
    psnr: f64,
    ssim: f64,
    range: f64,
    affine: Option<(f64, f64)>,
}

fn evaluate(ctx: &Context, volume: &Path, reference: &Path, range: Option<f64>, window: usize, affine: bool) -> Result<()> {
    let (x, _) = load_tensor(volume)?;
    let (t, _) = load_tensor(reference)?;
    if x.shape != t.shape {
        return invalid(format!("shapes differ: {:?} vs {:?}", x.shape, t.shape));
    }
    let dims = ssim_dims(&x.shape)?;
    let mut values = x.values;
    let fit = if affine {
        let (a, b) = affine_fit(&values, &t.values)?;
        values.iter_mut().for_each(|v| *v = a * *v + b);
        Some((a, b))
    } else {
        None
    };
    let range = range.unwrap_or_else(|| data_range(&t.values));
    if !(range > 0.0) {
        return invalid("dynamic range must be positive (pass --range for a constant reference)");
    }
    let e = mse(&values, &t.values)?;
    let result = Evaluation {
        mse: e,
        psnr: psnr_from_mse(e, range)?,
        ssim: ssim_value(&values, &t.values, dims, &SsimConfig::new(window, range)?)?,
        range,
        affine: fit,
    };
    ctx.write_text("metrics.json", &serde_json::to_string_pretty(&result)?)?;
    println!("MSE {:.6e}  PSNR {:.3} dB  SSIM {:.6}", result.mse, result.psnr, result.ssim);
    Ok(())
}

/// `1234567` → `1,234,567`.
pub(crate) fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn params(ctx: &Context, views: u64, bins: u64, ks: &[u64]) -> Result<()> {
    if views == 0 || bins == 0 {
        return invalid("views and bins must be positive");
    }
    let full = count_parameters(views, bins, None);
    let mut csv = String::from("k,parameters,reduction_percent\n");
    let _ = writeln!(csv, "none,{full},0");
    println!("no PCA: {} trainable parameters", group_thousands(full));
    for &k in ks {
        if k == 0 || k > views.min(bins) {
            return invalid(format!("k = {k} must lie in 1..={}", views.min(bins)));
        }
        let n = count_parameters(views, bins, Some(k));
        let r = parameter_reduction_percent(views, bins, k);
        let _ = writeln!(csv, "{k},{n},{r}");
        println!("PCA k = {k}: {} trainable parameters, {r:.2}% reduction", group_thousands(n));
    }
    ctx.write_text("params.csv", &csv)
}
