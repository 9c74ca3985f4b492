//! C ABI for `trajrecon`.
//!
//! Every fallible function returns a [`TrStatus`]; on failure the message is
//! available from [`tr_last_error`] on the same thread. Arrays are passed as
//! pointer plus element count and must hold exactly the expected number of
//! `double`s (see [`TrDims`]). Handles are created by `*_new` functions and
//! released with the matching `*_free`.
//!
//! Layouts: projections `[view][v][u]`, volumes `[z][y][x]`, redundancy
//! weights `[view][mu][s]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use trajrecon::cli::RunConfig;
use trajrecon::operators::{cone_beam_forward, ProjectionStack, Volume};
use trajrecon::pca::{count_parameters, parameter_reduction_percent};
use trajrecon::pipeline::{filter_activations, grad_wred, reconstruct_adjoint, reconstruct_volume, PipelineState, RedundancyMode};
use trajrecon::redundancy::{analytic_redundancy_weights, RedundancyWeights};
use trajrecon::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrStatus {
    Ok = 0,
    InvalidArgument = 1,
    InvalidState = 2,
    Format = 3,
    Divergence = 4,
    Io = 5,
    Json = 6,
    NullPointer = 7,
    Panic = 8,
}

/// Array sizes of a pipeline.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrDims {
    pub n_views: usize,
    pub n_v: usize,
    pub n_u: usize,
    pub n_mu: usize,
    pub n_s: usize,
    pub nz: usize,
    pub ny: usize,
    pub nx: usize,
    /// `n_views · n_v · n_u`.
    pub projection_len: usize,
    /// `nz · ny · nx`.
    pub volume_len: usize,
    /// `n_views · n_mu · n_s`.
    pub weights_len: usize,
}

/// Opaque reconstruction pipeline: geometry, grids and redundancy weights.
pub struct TrPipeline {
    state: PipelineState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(TrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => TrStatus::InvalidArgument,
            Error::InvalidState(_) => TrStatus::InvalidState,
            Error::Format(_) => TrStatus::Format,
            Error::Divergence(_) => TrStatus::Divergence,
            Error::Io(_) => TrStatus::Io,
            Error::Json(_) => TrStatus::Json,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TrStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            TrStatus::Panic
        }
    }
}

unsafe fn input<'a>(ptr: *const f64, len: usize, expected: usize, what: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len != expected {
        return Err(Failure(TrStatus::InvalidArgument, format!("{what} has {len} values, expected {expected}")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize, expected: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len != expected {
        return Err(Failure(TrStatus::InvalidArgument, format!("{what} has room for {len} values, expected {expected}")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn pipeline<'a>(p: *const TrPipeline) -> Result<&'a TrPipeline, Failure> {
    p.as_ref().ok_or_else(|| null("pipeline"))
}

impl TrPipeline {
    fn dims(&self) -> TrDims {
        let s = &self.state;
        let d = &s.scan.detector;
        let g = &s.volume_grid;
        TrDims {
            n_views: s.n_views(),
            n_v: d.n_v,
            n_u: d.n_u,
            n_mu: s.sino_grid.n_mu,
            n_s: s.sino_grid.n_s,
            nz: g.nz,
            ny: g.ny,
            nx: g.nx,
            projection_len: s.n_views() * d.n_pixels(),
            volume_len: g.len(),
            weights_len: s.n_views() * s.bins_per_view(),
        }
    }

    fn projections(&self, values: &[f64]) -> ProjectionStack {
        let mut p = ProjectionStack::zeros(self.state.n_views(), &self.state.scan.detector);
        p.values.copy_from_slice(values);
        p
    }

    fn volume(&self, values: &[f64]) -> Result<Volume, Failure> {
        Ok(Volume::from_values(&self.state.volume_grid, values.to_vec())?)
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a pipeline from configuration text (`key = value` lines; keys not
/// given keep the desk defaults; NULL means all defaults). The redundancy
/// layer starts at the analytic weights.
///
/// # Safety
/// `config` must be NULL or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_pipeline_new(config: *const c_char, out: *mut *mut TrPipeline) -> TrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = if config.is_null() {
            RunConfig::default()
        } else {
            let text = CStr::from_ptr(config)
                .to_str()
                .map_err(|_| Failure(TrStatus::InvalidArgument, "configuration is not UTF-8".into()))?;
            RunConfig::from_text(text)?
        };
        cfg.validate()?;
        let scan = cfg.scan()?;
        let grid = cfg.sino_grid(&scan)?;
        let w = analytic_redundancy_weights(&scan, &grid);
        let state = PipelineState::new(scan, grid, cfg.volume_grid()?, RedundancyMode::Uncompressed(w))?;
        *out = Box::into_raw(Box::new(TrPipeline { state }));
        Ok(())
    })
}

/// Releases a pipeline. NULL is ignored.
///
/// # Safety
/// `p` must come from [`tr_pipeline_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tr_pipeline_free(p: *mut TrPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live pipeline and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tr_pipeline_dims(p: *const TrPipeline, out: *mut TrDims) -> TrStatus {
    guard(|| {
        let p = pipeline(p)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = p.dims();
        Ok(())
    })
}

/// Copies the redundancy weights in effect into `out`.
///
/// # Safety
/// `p` must be a live pipeline; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tr_pipeline_get_weights(p: *const TrPipeline, out: *mut f64, len: usize) -> TrStatus {
    guard(|| {
        let p = pipeline(p)?;
        let out = output(out, len, p.dims().weights_len, "weights")?;
        out.copy_from_slice(&p.state.effective_weights()?.values);
        Ok(())
    })
}

/// Replaces the redundancy weights.
///
/// # Safety
/// `p` must be a live pipeline; `weights` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tr_pipeline_set_weights(p: *mut TrPipeline, weights: *const f64, len: usize) -> TrStatus {
    guard(|| {
        let p = p.as_mut().ok_or_else(|| null("pipeline"))?;
        let values = input(weights, len, p.dims().weights_len, "weights")?.to_vec();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Failure(TrStatus::InvalidArgument, "weights contain non-finite values".into()));
        }
        let w = RedundancyWeights {
            n_views: p.state.n_views(),
            grid: p.state.sino_grid.clone(),
            values,
        };
        p.state.set_mode(RedundancyMode::Uncompressed(w))?;
        Ok(())
    })
}

/// Simulates projections of a volume with the ray-driven projector.
///
/// # Safety
/// `p` must be a live pipeline; the arrays must hold the given counts.
#[no_mangle]
pub unsafe extern "C" fn tr_forward_project(
    p: *const TrPipeline,
    volume: *const f64,
    volume_len: usize,
    projections: *mut f64,
    projection_len: usize,
) -> TrStatus {
    guard(|| {
        let p = pipeline(p)?;
        let d = p.dims();
        let v = p.volume(input(volume, volume_len, d.volume_len, "volume")?)?;
        let out = output(projections, projection_len, d.projection_len, "projections")?;
        out.copy_from_slice(&cone_beam_forward(&v, &p.state.scan)?.values);
        Ok(())
    })
}

/// Reconstructs a volume from projections with the current weights.
///
/// # Safety
/// `p` must be a live pipeline; the arrays must hold the given counts.
#[no_mangle]
pub unsafe extern "C" fn tr_reconstruct(
    p: *const TrPipeline,
    projections: *const f64,
    projection_len: usize,
    volume: *mut f64,
    volume_len: usize,
) -> TrStatus {
    guard(|| {
        let p = pipeline(p)?;
        let d = p.dims();
        let stack = p.projections(input(projections, projection_len, d.projection_len, "projections")?);
        let out = output(volume, volume_len, d.volume_len, "volume")?;
        out.copy_from_slice(&reconstruct_volume(&stack, &p.state)?.0.values);
        Ok(())
    })
}

/// Applies the transpose of [`tr_reconstruct`] (as a linear map of the
/// projections) to a volume.
///
/// # Safety
/// `p` must be a live pipeline; the arrays must hold the given counts.
#[no_mangle]
pub unsafe extern "C" fn tr_reconstruct_adjoint(
    p: *const TrPipeline,
    volume: *const f64,
    volume_len: usize,
    projections: *mut f64,
    projection_len: usize,
) -> TrStatus {
    guard(|| {
        let p = pipeline(p)?;
        let d = p.dims();
        let g = p.volume(input(volume, volume_len, d.volume_len, "volume")?)?;
        let out = output(projections, projection_len, d.projection_len, "projections")?;
        let w = p.state.effective_weights()?;
        out.copy_from_slice(&reconstruct_adjoint(&g, &w, &p.state)?.values);
        Ok(())
    })
}

/// Gradient of a loss with respect to the redundancy weights, given the
/// projections and the loss gradient with respect to the reconstruction.
///
/// # Safety
/// `p` must be a live pipeline; the arrays must hold the given counts.
#[no_mangle]
pub unsafe extern "C" fn tr_grad_weights(
    p: *const TrPipeline,
    projections: *const f64,
    projection_len: usize,
    volume_grad: *const f64,
    volume_len: usize,
    weights_grad: *mut f64,
    weights_len: usize,
) -> TrStatus {
    guard(|| {
        let p = pipeline(p)?;
        let d = p.dims();
        let stack = p.projections(input(projections, projection_len, d.projection_len, "projections")?);
        let g = p.volume(input(volume_grad, volume_len, d.volume_len, "volume gradient")?)?;
        let out = output(weights_grad, weights_len, d.weights_len, "weight gradient")?;
        let cache = filter_activations(&stack, &p.state)?;
        out.copy_from_slice(&grad_wred(&g, &cache, &p.state)?.values);
        Ok(())
    })
}

/// Trainable parameters of the redundancy layer; `k = 0` means uncompressed.
#[no_mangle]
pub extern "C" fn tr_parameter_count(n_views: u64, bins_per_view: u64, k: u64) -> u64 {
    count_parameters(n_views, bins_per_view, (k > 0).then_some(k))
}

/// Parameter reduction of rank-`k` compression in percent.
#[no_mangle]
pub extern "C" fn tr_parameter_reduction_percent(n_views: u64, bins_per_view: u64, k: u64) -> f64 {
    parameter_reduction_percent(n_views, bins_per_view, k)
}
