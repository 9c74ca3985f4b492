use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{bilinear_taps, DetectorSinogram, Projection};
use crate::error::{invalid, Result};
use crate::geometry::DetectorGeometry;

/// Sampling of the detector-plane Radon space: `mu_j = j·π/n_mu` and
/// `s_k = (k − (n_s−1)/2)·ds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinogramGrid {
    pub n_mu: usize,
    pub n_s: usize,
    pub ds: f64,
}

impl SinogramGrid {
    pub fn new(n_mu: usize, n_s: usize, ds: f64) -> Result<Self> {
        if n_mu < 2 || n_s < 2 {
            return invalid(format!("sinogram grid needs n_mu, n_s ≥ 2, got {n_mu}×{n_s}"));
        }
        if !(ds > 0.0) {
            return invalid("radial spacing must be positive");
        }
        Ok(Self { n_mu, n_s, ds })
    }

    /// Grid whose radial range spans the detector half-diagonal.
    pub fn covering(det: &DetectorGeometry, n_mu: usize, n_s: usize) -> Result<Self> {
        if n_s < 2 {
            return invalid("n_s must be at least 2");
        }
        Self::new(n_mu, n_s, 2.0 * det.half_diagonal() / (n_s as f64 - 1.0))
    }

    pub fn len(&self) -> usize {
        self.n_mu * self.n_s
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_mu(&self) -> f64 {
        PI / self.n_mu as f64
    }

    #[inline]
    pub fn mu(&self, j: usize) -> f64 {
        j as f64 * self.d_mu()
    }

    #[inline]
    pub fn s(&self, k: usize) -> f64 {
        (k as f64 - 0.5 * (self.n_s as f64 - 1.0)) * self.ds
    }
}

/// Sample positions along every detector line: `t_m = −t_half + m·dt`.
struct LineSampling {
    t_half: f64,
    dt: f64,
    n_t: usize,
}

impl LineSampling {
    fn for_detector(det: &DetectorGeometry) -> Self {
        // Half-diagonal of the region where bilinear taps can be non-zero.
        let t_half = (0.5 * (det.n_u as f64 + 1.0) * det.du).hypot(0.5 * (det.n_v as f64 + 1.0) * det.dv);
        let max_step = 0.5 * det.du.min(det.dv);
        let n_t = (2.0 * t_half / max_step).ceil() as usize + 1;
        Self {
            t_half,
            dt: 2.0 * t_half / (n_t as f64 - 1.0),
            n_t,
        }
    }
}

/// Visits every bilinear tap of the discretized line `(mu, s)`, with weights
/// already multiplied by the line step.
#[inline]
fn for_each_line_tap(
    det: &DetectorGeometry,
    sampling: &LineSampling,
    cos_mu: f64,
    sin_mu: f64,
    s: f64,
    mut f: impl FnMut(usize, f64),
) {
    let cu = 0.5 * (det.n_u as f64 - 1.0);
    let cv = 0.5 * (det.n_v as f64 - 1.0);
    // Point at t: u = s cos − t sin, v = s sin + t cos.
    let u0 = s * cos_mu;
    let v0 = s * sin_mu;
    let (du_dt, dv_dt) = (-sin_mu, cos_mu);
    // Clip t to the open box where taps exist: col ∈ (−1, n_u), row ∈ (−1, n_v).
    let mut lo = -sampling.t_half;
    let mut hi = sampling.t_half;
    for (p0, dp, a, b) in [
        (u0, du_dt, (-1.0 - cu) * det.du, (det.n_u as f64 - cu) * det.du),
        (v0, dv_dt, (-1.0 - cv) * det.dv, (det.n_v as f64 - cv) * det.dv),
    ] {
        if dp.abs() < 1e-15 {
            if p0 <= a || p0 >= b {
                return;
            }
        } else {
            let t1 = (a - p0) / dp;
            let t2 = (b - p0) / dp;
            lo = lo.max(t1.min(t2));
            hi = hi.min(t1.max(t2));
        }
    }
    if hi <= lo {
        return;
    }
    let m_lo = (((lo + sampling.t_half) / sampling.dt).floor().max(0.0)) as usize;
    let m_hi = ((((hi + sampling.t_half) / sampling.dt).ceil()) as usize).min(sampling.n_t - 1);
    for m in m_lo..=m_hi {
        let t = -sampling.t_half + m as f64 * sampling.dt;
        let col = (u0 + t * du_dt) / det.du + cu;
        let row = (v0 + t * dv_dt) / det.dv + cv;
        bilinear_taps(col, row, det.n_u, det.n_v, |idx, w| f(idx, w * sampling.dt));
    }
}

/// `out[mu][s]` = line integral of `image` along `u cos mu + v sin mu = s`.
pub fn radon_2d_into(image: &[f64], det: &DetectorGeometry, grid: &SinogramGrid, out: &mut [f64]) {
    debug_assert_eq!(image.len(), det.n_pixels());
    debug_assert_eq!(out.len(), grid.len());
    let sampling = LineSampling::for_detector(det);
    for j in 0..grid.n_mu {
        let (sin_mu, cos_mu) = grid.mu(j).sin_cos();
        for k in 0..grid.n_s {
            let mut acc = 0.0;
            for_each_line_tap(det, &sampling, cos_mu, sin_mu, grid.s(k), |idx, w| {
                acc += w * image[idx];
            });
            out[j * grid.n_s + k] = acc;
        }
    }
}

/// Exact transpose of [`radon_2d_into`]; overwrites `out`.
pub fn radon_2d_adjoint_into(sino: &[f64], det: &DetectorGeometry, grid: &SinogramGrid, out: &mut [f64]) {
    debug_assert_eq!(sino.len(), grid.len());
    debug_assert_eq!(out.len(), det.n_pixels());
    out.iter_mut().for_each(|x| *x = 0.0);
    let sampling = LineSampling::for_detector(det);
    for j in 0..grid.n_mu {
        let (sin_mu, cos_mu) = grid.mu(j).sin_cos();
        for k in 0..grid.n_s {
            let y = sino[j * grid.n_s + k];
            if y == 0.0 {
                continue;
            }
            for_each_line_tap(det, &sampling, cos_mu, sin_mu, grid.s(k), |idx, w| {
                out[idx] += w * y;
            });
        }
    }
}

/// [`radon_2d_into`] assembled once as a sparse matrix (rows = sinogram bins,
/// duplicate pixel taps merged). The detector-plane Radon transform is the
/// same for every view, so one matrix serves the whole scan.
#[derive(Debug, Clone, PartialEq)]
pub struct RadonMatrix {
    n_pixels: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl RadonMatrix {
    pub fn new(det: &DetectorGeometry, grid: &SinogramGrid) -> Self {
        let sampling = LineSampling::for_detector(det);
        let mut row_ptr = Vec::with_capacity(grid.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut taps: Vec<(usize, f64)> = Vec::new();
        row_ptr.push(0);
        for j in 0..grid.n_mu {
            let (sin_mu, cos_mu) = grid.mu(j).sin_cos();
            for k in 0..grid.n_s {
                taps.clear();
                for_each_line_tap(det, &sampling, cos_mu, sin_mu, grid.s(k), |idx, w| taps.push((idx, w)));
                taps.sort_by_key(|t| t.0);
                for &(idx, w) in &taps {
                    if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() as usize == idx {
                        *vals.last_mut().unwrap() += w;
                    } else {
                        cols.push(idx as u32);
                        vals.push(w);
                    }
                }
                row_ptr.push(cols.len());
            }
        }
        Self {
            n_pixels: det.n_pixels(),
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `out = A2d · image`.
    pub fn apply(&self, image: &[f64], out: &mut [f64]) {
        self.apply_multi(image, 1, out);
    }

    /// `out = A2dᵀ · sino`.
    pub fn apply_transpose(&self, sino: &[f64], out: &mut [f64]) {
        self.apply_transpose_multi(sino, 1, out);
    }

    /// [`Self::apply`] on `width` interleaved channels (`[pixel][channel]` in,
    /// `[bin][channel]` out).
    pub fn apply_multi(&self, image: &[f64], width: usize, out: &mut [f64]) {
        debug_assert_eq!(image.len(), self.n_pixels * width);
        debug_assert_eq!(out.len(), self.n_bins() * width);
        if width == 1 {
            for (r, o) in out.iter_mut().enumerate() {
                let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
                let mut acc = 0.0;
                for (&c, &w) in self.cols[a..b].iter().zip(&self.vals[a..b]) {
                    acc += w * image[c as usize];
                }
                *o = acc;
            }
            return;
        }
        for (r, o) in out.chunks_exact_mut(width).enumerate() {
            o.iter_mut().for_each(|x| *x = 0.0);
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            for (&c, &w) in self.cols[a..b].iter().zip(&self.vals[a..b]) {
                let px = &image[c as usize * width..][..width];
                for (x, &p) in o.iter_mut().zip(px) {
                    *x += w * p;
                }
            }
        }
    }

    /// [`Self::apply_transpose`] on `width` interleaved channels.
    pub fn apply_transpose_multi(&self, sino: &[f64], width: usize, out: &mut [f64]) {
        debug_assert_eq!(sino.len(), self.n_bins() * width);
        debug_assert_eq!(out.len(), self.n_pixels * width);
        out.iter_mut().for_each(|x| *x = 0.0);
        if width == 1 {
            for (r, &y) in sino.iter().enumerate() {
                if y == 0.0 {
                    continue;
                }
                let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
                for (&c, &w) in self.cols[a..b].iter().zip(&self.vals[a..b]) {
                    out[c as usize] += w * y;
                }
            }
            return;
        }
        for (r, y) in sino.chunks_exact(width).enumerate() {
            if y.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            for (&c, &w) in self.cols[a..b].iter().zip(&self.vals[a..b]) {
                let px = &mut out[c as usize * width..][..width];
                for (x, &v) in px.iter_mut().zip(y) {
                    *x += w * v;
                }
            }
        }
    }
}

pub fn radon_2d(projection: &Projection, det: &DetectorGeometry, grid: &SinogramGrid) -> Result<DetectorSinogram> {
    if projection.n_u != det.n_u || projection.n_v != det.n_v {
        return invalid("projection shape does not match detector");
    }
    let mut sino = DetectorSinogram::zeros(grid);
    radon_2d_into(&projection.values, det, grid, &mut sino.values);
    Ok(sino)
}

pub fn radon_2d_adjoint(sinogram: &DetectorSinogram, det: &DetectorGeometry, view: usize) -> Projection {
    let mut p = Projection::zeros(det, view);
    radon_2d_adjoint_into(&sinogram.values, det, &sinogram.grid, &mut p.values);
    p
}
