//! Fixed analytic weight fields of the filter chain.
//!
//! The chain reconstructs
//!
//! ```text
//! f(x) = Σ_λ Δλ · w_d(x) · BP_λ[ A2dᵀ D ( w_red ⊙ w_sino ⊙ D A2d (w_cos ⊙ p_λ) ) ](x)
//! ```
//!
//! `D A2d (w_cos ⊙ p)` is the radial derivative of the detector Radon
//! transform, which equals the derivative of the 3D Radon transform of the
//! object up to the factor `(sdd² + s²)/sdd²`. The remaining Jacobians of the
//! change of variables from plane normals to detector lines, together with the
//! `−1/(4π²)` inversion constant, are split between `w_sino` and `w_d`.

use std::f64::consts::PI;

use super::SinogramGrid;
use crate::geometry::{dot, DetectorFrame, DetectorGeometry, ScanGeometry, Vec3, VolumeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightDomain {
    Detector,
    Sinogram,
    Volume,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub domain: WeightDomain,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// `w_cos(u, v) = sdd / √(sdd² + u² + v²)`.
pub fn cosine_weight_field(det: &DetectorGeometry) -> WeightField {
    let d2 = det.sdd * det.sdd;
    let mut values = Vec::with_capacity(det.n_pixels());
    for j in 0..det.n_v {
        let v = det.v_of(j);
        for i in 0..det.n_u {
            let u = det.u_of(i);
            values.push(det.sdd / (d2 + u * u + v * v).sqrt());
        }
    }
    WeightField {
        domain: WeightDomain::Detector,
        shape: vec![det.n_v, det.n_u],
        values,
    }
}

/// Unit normal of the plane through the source that contains the detector
/// line `u cos mu + v sin mu = s`.
#[inline]
pub fn plane_normal(frame: &DetectorFrame, sdd: f64, mu: f64, s: f64) -> Vec3 {
    let (sin_mu, cos_mu) = mu.sin_cos();
    let inv = 1.0 / (sdd * sdd + s * s).sqrt();
    let mut n = [0.0; 3];
    for c in 0..3 {
        n[c] = (sdd * (cos_mu * frame.u[c] + sin_mu * frame.v[c]) - s * frame.w[c]) * inv;
    }
    n
}

/// `w_sino(mu, s) = −(1/4π²) · |a'(λ)·θ(mu, s)| · √(sdd² + s²)/sdd`.
///
/// Non-positive: the leading minus of the inversion formula lives here. The
/// `√(sdd² + s²)/sdd` factor is what remains of the Grangeat factor after the
/// plane-normal Jacobian; it has to sit between the two radial derivatives.
pub fn sinogram_weight_field(scan: &ScanGeometry, view: usize, grid: &SinogramGrid) -> WeightField {
    let frame = &scan.frames[view];
    let vel = scan.trajectory.velocities[view];
    let sdd = scan.detector.sdd;
    let c = -1.0 / (4.0 * PI * PI);
    let mut values = Vec::with_capacity(grid.len());
    for j in 0..grid.n_mu {
        let mu = grid.mu(j);
        for k in 0..grid.n_s {
            let s = grid.s(k);
            let theta = plane_normal(frame, sdd, mu, s);
            let grangeat = (sdd * sdd + s * s).sqrt() / sdd;
            values.push(c * dot(vel, theta).abs() * grangeat);
        }
    }
    WeightField {
        domain: WeightDomain::Sinogram,
        shape: vec![grid.n_mu, grid.n_s],
        values,
    }
}

/// Scale converting the discrete transpose of the detector Radon transform
/// into the continuous backprojection over `mu`.
#[inline]
pub(crate) fn backprojection_scale(det: &DetectorGeometry, grid: &SinogramGrid) -> f64 {
    grid.d_mu() * grid.ds / (det.du * det.dv)
}

/// `w_d` for a voxel at distance `depth` from the source along the principal
/// ray: `c · sdd / depth²`, with `c` the backprojection normalization.
#[inline]
pub fn distance_weight(det: &DetectorGeometry, grid: &SinogramGrid, depth: f64) -> f64 {
    backprojection_scale(det, grid) * det.sdd / (depth * depth)
}

/// `w_d` evaluated at every voxel center of `volume` for one view. Voxels
/// behind the source get weight 0.
pub fn distance_weight_field(
    scan: &ScanGeometry,
    view: usize,
    volume: &VolumeGrid,
    grid: &SinogramGrid,
) -> WeightField {
    let mut values = Vec::with_capacity(volume.len());
    for iz in 0..volume.nz {
        for iy in 0..volume.ny {
            for ix in 0..volume.nx {
                let x = volume.center(ix, iy, iz);
                let w = scan
                    .project_point(view, x)
                    .map_or(0.0, |(_, _, depth)| distance_weight(&scan.detector, grid, depth));
                values.push(w);
            }
        }
    }
    WeightField {
        domain: WeightDomain::Volume,
        shape: vec![volume.nz, volume.ny, volume.nx],
        values,
    }
}
