//! Linear operators of the filter chain, each with an exact discrete adjoint,
//! plus the ray-driven cone-beam projector used to simulate data.
//!
//! Every adjoint is the transpose of the discretized forward operator built
//! from the same interpolation taps, so dot-product tests hold to rounding.

pub(crate) mod backproject;
mod cone;
mod derivative;
mod radon;
mod weights;

pub use backproject::{backproject_3d, backproject_view_into, project_view, voxel_driven_forward};
pub use cone::cone_beam_forward;
pub use derivative::{derivative_radial, derivative_radial_adjoint, derivative_radial_into, derivative_radial_adjoint_into};
pub use radon::{radon_2d, radon_2d_adjoint, radon_2d_adjoint_into, radon_2d_into, RadonMatrix, SinogramGrid};
pub use weights::{
    cosine_weight_field, distance_weight, distance_weight_field, plane_normal, sinogram_weight_field, WeightDomain,
    WeightField,
};

use crate::error::{invalid, Result};
use crate::geometry::{DetectorGeometry, VolumeGrid};

/// One detector image, `n_v` rows of `n_u` pixels (row-major, u fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub n_u: usize,
    pub n_v: usize,
    pub values: Vec<f64>,
    pub view: usize,
}

impl Projection {
    pub fn zeros(det: &DetectorGeometry, view: usize) -> Self {
        Self {
            n_u: det.n_u,
            n_v: det.n_v,
            values: vec![0.0; det.n_pixels()],
            view,
        }
    }
}

/// All views of a scan stored contiguously as `[view][v][u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    pub n_views: usize,
    pub n_u: usize,
    pub n_v: usize,
    pub values: Vec<f64>,
}

impl ProjectionStack {
    pub fn zeros(n_views: usize, det: &DetectorGeometry) -> Self {
        Self {
            n_views,
            n_u: det.n_u,
            n_v: det.n_v,
            values: vec![0.0; n_views * det.n_pixels()],
        }
    }

    pub fn view_len(&self) -> usize {
        self.n_u * self.n_v
    }

    pub fn view(&self, i: usize) -> &[f64] {
        let n = self.view_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn view_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.view_len();
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn check_matches(&self, n_views: usize, det: &DetectorGeometry) -> Result<()> {
        if self.n_views != n_views || self.n_u != det.n_u || self.n_v != det.n_v {
            return invalid(format!(
                "projection stack {}×{}×{} does not match geometry {}×{}×{}",
                self.n_views, self.n_v, self.n_u, n_views, det.n_v, det.n_u
            ));
        }
        if self.values.len() != n_views * det.n_pixels() {
            return invalid("projection stack storage has the wrong length");
        }
        Ok(())
    }
}

/// Per-view 2D Radon transform of a detector image, `[mu][s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSinogram {
    pub grid: SinogramGrid,
    pub values: Vec<f64>,
}

impl DetectorSinogram {
    pub fn zeros(grid: &SinogramGrid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }
}

/// Scalar field on a [`VolumeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: VolumeGrid,
    pub values: Vec<f64>,
}

impl Volume {
    pub fn zeros(grid: &VolumeGrid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: &VolumeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!(
                "volume has {} values, grid expects {}",
                values.len(),
                grid.len()
            ));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn same_shape(&self, other: &Volume) -> bool {
        self.grid.nx == other.grid.nx
            && self.grid.ny == other.grid.ny
            && self.grid.nz == other.grid.nz
    }
}

/// Bilinear interpolation taps on an `n_u × n_v` pixel grid (zero outside).
/// Calls `f(index, weight)` for each in-range neighbour.
#[inline]
pub(crate) fn bilinear_taps(col: f64, row: f64, n_u: usize, n_v: usize, mut f: impl FnMut(usize, f64)) {
    if !(col > -1.0 && row > -1.0 && col < n_u as f64 && row < n_v as f64) {
        return;
    }
    let c0 = col.floor();
    let r0 = row.floor();
    let fc = col - c0;
    let fr = row - r0;
    let c0 = c0 as isize;
    let r0 = r0 as isize;
    let taps = [
        (c0, r0, (1.0 - fc) * (1.0 - fr)),
        (c0 + 1, r0, fc * (1.0 - fr)),
        (c0, r0 + 1, (1.0 - fc) * fr),
        (c0 + 1, r0 + 1, fc * fr),
    ];
    for (c, r, w) in taps {
        if c >= 0 && r >= 0 && (c as usize) < n_u && (r as usize) < n_v {
            f(r as usize * n_u + c as usize, w);
        }
    }
}

#[cfg(test)]
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
