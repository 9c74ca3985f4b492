//! Voxel-driven cone-beam backprojection and its exact transpose.

use rayon::prelude::*;

use super::{bilinear_taps, ProjectionStack, Volume};
use crate::geometry::{ScanGeometry, VolumeGrid};

/// Adds `factor(depth) · image(P_view(x))` to every voxel `x` of one z-slice,
/// where `P_view` is the cone-beam projection onto the detector and the image
/// is sampled bilinearly (zero outside).
///
/// Images and slices hold `width` interleaved channels (`[pixel][channel]`,
/// `[voxel][channel]`) that share the projection geometry.
#[inline]
#[allow(clippy::too_many_arguments)]
fn backproject_slice(
    scan: &ScanGeometry,
    view: usize,
    image: &[f64],
    width: usize,
    grid: &VolumeGrid,
    iz: usize,
    factor: &impl Fn(f64) -> f64,
    slice: &mut [f64],
) {
    let det = &scan.detector;
    let mut taps = [(0usize, 0.0f64); 4];
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let Some((u, v, depth)) = scan.project_point(view, grid.center(ix, iy, iz)) else {
                continue;
            };
            let mut n = 0;
            bilinear_taps(det.col_of(u), det.row_of(v), det.n_u, det.n_v, |idx, w| {
                taps[n] = (idx, w);
                n += 1;
            });
            if n == 0 {
                continue;
            }
            let f = factor(depth);
            let base = (iy * grid.nx + ix) * width;
            for c in 0..width {
                let mut acc = 0.0;
                for &(idx, w) in &taps[..n] {
                    acc += w * image[idx * width + c];
                }
                if acc != 0.0 {
                    slice[base + c] += f * acc;
                }
            }
        }
    }
}

/// Accumulates the backprojection of one view into `out`.
pub fn backproject_view_into(
    scan: &ScanGeometry,
    view: usize,
    image: &[f64],
    grid: &VolumeGrid,
    factor: impl Fn(f64) -> f64,
    out: &mut [f64],
) {
    let plane = grid.nx * grid.ny;
    for (iz, slice) in out.chunks_mut(plane).enumerate() {
        backproject_slice(scan, view, image, 1, grid, iz, &factor, slice);
    }
}

/// Accumulates the backprojection of all views into `out`, for `width`
/// interleaved channels. Slices are processed in parallel; within a voxel,
/// views are summed in ascending order, so the result does not depend on the
/// thread count.
pub(crate) fn backproject_views_into(
    scan: &ScanGeometry,
    images: &[Vec<f64>],
    width: usize,
    grid: &VolumeGrid,
    factor: impl Fn(f64) -> f64 + Sync,
    out: &mut [f64],
) {
    let plane = grid.nx * grid.ny * width;
    out.par_chunks_mut(plane).enumerate().for_each(|(iz, slice)| {
        for (view, image) in images.iter().enumerate() {
            backproject_slice(scan, view, image, width, grid, iz, &factor, slice);
        }
    });
}

/// Transpose of [`backproject_views_into`] for one view and `width`
/// interleaved channels.
pub(crate) fn project_view_multi(
    scan: &ScanGeometry,
    view: usize,
    volume: &[f64],
    width: usize,
    grid: &VolumeGrid,
    factor: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let det = &scan.detector;
    let mut image = vec![0.0; det.n_pixels() * width];
    for iz in 0..grid.nz {
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let g = &volume[grid.index(ix, iy, iz) * width..][..width];
                if g.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let Some((u, v, depth)) = scan.project_point(view, grid.center(ix, iy, iz)) else {
                    continue;
                };
                let f = factor(depth);
                bilinear_taps(det.col_of(u), det.row_of(v), det.n_u, det.n_v, |idx, w| {
                    for (c, &gc) in g.iter().enumerate() {
                        image[idx * width + c] += w * (f * gc);
                    }
                });
            }
        }
    }
    image
}

/// Transpose of [`backproject_view_into`] for one view: scatters
/// `factor(depth) · volume(x)` onto the detector with the same bilinear taps.
pub fn project_view(
    scan: &ScanGeometry,
    view: usize,
    volume: &[f64],
    grid: &VolumeGrid,
    factor: impl Fn(f64) -> f64,
) -> Vec<f64> {
    project_view_multi(scan, view, volume, 1, grid, factor)
}

/// `A3dᵀ`: unweighted voxel-driven backprojection of every view, scaled by Δλ.
pub fn backproject_3d(stack: &ProjectionStack, scan: &ScanGeometry, grid: &VolumeGrid) -> Volume {
    let dl = scan.trajectory.delta_lambda;
    let images: Vec<Vec<f64>> = (0..stack.n_views).map(|i| stack.view(i).to_vec()).collect();
    let mut vol = Volume::zeros(grid);
    backproject_views_into(scan, &images, 1, grid, |_| dl, &mut vol.values);
    vol
}

/// `A3d`: the voxel-driven forward projector whose transpose is [`backproject_3d`].
pub fn voxel_driven_forward(volume: &Volume, scan: &ScanGeometry) -> ProjectionStack {
    let dl = scan.trajectory.delta_lambda;
    let mut stack = ProjectionStack::zeros(scan.n_views(), &scan.detector);
    let views: Vec<Vec<f64>> = (0..scan.n_views())
        .into_par_iter()
        .map(|i| project_view(scan, i, &volume.values, &volume.grid, |_| dl))
        .collect();
    for (i, v) in views.into_iter().enumerate() {
        stack.view_mut(i).copy_from_slice(&v);
    }
    stack
}
