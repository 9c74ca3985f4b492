//! Ray-driven cone-beam forward projector for simulating projection data.

use rayon::prelude::*;

use super::{ProjectionStack, Volume};
use crate::error::Result;
use crate::geometry::{normalize, ScanGeometry, Vec3, VolumeGrid};

/// Trilinear interpolation in index space, zero outside the voxel centers'
/// hull (one voxel of zero padding).
#[inline]
fn trilinear(values: &[f64], grid: &VolumeGrid, p: Vec3) -> f64 {
    let fx = (p[0] - grid.origin[0]) / grid.voxel;
    let fy = (p[1] - grid.origin[1]) / grid.voxel;
    let fz = (p[2] - grid.origin[2]) / grid.voxel;
    if !(fx > -1.0 && fy > -1.0 && fz > -1.0)
        || fx >= grid.nx as f64
        || fy >= grid.ny as f64
        || fz >= grid.nz as f64
    {
        return 0.0;
    }
    let (x0, y0, z0) = (fx.floor(), fy.floor(), fz.floor());
    let (tx, ty, tz) = (fx - x0, fy - y0, fz - z0);
    let (x0, y0, z0) = (x0 as isize, y0 as isize, z0 as isize);
    let mut acc = 0.0;
    for (dz, wz) in [(0, 1.0 - tz), (1, tz)] {
        let z = z0 + dz;
        if z < 0 || z as usize >= grid.nz {
            continue;
        }
        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
            let y = y0 + dy;
            if y < 0 || y as usize >= grid.ny {
                continue;
            }
            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                let x = x0 + dx;
                if x < 0 || x as usize >= grid.nx {
                    continue;
                }
                acc += wx * wy * wz * values[grid.index(x as usize, y as usize, z as usize)];
            }
        }
    }
    acc
}

/// Entry and exit distances of a ray through the padded volume box.
fn clip_ray(origin: Vec3, dir: Vec3, grid: &VolumeGrid) -> Option<(f64, f64)> {
    let dims = [grid.nx, grid.ny, grid.nz];
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for c in 0..3 {
        let a = grid.origin[c] - grid.voxel;
        let b = grid.origin[c] + dims[c] as f64 * grid.voxel;
        if dir[c].abs() < 1e-15 {
            if origin[c] <= a || origin[c] >= b {
                return None;
            }
        } else {
            let t1 = (a - origin[c]) / dir[c];
            let t2 = (b - origin[c]) / dir[c];
            lo = lo.max(t1.min(t2));
            hi = hi.min(t1.max(t2));
        }
    }
    (hi > lo && hi > 0.0).then_some((lo.max(0.0), hi))
}

/// Line integrals of `volume` from each source through every detector pixel
/// center, with trilinear sampling at steps of at most half a voxel.
pub fn cone_beam_forward(volume: &Volume, scan: &ScanGeometry) -> Result<ProjectionStack> {
    scan.check_field_of_view(&volume.grid)?;
    let det = &scan.detector;
    let grid = &volume.grid;
    let max_step = 0.5 * grid.voxel;
    let views: Vec<Vec<f64>> = (0..scan.n_views())
        .into_par_iter()
        .map(|view| {
            let a = scan.source(view);
            let f = &scan.frames[view];
            let mut image = vec![0.0; det.n_pixels()];
            for j in 0..det.n_v {
                let v = det.v_of(j);
                for i in 0..det.n_u {
                    let u = det.u_of(i);
                    let dir = normalize([0, 1, 2].map(|c| det.sdd * f.w[c] + u * f.u[c] + v * f.v[c]));
                    let Some((t0, t1)) = clip_ray(a, dir, grid) else {
                        continue;
                    };
                    let n = ((t1 - t0) / max_step).ceil().max(1.0) as usize;
                    let h = (t1 - t0) / n as f64;
                    let mut acc = 0.0;
                    // Midpoint rule.
                    for m in 0..n {
                        let t = t0 + (m as f64 + 0.5) * h;
                        acc += trilinear(&volume.values, grid, [a[0] + t * dir[0], a[1] + t * dir[1], a[2] + t * dir[2]]);
                    }
                    image[j * det.n_u + i] = acc * h;
                }
            }
            image
        })
        .collect();
    let mut stack = ProjectionStack::zeros(scan.n_views(), det);
    for (i, v) in views.into_iter().enumerate() {
        stack.view_mut(i).copy_from_slice(&v);
    }
    Ok(stack)
}
