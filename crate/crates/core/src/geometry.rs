//! Scan trajectories, flat-panel detector geometry and the regular volume grid.
//!
//! Trajectories are stored fully sampled: one source position and one
//! velocity per view. Nothing downstream needs the analytic parameterization,
//! which keeps the whole geometry serializable.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Sampled source trajectory `a(λ)` with its derivative `a'(λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n_views: usize,
    pub lambdas: Vec<f64>,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub delta_lambda: f64,
    /// The sampled curve wraps around (last sample is followed by the first).
    pub closed: bool,
}

impl Trajectory {
    /// Builds a trajectory from explicit samples, checking the structural
    /// invariants (matching lengths, strictly increasing parameter).
    pub fn from_samples(
        lambdas: Vec<f64>,
        positions: Vec<Vec3>,
        velocities: Vec<Vec3>,
        delta_lambda: f64,
        closed: bool,
    ) -> Result<Self> {
        let n = lambdas.len();
        if n < 2 {
            return invalid("a trajectory needs at least two views");
        }
        if positions.len() != n || velocities.len() != n {
            return invalid("positions, velocities and lambdas must have equal length");
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("lambdas must be strictly increasing");
        }
        if !(delta_lambda > 0.0) {
            return invalid("delta_lambda must be positive");
        }
        let all_finite = positions
            .iter()
            .chain(velocities.iter())
            .all(|p| p.iter().all(|c| c.is_finite()));
        if !all_finite {
            return invalid("trajectory samples must be finite");
        }
        Ok(Self {
            n_views: n,
            lambdas,
            positions,
            velocities,
            delta_lambda,
            closed,
        })
    }

    /// Largest source distance from the isocenter.
    pub fn radius(&self) -> f64 {
        self.positions.iter().map(|p| norm(*p)).fold(0.0, f64::max)
    }

    /// Cubic Hermite interpolation between samples `i` and `i+1` (wrapping
    /// for closed curves) at fraction `t ∈ [0, 1)`.
    pub fn hermite(&self, i: usize, t: f64) -> Vec3 {
        let j = if i + 1 < self.n_views {
            i + 1
        } else {
            debug_assert!(self.closed);
            0
        };
        let h = self.delta_lambda;
        let (p0, p1) = (self.positions[i], self.positions[j]);
        let (m0, m1) = (self.velocities[i], self.velocities[j]);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = h00 * p0[c] + h10 * h * m0[c] + h01 * p1[c] + h11 * h * m1[c];
        }
        out
    }
}

fn uniform_lambdas(n_views: usize, arc: f64) -> (Vec<f64>, f64) {
    let dl = arc / n_views as f64;
    ((0..n_views).map(|i| i as f64 * dl).collect(), dl)
}

fn is_full_turn(arc: f64) -> bool {
    (arc - 2.0 * PI).abs() < 1e-12
}

/// Circle of radius `radius` in the z = 0 plane, sampled uniformly over
/// `[0, arc)` with spacing `arc / n_views`.
pub fn make_circular_trajectory(radius: f64, n_views: usize, arc: f64) -> Result<Trajectory> {
    if !(radius > 0.0) {
        return invalid(format!("radius must be positive, got {radius}"));
    }
    if n_views < 2 {
        return invalid(format!("need at least 2 views, got {n_views}"));
    }
    if !(arc > 0.0 && arc <= 2.0 * PI + 1e-12) {
        return invalid(format!("arc must lie in (0, 2π], got {arc}"));
    }
    let (lambdas, dl) = uniform_lambdas(n_views, arc);
    let positions = lambdas
        .iter()
        .map(|&l| [radius * l.cos(), radius * l.sin(), 0.0])
        .collect();
    let velocities = lambdas
        .iter()
        .map(|&l| [-radius * l.sin(), radius * l.cos(), 0.0])
        .collect();
    Trajectory::from_samples(lambdas, positions, velocities, dl, is_full_turn(arc))
}

/// Circle with a sinusoidal axial excursion:
/// `a(λ) = (R cos λ, R sin λ, A sin(periods·λ))`, `λ ∈ [0, 2π)`.
pub fn make_sinusoidal_trajectory(
    radius: f64,
    amplitude: f64,
    periods: u32,
    n_views: usize,
) -> Result<Trajectory> {
    if !(radius > 0.0) {
        return invalid(format!("radius must be positive, got {radius}"));
    }
    if !(amplitude >= 0.0) {
        return invalid(format!("amplitude must be non-negative, got {amplitude}"));
    }
    if periods < 1 {
        return invalid("periods must be at least 1");
    }
    if n_views < 2 {
        return invalid(format!("need at least 2 views, got {n_views}"));
    }
    let k = periods as f64;
    let (lambdas, dl) = uniform_lambdas(n_views, 2.0 * PI);
    let positions = lambdas
        .iter()
        .map(|&l| [radius * l.cos(), radius * l.sin(), amplitude * (k * l).sin()])
        .collect();
    let velocities = lambdas
        .iter()
        .map(|&l| {
            [
                -radius * l.sin(),
                radius * l.cos(),
                amplitude * k * (k * l).cos(),
            ]
        })
        .collect();
    Trajectory::from_samples(lambdas, positions, velocities, dl, true)
}

/// Flat-panel detector, centered on the principal ray.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorGeometry {
    pub n_u: usize,
    pub n_v: usize,
    pub du: f64,
    pub dv: f64,
    /// Source to detector distance (mm).
    pub sdd: f64,
}

impl DetectorGeometry {
    pub fn new(n_u: usize, n_v: usize, du: f64, dv: f64, sdd: f64) -> Result<Self> {
        if n_u < 2 || n_v < 2 {
            return invalid("detector needs at least 2×2 pixels");
        }
        if !(du > 0.0 && dv > 0.0) {
            return invalid("pixel pitch must be positive");
        }
        if !(sdd > 0.0) {
            return invalid("source-detector distance must be positive");
        }
        Ok(Self { n_u, n_v, du, dv, sdd })
    }

    pub fn n_pixels(&self) -> usize {
        self.n_u * self.n_v
    }

    /// Physical u offset of pixel column `i` from the detector center.
    #[inline]
    pub fn u_of(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * (self.n_u as f64 - 1.0)) * self.du
    }

    #[inline]
    pub fn v_of(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * (self.n_v as f64 - 1.0)) * self.dv
    }

    /// Fractional column index for a physical u offset.
    #[inline]
    pub fn col_of(&self, u: f64) -> f64 {
        u / self.du + 0.5 * (self.n_u as f64 - 1.0)
    }

    #[inline]
    pub fn row_of(&self, v: f64) -> f64 {
        v / self.dv + 0.5 * (self.n_v as f64 - 1.0)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.n_u as f64 * self.du
    }

    pub fn half_height(&self) -> f64 {
        0.5 * self.n_v as f64 * self.dv
    }

    pub fn half_diagonal(&self) -> f64 {
        self.half_width().hypot(self.half_height())
    }
}

/// Orthonormal detector frame for one view. `w` is the principal ray
/// (source toward isocenter); `u × v = w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorFrame {
    pub u: Vec3,
    pub v: Vec3,
    pub w: Vec3,
}

impl DetectorFrame {
    pub fn determinant(&self) -> f64 {
        dot(cross(self.u, self.v), self.w)
    }
}

pub fn detector_frame(trajectory: &Trajectory, view: usize, _det: &DetectorGeometry) -> DetectorFrame {
    let a = trajectory.positions[view];
    let w = normalize(scale(a, -1.0));
    // Seed with the global z-axis unless the principal ray is (nearly) parallel to it.
    let seed = if cross([0.0, 0.0, 1.0], w).iter().all(|c| c.abs() < 1e-12) {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let u = normalize(cross(seed, w));
    let v = cross(w, u);
    DetectorFrame { u, v, w }
}

/// Regular voxel grid. `origin` is the center of voxel `(0, 0, 0)`; the
/// storage order is x fastest, then y, then z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub voxel: f64,
    pub origin: Vec3,
}

impl VolumeGrid {
    /// Cubic grid of `n³` voxels centered on the isocenter.
    pub fn centered(n: usize, voxel: f64) -> Result<Self> {
        Self::centered_dims(n, n, n, voxel)
    }

    pub fn centered_dims(nx: usize, ny: usize, nz: usize, voxel: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return invalid("volume dimensions must be positive");
        }
        if !(voxel > 0.0) {
            return invalid("voxel size must be positive");
        }
        let half = |n: usize| -0.5 * (n as f64 - 1.0) * voxel;
        Ok(Self {
            nx,
            ny,
            nz,
            voxel,
            origin: [half(nx), half(ny), half(nz)],
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.ny + iy) * self.nx + ix
    }

    #[inline]
    pub fn center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        [
            self.origin[0] + ix as f64 * self.voxel,
            self.origin[1] + iy as f64 * self.voxel,
            self.origin[2] + iz as f64 * self.voxel,
        ]
    }

    /// Radius of the sphere circumscribing all voxel centers.
    pub fn circumradius(&self) -> f64 {
        let c0 = self.center(0, 0, 0);
        let c1 = self.center(self.nx - 1, self.ny - 1, self.nz - 1);
        let mid = scale([c0[0] + c1[0], c0[1] + c1[1], c0[2] + c1[2]], 0.5);
        let corner = sub(c1, mid);
        norm(corner) + 0.5 * self.voxel * 3f64.sqrt()
    }
}

/// Trajectory, detector and the per-view frames derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub trajectory: Trajectory,
    pub detector: DetectorGeometry,
    pub frames: Vec<DetectorFrame>,
}

impl ScanGeometry {
    pub fn new(trajectory: Trajectory, detector: DetectorGeometry) -> Self {
        let frames = (0..trajectory.n_views)
            .map(|i| detector_frame(&trajectory, i, &detector))
            .collect();
        Self {
            trajectory,
            detector,
            frames,
        }
    }

    pub fn n_views(&self) -> usize {
        self.trajectory.n_views
    }

    pub fn source(&self, view: usize) -> Vec3 {
        self.trajectory.positions[view]
    }

    /// Projects a world point onto the detector of `view`.
    /// Returns `(u, v, depth)` where `depth` is the distance from the source
    /// to the point measured along the principal ray, or `None` when the point
    /// is behind the source.
    #[inline]
    pub fn project_point(&self, view: usize, x: Vec3) -> Option<(f64, f64, f64)> {
        let f = &self.frames[view];
        let d = sub(x, self.trajectory.positions[view]);
        let depth = dot(d, f.w);
        if depth <= 1e-9 {
            return None;
        }
        let m = self.detector.sdd / depth;
        Some((dot(d, f.u) * m, dot(d, f.v) * m, depth))
    }

    /// True when every voxel center projects inside the detector in every
    /// view, i.e. the data are free of truncation.
    pub fn detector_covers(&self, grid: &VolumeGrid) -> bool {
        let (hw, hh) = (self.detector.half_width(), self.detector.half_height());
        let (ex, ey, ez) = (grid.nx - 1, grid.ny - 1, grid.nz - 1);
        let corners: Vec<Vec3> = (0..8)
            .map(|c| grid.center(if c & 1 == 0 { 0 } else { ex }, if c & 2 == 0 { 0 } else { ey }, if c & 4 == 0 { 0 } else { ez }))
            .collect();
        // The volume is convex, so it is covered iff its corners are.
        (0..self.n_views()).all(|view| {
            corners.iter().all(|&x| {
                matches!(self.project_point(view, x), Some((u, v, _)) if u.abs() <= hw && v.abs() <= hh)
            })
        })
    }

    /// Checks that the whole volume lies strictly in front of every source.
    pub fn check_field_of_view(&self, grid: &VolumeGrid) -> Result<()> {
        let r = grid.circumradius();
        let corners = [
            grid.center(0, 0, 0),
            grid.center(grid.nx - 1, grid.ny - 1, grid.nz - 1),
        ];
        let mid = scale(
            [
                corners[0][0] + corners[1][0],
                corners[0][1] + corners[1][1],
                corners[0][2] + corners[1][2],
            ],
            0.5,
        );
        for (i, a) in self.trajectory.positions.iter().enumerate() {
            if norm(sub(*a, mid)) <= r {
                return invalid(format!("source {i} lies inside the volume"));
            }
        }
        Ok(())
    }
}
