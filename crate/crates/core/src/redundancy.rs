//! Analytic redundancy weights `1/n(θ, λ)`, where `n` counts how often the
//! plane through `a(λ)` with normal `θ` meets the trajectory.
//!
//! Counting is brute force: sign changes of `(a(λ') − a(λ))·θ` over the
//! trajectory, supersampled 8× with cubic Hermite interpolation of the stored
//! positions and velocities. Even-order contacts (tangencies) away from the
//! source point are not counted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{dot, norm, sub, ScanGeometry, Trajectory, Vec3};
use crate::operators::{plane_normal, SinogramGrid};

pub const SUPERSAMPLING: usize = 8;
/// `|g| < DEGENERACY_EPS · R` counts as "on the plane".
pub const DEGENERACY_EPS: f64 = 1e-9;
/// Fraction of on-plane samples above which a plane is degenerate.
pub const DEGENERATE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneCount {
    Count(usize),
    /// The plane (nearly) contains the trajectory.
    Degenerate,
}

impl PlaneCount {
    pub fn weight(self) -> f64 {
        match self {
            PlaneCount::Count(n) => 1.0 / n as f64,
            PlaneCount::Degenerate => 0.0,
        }
    }
}

/// Trajectory resampled for counting, with the index of every original view.
#[derive(Debug, Clone)]
pub struct DenseTrajectory {
    points: Vec<Vec3>,
    closed: bool,
    radius: f64,
}

impl DenseTrajectory {
    pub fn new(trajectory: &Trajectory) -> Self {
        let n = trajectory.n_views;
        let segments = if trajectory.closed { n } else { n - 1 };
        let mut points = Vec::with_capacity(segments * SUPERSAMPLING + 1);
        for i in 0..segments {
            for m in 0..SUPERSAMPLING {
                points.push(trajectory.hermite(i, m as f64 / SUPERSAMPLING as f64));
            }
        }
        if !trajectory.closed {
            points.push(trajectory.positions[n - 1]);
        }
        Self {
            points,
            closed: trajectory.closed,
            radius: trajectory.radius(),
        }
    }

    fn self_index(&self, view: usize) -> usize {
        view * SUPERSAMPLING
    }

    /// Counts intersections of the plane through view `view` with unit normal `theta`.
    pub fn count(&self, theta: Vec3, view: usize) -> PlaneCount {
        let me = self.self_index(view);
        let origin = self.points[me];
        let eps = DEGENERACY_EPS * self.radius;
        let len = self.points.len();

        let mut on_plane = 0usize;
        let mut changes = 0usize;
        let mut last_sign = 0i8;
        let mut visit = |idx: usize, last_sign: &mut i8| {
            let g = dot(sub(self.points[idx], origin), theta);
            if g.abs() < eps {
                on_plane += 1;
                return;
            }
            let sign = if g > 0.0 { 1 } else { -1 };
            if *last_sign != 0 && sign != *last_sign {
                changes += 1;
            }
            *last_sign = sign;
        };

        if self.closed {
            // Walk once around the loop starting just after the source point;
            // the crossing at the source itself is added below.
            for step in 1..len {
                visit((me + step) % len, &mut last_sign);
            }
        } else {
            for idx in (me + 1)..len {
                visit(idx, &mut last_sign);
            }
            last_sign = 0;
            for idx in (0..me).rev() {
                visit(idx, &mut last_sign);
            }
        }
        // The source sample itself always lies on the plane.
        on_plane += 1;
        if on_plane as f64 > DEGENERATE_FRACTION * len as f64 {
            return PlaneCount::Degenerate;
        }
        PlaneCount::Count(changes + 1)
    }
}

pub fn count_plane_intersections(trajectory: &Trajectory, normal: Vec3, view: usize) -> Result<PlaneCount> {
    if (norm(normal) - 1.0).abs() > 1e-9 {
        return invalid(format!("plane normal must be unit length, |θ| = {}", norm(normal)));
    }
    if view >= trajectory.n_views {
        return invalid(format!("view {view} out of range"));
    }
    Ok(DenseTrajectory::new(trajectory).count(normal, view))
}

/// Redundancy weights for every view and sinogram bin, `[view][mu][s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyWeights {
    pub n_views: usize,
    pub grid: SinogramGrid,
    pub values: Vec<f64>,
}

impl RedundancyWeights {
    pub fn constant(n_views: usize, grid: &SinogramGrid, value: f64) -> Self {
        Self {
            n_views,
            grid: grid.clone(),
            values: vec![value; n_views * grid.len()],
        }
    }

    pub fn bins_per_view(&self) -> usize {
        self.grid.len()
    }

    pub fn view(&self, i: usize) -> &[f64] {
        let m = self.bins_per_view();
        &self.values[i * m..(i + 1) * m]
    }
}

/// Per-bin intersection counts for every view.
pub fn plane_counts(scan: &ScanGeometry, grid: &SinogramGrid) -> Vec<PlaneCount> {
    let dense = DenseTrajectory::new(&scan.trajectory);
    let sdd = scan.detector.sdd;
    (0..scan.n_views())
        .into_par_iter()
        .flat_map_iter(|view| {
            let frame = scan.frames[view];
            let dense = &dense;
            (0..grid.n_mu).flat_map(move |j| {
                (0..grid.n_s).map(move |k| dense.count(plane_normal(&frame, sdd, grid.mu(j), grid.s(k)), view))
            })
        })
        .collect()
}

pub fn analytic_redundancy_weights(scan: &ScanGeometry, grid: &SinogramGrid) -> RedundancyWeights {
    RedundancyWeights {
        n_views: scan.n_views(),
        grid: grid.clone(),
        values: plane_counts(scan, grid).into_iter().map(PlaneCount::weight).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_circular_trajectory, make_sinusoidal_trajectory, normalize, DetectorGeometry};
    use std::f64::consts::PI;

    /// Oracle: sign changes of the analytic sinusoid on a very dense grid.
    fn dense_oracle(radius: f64, amp: f64, periods: f64, lambda0: f64, theta: Vec3) -> usize {
        let a = |l: f64| [radius * l.cos(), radius * l.sin(), amp * (periods * l).sin()];
        let p0 = a(lambda0);
        let n = 200_000;
        let mut changes = 0;
        let mut last = 0i8;
        for m in 1..n {
            let l = lambda0 + 2.0 * PI * m as f64 / n as f64;
            let g = dot(sub(a(l), p0), theta);
            if g.abs() < 1e-9 * radius {
                continue;
            }
            let s = if g > 0.0 { 1 } else { -1 };
            if last != 0 && s != last {
                changes += 1;
            }
            last = s;
        }
        changes + 1
    }

    #[test]
    fn circle_in_its_own_plane_is_degenerate() {
        let t = make_circular_trajectory(1.0, 90, 2.0 * PI).unwrap();
        assert_eq!(count_plane_intersections(&t, [0.0, 0.0, 1.0], 5).unwrap(), PlaneCount::Degenerate);
    }

    #[test]
    fn circle_generic_plane_meets_twice() {
        let t = make_circular_trajectory(750.0, 90, 2.0 * PI).unwrap();
        let theta = normalize([0.3, -0.5, 0.8]);
        for view in [0, 17, 44, 89] {
            assert_eq!(count_plane_intersections(&t, theta, view).unwrap(), PlaneCount::Count(2));
            assert_eq!(dense_oracle(750.0, 0.0, 1.0, t.lambdas[view], theta), 2);
        }
    }

    #[test]
    fn sinusoid_horizontal_plane_at_zero_crossing() {
        let t = make_sinusoidal_trajectory(750.0, 50.0, 2, 120).unwrap();
        assert_eq!(count_plane_intersections(&t, [0.0, 0.0, 1.0], 0).unwrap(), PlaneCount::Count(4));
        assert_eq!(dense_oracle(750.0, 50.0, 2.0, 0.0, [0.0, 0.0, 1.0]), 4);
    }

    #[test]
    fn non_unit_normal_is_rejected() {
        let t = make_circular_trajectory(1.0, 8, 2.0 * PI).unwrap();
        assert!(count_plane_intersections(&t, [0.0, 0.0, 2.0], 0).is_err());
    }

    #[test]
    fn circle_weights_are_one_half() {
        let t = make_circular_trajectory(750.0, 24, 2.0 * PI).unwrap();
        let det = DetectorGeometry::new(32, 32, 4.0, 4.0, 1200.0).unwrap();
        let scan = ScanGeometry::new(t, det);
        // Odd n_mu keeps every bin away from planes containing the tangent.
        let grid = SinogramGrid::covering(&scan.detector, 9, 11).unwrap();
        let w = analytic_redundancy_weights(&scan, &grid);
        let non_degenerate: Vec<f64> = w.values.iter().copied().filter(|&x| x > 0.0).collect();
        assert!(!non_degenerate.is_empty());
        assert!(non_degenerate.iter().all(|&x| x == 0.5));
        assert!(w.values.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn plane_containing_the_tangent_touches_once() {
        let t = make_circular_trajectory(750.0, 24, 2.0 * PI).unwrap();
        // Tangent at view 0 is +y; a plane spanned by y and a tilted radial direction.
        let theta = normalize([0.2, 0.0, 1.0]);
        assert_eq!(count_plane_intersections(&t, theta, 0).unwrap(), PlaneCount::Count(1));
    }

    #[test]
    fn counts_are_stable_under_finer_sampling() {
        let det = DetectorGeometry::new(32, 32, 4.0, 4.0, 1200.0).unwrap();
        let coarse = ScanGeometry::new(make_sinusoidal_trajectory(750.0, 50.0, 2, 30).unwrap(), det.clone());
        let fine = ScanGeometry::new(make_sinusoidal_trajectory(750.0, 50.0, 2, 60).unwrap(), det);
        let grid = SinogramGrid::covering(&coarse.detector, 6, 9).unwrap();
        let c = plane_counts(&coarse, &grid);
        let f = plane_counts(&fine, &grid);
        let m = grid.len();
        let mut compared = 0;
        for view in 0..30 {
            for b in 0..m {
                if let (PlaneCount::Count(a), PlaneCount::Count(b2)) = (c[view * m + b], f[2 * view * m + b]) {
                    assert_eq!(a, b2, "view {view} bin {b}");
                    compared += 1;
                }
            }
        }
        assert!(compared > 0);
    }

    #[test]
    fn open_arc_counts_each_side() {
        // Half circle, plane through the middle view: the chord to the other
        // side leaves the arc, so only the source point itself remains.
        let t = make_circular_trajectory(10.0, 64, PI).unwrap();
        let view = 32;
        let a = t.positions[view];
        let theta = normalize([a[0], a[1], 0.0]);
        let theta = normalize([theta[0], theta[1], 0.2]);
        let count = count_plane_intersections(&t, theta, view).unwrap();
        assert_eq!(count, PlaneCount::Count(1));
    }
}
