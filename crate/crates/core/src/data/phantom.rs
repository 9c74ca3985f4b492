//! Analytic phantoms rasterized at voxel centers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::geometry::{normalize, ScanGeometry, Vec3, VolumeGrid};
use crate::operators::{ProjectionStack, Volume};

pub type Rotation = [[f64; 3]; 3];

pub const IDENTITY: Rotation = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// `rotation` maps world offsets into the body frame (rows are body axes).
    Ellipsoid { semi_axes: Vec3, rotation: Rotation },
    Sphere { radius: f64 },
    Box { half_extents: Vec3, rotation: Rotation },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub center: Vec3,
    pub density: f64,
    pub shape: Shape,
}

impl Primitive {
    pub fn sphere(center: Vec3, radius: f64, density: f64) -> Self {
        Self {
            center,
            density,
            shape: Shape::Sphere { radius },
        }
    }

    fn body(rotation: &Rotation, d: Vec3) -> Vec3 {
        rotation.map(|row| row[0] * d[0] + row[1] * d[1] + row[2] * d[2])
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        match &self.shape {
            Shape::Sphere { radius } => d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius,
            Shape::Ellipsoid { semi_axes, rotation } => {
                let b = Self::body(rotation, d);
                (0..3).map(|c| (b[c] / semi_axes[c]).powi(2)).sum::<f64>() <= 1.0
            }
            Shape::Box { half_extents, rotation } => {
                let b = Self::body(rotation, d);
                (0..3).all(|c| b[c].abs() <= half_extents[c])
            }
        }
    }

    /// Length of the intersection of the ray `origin + t·dir` (unit `dir`, `t ≥ 0`) with the primitive.
    pub fn chord(&self, origin: Vec3, dir: Vec3) -> f64 {
        let d = [origin[0] - self.center[0], origin[1] - self.center[1], origin[2] - self.center[2]];
        let quadric = |o: Vec3, v: Vec3| {
            // |o + t v|² = 1
            let a = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            let b = 2.0 * (o[0] * v[0] + o[1] * v[1] + o[2] * v[2]);
            let c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - 1.0;
            let disc = b * b - 4.0 * a * c;
            if disc <= 0.0 {
                return 0.0;
            }
            let r = disc.sqrt();
            let t1 = ((-b - r) / (2.0 * a)).max(0.0);
            let t2 = ((-b + r) / (2.0 * a)).max(0.0);
            t2 - t1
        };
        match &self.shape {
            Shape::Sphere { radius } => quadric(d.map(|x| x / radius), dir.map(|x| x / radius)),
            Shape::Ellipsoid { semi_axes, rotation } => {
                let o = Self::body(rotation, d);
                let v = Self::body(rotation, dir);
                quadric(std::array::from_fn(|c| o[c] / semi_axes[c]), std::array::from_fn(|c| v[c] / semi_axes[c]))
            }
            Shape::Box { half_extents, rotation } => {
                let o = Self::body(rotation, d);
                let v = Self::body(rotation, dir);
                let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
                for c in 0..3 {
                    let h = half_extents[c];
                    if v[c].abs() < 1e-15 {
                        if o[c].abs() > h {
                            return 0.0;
                        }
                    } else {
                        let t1 = (-h - o[c]) / v[c];
                        let t2 = (h - o[c]) / v[c];
                        lo = lo.max(t1.min(t2));
                        hi = hi.min(t1.max(t2));
                    }
                }
                (hi - lo).max(0.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.density.is_finite() || self.center.iter().any(|c| !c.is_finite()) {
            return invalid("primitive has non-finite center or density");
        }
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        let ok = match &self.shape {
            Shape::Sphere { radius } => positive(&[*radius]),
            Shape::Ellipsoid { semi_axes, .. } => positive(semi_axes),
            Shape::Box { half_extents, .. } => positive(half_extents),
        };
        if !ok {
            return invalid("primitive extents must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub primitives: Vec<Primitive>,
    pub seed: Option<u64>,
}

impl PhantomSpec {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        let spec = Self { primitives, seed: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return invalid("phantom needs at least one primitive");
        }
        self.primitives.iter().try_for_each(Primitive::validate)
    }
}

/// Rotation from Z-Y-X Euler angles.
pub fn rotation_from_euler(yaw: f64, pitch: f64, roll: f64) -> Rotation {
    let (sa, ca) = yaw.sin_cos();
    let (sb, cb) = pitch.sin_cos();
    let (sc, cc) = roll.sin_cos();
    [
        [ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc],
        [sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc],
        [-sb, cb * sc, cb * cc],
    ]
}

/// Random spec: 3 to 8 rotated ellipsoids with densities in `[0.2, 1]`,
/// each fully inside the sphere inscribed in the grid.
pub fn random_phantom_spec(rng: &mut impl Rng, grid: &VolumeGrid) -> PhantomSpec {
    let half = |n: usize| 0.5 * n as f64 * grid.voxel;
    let r_in = half(grid.nx).min(half(grid.ny)).min(half(grid.nz));
    let count = rng.random_range(3..=8);
    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        let semi_axes: Vec3 = std::array::from_fn(|_| rng.random_range(0.12..0.45) * r_in);
        let largest = semi_axes.iter().copied().fold(0.0, f64::max);
        let reach = (r_in - largest).max(0.0);
        // Uniform direction, radius uniform in the ball of radius `reach`.
        let center = loop {
            let c: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            if c.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                break c.map(|x| x * reach);
            }
        };
        let rotation = rotation_from_euler(
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(-1.0f64..1.0).asin(),
            rng.random_range(0.0..std::f64::consts::TAU),
        );
        let rotation = transpose(&rotation);
        primitives.push(Primitive {
            center,
            density: rng.random_range(0.2..=1.0),
            shape: Shape::Ellipsoid { semi_axes, rotation },
        });
    }
    PhantomSpec { primitives, seed: None }
}

fn transpose(r: &Rotation) -> Rotation {
    std::array::from_fn(|i| std::array::from_fn(|j| r[j][i]))
}

/// Each voxel holds the summed density of the primitives containing its center.
pub fn make_phantom(spec: &PhantomSpec, grid: &VolumeGrid) -> Volume {
    let mut vol = Volume::zeros(grid);
    for iz in 0..grid.nz {
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let c = grid.center(ix, iy, iz);
                let v: f64 = spec.primitives.iter().filter(|p| p.contains(c)).map(|p| p.density).sum();
                vol.values[grid.index(ix, iy, iz)] = v;
            }
        }
    }
    vol
}

/// Exact line integrals of the continuous phantom through every detector pixel center.
pub fn analytic_projections(spec: &PhantomSpec, scan: &ScanGeometry) -> ProjectionStack {
    let det = &scan.detector;
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
                    image[j * det.n_u + i] = spec.primitives.iter().map(|p| p.density * p.chord(a, dir)).sum();
                }
            }
            image
        })
        .collect();
    let mut stack = ProjectionStack::zeros(scan.n_views(), det);
    for (i, v) in views.into_iter().enumerate() {
        stack.view_mut(i).copy_from_slice(&v);
    }
    stack
}
