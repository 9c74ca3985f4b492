//! Mean local SSIM over uniform box windows ("valid" placement) and its
//! analytic gradient with respect to the first argument.
//!
//! Arrays are `[nx, ny, nz]` with x fastest. Along an axis shorter than the
//! window, the window spans the whole axis, so 2D maps use `nz = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
    pub dynamic_range: f64,
}

impl SsimConfig {
    /// `C1 = (0.01 L)²`, `C2 = (0.03 L)²`.
    pub fn new(window: usize, dynamic_range: f64) -> Result<Self> {
        let cfg = Self {
            window,
            c1: (0.01 * dynamic_range).powi(2),
            c2: (0.03 * dynamic_range).powi(2),
            dynamic_range,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return invalid(format!("SSIM window must be odd and ≥ 3, got {}", self.window));
        }
        if !(self.dynamic_range > 0.0) || !(self.c1 > 0.0) || !(self.c2 > 0.0) {
            return invalid("SSIM constants and dynamic range must be positive");
        }
        Ok(())
    }
}

fn windows(dims: [usize; 3], w: usize) -> [usize; 3] {
    dims.map(|d| w.min(d))
}

fn strides(dims: [usize; 3]) -> [usize; 3] {
    [1, dims[0], dims[0] * dims[1]]
}

/// Sum over windows of length `w` along `axis` ("valid"): output axis length `n − w + 1`.
fn box_valid(input: &[f64], dims: [usize; 3], axis: usize, w: usize) -> (Vec<f64>, [usize; 3]) {
    let mut od = dims;
    od[axis] = dims[axis] - w + 1;
    let (is, os) = (strides(dims), strides(od));
    let mut out = vec![0.0; od.iter().product()];
    for z in 0..od[2] {
        for y in 0..od[1] {
            for x in 0..od[0] {
                let o = [x, y, z];
                let base = o[0] * is[0] + o[1] * is[1] + o[2] * is[2];
                let mut acc = 0.0;
                for t in 0..w {
                    acc += input[base + t * is[axis]];
                }
                out[o[0] * os[0] + o[1] * os[1] + o[2] * os[2]] = acc;
            }
        }
    }
    (out, od)
}

/// Transpose of [`box_valid`]: scatters each window value back over its span.
fn box_valid_adjoint(input: &[f64], in_dims: [usize; 3], axis: usize, w: usize) -> (Vec<f64>, [usize; 3]) {
    let mut od = in_dims;
    od[axis] = in_dims[axis] + w - 1;
    let (is, os) = (strides(in_dims), strides(od));
    let mut out = vec![0.0; od.iter().product()];
    for z in 0..in_dims[2] {
        for y in 0..in_dims[1] {
            for x in 0..in_dims[0] {
                let v = input[x * is[0] + y * is[1] + z * is[2]];
                let base = x * os[0] + y * os[1] + z * os[2];
                for t in 0..w {
                    out[base + t * os[axis]] += v;
                }
            }
        }
    }
    (out, od)
}

fn box_sums(input: &[f64], dims: [usize; 3], win: [usize; 3]) -> Vec<f64> {
    let (a, d) = box_valid(input, dims, 0, win[0]);
    let (b, d) = box_valid(&a, d, 1, win[1]);
    box_valid(&b, d, 2, win[2]).0
}

fn box_sums_adjoint(input: &[f64], out_dims: [usize; 3], win: [usize; 3]) -> Vec<f64> {
    let d = [0, 1, 2].map(|c| out_dims[c] - win[c] + 1);
    let (a, d) = box_valid_adjoint(input, d, 2, win[2]);
    let (b, d) = box_valid_adjoint(&a, d, 1, win[1]);
    box_valid_adjoint(&b, d, 0, win[0]).0
}

struct Moments {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

fn check(a: &[f64], b: &[f64], dims: [usize; 3], cfg: &SsimConfig) -> Result<()> {
    cfg.validate()?;
    let n: usize = dims.iter().product();
    if n == 0 || a.len() != n || b.len() != n {
        return invalid(format!("SSIM inputs of length {} and {} do not match dims {dims:?}", a.len(), b.len()));
    }
    Ok(())
}

fn moments(a: &[f64], b: &[f64], dims: [usize; 3], win: [usize; 3]) -> Moments {
    let n = (win[0] * win[1] * win[2]) as f64;
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mean = |v: Vec<f64>| v.into_iter().map(|s| s / n).collect::<Vec<_>>();
    let mu_a = mean(box_sums(a, dims, win));
    let mu_b = mean(box_sums(b, dims, win));
    let eaa = mean(box_sums(&sq(a, a), dims, win));
    let ebb = mean(box_sums(&sq(b, b), dims, win));
    let eab = mean(box_sums(&sq(a, b), dims, win));
    let var_a = eaa.iter().zip(&mu_a).map(|(e, m)| e - m * m).collect();
    let var_b = ebb.iter().zip(&mu_b).map(|(e, m)| e - m * m).collect();
    let cov = eab.iter().zip(mu_a.iter().zip(&mu_b)).map(|(e, (x, y))| e - x * y).collect();
    Moments {
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov,
    }
}

pub fn ssim_value(a: &[f64], b: &[f64], dims: [usize; 3], cfg: &SsimConfig) -> Result<f64> {
    check(a, b, dims, cfg)?;
    let m = moments(a, b, dims, windows(dims, cfg.window));
    let total: f64 = (0..m.mu_a.len())
        .map(|i| {
            let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
            (2.0 * ma * mb + cfg.c1) * (2.0 * m.cov[i] + cfg.c2)
                / ((ma * ma + mb * mb + cfg.c1) * (m.var_a[i] + m.var_b[i] + cfg.c2))
        })
        .sum();
    Ok(total / m.mu_a.len() as f64)
}

/// `(SSIM(a, b), ∂SSIM/∂a)`.
pub fn ssim(a: &[f64], b: &[f64], dims: [usize; 3], cfg: &SsimConfig) -> Result<(f64, Vec<f64>)> {
    check(a, b, dims, cfg)?;
    let win = windows(dims, cfg.window);
    let n = (win[0] * win[1] * win[2]) as f64;
    let m = moments(a, b, dims, win);
    let nw = m.mu_a.len();
    let mut total = 0.0;
    let mut alpha = vec![0.0; nw];
    let mut beta = vec![0.0; nw];
    let mut gamma = vec![0.0; nw];
    for i in 0..nw {
        let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
        let a1 = 2.0 * ma * mb + cfg.c1;
        let a2 = 2.0 * m.cov[i] + cfg.c2;
        let b1 = ma * ma + mb * mb + cfg.c1;
        let b2 = m.var_a[i] + m.var_b[i] + cfg.c2;
        total += a1 * a2 / (b1 * b2);
        let d_mu = 2.0 * mb * a2 / (b1 * b2) - 2.0 * ma * a1 * a2 / (b1 * b1 * b2);
        let d_var = -a1 * a2 / (b1 * b2 * b2);
        let d_cov = 2.0 * a1 / (b1 * b2);
        alpha[i] = (d_mu - 2.0 * d_var * ma - d_cov * mb) / n;
        beta[i] = d_var / n;
        gamma[i] = d_cov / n;
    }
    let sa = box_sums_adjoint(&alpha, dims, win);
    let sb = box_sums_adjoint(&beta, dims, win);
    let sg = box_sums_adjoint(&gamma, dims, win);
    let inv = 1.0 / nw as f64;
    let grad = (0..a.len()).map(|p| (sa[p] + 2.0 * a[p] * sb[p] + b[p] * sg[p]) * inv).collect();
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn equal_inputs_give_one_and_zero_gradient() {
        let cfg = SsimConfig::new(3, 1.0).unwrap();
        let a = random(6 * 5 * 4, 1);
        let (s, g) = ssim(&a, &a, [6, 5, 4], &cfg).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(g.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn constant_volumes_closed_form() {
        let cfg = SsimConfig::new(3, 1.0).unwrap();
        let (c1, c2) = (0.3, 0.7);
        let s = ssim_value(&vec![c1; 125], &vec![c2; 125], [5, 5, 5], &cfg).unwrap();
        let expect = (2.0 * c1 * c2 + cfg.c1) / (c1 * c1 + c2 * c2 + cfg.c1);
        assert!((s - expect).abs() < 1e-12, "{s} vs {expect}");
    }

    #[test]
    fn box_adjoint_is_transpose() {
        let dims = [5, 4, 6];
        let win = [3, 3, 3];
        let x = random(120, 2);
        let od = [3, 2, 4];
        let y = random(24, 3);
        let l: f64 = box_sums(&x, dims, win).iter().zip(&y).map(|(a, b)| a * b).sum();
        let r: f64 = box_sums_adjoint(&y, dims, win).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert_eq!(od.iter().product::<usize>(), y.len());
        assert!((l - r).abs() < 1e-12 * l.abs());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = SsimConfig::new(7, 1.0).unwrap();
        let dims = [8, 8, 8];
        let a = random(512, 4);
        let b = random(512, 5);
        let (_, g) = ssim(&a, &b, dims, &cfg).unwrap();
        let h = 1e-6;
        let mut max_err: f64 = 0.0;
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for p in (0..512).step_by(7) {
            let mut ap = a.clone();
            ap[p] += h;
            let mut am = a.clone();
            am[p] -= h;
            let fd = (ssim_value(&ap, &b, dims, &cfg).unwrap() - ssim_value(&am, &b, dims, &cfg).unwrap()) / (2.0 * h);
            max_err = max_err.max((fd - g[p]).abs() / gmax);
        }
        assert!(max_err < 1e-4, "{max_err}");
    }

    #[test]
    fn ssim_is_bounded_and_symmetric() {
        let cfg = SsimConfig::new(3, 1.0).unwrap();
        let a = random(64, 6);
        let b: Vec<f64> = random(64, 7).iter().map(|x| -x).collect();
        let s1 = ssim_value(&a, &b, [4, 4, 4], &cfg).unwrap();
        let s2 = ssim_value(&b, &a, [4, 4, 4], &cfg).unwrap();
        assert!((s1 - s2).abs() < 1e-14);
        assert!((-1.0..=1.0).contains(&s1));
    }

    #[test]
    fn two_d_maps_use_a_flat_window() {
        let cfg = SsimConfig::new(3, 1.0).unwrap();
        let a = random(30, 8);
        let (s, g) = ssim(&a, &a, [6, 5, 1], &cfg).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(g.len(), 30);
    }

    #[test]
    fn invalid_inputs() {
        assert!(SsimConfig::new(4, 1.0).is_err());
        assert!(SsimConfig::new(1, 1.0).is_err());
        assert!(SsimConfig::new(3, 0.0).is_err());
        let cfg = SsimConfig::new(3, 1.0).unwrap();
        assert!(ssim(&[0.0; 8], &[0.0; 7], [2, 2, 2], &cfg).is_err());
    }
}
