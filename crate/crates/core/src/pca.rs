//! Principal component analysis of the redundancy-weight matrix.
//!
//! Rows are views (samples), columns are flattened sinogram bins (features).
//! Data are centered but not rescaled. When there are fewer samples than
//! features the eigenvectors of the covariance are obtained from the small
//! Gram matrix `X̃X̃ᵀ/(N−1)` and lifted with `X̃ᵀ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::data::metrics::{mse, psnr};
use crate::error::{invalid, Result};
use crate::training::ssim::{ssim_value, SsimConfig};

pub type WeightMatrix = DMatrix<f64>;

/// Builds a matrix from row-major storage.
pub fn matrix_from_row_major(rows: usize, cols: usize, values: &[f64]) -> Result<WeightMatrix> {
    if values.len() != rows * cols {
        return invalid(format!("{} values cannot fill a {rows}×{cols} matrix", values.len()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, values))
}

pub fn matrix_to_row_major(m: &WeightMatrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaMethod {
    /// Dual when `N < M`, direct otherwise.
    Auto,
    /// Eigendecomposition of the `N×N` Gram matrix.
    Dual,
    /// Eigendecomposition of the `M×M` covariance.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `M×k`, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.ncols()
    }
}

fn check_finite(x: &WeightMatrix) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("weight matrix contains non-finite values");
    }
    Ok(())
}

pub fn column_means(x: &WeightMatrix) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn centered(x: &WeightMatrix, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    c
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    (values, vectors)
}

/// Flips each column so that its largest-magnitude entry is positive.
fn canonicalize_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Fills columns `from..` of `v` with an orthonormal completion built from
/// the standard basis (modified Gram–Schmidt).
fn complete_basis(v: &mut DMatrix<f64>, from: usize) {
    let m = v.nrows();
    let mut next_candidate = 0;
    for c in from..v.ncols() {
        loop {
            assert!(next_candidate < m, "cannot complete an orthonormal basis");
            let mut e = DVector::zeros(m);
            e[next_candidate] = 1.0;
            next_candidate += 1;
            for p in 0..c {
                let proj = v.column(p).dot(&e);
                e.axpy(-proj, &v.column(p), 1.0);
            }
            let n = e.norm();
            if n > 1e-6 {
                v.set_column(c, &(e / n));
                break;
            }
        }
    }
}

pub fn fit_pca(x: &WeightMatrix, k: usize) -> Result<PcaModel> {
    fit_pca_with(x, k, PcaMethod::Auto)
}

pub fn fit_pca_with(x: &WeightMatrix, k: usize, method: PcaMethod) -> Result<PcaModel> {
    let (n, m) = x.shape();
    if n < 2 {
        return invalid("PCA needs at least two samples");
    }
    if k < 1 || k > (n - 1).min(m) {
        return invalid(format!("k = {k} outside 1..={}", (n - 1).min(m)));
    }
    check_finite(x)?;
    let mean = column_means(x);
    let xc = centered(x, &mean);
    let scale = 1.0 / (n as f64 - 1.0);
    let use_dual = match method {
        PcaMethod::Auto => n < m,
        PcaMethod::Dual => true,
        PcaMethod::Direct => false,
    };

    let (eigenvalues, mut components) = if use_dual {
        let gram = &xc * xc.transpose() * scale;
        let (values, u) = sorted_eigen(gram);
        let tol = 1e-12 * values[0].abs().max(f64::MIN_POSITIVE);
        let mut v = DMatrix::zeros(m, k);
        let mut resolved = 0;
        for i in 0..k {
            if values[i] <= tol {
                break;
            }
            let lifted = xc.transpose() * u.column(i);
            let norm = lifted.norm();
            v.set_column(i, &(lifted / norm));
            resolved += 1;
        }
        complete_basis(&mut v, resolved);
        (values[..k].to_vec(), v)
    } else {
        let cov = xc.transpose() * &xc * scale;
        let (values, vecs) = sorted_eigen(cov);
        (values[..k].to_vec(), vecs.columns(0, k).into_owned())
    };
    canonicalize_signs(&mut components);
    let eigenvalues = eigenvalues.into_iter().map(|l| if l.abs() < 1e-300 { 0.0 } else { l }).collect();
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

/// All non-trivial covariance eigenvalues (`min(N, M)` of them), descending.
pub fn eigenvalue_spectrum(x: &WeightMatrix) -> Result<Vec<f64>> {
    let (n, m) = x.shape();
    if n < 2 {
        return invalid("PCA needs at least two samples");
    }
    check_finite(x)?;
    let xc = centered(x, &column_means(x));
    let scale = 1.0 / (n as f64 - 1.0);
    let small = if n <= m {
        &xc * xc.transpose() * scale
    } else {
        xc.transpose() * &xc * scale
    };
    Ok(sorted_eigen(small).0)
}

/// `Y = (X − 1·meanᵀ) V_k`.
pub fn project(model: &PcaModel, x: &WeightMatrix) -> Result<DMatrix<f64>> {
    if x.ncols() != model.n_features() {
        return invalid(format!("matrix has {} columns, model expects {}", x.ncols(), model.n_features()));
    }
    Ok(centered(x, &model.mean) * &model.components)
}

/// `X′ = Y V_kᵀ + 1·meanᵀ`.
pub fn reconstruct(model: &PcaModel, y: &DMatrix<f64>) -> Result<WeightMatrix> {
    if y.ncols() != model.k() {
        return invalid(format!("codes have {} columns, model has k = {}", y.ncols(), model.k()));
    }
    let mut x = y * model.components.transpose();
    for mut row in x.row_iter_mut() {
        row += model.mean.transpose();
    }
    Ok(x)
}

/// Trainable factorization `W_red = W′ V_kᵀ + 1·meanᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedRedundancy {
    /// `N×k` per-view codes.
    pub w_prime: DMatrix<f64>,
    /// `M×k` basis.
    pub v_k: DMatrix<f64>,
    /// `M` mean map.
    pub mean: DVector<f64>,
}

impl CompressedRedundancy {
    pub fn new(w_prime: DMatrix<f64>, v_k: DMatrix<f64>, mean: DVector<f64>) -> Result<Self> {
        let c = Self { w_prime, v_k, mean };
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<()> {
        let (n, k) = self.w_prime.shape();
        let (m, k2) = self.v_k.shape();
        if n == 0 || m == 0 || k == 0 || k != k2 || self.mean.len() != m {
            return invalid(format!(
                "inconsistent factor shapes: W′ {n}×{k}, V {m}×{k2}, mean {}",
                self.mean.len()
            ));
        }
        Ok(())
    }

    /// Initializes from a fitted model and the matrix it was fitted on.
    pub fn from_model(model: &PcaModel, x: &WeightMatrix) -> Result<Self> {
        let w_prime = project(model, x)?;
        Self::new(w_prime, model.components.clone(), model.mean.clone())
    }

    /// `W′ V_kᵀ + 1·meanᵀ` as an `N×M` matrix.
    pub fn expand(&self) -> WeightMatrix {
        let mut w = &self.w_prime * self.v_k.transpose();
        for mut row in w.row_iter_mut() {
            row += self.mean.transpose();
        }
        w
    }

    pub fn n_views(&self) -> usize {
        self.w_prime.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.v_k.nrows()
    }

    pub fn k(&self) -> usize {
        self.v_k.ncols()
    }

    pub fn n_parameters(&self) -> u64 {
        count_parameters(self.n_views() as u64, self.n_features() as u64, Some(self.k() as u64))
    }
}

/// Trainable parameter count: `N·M` uncompressed, `k(N + M) + M` compressed.
pub fn count_parameters(n_views: u64, bins_per_view: u64, k: Option<u64>) -> u64 {
    match k {
        None => n_views * bins_per_view,
        Some(k) => k * (n_views + bins_per_view) + bins_per_view,
    }
}

/// Relative parameter reduction of the compressed model, in percent.
pub fn parameter_reduction_percent(n_views: u64, bins_per_view: u64, k: u64) -> f64 {
    let full = count_parameters(n_views, bins_per_view, None) as f64;
    let comp = count_parameters(n_views, bins_per_view, Some(k)) as f64;
    100.0 * (1.0 - comp / full)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRecord {
    pub k: usize,
    pub mse: f64,
    pub ssim: f64,
    pub psnr: f64,
}

/// Fits, projects and reconstructs for every `k`, comparing each view's
/// `map_shape = (n_mu, n_s)` weight map with its reconstruction.
pub fn quality_sweep(x: &WeightMatrix, map_shape: (usize, usize), ks: &[usize], ssim_window: usize) -> Result<Vec<SweepRecord>> {
    let (n_mu, n_s) = map_shape;
    if n_mu * n_s != x.ncols() {
        return invalid(format!("map shape {n_mu}×{n_s} does not match {} features", x.ncols()));
    }
    let lo = x.min();
    let hi = x.max();
    let range = if hi > lo { hi - lo } else { hi.abs().max(1.0) };
    let cfg = SsimConfig::new(ssim_window, range)?;
    let original = matrix_to_row_major(x);
    let mut records = Vec::with_capacity(ks.len());
    for &k in ks {
        let model = fit_pca(x, k)?;
        let rebuilt = reconstruct(&model, &project(&model, x)?)?;
        let rebuilt = matrix_to_row_major(&rebuilt);
        let (mut e, mut s, mut p) = (0.0, 0.0, 0.0);
        let m = x.ncols();
        for view in 0..x.nrows() {
            let a = &original[view * m..(view + 1) * m];
            let b = &rebuilt[view * m..(view + 1) * m];
            e += mse(a, b)?;
            s += ssim_value(a, b, [n_s, n_mu, 1], &cfg)?;
            p += psnr(a, b, range)?;
        }
        let n = x.nrows() as f64;
        records.push(SweepRecord {
            k,
            mse: e / n,
            ssim: s / n,
            psnr: p / n,
        });
    }
    Ok(records)
}

pub fn sweep_to_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from("k,mse,ssim,psnr\n");
    for r in records {
        out.push_str(&format!("{},{:e},{},{}\n", r.k, r.mse, r.ssim, r.psnr));
    }
    out
}
