//! The shift-variant filtered backprojection chain
//!
//! ```text
//! x = Σ_λ Δλ · w_d ⊙ BP_λ[ A2dᵀ D ( w_red ⊙ w_sino ⊙ D A2d (w_cos ⊙ p_λ) ) ]
//! ```
//!
//! and its gradients with respect to the redundancy layer, in plain or
//! PCA-compressed form (`W_red = W′ V_kᵀ + 1·meanᵀ`). The chain is linear in
//! every trainable block, so the backward pass applies operator transposes.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{ScanGeometry, VolumeGrid};
use crate::operators::backproject::{backproject_views_into, project_view_multi};
use crate::operators::{
    cosine_weight_field, derivative_radial_adjoint_into, derivative_radial_into, distance_weight,
    sinogram_weight_field, ProjectionStack, RadonMatrix, SinogramGrid, Volume,
};
use crate::pca::CompressedRedundancy;
use crate::redundancy::RedundancyWeights;

#[derive(Debug, Clone, PartialEq)]
pub enum RedundancyMode {
    Uncompressed(RedundancyWeights),
    Compressed(CompressedRedundancy),
}

/// Geometry, grids, fixed weight fields and the trainable redundancy layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub scan: ScanGeometry,
    pub sino_grid: SinogramGrid,
    pub volume_grid: VolumeGrid,
    /// `[v][u]`.
    pub w_cos: Vec<f64>,
    /// `[view][mu][s]`.
    pub w_sino: Vec<f64>,
    pub mode: RedundancyMode,
    radon: Arc<RadonMatrix>,
}

impl PipelineState {
    pub fn new(scan: ScanGeometry, sino_grid: SinogramGrid, volume_grid: VolumeGrid, mode: RedundancyMode) -> Result<Self> {
        if sino_grid.n_s < 3 {
            return invalid("the radial derivative needs n_s ≥ 3");
        }
        scan.check_field_of_view(&volume_grid)?;
        let w_cos = cosine_weight_field(&scan.detector).values;
        let w_sino: Vec<f64> = (0..scan.n_views())
            .into_par_iter()
            .flat_map_iter(|i| sinogram_weight_field(&scan, i, &sino_grid).values)
            .collect();
        if w_sino.iter().chain(&w_cos).any(|v| !v.is_finite()) {
            return invalid("weight fields contain non-finite values");
        }
        let radon = Arc::new(RadonMatrix::new(&scan.detector, &sino_grid));
        let state = Self {
            radon,
            scan,
            sino_grid,
            volume_grid,
            w_cos,
            w_sino,
            mode,
        };
        state.check_mode(&state.mode)?;
        Ok(state)
    }

    pub fn n_views(&self) -> usize {
        self.scan.n_views()
    }

    pub fn bins_per_view(&self) -> usize {
        self.sino_grid.len()
    }

    fn check_mode(&self, mode: &RedundancyMode) -> Result<()> {
        let (n, m) = (self.n_views(), self.bins_per_view());
        match mode {
            RedundancyMode::Uncompressed(w) => {
                if w.n_views != n || w.grid != self.sino_grid || w.values.len() != n * m {
                    return invalid("redundancy weights do not match the scan and sinogram grid");
                }
            }
            RedundancyMode::Compressed(c) => {
                c.check()?;
                if c.n_views() != n || c.n_features() != m {
                    return invalid(format!(
                        "compressed layer is {}×{}, pipeline needs {n}×{m}",
                        c.n_views(),
                        c.n_features()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn set_mode(&mut self, mode: RedundancyMode) -> Result<()> {
        self.check_mode(&mode)?;
        self.mode = mode;
        Ok(())
    }

    /// Redundancy weights in effect (expanded in compressed mode).
    pub fn effective_weights(&self) -> Result<RedundancyWeights> {
        match &self.mode {
            RedundancyMode::Uncompressed(w) => Ok(w.clone()),
            RedundancyMode::Compressed(c) => expand_compressed(c, &self.sino_grid),
        }
    }

    pub fn w_sino_view(&self, view: usize) -> &[f64] {
        let m = self.bins_per_view();
        &self.w_sino[view * m..(view + 1) * m]
    }

    fn voxel_factor(&self) -> impl Fn(f64) -> f64 + Sync + '_ {
        let dl = self.scan.trajectory.delta_lambda;
        move |depth| dl * distance_weight(&self.scan.detector, &self.sino_grid, depth)
    }
}

/// `W_red = W′ V_kᵀ + 1·meanᵀ` reshaped to `[view][mu][s]`. Not clamped.
pub fn expand_compressed(c: &CompressedRedundancy, grid: &SinogramGrid) -> Result<RedundancyWeights> {
    c.check()?;
    if c.n_features() != grid.len() {
        return invalid(format!("compressed layer has {} features, grid has {} bins", c.n_features(), grid.len()));
    }
    Ok(RedundancyWeights {
        n_views: c.n_views(),
        grid: grid.clone(),
        values: crate::pca::matrix_to_row_major(&c.expand()),
    })
}

/// The per-view activation `s3 = w_sino ⊙ D A2d (w_cos ⊙ p)` that multiplies `w_red`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateCache {
    pub n_views: usize,
    pub grid: SinogramGrid,
    /// `[view][mu][s]`.
    pub s3: Vec<f64>,
}

impl IntermediateCache {
    pub fn view(&self, i: usize) -> &[f64] {
        let m = self.grid.len();
        &self.s3[i * m..(i + 1) * m]
    }
}

/// Runs the chain up to `s3`. Independent of the redundancy layer.
pub fn filter_activations(p: &ProjectionStack, state: &PipelineState) -> Result<IntermediateCache> {
    p.check_matches(state.n_views(), &state.scan.detector)?;
    let grid = &state.sino_grid;
    let m = grid.len();
    let s3: Vec<f64> = (0..state.n_views())
        .into_par_iter()
        .flat_map_iter(|i| {
            let q1: Vec<f64> = p.view(i).iter().zip(&state.w_cos).map(|(a, b)| a * b).collect();
            let mut s1 = vec![0.0; m];
            state.radon.apply(&q1, &mut s1);
            let mut s2 = vec![0.0; m];
            derivative_radial_into(&s1, grid.n_mu, grid.n_s, grid.ds, &mut s2);
            s2.iter_mut().zip(state.w_sino_view(i)).for_each(|(v, w)| *v *= w);
            s2
        })
        .collect();
    Ok(IntermediateCache {
        n_views: state.n_views(),
        grid: grid.clone(),
        s3,
    })
}

fn check_cache(cache: &IntermediateCache, state: &PipelineState) -> Result<()> {
    if cache.n_views != state.n_views() || cache.grid != state.sino_grid || cache.s3.len() != state.n_views() * state.bins_per_view() {
        return Err(Error::InvalidState("intermediate cache does not come from a matching forward pass".into()));
    }
    Ok(())
}

/// Finishes the chain from cached activations with explicit weights.
pub fn reconstruct_from_cache(cache: &IntermediateCache, w_red: &RedundancyWeights, state: &PipelineState) -> Result<Volume> {
    Ok(reconstruct_batch(&[cache], w_red, state)?.pop().expect("one volume per cache"))
}

/// [`reconstruct_from_cache`] for several samples at once. The samples share
/// the sparse Radon and back-projection geometry, which makes this much
/// cheaper than one call per sample; each result is bit-identical to the
/// single-sample call.
pub fn reconstruct_batch(caches: &[&IntermediateCache], w_red: &RedundancyWeights, state: &PipelineState) -> Result<Vec<Volume>> {
    for cache in caches {
        check_cache(cache, state)?;
    }
    if w_red.n_views != state.n_views() || w_red.grid != state.sino_grid || w_red.values.len() != state.n_views() * state.bins_per_view() {
        return invalid("redundancy weights do not match the pipeline");
    }
    let width = caches.len();
    if width == 0 {
        return Ok(Vec::new());
    }
    let grid = &state.sino_grid;
    let m = grid.len();
    let n_pixels = state.scan.detector.n_pixels();
    let images: Vec<Vec<f64>> = (0..state.n_views())
        .into_par_iter()
        .map(|i| {
            let mut s4 = vec![0.0; m];
            let mut s5 = vec![0.0; m];
            let mut stacked = vec![0.0; m * width];
            for (c, cache) in caches.iter().enumerate() {
                s4.iter_mut()
                    .zip(cache.view(i).iter().zip(w_red.view(i)))
                    .for_each(|(o, (a, b))| *o = a * b);
                derivative_radial_into(&s4, grid.n_mu, grid.n_s, grid.ds, &mut s5);
                for (r, &v) in s5.iter().enumerate() {
                    stacked[r * width + c] = v;
                }
            }
            let mut q2 = vec![0.0; n_pixels * width];
            state.radon.apply_transpose_multi(&stacked, width, &mut q2);
            q2
        })
        .collect();
    let vg = &state.volume_grid;
    let mut stacked = vec![0.0; vg.len() * width];
    backproject_views_into(&state.scan, &images, width, vg, state.voxel_factor(), &mut stacked);
    Ok((0..width)
        .map(|c| Volume {
            grid: vg.clone(),
            values: stacked.iter().skip(c).step_by(width).copied().collect(),
        })
        .collect())
}

/// Full forward pass. Compressed mode is expanded first, so both modes share
/// the arithmetic after expansion.
pub fn reconstruct_volume(p: &ProjectionStack, state: &PipelineState) -> Result<(Volume, IntermediateCache)> {
    let cache = filter_activations(p, state)?;
    let w = state.effective_weights()?;
    let vol = reconstruct_from_cache(&cache, &w, state)?;
    Ok((vol, cache))
}

/// Adjoint of the projection-to-volume map at fixed weights `w_red`:
/// `w_cos ⊙ A2dᵀ Dᵀ (w_sino ⊙ w_red ⊙ Dᵀ A2d (Δλ·w_d ⊙ BPᵀ g))` per view.
pub fn reconstruct_adjoint(g: &Volume, w_red: &RedundancyWeights, state: &PipelineState) -> Result<ProjectionStack> {
    let vg = &state.volume_grid;
    if g.grid.nx != vg.nx || g.grid.ny != vg.ny || g.grid.nz != vg.nz || g.values.len() != vg.len() {
        return invalid("volume does not match the volume grid");
    }
    if w_red.n_views != state.n_views() || w_red.grid != state.sino_grid || w_red.values.len() != state.n_views() * state.bins_per_view() {
        return invalid("redundancy weights do not match the pipeline");
    }
    let grid = &state.sino_grid;
    let m = grid.len();
    let factor = state.voxel_factor();
    let mut p = ProjectionStack::zeros(state.n_views(), &state.scan.detector);
    let n = p.view_len();
    p.values.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        let q = project_view_multi(&state.scan, i, &g.values, 1, vg, &factor);
        let mut t = vec![0.0; m];
        state.radon.apply(&q, &mut t);
        let mut u = vec![0.0; m];
        derivative_radial_adjoint_into(&t, grid.n_mu, grid.n_s, grid.ds, &mut u);
        u.iter_mut()
            .zip(w_red.view(i).iter().zip(state.w_sino_view(i)))
            .for_each(|(x, (a, b))| *x *= a * b);
        derivative_radial_adjoint_into(&u, grid.n_mu, grid.n_s, grid.ds, &mut t);
        state.radon.apply_transpose(&t, out);
        out.iter_mut().zip(&state.w_cos).for_each(|(x, w)| *x *= w);
    });
    Ok(p)
}

/// `∂L/∂w_red` for a volume gradient `g`, added into `out` (`[view][mu][s]`):
/// `s3 ⊙ Dᵀ A2d (Δλ·w_d ⊙ BPᵀ g)` per view.
pub fn grad_wred_accumulate(g: &Volume, cache: &IntermediateCache, state: &PipelineState, out: &mut [f64]) -> Result<()> {
    grad_wred_batch(&[g], &[cache], state, out)
}

/// Sum of [`grad_wred_accumulate`] over pairs `(gs[c], caches[c])`, added
/// into `out` in pair order, sharing geometry across samples.
pub fn grad_wred_batch(gs: &[&Volume], caches: &[&IntermediateCache], state: &PipelineState, out: &mut [f64]) -> Result<()> {
    if gs.len() != caches.len() {
        return invalid("need one volume gradient per cache");
    }
    let vg = &state.volume_grid;
    for (g, cache) in gs.iter().zip(caches) {
        check_cache(cache, state)?;
        if g.grid.nx != vg.nx || g.grid.ny != vg.ny || g.grid.nz != vg.nz || g.values.len() != vg.len() {
            return invalid("volume gradient does not match the volume grid");
        }
    }
    if out.len() != state.n_views() * state.bins_per_view() {
        return invalid("gradient buffer has the wrong length");
    }
    let width = gs.len();
    if width == 0 {
        return Ok(());
    }
    let mut stacked = vec![0.0; vg.len() * width];
    for (c, g) in gs.iter().enumerate() {
        for (r, &v) in g.values.iter().enumerate() {
            stacked[r * width + c] = v;
        }
    }
    let grid = &state.sino_grid;
    let m = grid.len();
    let factor = state.voxel_factor();
    out.par_chunks_mut(m).enumerate().for_each(|(i, out_view)| {
        let q = project_view_multi(&state.scan, i, &stacked, width, vg, &factor);
        let mut t = vec![0.0; m * width];
        state.radon.apply_multi(&q, width, &mut t);
        let mut tc = vec![0.0; m];
        let mut u = vec![0.0; m];
        for (c, cache) in caches.iter().enumerate() {
            tc.iter_mut().enumerate().for_each(|(r, x)| *x = t[r * width + c]);
            derivative_radial_adjoint_into(&tc, grid.n_mu, grid.n_s, grid.ds, &mut u);
            for ((o, a), b) in out_view.iter_mut().zip(&u).zip(cache.view(i)) {
                *o += a * b;
            }
        }
    });
    Ok(())
}

pub fn grad_wred(g: &Volume, cache: &IntermediateCache, state: &PipelineState) -> Result<RedundancyWeights> {
    let mut out = vec![0.0; cache.s3.len()];
    grad_wred_accumulate(g, cache, state, &mut out)?;
    Ok(RedundancyWeights {
        n_views: cache.n_views,
        grid: cache.grid.clone(),
        values: out,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedGradient {
    pub w_prime: DMatrix<f64>,
    pub v_k: DMatrix<f64>,
    pub mean: DVector<f64>,
}

/// Chain rule through `W_red = W′ V_kᵀ + 1·meanᵀ` for `G = ∂L/∂W_red` (`N×M`).
pub fn grad_compressed(g: &DMatrix<f64>, c: &CompressedRedundancy) -> Result<CompressedGradient> {
    c.check()?;
    if g.nrows() != c.n_views() || g.ncols() != c.n_features() {
        return invalid(format!(
            "gradient is {}×{}, layer is {}×{}",
            g.nrows(),
            g.ncols(),
            c.n_views(),
            c.n_features()
        ));
    }
    let mean = DVector::from_iterator(g.ncols(), g.column_iter().map(|col| col.sum()));
    Ok(CompressedGradient {
        w_prime: g * &c.v_k,
        v_k: g.transpose() * &c.w_prime,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::phantom::{make_phantom, PhantomSpec, Primitive};
    use crate::geometry::{make_sinusoidal_trajectory, DetectorGeometry};
    use crate::operators::cone_beam_forward;
    use crate::operators::dot_slices;
    use crate::pca::{fit_pca, CompressedRedundancy};
    use crate::redundancy::analytic_redundancy_weights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_state(n_views: usize) -> PipelineState {
        let t = make_sinusoidal_trajectory(750.0, 50.0, 2, n_views).unwrap();
        let det = DetectorGeometry::new(20, 16, 8.0, 8.0, 1200.0).unwrap();
        let scan = ScanGeometry::new(t, det);
        let grid = SinogramGrid::covering(&scan.detector, 9, 13).unwrap();
        let vg = VolumeGrid::centered(8, 8.0).unwrap();
        let w = RedundancyWeights::constant(n_views, &grid, 0.5);
        PipelineState::new(scan, grid, vg, RedundancyMode::Uncompressed(w)).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_stack(state: &PipelineState, rng: &mut ChaCha8Rng) -> ProjectionStack {
        let mut p = ProjectionStack::zeros(state.n_views(), &state.scan.detector);
        p.values = random_vec(p.values.len(), rng);
        p
    }

    #[test]
    fn zero_projections_give_zero_volume() {
        let state = tiny_state(4);
        let p = ProjectionStack::zeros(4, &state.scan.detector);
        let (x, _) = reconstruct_volume(&p, &state).unwrap();
        assert!(x.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_in_projections() {
        let state = tiny_state(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_stack(&state, &mut rng);
        let b = random_stack(&state, &mut rng);
        let mut sum = a.clone();
        sum.values.iter_mut().zip(&b.values).for_each(|(x, y)| *x = 2.0 * *x + y);
        let xa = reconstruct_volume(&a, &state).unwrap().0;
        let xb = reconstruct_volume(&b, &state).unwrap().0;
        let xs = reconstruct_volume(&sum, &state).unwrap().0;
        let scale = xs.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..xs.values.len() {
            assert!((xs.values[i] - 2.0 * xa.values[i] - xb.values[i]).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn adjoint_of_the_projection_map() {
        let state = tiny_state(4);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut w = state.effective_weights().unwrap();
        w.values = random_vec(w.values.len(), &mut rng);
        for _ in 0..5 {
            let p = random_stack(&state, &mut rng);
            let g = Volume::from_values(&state.volume_grid, random_vec(state.volume_grid.len(), &mut rng)).unwrap();
            let cache = filter_activations(&p, &state).unwrap();
            let x = reconstruct_from_cache(&cache, &w, &state).unwrap();
            let pt = reconstruct_adjoint(&g, &w, &state).unwrap();
            let l = dot_slices(&x.values, &g.values);
            let r = dot_slices(&p.values, &pt.values);
            assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()), "{l} vs {r}");
        }
        assert!(reconstruct_adjoint(&Volume::zeros(&tiny_state(4).volume_grid), &w, &tiny_state(5)).is_err());
    }

    #[test]
    fn gradient_is_the_adjoint_of_the_weight_map() {
        // ⟨x(δw), g⟩ = ⟨δw, grad(g)⟩ since x is linear in w_red.
        let state = tiny_state(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_stack(&state, &mut rng);
        let cache = filter_activations(&p, &state).unwrap();
        for _ in 0..5 {
            let dw = RedundancyWeights {
                n_views: 4,
                grid: state.sino_grid.clone(),
                values: random_vec(cache.s3.len(), &mut rng),
            };
            let g = Volume::from_values(&state.volume_grid, random_vec(state.volume_grid.len(), &mut rng)).unwrap();
            let x = reconstruct_from_cache(&cache, &dw, &state).unwrap();
            let grad = grad_wred(&g, &cache, &state).unwrap();
            let l = dot_slices(&x.values, &g.values);
            let r = dot_slices(&dw.values, &grad.values);
            assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()), "{l} vs {r}");
        }
    }

    #[test]
    fn zero_and_scaled_volume_gradients() {
        let state = tiny_state(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cache = filter_activations(&random_stack(&state, &mut rng), &state).unwrap();
        let zero = Volume::zeros(&state.volume_grid);
        assert!(grad_wred(&zero, &cache, &state).unwrap().values.iter().all(|&v| v == 0.0));
        let g = Volume::from_values(&state.volume_grid, random_vec(state.volume_grid.len(), &mut rng)).unwrap();
        let g3 = Volume::from_values(&state.volume_grid, g.values.iter().map(|v| 3.0 * v).collect()).unwrap();
        let a = grad_wred(&g, &cache, &state).unwrap();
        let b = grad_wred(&g3, &cache, &state).unwrap();
        let scale = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((3.0 * x - y).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn mismatched_cache_is_invalid_state() {
        let state = tiny_state(4);
        let other = tiny_state(5);
        let p = ProjectionStack::zeros(5, &other.scan.detector);
        let cache = filter_activations(&p, &other).unwrap();
        let g = Volume::zeros(&state.volume_grid);
        assert!(matches!(grad_wred(&g, &cache, &state), Err(Error::InvalidState(_))));
    }

    #[test]
    fn compressed_and_uncompressed_agree_bitwise() {
        let mut state = tiny_state(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = state.bins_per_view();
        let c = CompressedRedundancy::new(
            DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(m, 3, |_, _| rng.random_range(-0.2..0.2)),
            DVector::from_fn(m, |_, _| rng.random_range(0.0..1.0)),
        )
        .unwrap();
        let p = random_stack(&state, &mut rng);
        state.set_mode(RedundancyMode::Compressed(c.clone())).unwrap();
        let (xc, _) = reconstruct_volume(&p, &state).unwrap();
        state
            .set_mode(RedundancyMode::Uncompressed(expand_compressed(&c, &state.sino_grid).unwrap()))
            .unwrap();
        let (xu, _) = reconstruct_volume(&p, &state).unwrap();
        assert!(xc.values.iter().zip(&xu.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn batches_match_single_samples_bitwise() {
        let state = tiny_state(5);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let caches: Vec<IntermediateCache> =
            (0..3).map(|_| filter_activations(&random_stack(&state, &mut rng), &state).unwrap()).collect();
        let refs: Vec<&IntermediateCache> = caches.iter().collect();
        let mut w = state.effective_weights().unwrap();
        w.values = random_vec(w.values.len(), &mut rng);
        let batch = reconstruct_batch(&refs, &w, &state).unwrap();
        let gs: Vec<Volume> = (0..3)
            .map(|_| Volume::from_values(&state.volume_grid, random_vec(state.volume_grid.len(), &mut rng)).unwrap())
            .collect();
        let mut single_grad = vec![0.0; w.values.len()];
        for (c, cache) in caches.iter().enumerate() {
            let x = reconstruct_from_cache(cache, &w, &state).unwrap();
            assert!(x.values.iter().zip(&batch[c].values).all(|(a, b)| a.to_bits() == b.to_bits()));
            grad_wred_accumulate(&gs[c], cache, &state, &mut single_grad).unwrap();
        }
        let mut batch_grad = vec![0.0; w.values.len()];
        let g_refs: Vec<&Volume> = gs.iter().collect();
        grad_wred_batch(&g_refs, &refs, &state, &mut batch_grad).unwrap();
        assert!(single_grad.iter().zip(&batch_grad).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(reconstruct_batch(&[], &w, &state).unwrap().is_empty());
        assert!(grad_wred_batch(&g_refs[..1], &refs, &state, &mut batch_grad).is_err());
    }

    #[test]
    fn expansion_special_cases() {
        let grid = SinogramGrid::new(2, 3, 1.0).unwrap();
        let mean = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let c = CompressedRedundancy::new(DMatrix::zeros(3, 2), DMatrix::from_element(6, 2, 0.7), mean.clone()).unwrap();
        let w = expand_compressed(&c, &grid).unwrap();
        for v in 0..3 {
            assert_eq!(w.view(v), mean.as_slice());
        }
        let wp = DMatrix::from_fn(3, 6, |i, j| (i * 6 + j) as f64);
        let c = CompressedRedundancy::new(wp.clone(), DMatrix::identity(6, 6), DVector::zeros(6)).unwrap();
        let w = expand_compressed(&c, &grid).unwrap();
        assert_eq!(w.values, (0..18).map(|x| x as f64).collect::<Vec<_>>());
        assert!(expand_compressed(&c, &SinogramGrid::new(2, 4, 1.0).unwrap()).is_err());
    }

    #[test]
    fn pca_round_trip_of_analytic_weights() {
        let state = tiny_state(6);
        let w = analytic_redundancy_weights(&state.scan, &state.sino_grid);
        let x = DMatrix::from_row_slice(6, state.bins_per_view(), &w.values);
        let model = fit_pca(&x, 5).unwrap();
        let c = CompressedRedundancy::from_model(&model, &x).unwrap();
        let back = expand_compressed(&c, &state.sino_grid).unwrap();
        let err: f64 = back.values.iter().zip(&w.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let nrm: f64 = w.values.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err <= 1e-9 * nrm, "{err}");
    }

    #[test]
    fn compressed_gradient_chain_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, m, k) = (5, 12, 3);
        let mut r = |a, b| DMatrix::from_fn(a, b, |_, _| rng.random_range(-1.0..1.0));
        let c = CompressedRedundancy::new(r(n, k), r(m, k), DVector::zeros(m)).unwrap();
        let g = r(n, m);
        let (dwp, dv) = (r(n, k), r(m, k));
        let dmean = DVector::from_column_slice(r(m, 1).as_slice());
        let gr = grad_compressed(&g, &c).unwrap();
        // First-order change of W_red.
        let mut dw = &dwp * c.v_k.transpose() + &c.w_prime * dv.transpose();
        for mut row in dw.row_iter_mut() {
            row += dmean.transpose();
        }
        let lhs = gr.w_prime.dot(&dwp) + gr.v_k.dot(&dv) + gr.mean.dot(&dmean);
        let rhs = g.dot(&dw);
        assert!((lhs - rhs).abs() < 1e-12 * rhs.abs().max(1.0));
        let zero = grad_compressed(&DMatrix::zeros(n, m), &c).unwrap();
        assert!(zero.w_prime.iter().chain(zero.v_k.iter()).chain(zero.mean.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn sphere_reconstruction_has_the_right_polarity() {
        let t = crate::geometry::make_circular_trajectory(750.0, 48, 2.0 * std::f64::consts::PI).unwrap();
        let det = DetectorGeometry::new(40, 40, 4.0, 4.0, 1200.0).unwrap();
        let scan = ScanGeometry::new(t, det);
        let grid = SinogramGrid::covering(&scan.detector, 47, 57).unwrap();
        let vg = VolumeGrid::centered(16, 5.0).unwrap();
        let w = RedundancyWeights::constant(48, &grid, 0.5);
        let state = PipelineState::new(scan, grid, vg.clone(), RedundancyMode::Uncompressed(w)).unwrap();
        let phantom = make_phantom(&PhantomSpec::new(vec![Primitive::sphere([0.0; 3], 25.0, 1.0)]).unwrap(), &vg);
        let p = cone_beam_forward(&phantom, &state.scan).unwrap();
        let (x, _) = reconstruct_volume(&p, &state).unwrap();
        let center = x.values[vg.index(8, 8, 8)];
        let corner = x.values[vg.index(1, 1, 8)];
        assert!(center > 0.5 && center < 1.5, "center {center}");
        assert!(corner.abs() < 0.3, "corner {corner}");
    }
}
