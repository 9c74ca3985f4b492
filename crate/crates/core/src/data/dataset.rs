//! Simulated datasets: random phantoms, cone-beam projections and a
//! train/validation split, all derived from one seed.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::phantom::{make_phantom, random_phantom_spec, PhantomSpec};
use super::tensor::{load_tensor, save_tensor, write_atomic, Dtype, Tensor};
use crate::error::{invalid, Error, Result};
use crate::geometry::{ScanGeometry, VolumeGrid};
use crate::operators::{cone_beam_forward, ProjectionStack, Volume};

/// Transmission noise: `counts ~ Poisson(I0·exp(−μ·p))`, `p′ = −ln(counts/I0)/μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonNoise {
    pub incident_photons: f64,
    /// Attenuation per unit line integral.
    pub attenuation: f64,
}

impl PoissonNoise {
    pub fn validate(&self) -> Result<()> {
        if !(self.incident_photons > 0.0 && self.attenuation > 0.0) {
            return invalid("noise photons and attenuation must be positive");
        }
        Ok(())
    }

    pub fn apply(&self, values: &mut [f64], rng: &mut ChaCha8Rng) {
        for p in values {
            let expected = self.incident_photons * (-self.attenuation * *p).exp();
            let counts = match Poisson::new(expected) {
                Ok(d) => d.sample(rng),
                Err(_) => 0.0,
            };
            // Half a photon stands in for zero counts.
            *p = -(counts.max(0.5) / self.incident_photons).ln() / self.attenuation;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scan: ScanGeometry,
    pub grid: VolumeGrid,
    pub seed: u64,
    pub specs: Vec<PhantomSpec>,
    pub volumes: Vec<Volume>,
    pub projections: Vec<ProjectionStack>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}

/// Shuffled split with `round(n·ratio)` training samples, clamped so both
/// sides are non-empty. Index lists are returned sorted.
pub fn split_indices(n: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return invalid("a split needs at least two samples");
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return invalid(format!("split ratio must be in (0, 1), got {ratio}"));
    }
    let n_train = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn build_dataset(
    n_samples: usize,
    split_ratio: f64,
    scan: &ScanGeometry,
    grid: &VolumeGrid,
    seed: u64,
    noise: Option<PoissonNoise>,
) -> Result<Dataset> {
    if let Some(n) = &noise {
        n.validate()?;
    }
    scan.check_field_of_view(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, val) = split_indices(n_samples, split_ratio, &mut rng)?;
    let specs: Vec<PhantomSpec> = (0..n_samples)
        .map(|i| {
            let mut spec = random_phantom_spec(&mut rng, grid);
            spec.seed = Some(seed.wrapping_add(i as u64));
            spec
        })
        .collect();
    let volumes: Vec<Volume> = specs.par_iter().map(|s| make_phantom(s, grid)).collect();
    let projections = volumes
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let mut p = cone_beam_forward(v, scan)?;
            if let Some(noise) = &noise {
                let mut nrng = ChaCha8Rng::seed_from_u64(seed);
                nrng.set_stream(i as u64 + 1);
                noise.apply(&mut p.values, &mut nrng);
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        scan: scan.clone(),
        grid: grid.clone(),
        seed,
        specs,
        volumes,
        projections,
        train,
        val,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub volume: String,
    pub projections: String,
    pub spec: PhantomSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub scan: ScanGeometry,
    pub grid: VolumeGrid,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub samples: Vec<SampleEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn save_dataset(dir: &Path, ds: &Dataset, dtype: Dtype) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut samples = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let volume = format!("sample_{i:03}_volume");
        let projections = format!("sample_{i:03}_projections");
        let g = &ds.grid;
        save_tensor(&dir.join(&volume), &Tensor::new(vec![g.nz, g.ny, g.nx], ds.volumes[i].values.clone())?, dtype, "volume")?;
        let p = &ds.projections[i];
        save_tensor(
            &dir.join(&projections),
            &Tensor::new(vec![p.n_views, p.n_v, p.n_u], p.values.clone())?,
            dtype,
            "projections",
        )?;
        samples.push(SampleEntry {
            volume,
            projections,
            spec: ds.specs[i].clone(),
        });
    }
    let manifest = Manifest {
        seed: ds.seed,
        scan: ds.scan.clone(),
        grid: ds.grid.clone(),
        train: ds.train.clone(),
        val: ds.val.clone(),
        samples,
    };
    write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let n = m.samples.len();
    let mut seen = vec![false; n];
    for &i in m.train.iter().chain(&m.val) {
        if i >= n || seen[i] {
            return Err(Error::Format("manifest split is not a partition of the samples".into()));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Format("manifest split does not cover every sample".into()));
    }
    let det = &m.scan.detector;
    let mut volumes = Vec::with_capacity(n);
    let mut projections = Vec::with_capacity(n);
    for s in &m.samples {
        let (v, _) = load_tensor(&dir.join(&s.volume))?;
        if v.shape != [m.grid.nz, m.grid.ny, m.grid.nx] {
            return Err(Error::Format(format!("{}: shape {:?} does not match the grid", s.volume, v.shape)));
        }
        volumes.push(Volume::from_values(&m.grid, v.values)?);
        let (p, _) = load_tensor(&dir.join(&s.projections))?;
        if p.shape != [m.scan.n_views(), det.n_v, det.n_u] {
            return Err(Error::Format(format!("{}: shape {:?} does not match the scan", s.projections, p.shape)));
        }
        projections.push(ProjectionStack {
            n_views: p.shape[0],
            n_v: p.shape[1],
            n_u: p.shape[2],
            values: p.values,
        });
    }
    Ok(Dataset {
        scan: m.scan,
        grid: m.grid,
        seed: m.seed,
        specs: m.samples.into_iter().map(|s| s.spec).collect(),
        volumes,
        projections,
        train: m.train,
        val: m.val,
    })
}
