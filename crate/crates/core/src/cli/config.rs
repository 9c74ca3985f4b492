//! Flat `key = value` run configuration. `#` starts a comment; unknown or
//! repeated keys are errors.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::data::dataset::PoissonNoise;
use crate::data::tensor::Dtype;
use crate::error::{invalid, Error, Result};
use crate::geometry::{make_circular_trajectory, make_sinusoidal_trajectory, DetectorGeometry, ScanGeometry, VolumeGrid};
use crate::operators::SinogramGrid;
use crate::training::{InitStrategy, LossConfig, OptimizerKind, TrainConfig, TrainMode};

/// The bundled desk-scale configuration.
pub const DESK_CONFIG: &str = include_str!("../../../../configs/desk.cfg");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Circle,
    Sinusoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub trajectory: TrajectoryKind,
    pub radius: f64,
    pub amplitude: f64,
    pub periods: u32,
    pub arc_deg: f64,
    pub views: usize,
    pub det_nu: usize,
    pub det_nv: usize,
    pub det_du: f64,
    pub det_dv: f64,
    pub sdd: f64,
    pub n_mu: usize,
    pub n_s: usize,
    pub vol_n: usize,
    pub voxel: f64,
    pub samples: usize,
    pub split: f64,
    /// Incident photons per ray; 0 disables noise.
    pub noise_photons: f64,
    pub noise_attenuation: f64,
    pub epochs: usize,
    pub optimizer: OptimizerChoice,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_lr: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub pct_up: f64,
    pub lambda_ssim: f64,
    pub ssim_window: usize,
    pub dynamic_range: f64,
    /// 0 trains the full redundancy layer.
    pub k: usize,
    pub init: InitStrategy,
    pub checkpoint_every: usize,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub stop_on_plateau: bool,
    pub seed: u64,
    pub precision: Dtype,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryKind::Sinusoid,
            radius: 750.0,
            amplitude: 50.0,
            periods: 2,
            arc_deg: 360.0,
            views: 60,
            det_nu: 64,
            det_nv: 50,
            det_du: 2.4,
            det_dv: 2.4,
            sdd: 1200.0,
            n_mu: 65,
            n_s: 161,
            vol_n: 32,
            voxel: 2.0,
            samples: 40,
            split: 0.8,
            noise_photons: 0.0,
            noise_attenuation: 0.02,
            epochs: 60,
            optimizer: OptimizerChoice::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_lr: 0.02,
            div_factor: 25.0,
            final_div_factor: 1e4,
            pct_up: 0.3,
            lambda_ssim: 0.1,
            ssim_window: 7,
            dynamic_range: 1.0,
            k: 0,
            init: InitStrategy::Analytic,
            checkpoint_every: 0,
            plateau_window: 20,
            plateau_tol: 1e-4,
            stop_on_plateau: false,
            seed: 0,
            precision: Dtype::Float64,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{key} = {value}: {e}")))
}

/// Splits config text into `(key, value)` pairs, rejecting malformed lines
/// and repeated keys.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return invalid(format!("line {}: expected 'key = value', got '{line}'", n + 1));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return invalid(format!("line {}: empty key or value", n + 1));
        }
        if pairs.iter().any(|(k, _)| k == key) {
            return invalid(format!("line {}: '{key}' is set twice", n + 1));
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn desk() -> Self {
        Self::from_text(DESK_CONFIG).expect("bundled config parses")
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "trajectory" => {
                self.trajectory = match v {
                    "circle" => TrajectoryKind::Circle,
                    "sinusoid" => TrajectoryKind::Sinusoid,
                    _ => return invalid(format!("trajectory must be circle or sinusoid, got '{v}'")),
                }
            }
            "radius" => self.radius = parse(key, v)?,
            "amplitude" => self.amplitude = parse(key, v)?,
            "periods" => self.periods = parse(key, v)?,
            "arc_deg" => self.arc_deg = parse(key, v)?,
            "views" => self.views = parse(key, v)?,
            "det_nu" => self.det_nu = parse(key, v)?,
            "det_nv" => self.det_nv = parse(key, v)?,
            "det_du" => self.det_du = parse(key, v)?,
            "det_dv" => self.det_dv = parse(key, v)?,
            "sdd" => self.sdd = parse(key, v)?,
            "n_mu" => self.n_mu = parse(key, v)?,
            "n_s" => self.n_s = parse(key, v)?,
            "vol_n" => self.vol_n = parse(key, v)?,
            "voxel" => self.voxel = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "split" => self.split = parse(key, v)?,
            "noise_photons" => self.noise_photons = parse(key, v)?,
            "noise_attenuation" => self.noise_attenuation = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => OptimizerChoice::Adam,
                    "sgd" => OptimizerChoice::Sgd,
                    _ => return invalid(format!("optimizer must be adam or sgd, got '{v}'")),
                }
            }
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "max_lr" => self.max_lr = parse(key, v)?,
            "div_factor" => self.div_factor = parse(key, v)?,
            "final_div_factor" => self.final_div_factor = parse(key, v)?,
            "pct_up" => self.pct_up = parse(key, v)?,
            "lambda_ssim" => self.lambda_ssim = parse(key, v)?,
            "ssim_window" => self.ssim_window = parse(key, v)?,
            "dynamic_range" => self.dynamic_range = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "init" => self.init = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "plateau_window" => self.plateau_window = parse(key, v)?,
            "plateau_tol" => self.plateau_tol = parse(key, v)?,
            "stop_on_plateau" => self.stop_on_plateau = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "precision" => self.precision = parse(key, v)?,
            _ => return invalid(format!("unknown config key '{key}'")),
        }
        Ok(())
    }

    /// Builds every derived object once so that a bad configuration fails
    /// before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let scan = self.scan()?;
        let grid = self.volume_grid()?;
        scan.check_field_of_view(&grid)?;
        self.sino_grid(&scan)?;
        if self.samples < 2 {
            return invalid("need at least two samples for a train/validation split");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return invalid(format!("split must lie in (0, 1), got {}", self.split));
        }
        self.noise()?;
        self.train_config()?.validate()
    }

    pub fn scan(&self) -> Result<ScanGeometry> {
        let trajectory = match self.trajectory {
            TrajectoryKind::Circle => make_circular_trajectory(self.radius, self.views, self.arc_deg * PI / 180.0)?,
            TrajectoryKind::Sinusoid => make_sinusoidal_trajectory(self.radius, self.amplitude, self.periods, self.views)?,
        };
        let det = DetectorGeometry::new(self.det_nu, self.det_nv, self.det_du, self.det_dv, self.sdd)?;
        Ok(ScanGeometry::new(trajectory, det))
    }

    pub fn volume_grid(&self) -> Result<VolumeGrid> {
        VolumeGrid::centered(self.vol_n, self.voxel)
    }

    pub fn sino_grid(&self, scan: &ScanGeometry) -> Result<SinogramGrid> {
        if self.n_s < 3 {
            return invalid("n_s must be at least 3");
        }
        SinogramGrid::covering(&scan.detector, self.n_mu, self.n_s)
    }

    pub fn noise(&self) -> Result<Option<PoissonNoise>> {
        if self.noise_photons == 0.0 {
            return Ok(None);
        }
        let n = PoissonNoise {
            incident_photons: self.noise_photons,
            attenuation: self.noise_attenuation,
        };
        n.validate()?;
        Ok(Some(n))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.optimizer {
            OptimizerChoice::Adam => OptimizerKind::Adam {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
        };
        Ok(TrainConfig {
            epochs: self.epochs,
            optimizer,
            max_lr: self.max_lr,
            div_factor: self.div_factor,
            final_div_factor: self.final_div_factor,
            pct_up: self.pct_up,
            loss: LossConfig::new(self.lambda_ssim, self.ssim_window, self.dynamic_range)?,
            seed: self.seed,
            mode: if self.k == 0 {
                TrainMode::Uncompressed
            } else {
                TrainMode::Compressed { k: self.k }
            },
            init: self.init,
            checkpoint_every: self.checkpoint_every,
            plateau_window: self.plateau_window,
            plateau_tol: self.plateau_tol,
            stop_on_plateau: self.stop_on_plateau,
            precision: self.precision,
        })
    }
}
