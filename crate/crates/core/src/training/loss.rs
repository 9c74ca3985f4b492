//! Total loss `mean((x − t)²) + λ·(1 − SSIM(x, t))`.

use serde::{Deserialize, Serialize};

use super::ssim::{ssim, SsimConfig};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_ssim: f64,
    pub ssim: SsimConfig,
}

impl LossConfig {
    pub fn new(lambda_ssim: f64, window: usize, dynamic_range: f64) -> Result<Self> {
        let cfg = Self {
            lambda_ssim,
            ssim: SsimConfig::new(window, dynamic_range)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ssim >= 0.0 && self.lambda_ssim.is_finite()) {
            return invalid(format!("lambda_ssim must be non-negative, got {}", self.lambda_ssim));
        }
        self.ssim.validate()
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::new(0.1, 7, 1.0).expect("default loss config is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub mse: f64,
    pub ssim: f64,
}

/// Loss and its gradient with respect to `x`.
pub fn loss_total(x: &[f64], target: &[f64], dims: [usize; 3], cfg: &LossConfig) -> Result<(LossValue, Vec<f64>)> {
    cfg.validate()?;
    let (s, ds) = ssim(x, target, dims, &cfg.ssim)?;
    let n = x.len() as f64;
    let mse = x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let grad = x
        .iter()
        .zip(target)
        .zip(&ds)
        .map(|((a, b), d)| 2.0 * (a - b) / n - cfg.lambda_ssim * d)
        .collect();
    Ok((
        LossValue {
            total: mse + cfg.lambda_ssim * (1.0 - s),
            mse,
            ssim: s,
        },
        grad,
    ))
}
