//! Image-quality metrics shared by training, evaluation and the PCA sweep.

use crate::error::{invalid, Result};

/// Upper bound reported for (near-)identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return invalid(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    if a.is_empty() {
        return invalid("metrics need at least one value");
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10·log10(peak²/mse)`, capped at [`PSNR_CAP_DB`] when `mse < peak²·1e-10`.
pub fn psnr_from_mse(mse: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return invalid(format!("PSNR peak must be positive, got {peak}"));
    }
    let p2 = peak * peak;
    if mse < p2 * 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (p2 / mse).log10())
}

pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    psnr_from_mse(mse(a, b)?, peak)
}

/// `max − min` of the reference, falling back to 1 for constant data.
pub fn data_range(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// Least-squares `α·x + β` matching `target`.
pub fn affine_fit(x: &[f64], target: &[f64]) -> Result<(f64, f64)> {
    check_pair(x, target)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxt = 0.0;
    for (a, b) in x.iter().zip(target) {
        sxx += (a - mx) * (a - mx);
        sxt += (a - mx) * (b - mt);
    }
    if sxx == 0.0 {
        return Ok((0.0, mt));
    }
    let alpha = sxt / sxx;
    Ok((alpha, mt - alpha * mx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs() {
        let a = [0.1, 0.5, 2.0];
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn constant_offset() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = a.map(|x| x + 0.25);
        assert!((mse(&a, &b).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn psnr_closed_forms() {
        let a = [0.0; 4];
        let b = [2.0; 4];
        assert_eq!(psnr(&a, &b, 2.0).unwrap(), 0.0);
        let m = 0.01;
        assert_eq!(psnr_from_mse(m, 1.0).unwrap(), 10.0 * (1.0 / m).log10());
        assert!(psnr_from_mse(1.0, 0.0).is_err());
    }

    #[test]
    fn mismatched_lengths_error() {
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn affine_fit_recovers_scale_and_offset() {
        let x = [1.0, 2.0, 5.0, -1.0];
        let t = x.map(|v| 3.0 * v - 0.5);
        let (a, b) = affine_fit(&x, &t).unwrap();
        assert!((a - 3.0).abs() < 1e-12 && (b + 0.5).abs() < 1e-12);
    }
}
