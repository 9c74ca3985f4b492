use super::DetectorSinogram;
use crate::error::{invalid, Result};

/// Radial derivative of each sinogram row: central differences inside,
/// one-sided differences at the two boundary bins.
pub fn derivative_radial_into(sino: &[f64], n_mu: usize, n_s: usize, ds: f64, out: &mut [f64]) {
    debug_assert!(n_s >= 3);
    let c = 0.5 / ds;
    for j in 0..n_mu {
        let row = &sino[j * n_s..(j + 1) * n_s];
        let o = &mut out[j * n_s..(j + 1) * n_s];
        o[0] = (row[1] - row[0]) / ds;
        for k in 1..n_s - 1 {
            o[k] = (row[k + 1] - row[k - 1]) * c;
        }
        o[n_s - 1] = (row[n_s - 1] - row[n_s - 2]) / ds;
    }
}

/// Transpose of [`derivative_radial_into`]; overwrites `out`.
pub fn derivative_radial_adjoint_into(g: &[f64], n_mu: usize, n_s: usize, ds: f64, out: &mut [f64]) {
    debug_assert!(n_s >= 3);
    let c = 0.5 / ds;
    let e = 1.0 / ds;
    for j in 0..n_mu {
        let row = &g[j * n_s..(j + 1) * n_s];
        let o = &mut out[j * n_s..(j + 1) * n_s];
        o.iter_mut().for_each(|x| *x = 0.0);
        o[0] -= e * row[0];
        o[1] += e * row[0];
        for k in 1..n_s - 1 {
            o[k + 1] += c * row[k];
            o[k - 1] -= c * row[k];
        }
        o[n_s - 1] += e * row[n_s - 1];
        o[n_s - 2] -= e * row[n_s - 1];
    }
}

fn check(sino: &DetectorSinogram) -> Result<()> {
    if sino.grid.n_s < 3 {
        return invalid(format!("radial derivative needs n_s ≥ 3, got {}", sino.grid.n_s));
    }
    Ok(())
}

pub fn derivative_radial(sino: &DetectorSinogram) -> Result<DetectorSinogram> {
    check(sino)?;
    let g = &sino.grid;
    let mut out = DetectorSinogram::zeros(g);
    derivative_radial_into(&sino.values, g.n_mu, g.n_s, g.ds, &mut out.values);
    Ok(out)
}

pub fn derivative_radial_adjoint(sino: &DetectorSinogram) -> Result<DetectorSinogram> {
    check(sino)?;
    let g = &sino.grid;
    let mut out = DetectorSinogram::zeros(g);
    derivative_radial_adjoint_into(&sino.values, g.n_mu, g.n_s, g.ds, &mut out.values);
    Ok(out)
}
