//! Smooth dyadic cutoffs and the Littlewood-Paley projectors built from them.

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::grid::{ComplexField, VectorField3};
use crate::spectral::Spectral;

const PLATEAU: f64 = 5.0 / 4.0;
const SUPPORT: f64 = 8.0 / 5.0;

fn g_exp(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 for `t <= 0`, 1 for `t >= 1`.
fn smooth_step(t: f64) -> f64 {
    let a = g_exp(t);
    let b = g_exp(1.0 - t);
    a / (a + b)
}

/// Even bump equal to 1 on `|mu| <= 5/4` and vanishing for `|mu| >= 8/5`.
pub fn eta0(mu: f64) -> f64 {
    let m = mu.abs();
    if m <= PLATEAU {
        1.0
    } else if m >= SUPPORT {
        0.0
    } else {
        smooth_step((SUPPORT - m) / (SUPPORT - PLATEAU))
    }
}

/// Cutoff of the annulus `|mu| ~ 2^k`.
pub fn chi_k(mu: f64, k: i32) -> f64 {
    eta0(mu / 2f64.powi(k)) - eta0(mu / 2f64.powi(k - 1))
}

/// Low-frequency cutoff `eta0(mu / 2^k)`.
pub fn chi_le(mu: f64, k: i32) -> f64 {
    eta0(mu / 2f64.powi(k))
}

fn check_unit(e: &[f64]) -> Result<[f64; 3]> {
    let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 || e.len() > 3 {
        return Err(LabError::InvalidDirection { norm });
    }
    let mut out = [0.0; 3];
    out[..e.len()].copy_from_slice(e);
    Ok(out)
}

fn radius(k: [f64; 3]) -> f64 {
    (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt()
}

/// Fourier multiplier of `P_k` on the grid of `sp`.
pub fn dyadic_multiplier(sp: &Spectral, k: i32) -> Vec<f64> {
    (0..sp.grid.len()).map(|i| chi_k(radius(sp.wavevector(i)), k)).collect()
}

/// `P_k`: Fourier multiplier `xi -> chi_k(|xi|)`.
pub fn project_dyadic(sp: &Spectral, f: &ComplexField, k: i32) -> Result<ComplexField> {
    sp.grid.window().check(k)?;
    let m = dyadic_multiplier(sp, k);
    Ok(sp.apply(f, |i| Complex64::new(m[i], 0.0)))
}

/// `P_k` applied componentwise to a vector field.
pub fn project_dyadic_vec(sp: &Spectral, f: &VectorField3, k: i32) -> Result<VectorField3> {
    sp.grid.window().check(k)?;
    let m = dyadic_multiplier(sp, k);
    let c = &f.comps;
    let mut out = sp.apply_real(&[&c[0], &c[1], &c[2]], |i| Complex64::new(m[i], 0.0)).into_iter();
    Ok(VectorField3 {
        grid: f.grid,
        comps: [out.next().unwrap(), out.next().unwrap(), out.next().unwrap()],
    })
}

/// Fourier multiplier of `P_{k,e}`.
pub fn directional_multiplier(sp: &Spectral, k: i32, e: &[f64]) -> Result<Vec<f64>> {
    let e = check_unit(e)?;
    Ok((0..sp.grid.len())
        .map(|i| {
            let xi = sp.wavevector(i);
            chi_k(xi[0] * e[0] + xi[1] * e[1] + xi[2] * e[2], k)
        })
        .collect())
}

/// `P_{k,e}`: Fourier multiplier `xi -> chi_k(xi . e)`.
pub fn project_directional(sp: &Spectral, f: &ComplexField, k: i32, e: &[f64]) -> Result<ComplexField> {
    let m = directional_multiplier(sp, k, e)?;
    Ok(sp.apply(f, |i| Complex64::new(m[i], 0.0)))
}
