//! Complex fields sampled on grid x uniform time nodes, and the Galilean boost.

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::grid::{ComplexField, GridSpec};
use crate::spectral::Spectral;

/// A complex field on `grid x {t_j}` with uniformly spaced `t_j` in `[-T, T]`
/// (or any uniform interval; `times` is authoritative).
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub slices: Vec<Vec<Complex64>>,
}

impl SpaceTimeField {
    pub fn new(grid: GridSpec, times: Vec<f64>, slices: Vec<Vec<Complex64>>) -> Result<Self> {
        if times.len() < 9 {
            return Err(LabError::InsufficientData(format!(
                "space-time fields need at least 9 time nodes, got {}",
                times.len()
            )));
        }
        if times.len() != slices.len() {
            return Err(LabError::ShapeMismatch("time nodes vs slices".into()));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0)) {
            return Err(LabError::InvalidGrid("time nodes must be uniform and increasing".into()));
        }
        for s in &slices {
            if s.len() != grid.len() {
                return Err(LabError::ShapeMismatch("slice length".into()));
            }
            if s.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(LabError::Constraint("non-finite space-time sample".into()));
            }
        }
        Ok(Self { grid, times, slices })
    }

    /// `n_t` uniform nodes on `[-half_width, half_width]`.
    pub fn symmetric_times(half_width: f64, n_t: usize) -> Vec<f64> {
        (0..n_t)
            .map(|j| -half_width + 2.0 * half_width * j as f64 / (n_t - 1) as f64)
            .collect()
    }

    pub fn from_fn(grid: GridSpec, times: Vec<f64>, f: impl Fn([f64; 3], f64) -> Complex64) -> Result<Self> {
        let slices = times
            .iter()
            .map(|&t| (0..grid.len()).map(|i| f(grid.position(i), t)).collect())
            .collect();
        Self::new(grid, times, slices)
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn n_t(&self) -> usize {
        self.times.len()
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.times[self.times.len() - 1] - self.times[0])
    }

    /// Trapezoid weights in time.
    pub fn time_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        let n = self.times.len();
        (0..n).map(|j| if j == 0 || j == n - 1 { 0.5 * dt } else { dt }).collect()
    }

    pub fn slice(&self, j: usize) -> ComplexField {
        ComplexField { grid: self.grid, data: self.slices[j].clone() }
    }

    /// Pointwise map over slices.
    pub fn map_slices(&self, f: impl Fn(usize, &[Complex64]) -> Vec<Complex64>) -> Self {
        Self {
            grid: self.grid,
            times: self.times.clone(),
            slices: self.slices.iter().enumerate().map(|(j, s)| f(j, s)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map_slices(|_, s| s.iter().map(|z| z * c).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        self.map_slices(|j, s| s.iter().zip(&other.slices[j]).map(|(a, b)| a + b).collect())
    }

    /// Restricts to the time nodes `j` with `keep(j)`; others set to zero.
    pub fn mask_times(&self, keep: impl Fn(usize) -> bool) -> Self {
        self.map_slices(|j, s| if keep(j) { s.to_vec() } else { vec![Complex64::new(0.0, 0.0); s.len()] })
    }

    /// Space-time `L^2` norm with trapezoid time quadrature.
    pub fn norm_l2(&self) -> f64 {
        let dv = self.grid.cell_volume();
        let w = self.time_weights();
        self.slices
            .iter()
            .zip(&w)
            .map(|(s, wt)| wt * dv * s.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Mass fraction outside the annulus `I_k = {2^{k-1} <= |xi| <= 2^{k+1}}`.
    pub fn band_leakage(&self, sp: &Spectral, k: i32) -> f64 {
        let lo = 2f64.powi(k - 1);
        let hi = 2f64.powi(k + 1);
        let mut outside = 0.0;
        let mut total = 0.0;
        for s in &self.slices {
            let mut h = s.clone();
            sp.forward(&mut h);
            for (i, z) in h.iter().enumerate() {
                let r = sp.ksq()[i].sqrt();
                let m = z.norm_sqr();
                total += m;
                if r < lo * (1.0 - 1e-12) || r > hi * (1.0 + 1e-12) {
                    outside += m;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            outside / total
        }
    }

    pub fn check_band(&self, sp: &Spectral, k: i32, tolerance: f64) -> Result<()> {
        let fraction = self.band_leakage(sp, k);
        if fraction > tolerance {
            Err(LabError::BandLeakage { k, fraction })
        } else {
            Ok(())
        }
    }
}

/// Galilean boost `T_w(u)(x,t) = e^{-i x.w/2} e^{-i t |w|^2/4} u(x + t w, t)`, with the
/// spatial shift done by Fourier phases.
pub fn galilean_transform(sp: &Spectral, u: &SpaceTimeField, w: [f64; 3]) -> SpaceTimeField {
    let grid = u.grid;
    let w2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    if w2 == 0.0 {
        return u.clone();
    }
    let phase_x: Vec<Complex64> = (0..grid.len())
        .map(|i| {
            let x = grid.position(i);
            Complex64::from_polar(1.0, -0.5 * (x[0] * w[0] + x[1] * w[1] + x[2] * w[2]))
        })
        .collect();
    u.map_slices(|j, s| {
        let t = u.times[j];
        let f = ComplexField { grid, data: s.to_vec() };
        let shifted = sp.translate(&f, [t * w[0], t * w[1], t * w[2]]);
        let pt = Complex64::from_polar(1.0, -0.25 * t * w2);
        shifted.data.iter().zip(&phase_x).map(|(z, p)| z * p * pt).collect()
    })
}

/// Time derivative at interior node `j` by the fourth-order central stencil.
pub fn time_derivative4(u: &SpaceTimeField, j: usize) -> Result<Vec<Complex64>> {
    if j < 2 || j + 2 >= u.n_t() {
        return Err(LabError::InsufficientData("fourth-order stencil needs two neighbours".into()));
    }
    let h = u.dt();
    let s = &u.slices;
    Ok((0..u.grid.len())
        .map(|i| (s[j - 2][i] - 8.0 * s[j - 1][i] + 8.0 * s[j + 1][i] - s[j + 2][i]) / (12.0 * h))
        .collect())
}

/// Pointwise residual `(i d_t + Delta) u` at interior node `j`.
pub fn schrodinger_residual(sp: &Spectral, u: &SpaceTimeField, j: usize) -> Result<ComplexField> {
    let dt = time_derivative4(u, j)?;
    let lap = sp.laplacian(&u.slice(j));
    let i = Complex64::new(0.0, 1.0);
    Ok(ComplexField {
        grid: u.grid,
        data: dt.iter().zip(&lap.data).map(|(a, b)| i * a + b).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn setup() -> (GridSpec, Spectral) {
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        (g, Spectral::new(g))
    }

    fn bump(g: GridSpec) -> SpaceTimeField {
        SpaceTimeField::from_fn(g, SpaceTimeField::symmetric_times(0.2, 9), |x, t| {
            Complex64::new((0.5 * x[0].cos() + 0.3 * (x[1] + t).sin()).exp(), 0.1 * t)
        })
        .unwrap()
    }

    #[test]
    fn rejects_short_time_axis() {
        let (g, _) = setup();
        let times = SpaceTimeField::symmetric_times(1.0, 5);
        assert!(SpaceTimeField::from_fn(g, times, |_, _| Complex64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn zero_boost_is_identity() {
        let (g, sp) = setup();
        let u = bump(g);
        assert_eq!(galilean_transform(&sp, &u, [0.0; 3]), u);
    }

    #[test]
    fn boost_preserves_slice_mass() {
        let (g, sp) = setup();
        let u = bump(g);
        let v = galilean_transform(&sp, &u, [1.3, -0.4, 0.0]);
        for j in 0..u.n_t() {
            let a = u.slice(j).norm_l2();
            let b = v.slice(j).norm_l2();
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn boost_group_law() {
        let (g, sp) = setup();
        let u = bump(g);
        let w1 = [2.0, 0.0, 0.0];
        let w2 = [-4.0, 2.0, 0.0];
        let a = galilean_transform(&sp, &galilean_transform(&sp, &u, w2), w1);
        let b = galilean_transform(&sp, &u, [-2.0, 2.0, 0.0]);
        for j in 0..u.n_t() {
            for i in 0..g.len() {
                assert!((a.slices[j][i] - b.slices[j][i]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn boosted_plane_wave_solves_free_equation() {
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let xi = [3.0, -1.0, 0.0];
        let xi2 = xi[0] * xi[0] + xi[1] * xi[1];
        let times = SpaceTimeField::symmetric_times(0.01, 65);
        let u = SpaceTimeField::from_fn(g, times, |x, t| {
            Complex64::from_polar(1.0, xi[0] * x[0] + xi[1] * x[1] - xi2 * t)
        })
        .unwrap();
        // w/2 on the lattice keeps the output periodic
        let w = [2.0, 4.0, 0.0];
        let v = galilean_transform(&sp, &u, w);
        for j in 2..v.n_t() - 2 {
            let r = schrodinger_residual(&sp, &v, j).unwrap();
            assert!(r.max_abs() < 1e-8, "residual {}", r.max_abs());
        }
    }
}
