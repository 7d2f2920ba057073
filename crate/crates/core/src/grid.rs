//! Periodic grids and the field containers that live on them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{LabError, Result};

/// A periodic box `[-L/2, L/2)^d` sampled with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub n: usize,
    pub box_length: f64,
    pub dt_hint: f64,
}

impl GridSpec {
    /// Builds a grid with the default diffusive time-step hint `0.25 (L / (pi n))^2`.
    pub fn new(d: usize, n: usize, box_length: f64) -> Result<Self> {
        let h = box_length / (PI * n as f64);
        Self::with_dt_hint(d, n, box_length, 0.25 * h * h)
    }

    pub fn with_dt_hint(d: usize, n: usize, box_length: f64, dt_hint: f64) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(LabError::InvalidGrid(format!("dimension {d} not in {{2,3}}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(LabError::InvalidGrid(format!(
                "n = {n} must be a power of two and at least 8"
            )));
        }
        if !(box_length > 0.0) || !box_length.is_finite() {
            return Err(LabError::InvalidGrid(format!("box length {box_length} must be positive")));
        }
        if !(dt_hint > 0.0) {
            return Err(LabError::InvalidGrid(format!("dt hint {dt_hint} must be positive")));
        }
        Ok(Self { d, n, box_length, dt_hint })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.box_length / self.n as f64
    }

    /// Volume element of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    pub fn volume(&self) -> f64 {
        self.box_length.powi(self.d as i32)
    }

    /// Physical coordinate of index `j` along any axis.
    pub fn coord(&self, j: usize) -> f64 {
        -0.5 * self.box_length + j as f64 * self.dx()
    }

    /// Angular wavenumber of FFT index `j` (with `n/2` mapped to the negative Nyquist).
    pub fn wavenumber(&self, j: usize) -> f64 {
        let n = self.n as i64;
        let j = j as i64;
        let m = if j < n / 2 { j } else { j - n };
        2.0 * PI * m as f64 / self.box_length
    }

    /// Largest resolvable wavenumber along one axis.
    pub fn nyquist(&self) -> f64 {
        PI * self.n as f64 / self.box_length
    }

    /// Multi-index of flat index `idx` (row-major, axis 0 slowest).
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        match self.d {
            2 => [idx / n, idx % n, 0],
            _ => [idx / (n * n), (idx / n) % n, idx % n],
        }
    }

    /// Position of grid point `idx`.
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let m = self.unravel(idx);
        let mut x = [0.0; 3];
        for a in 0..self.d {
            x[a] = self.coord(m[a]);
        }
        x
    }

    /// Wave vector of Fourier index `idx`.
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let m = self.unravel(idx);
        let mut k = [0.0; 3];
        for a in 0..self.d {
            k[a] = self.wavenumber(m[a]);
        }
        k
    }

    pub fn window(&self) -> DyadicWindow {
        DyadicWindow::for_grid(self)
    }

    /// Same box with a different resolution.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.d, n, self.box_length)
    }
}

/// Range of dyadic indices `k` whose annuli are resolved on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicWindow {
    pub k_min: i32,
    pub k_max: i32,
}

impl DyadicWindow {
    pub fn for_grid(grid: &GridSpec) -> Self {
        let lowest = 2.0 * PI / grid.box_length;
        let highest = 0.5 * grid.nyquist();
        let k_min = lowest.log2().ceil() as i32;
        let k_max = highest.log2().floor() as i32;
        Self { k_min, k_max }
    }

    pub fn contains(&self, k: i32) -> bool {
        (self.k_min..=self.k_max).contains(&k)
    }

    pub fn check(&self, k: i32) -> Result<()> {
        if self.contains(k) {
            Ok(())
        } else {
            Err(LabError::BandOutOfRange { k, k_min: self.k_min, k_max: self.k_max })
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = i32> {
        self.k_min..=self.k_max
    }
}

fn check_len(grid: &GridSpec, len: usize) -> Result<()> {
    if grid.len() != len {
        return Err(LabError::ShapeMismatch(format!(
            "{} values on a grid with {} points",
            len,
            grid.len()
        )));
    }
    Ok(())
}

/// Real scalar field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

impl RealField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, data: vec![0.0; grid.len()] }
    }

    pub fn from_vec(grid: GridSpec, data: Vec<f64>) -> Result<Self> {
        check_len(&grid, data.len())?;
        Ok(Self { grid, data })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        Self { grid, data }
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField {
            grid: self.grid,
            data: self.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }

    pub fn norm_l2(&self) -> f64 {
        (self.data.iter().map(|x| x * x).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Complex scalar field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: GridSpec,
    pub data: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, data: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_vec(grid: GridSpec, data: Vec<Complex64>) -> Result<Self> {
        check_len(&grid, data.len())?;
        Ok(Self { grid, data })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> Complex64) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        Self { grid, data }
    }

    /// Plane wave `e^{i xi . x}`; `xi` should lie on the Fourier lattice.
    pub fn plane_wave(grid: GridSpec, xi: [f64; 3]) -> Self {
        Self::from_fn(grid, |x| {
            let phase = xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2];
            Complex64::from_polar(1.0, phase)
        })
    }

    pub fn re(&self) -> RealField {
        RealField { grid: self.grid, data: self.data.iter().map(|z| z.re).collect() }
    }

    pub fn im(&self) -> RealField {
        RealField { grid: self.grid, data: self.data.iter().map(|z| z.im).collect() }
    }

    pub fn norm_l2(&self) -> f64 {
        (self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|z| z * c).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// R^3-valued field stored component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField3 {
    pub grid: GridSpec,
    pub comps: [Vec<f64>; 3],
}

impl VectorField3 {
    pub fn zeros(grid: GridSpec) -> Self {
        let z = vec![0.0; grid.len()];
        Self { grid, comps: [z.clone(), z.clone(), z] }
    }

    pub fn constant(grid: GridSpec, v: [f64; 3]) -> Self {
        let len = grid.len();
        Self { grid, comps: [vec![v[0]; len], vec![v[1]; len], vec![v[2]; len]] }
    }

    pub fn from_comps(grid: GridSpec, comps: [Vec<f64>; 3]) -> Result<Self> {
        for c in &comps {
            check_len(&grid, c.len())?;
        }
        Ok(Self { grid, comps })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(grid);
        for i in 0..grid.len() {
            out.set(i, f(grid.position(i)));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps[0].is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> [f64; 3] {
        [self.comps[0][i], self.comps[1][i], self.comps[2][i]]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: [f64; 3]) {
        self.comps[0][i] = v[0];
        self.comps[1][i] = v[1];
        self.comps[2][i] = v[2];
    }

    /// Pointwise map producing a new vector field.
    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(self.grid);
        for i in 0..self.len() {
            out.set(i, f(self.get(i)));
        }
        out
    }

    /// Pointwise combination of two vector fields.
    pub fn zip_map(&self, other: &Self, f: impl Fn([f64; 3], [f64; 3]) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(self.grid);
        for i in 0..self.len() {
            out.set(i, f(self.get(i), other.get(i)));
        }
        out
    }

    /// Pointwise scalar product.
    pub fn dot(&self, other: &Self) -> RealField {
        let data = (0..self.len()).map(|i| dot3(self.get(i), other.get(i))).collect();
        RealField { grid: self.grid, data }
    }

    pub fn cross(&self, other: &Self) -> Self {
        self.zip_map(other, cross3)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|a| [c * a[0], c * a[1], c * a[2]])
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]])
    }

    pub fn norm_l2(&self) -> f64 {
        let s: f64 = self.comps.iter().flat_map(|c| c.iter()).map(|x| x * x).sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.len()).fold(0.0, |m, i| m.max(norm3(self.get(i))))
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|c| c.iter().all(|x| x.is_finite()))
    }

    /// Largest deviation of the pointwise length from one.
    pub fn sphere_drift(&self) -> f64 {
        (0..self.len()).fold(0.0, |m, i| m.max((norm3(self.get(i)) - 1.0).abs()))
    }

    pub fn normalized(&self) -> Self {
        self.map(normalize3)
    }
}

#[inline]
pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn normalize3(a: [f64; 3]) -> [f64; 3] {
    let r = norm3(a);
    [a[0] / r, a[1] / r, a[2] / r]
}
