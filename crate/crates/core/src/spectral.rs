//! FFT plans and Fourier multipliers on the periodic box.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::grid::{ComplexField, GridSpec, RealField, VectorField3};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Cached FFT plans and wavenumber tables for one grid.
///
/// All methods take `&self` and allocate their own scratch, so one instance can be
/// shared between threads.
#[derive(Clone)]
pub struct Spectral {
    pub grid: GridSpec,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Per-axis wavenumbers, negative Nyquist included.
    k1: Vec<f64>,
    /// `|xi|^2` for every Fourier index.
    ksq: Vec<f64>,
    /// Two-thirds dealiasing mask.
    keep: Vec<bool>,
    /// `k_axis[a][idx]`: odd-derivative wavenumber along axis `a` at Fourier index `idx`.
    k_axis: Vec<Vec<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.n);
        let inv = planner.plan_fft_inverse(grid.n);
        let n = grid.n;
        let k1: Vec<f64> = (0..n).map(|j| grid.wavenumber(j)).collect();
        let mut k1_odd = k1.clone();
        k1_odd[n / 2] = 0.0;
        let cut = n / 3;
        let mut ksq = Vec::with_capacity(grid.len());
        let mut keep = Vec::with_capacity(grid.len());
        let mut k_axis = vec![Vec::with_capacity(grid.len()); grid.d];
        for idx in 0..grid.len() {
            let m = grid.unravel(idx);
            for (a, ka) in k_axis.iter_mut().enumerate() {
                ka.push(k1_odd[m[a]]);
            }
            let mut s = 0.0;
            let mut inside = true;
            for a in 0..grid.d {
                s += k1[m[a]] * k1[m[a]];
                let signed = if m[a] < n / 2 { m[a] } else { n - m[a] };
                inside &= signed <= cut;
            }
            ksq.push(s);
            keep.push(inside);
        }
        Self { grid, fwd, inv, k1, ksq, keep, k_axis }
    }

    pub fn ksq(&self) -> &[f64] {
        &self.ksq
    }

    pub fn k1(&self) -> &[f64] {
        &self.k1
    }

    /// Wavenumber along `axis` used by odd derivatives (Nyquist zeroed), per Fourier index.
    pub fn k_axis(&self, axis: usize) -> &[f64] {
        &self.k_axis[axis]
    }

    /// Wave vector of Fourier index `idx` (negative Nyquist convention).
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let m = self.grid.unravel(idx);
        let mut k = [0.0; 3];
        for a in 0..self.grid.d {
            k[a] = self.k1[m[a]];
        }
        k
    }

    /// Largest `|xi|^2` retained by the dealiasing mask.
    pub fn max_dealiased_ksq(&self) -> f64 {
        self.ksq
            .iter()
            .zip(&self.keep)
            .filter(|(_, &k)| k)
            .fold(0.0, |m, (&s, _)| m.max(s))
    }

    pub fn dealias_mask(&self) -> &[bool] {
        &self.keep
    }

    fn transform_axis(&self, data: &mut [Complex64], axis: usize, inverse: bool) {
        let n = self.grid.n;
        let d = self.grid.d;
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut scratch = vec![ZERO; plan.get_inplace_scratch_len()];
        let stride = n.pow((d - 1 - axis) as u32);
        if stride == 1 {
            plan.process_with_scratch(data, &mut scratch);
            return;
        }
        // gather blocks of adjacent lines into a padded buffer; the pitch avoids
        // cache-set aliasing when n is a large power of two
        const BLOCK: usize = 16;
        let block = stride.min(BLOCK);
        let pitch = n + 8;
        let outer = data.len() / (n * stride);
        let mut buf = vec![ZERO; block * pitch];
        for o in 0..outer {
            let base = o * n * stride;
            for i0 in (0..stride).step_by(block) {
                for j in 0..n {
                    let row = base + j * stride + i0;
                    for (b, v) in data[row..row + block].iter().enumerate() {
                        buf[b * pitch + j] = *v;
                    }
                }
                for b in 0..block {
                    plan.process_with_scratch(&mut buf[b * pitch..b * pitch + n], &mut scratch);
                }
                for j in 0..n {
                    let row = base + j * stride + i0;
                    for (b, v) in data[row..row + block].iter_mut().enumerate() {
                        *v = buf[b * pitch + j];
                    }
                }
            }
        }
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, data: &mut [Complex64]) {
        for axis in 0..self.grid.d {
            self.transform_axis(data, axis, false);
        }
    }

    /// In-place inverse transform, normalized so that `inverse(forward(f)) = f`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        for axis in 0..self.grid.d {
            self.transform_axis(data, axis, true);
        }
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    /// 1-D transform of every line along `axis`.
    pub fn forward_axis(&self, data: &mut [Complex64], axis: usize) {
        self.transform_axis(data, axis, false);
    }

    pub fn inverse_axis(&self, data: &mut [Complex64], axis: usize) {
        self.transform_axis(data, axis, true);
        let s = 1.0 / self.grid.n as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    pub fn fft(&self, f: &ComplexField) -> Vec<Complex64> {
        let mut d = f.data.clone();
        self.forward(&mut d);
        d
    }

    pub fn ifft(&self, mut hat: Vec<Complex64>) -> ComplexField {
        self.inverse(&mut hat);
        ComplexField { grid: self.grid, data: hat }
    }

    /// Applies the Fourier multiplier `m(idx)` to a complex field.
    pub fn apply(&self, f: &ComplexField, m: impl Fn(usize) -> Complex64) -> ComplexField {
        let mut hat = self.fft(f);
        for (i, v) in hat.iter_mut().enumerate() {
            *v *= m(i);
        }
        self.ifft(hat)
    }

    /// Applies a real-to-real multiplier (one with `m(-xi) = conj m(xi)`) to several real
    /// fields, packing two fields into each complex transform.
    pub fn apply_real(&self, inputs: &[&[f64]], m: impl Fn(usize) -> Complex64) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        for pair in inputs.chunks(2) {
            let mut buf: Vec<Complex64> = match pair {
                [a, b] => a.iter().zip(b.iter()).map(|(&x, &y)| Complex64::new(x, y)).collect(),
                [a] => a.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
                _ => unreachable!(),
            };
            self.forward(&mut buf);
            for (i, v) in buf.iter_mut().enumerate() {
                *v *= m(i);
            }
            self.inverse(&mut buf);
            out.push(buf.iter().map(|z| z.re).collect());
            if pair.len() == 2 {
                out.push(buf.iter().map(|z| z.im).collect());
            }
        }
        out
    }

    fn derivative_multiplier(&self, axis: usize) -> impl Fn(usize) -> Complex64 + '_ {
        let k = &self.k_axis[axis];
        move |i| Complex64::new(0.0, k[i])
    }

    pub fn derivative(&self, f: &ComplexField, axis: usize) -> ComplexField {
        self.apply(f, self.derivative_multiplier(axis))
    }

    pub fn laplacian(&self, f: &ComplexField) -> ComplexField {
        self.apply(f, |i| Complex64::new(-self.ksq[i], 0.0))
    }

    pub fn derivative_real(&self, f: &RealField, axis: usize) -> RealField {
        let data = self.apply_real(&[&f.data], self.derivative_multiplier(axis)).remove(0);
        RealField { grid: self.grid, data }
    }

    pub fn laplacian_real(&self, f: &RealField) -> RealField {
        let data = self.apply_real(&[&f.data], |i| Complex64::new(-self.ksq[i], 0.0)).remove(0);
        RealField { grid: self.grid, data }
    }

    /// All first partial derivatives of a complex field from one forward transform.
    pub fn gradient(&self, f: &ComplexField) -> Vec<ComplexField> {
        let hat = self.fft(f);
        (0..self.grid.d)
            .map(|axis| {
                let mut h = hat.clone();
                let mult = self.derivative_multiplier(axis);
                for (i, v) in h.iter_mut().enumerate() {
                    *v *= mult(i);
                }
                self.ifft(h)
            })
            .collect()
    }

    /// Several Hermitian multipliers applied to the same real fields, sharing the
    /// forward transforms. Returns `out[multiplier][field]`.
    pub fn apply_real_many(&self, inputs: &[&[f64]], mults: &[&dyn Fn(usize) -> Complex64]) -> Vec<Vec<Vec<f64>>> {
        let packed: Vec<Vec<Complex64>> = inputs
            .chunks(2)
            .map(|pair| {
                let mut buf: Vec<Complex64> = match pair {
                    [a, b] => a.iter().zip(b.iter()).map(|(&x, &y)| Complex64::new(x, y)).collect(),
                    [a] => a.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
                    _ => unreachable!(),
                };
                self.forward(&mut buf);
                buf
            })
            .collect();
        mults
            .iter()
            .map(|m| {
                let mut out = Vec::with_capacity(inputs.len());
                for (hat, pair) in packed.iter().zip(inputs.chunks(2)) {
                    let mut buf: Vec<Complex64> = hat.iter().enumerate().map(|(i, z)| z * m(i)).collect();
                    self.inverse(&mut buf);
                    out.push(buf.iter().map(|z| z.re).collect());
                    if pair.len() == 2 {
                        out.push(buf.iter().map(|z| z.im).collect());
                    }
                }
                out
            })
            .collect()
    }

    /// `[d_1 f, ..., d_d f]` for a vector field.
    pub fn vector_gradient(&self, f: &VectorField3) -> Vec<VectorField3> {
        let c = &f.comps;
        let ms: Vec<Box<dyn Fn(usize) -> Complex64 + '_>> =
            (0..self.grid.d).map(|a| Box::new(self.derivative_multiplier(a)) as Box<dyn Fn(usize) -> Complex64>).collect();
        let refs: Vec<&dyn Fn(usize) -> Complex64> = ms.iter().map(|b| b.as_ref()).collect();
        self.apply_real_many(&[&c[0], &c[1], &c[2]], &refs)
            .into_iter()
            .map(|out| {
                let mut it = out.into_iter();
                VectorField3 {
                    grid: self.grid,
                    comps: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
                }
            })
            .collect()
    }

    /// Gradient and Laplacian of a vector field from one set of forward transforms.
    pub fn vector_gradient_laplacian(&self, f: &VectorField3) -> (Vec<VectorField3>, VectorField3) {
        let c = &f.comps;
        let mut ms: Vec<Box<dyn Fn(usize) -> Complex64 + '_>> =
            (0..self.grid.d).map(|a| Box::new(self.derivative_multiplier(a)) as Box<dyn Fn(usize) -> Complex64>).collect();
        ms.push(Box::new(|i| Complex64::new(-self.ksq[i], 0.0)));
        let refs: Vec<&dyn Fn(usize) -> Complex64> = ms.iter().map(|b| b.as_ref()).collect();
        let mut fields: Vec<VectorField3> = self
            .apply_real_many(&[&c[0], &c[1], &c[2]], &refs)
            .into_iter()
            .map(|out| {
                let mut it = out.into_iter();
                VectorField3 {
                    grid: self.grid,
                    comps: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
                }
            })
            .collect();
        let lap = fields.pop().unwrap();
        (fields, lap)
    }

    pub fn vector_derivative(&self, f: &VectorField3, axis: usize) -> VectorField3 {
        let c = &f.comps;
        let out = self.apply_real(&[&c[0], &c[1], &c[2]], self.derivative_multiplier(axis));
        let mut it = out.into_iter();
        VectorField3 {
            grid: self.grid,
            comps: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        }
    }

    pub fn vector_laplacian(&self, f: &VectorField3) -> VectorField3 {
        let c = &f.comps;
        let out = self.apply_real(&[&c[0], &c[1], &c[2]], |i| Complex64::new(-self.ksq[i], 0.0));
        let mut it = out.into_iter();
        VectorField3 {
            grid: self.grid,
            comps: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        }
    }

    /// Two-thirds rule low-pass filter.
    pub fn vector_dealias(&self, f: &VectorField3) -> VectorField3 {
        let c = &f.comps;
        let one = Complex64::new(1.0, 0.0);
        let out = self.apply_real(&[&c[0], &c[1], &c[2]], |i| if self.keep[i] { one } else { ZERO });
        let mut it = out.into_iter();
        VectorField3 {
            grid: self.grid,
            comps: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        }
    }

    /// Heat semigroup `e^{s Delta}` applied componentwise.
    pub fn vector_heat(&self, f: &VectorField3, s: f64) -> VectorField3 {
        let c = &f.comps;
        let out = self.apply_real(&[&c[0], &c[1], &c[2]], |i| Complex64::new((-s * self.ksq[i]).exp(), 0.0));
        let mut it = out.into_iter();
        VectorField3 {
            grid: self.grid,
            comps: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        }
    }

    /// Translate by `shift`: returns `f(x + shift)`, exact for band-limited data.
    pub fn translate(&self, f: &ComplexField, shift: [f64; 3]) -> ComplexField {
        self.apply(f, |i| {
            let k = self.wavevector(i);
            Complex64::from_polar(1.0, k[0] * shift[0] + k[1] * shift[1] + k[2] * shift[2])
        })
    }

    /// Shear along `axis`: returns `f(x + a * x_other * e_axis)` using per-line Fourier
    /// phase shifts.
    pub fn shear(&self, f: &ComplexField, axis: usize, other: usize, a: f64) -> ComplexField {
        let grid = self.grid;
        let n = grid.n;
        let d = grid.d;
        let stride = n.pow((d - 1 - axis) as u32);
        let mut data = f.data.clone();
        let outer = data.len() / (n * stride);
        let mut line = vec![ZERO; n];
        for o in 0..outer {
            let base = o * n * stride;
            for i in 0..stride {
                let start = base + i;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = data[start + j * stride];
                }
                let m = grid.unravel(start);
                let c = a * grid.coord(m[other]);
                self.fwd.process(&mut line);
                for (j, v) in line.iter_mut().enumerate() {
                    *v *= Complex64::from_polar(1.0 / n as f64, self.k1[j] * c);
                }
                self.inv.process(&mut line);
                for (j, v) in line.iter().enumerate() {
                    data[start + j * stride] = *v;
                }
            }
        }
        ComplexField { grid, data }
    }

    /// `sum |hat f|^2` scaled so it equals `||f||_{L^2}^2` (Parseval).
    pub fn parseval_mass(&self, hat: &[Complex64]) -> f64 {
        let n_tot = hat.len() as f64;
        hat.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume() / n_tot
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec::new(2, 32, 4.0).unwrap()
    }

    #[test]
    fn derivative_of_sine() {
        let g = grid();
        let sp = Spectral::new(g);
        let kap = 2.0 * PI / g.box_length;
        let f = RealField::from_fn(g, |x| (kap * x[0]).sin());
        let df = sp.derivative_real(&f, 0);
        let lap = sp.laplacian_real(&f);
        for i in 0..g.len() {
            let x = g.position(i);
            assert!((df.data[i] - kap * (kap * x[0]).cos()).abs() < 1e-12);
            assert!((lap.data[i] + kap * kap * f.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_has_zero_derivative() {
        let g = grid();
        let sp = Spectral::new(g);
        let f = RealField::from_fn(g, |_| 3.5);
        assert!(sp.derivative_real(&f, 1).max_abs() < 1e-13);
        assert!(sp.laplacian_real(&f).max_abs() < 1e-13);
    }

    #[test]
    fn packed_real_transforms_match_single() {
        let g = grid();
        let sp = Spectral::new(g);
        let a = RealField::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let b = RealField::from_fn(g, |x| (PI * x[1] / 2.0).cos() * 0.3);
        let both = sp.apply_real(&[&a.data, &b.data], |i| Complex64::new(-sp.ksq()[i], 0.0));
        let la = sp.laplacian_real(&a);
        let lb = sp.laplacian_real(&b);
        for i in 0..g.len() {
            assert!((both[0][i] - la.data[i]).abs() < 1e-11);
            assert!((both[1][i] - lb.data[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn parseval() {
        let g = grid();
        let sp = Spectral::new(g);
        let f = ComplexField::from_fn(g, |x| {
            Complex64::new((-(x[0] * x[0])).exp(), x[1].sin() * 0.1)
        });
        let hat = sp.fft(&f);
        let l2 = f.norm_l2().powi(2);
        assert!((sp.parseval_mass(&hat) - l2).abs() < 1e-12 * l2);
    }

    #[test]
    fn translation_and_shear() {
        let g = grid();
        let sp = Spectral::new(g);
        let xi = [2.0 * PI / 4.0, 2.0 * 2.0 * PI / 4.0, 0.0];
        let f = ComplexField::plane_wave(g, xi);
        let s = [0.37, -0.21, 0.0];
        let t = sp.translate(&f, s);
        let phase = Complex64::from_polar(1.0, xi[0] * s[0] + xi[1] * s[1]);
        for i in 0..g.len() {
            assert!((t.data[i] - f.data[i] * phase).norm() < 1e-12);
        }
        // shear of a mode that is constant along axis 1
        let f = ComplexField::plane_wave(g, [PI / 2.0, 0.0, 0.0]);
        let sh = sp.shear(&f, 0, 1, 0.3);
        for i in 0..g.len() {
            let x = g.position(i);
            let exact = Complex64::from_polar(1.0, PI / 2.0 * (x[0] + 0.3 * x[1]));
            assert!((sh.data[i] - exact).norm() < 1e-11);
        }
    }
}
