//! Lateral norms `L^{p,q}_e` along Galilean-tilted foliations, and plain mixed norms.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{LabError, Result};
use crate::grid::GridSpec;
use crate::spacetime::SpaceTimeField;
use crate::spectral::Spectral;

/// A Lebesgue exponent in `[1, inf]`.
pub fn check_exponent(p: f64) -> Result<f64> {
    if p >= 1.0 && (p.is_finite() || p == f64::INFINITY) {
        Ok(p)
    } else {
        Err(LabError::Config(format!("exponent {p} outside [1, inf]")))
    }
}

/// `(sum w_i x_i^p)^{1/p}`, or `max x_i` for `p = inf`.
pub(crate) fn lp_sum(values: impl Iterator<Item = (f64, f64)>, p: f64) -> f64 {
    if p == f64::INFINITY {
        values.fold(0.0, |m, (_, x)| m.max(x))
    } else {
        values.map(|(w, x)| w * x.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// A unit vector of the direction set, with the data needed to rotate it onto a grid axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub e: [f64; 3],
    /// Axis that `e` is rotated onto.
    pub lead: usize,
    /// Second axis of the rotation plane.
    pub plane: usize,
    /// Rotation angle in `[-pi/4, pi/4]` from `lead` towards `plane`.
    pub phi: f64,
    /// `e = sign * (cos phi e_lead + sin phi e_plane)`.
    pub sign: f64,
}

/// Angular resolution of the planar direction set: multiples of `pi/16`.
const PLANAR_STEP: f64 = PI / 16.0;

impl Direction {
    pub fn new(d: usize, e: &[f64]) -> Result<Self> {
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 || e.len() != d {
            return Err(LabError::InvalidDirection { norm });
        }
        let mut v = [0.0; 3];
        v[..d].copy_from_slice(e);
        let lead = (0..d).fold(0, |a, i| if v[i].abs() > v[a].abs() + 1e-12 { i } else { a });
        let others: Vec<usize> = (0..d).filter(|&i| i != lead && v[i].abs() > 1e-12).collect();
        let unsupported = || LabError::UnsupportedDirection(e.to_vec());
        let sign = v[lead].signum();
        let (plane, phi) = match others.as_slice() {
            [] => ((lead + 1) % d, 0.0),
            [b] => (*b, (sign * v[*b]).atan2(sign * v[lead])),
            _ => return Err(unsupported()),
        };
        if d == 2 {
            let steps = phi / PLANAR_STEP;
            if (steps - steps.round()).abs() > 1e-9 {
                return Err(unsupported());
            }
        } else if phi != 0.0 && (phi.abs() - PI / 4.0).abs() > 1e-12 {
            return Err(unsupported());
        }
        Ok(Self { e: v, lead, plane, phi, sign })
    }

    pub fn axis(d: usize, a: usize) -> Self {
        let mut e = vec![0.0; d];
        e[a] = 1.0;
        Self::new(d, &e).expect("axis direction")
    }

    pub fn is_axis(&self) -> bool {
        self.phi == 0.0
    }
}

/// For `d = 2`, `count` equally spaced unit vectors (`count` in {4, 8, 16, 32});
/// for `d = 3`, the three axes and the six face diagonals.
pub fn direction_set(d: usize, count: usize) -> Result<Vec<Direction>> {
    if d == 3 {
        let s = 0.5f64.sqrt();
        let mut out: Vec<Direction> = (0..3).map(|a| Direction::axis(3, a)).collect();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            for sb in [1.0, -1.0] {
                let mut e = vec![0.0; 3];
                e[a] = s;
                e[b] = sb * s;
                out.push(Direction::new(3, &e)?);
            }
        }
        return Ok(out);
    }
    if ![4, 8, 16, 32].contains(&count) {
        return Err(LabError::Config(format!("planar direction count {count} not in {{4, 8, 16, 32}}")));
    }
    (0..count)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / count as f64;
            Direction::new(2, &[t.cos(), t.sin()])
        })
        .collect()
}

/// Pullback `f(R y)` where `R` rotates `e_lead` onto `e_lead cos phi + e_plane sin phi`,
/// by three Fourier shears. Exact for band-limited data supported away from the seam at
/// the box boundary.
pub fn rotate_field(sp: &Spectral, data: &[Complex64], dir: &Direction) -> Vec<Complex64> {
    if dir.phi == 0.0 {
        return data.to_vec();
    }
    let f = crate::grid::ComplexField { grid: sp.grid, data: data.to_vec() };
    let t = (0.5 * dir.phi).tan();
    let s = dir.phi.sin();
    let (a, b) = (dir.lead, dir.plane);
    let f1 = sp.shear(&f, a, b, -t);
    let f2 = sp.shear(&f1, b, a, s);
    sp.shear(&f2, a, b, -t).data
}

/// Iterated norm of `|g|` over rotated slices: inner `L^q` over the transverse axes
/// and time, outer `L^p` over the lead axis. Slices outside `keep` count as zero.
fn iterated_norm(grid: &GridSpec, weights: &[f64], moduli: &[Vec<f64>], lead: usize, p: f64, q: f64, keep: &dyn Fn(usize) -> bool) -> f64 {
    let n = grid.n;
    let dx = grid.dx();
    let dxt = dx.powi(grid.d as i32 - 1);
    let mut inner = vec![0.0f64; n];
    for (j, m) in moduli.iter().enumerate() {
        if !keep(j) {
            continue;
        }
        for (idx, &x) in m.iter().enumerate() {
            let i = grid.unravel(idx)[lead];
            if q == f64::INFINITY {
                inner[i] = inner[i].max(x);
            } else {
                inner[i] += weights[j] * dxt * x.powf(q);
            }
        }
    }
    if q != f64::INFINITY {
        for v in inner.iter_mut() {
            *v = v.powf(1.0 / q);
        }
    }
    lp_sum(inner.iter().map(|&x| (dx, x)), p)
}

/// Rotated Fourier data of a space-time field, reused across `lambda` values.
pub struct LateralData<'a> {
    sp: &'a Spectral,
    pub dir: Direction,
    times: Vec<f64>,
    weights: Vec<f64>,
    hats: Vec<Vec<Complex64>>,
}

impl<'a> LateralData<'a> {
    pub fn new(sp: &'a Spectral, u: &SpaceTimeField, dir: Direction) -> Self {
        let hats = u
            .slices
            .iter()
            .map(|s| {
                let mut h = rotate_field(sp, s, &dir);
                sp.forward(&mut h);
                h
            })
            .collect();
        Self { sp, dir, times: u.times.clone(), weights: u.time_weights(), hats }
    }

    /// `|u(R y + lambda t e, t)|` per time node.
    pub fn moduli(&self, lambda: f64) -> Vec<Vec<f64>> {
        let sp = self.sp;
        let lead = self.dir.lead;
        let shift = lambda * self.dir.sign;
        self.hats
            .iter()
            .zip(&self.times)
            .map(|(h, &t)| {
                let mut x = h.clone();
                if shift * t != 0.0 {
                    for (i, z) in x.iter_mut().enumerate() {
                        *z *= Complex64::from_polar(1.0, sp.wavevector(i)[lead] * shift * t);
                    }
                }
                sp.inverse(&mut x);
                x.iter().map(|z| z.norm()).collect()
            })
            .collect()
    }

    pub fn norm_of(&self, moduli: &[Vec<f64>], p: f64, q: f64, keep: &dyn Fn(usize) -> bool) -> f64 {
        iterated_norm(&self.sp.grid, &self.weights, moduli, self.dir.lead, p, q, keep)
    }

    pub fn norm(&self, lambda: f64, p: f64, q: f64) -> f64 {
        self.norm_of(&self.moduli(lambda), p, q, &|_| true)
    }

    pub fn n_t(&self) -> usize {
        self.times.len()
    }
}

/// `||u||_{L^{p,q}_{e,lambda}} = ||T_{lambda e} u||_{L^{p,q}_e}`.
pub fn lateral_norm(sp: &Spectral, u: &SpaceTimeField, p: f64, q: f64, e: &[f64], lambda: f64) -> Result<f64> {
    let p = check_exponent(p)?;
    let q = check_exponent(q)?;
    let dir = Direction::new(sp.grid.d, e)?;
    Ok(LateralData::new(sp, u, dir).norm(lambda, p, q))
}

fn slice_lp(grid: &GridSpec, s: &[Complex64], p: f64) -> f64 {
    let dv = grid.cell_volume();
    lp_sum(s.iter().map(|z| (dv, z.norm())), p)
}

/// `L^a_t L^b_x`: inner over space at each time, outer over time.
pub fn norm_t_x(u: &SpaceTimeField, a: f64, b: f64) -> Result<f64> {
    let (a, b) = (check_exponent(a)?, check_exponent(b)?);
    let w = u.time_weights();
    Ok(lp_sum(u.slices.iter().zip(&w).map(|(s, &wt)| (wt, slice_lp(&u.grid, s, b))), a))
}

/// `L^a_x L^b_t`: inner over time at each point, outer over space.
pub fn norm_x_t(u: &SpaceTimeField, a: f64, b: f64) -> Result<f64> {
    let (a, b) = (check_exponent(a)?, check_exponent(b)?);
    let w = u.time_weights();
    let dv = u.grid.cell_volume();
    let inner: Vec<f64> = (0..u.grid.len())
        .map(|i| lp_sum(u.slices.iter().zip(&w).map(|(s, &wt)| (wt, s[i].norm())), b))
        .collect();
    Ok(lp_sum(inner.iter().map(|&x| (dv, x)), a))
}

/// Space-time `L^p_{t,x}`.
pub fn norm_tx(u: &SpaceTimeField, p: f64) -> Result<f64> {
    norm_t_x(u, p, p)
}
