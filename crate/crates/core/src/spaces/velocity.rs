//! Velocity sets `W_k` and the sum and intersection spaces built over them.

use serde::{Deserialize, Serialize};

use super::lateral::{check_exponent, Direction, LateralData};
use crate::error::{LabError, Result};
use crate::spacetime::SpaceTimeField;
use crate::spectral::Spectral;

/// Largest velocity set materialized in full.
pub const MAX_FULL_COUNT: usize = (1 << 16) + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocitySet {
    pub k: i32,
    pub k_cal: u32,
    pub lambdas: Vec<f64>,
    /// `true` when `lambdas` is a uniformly thinned subset of `W_k`.
    pub thinned: bool,
}

impl VelocitySet {
    /// `|W_k| = 2^{2k+2K+1} + 1`, or 1 when the lattice spacing exceeds `2^k`.
    pub fn full_count(k: i32, k_cal: u32) -> f64 {
        let e = 2 * k + 2 * k_cal as i32;
        if e < 0 {
            1.0
        } else {
            2f64.powi(e + 1) + 1.0
        }
    }

    /// All of `W_k = {lambda in [-2^k, 2^k] : 2^{k+2K} lambda in Z}`.
    pub fn full(k: i32, k_cal: u32) -> Result<Self> {
        let count = Self::full_count(k, k_cal);
        if count > MAX_FULL_COUNT as f64 {
            return Err(LabError::Config(format!(
                "|W_{k}| = {count} exceeds {MAX_FULL_COUNT}; use a thinned set"
            )));
        }
        let half = (count as usize - 1) / 2;
        let h = 2f64.powi(-(k + 2 * k_cal as i32));
        let lambdas = (-(half as i64)..=half as i64).map(|j| j as f64 * h).collect();
        Ok(Self { k, k_cal, lambdas, thinned: false })
    }

    /// Uniform subset of `W_k` with spacing a power of two, covering `[-speed, speed]`
    /// (clipped to `[-2^k, 2^k]`) with at most `2 half + 1` points.
    pub fn thinned(k: i32, k_cal: u32, speed: f64, half: usize) -> Result<Self> {
        if half == 0 || !(speed > 0.0) {
            return Err(LabError::Config("thinned velocity set needs speed > 0 and half >= 1".into()));
        }
        let fine = 2f64.powi(-(k + 2 * k_cal as i32));
        let reach = speed.min(2f64.powi(k));
        if reach < fine {
            return Ok(Self { k, k_cal, lambdas: vec![0.0], thinned: true });
        }
        let h = fine.max(2f64.powf((reach / half as f64).log2().ceil()));
        let m = (reach / h).floor() as i64;
        let lambdas = (-m..=m).map(|j| j as f64 * h).collect();
        Ok(Self { k, k_cal, lambdas, thinned: true })
    }

    pub fn singleton(lambda: f64) -> Self {
        Self { k: 0, k_cal: 0, lambdas: vec![lambda], thinned: true }
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Upper bound on a sum-space norm together with the candidate that attained it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumBound {
    pub value: f64,
    /// `single`, `scalar` or `slab<S>`.
    pub family: String,
    /// `||u||_{L^{p,q}_{e,lambda}}` for every `lambda` of the set.
    pub per_lambda: Vec<f64>,
}

/// Options for the sum-space candidate family.
#[derive(Debug, Clone, Copy)]
pub struct SumOptions {
    /// Number of contiguous time slabs in the greedy candidate; 0 disables it.
    pub slabs: usize,
}

impl Default for SumOptions {
    fn default() -> Self {
        Self { slabs: 4 }
    }
}

fn sum_value(w: f64, norms: &[f64], r: f64) -> f64 {
    if r == f64::INFINITY {
        norms.iter().cloned().fold(0.0, f64::max)
    } else {
        (w.powf(r - 1.0) * norms.iter().map(|x| x.powf(r)).sum::<f64>()).powf(1.0 / r)
    }
}

/// `||u||_{Sum^r L^{p,q}_{e,W}}` bounded above over three candidate decompositions:
/// all of `u` on one `lambda`; `u_lambda = c_lambda u` with optimal scalar weights; and a
/// greedy assignment of time slabs to their cheapest `lambda`.
pub fn sum_space_norm(
    sp: &Spectral,
    u: &SpaceTimeField,
    p: f64,
    q: f64,
    e: &[f64],
    w: &VelocitySet,
    r: f64,
    opts: SumOptions,
) -> Result<SumBound> {
    let (p, q, r) = (check_exponent(p)?, check_exponent(q)?, check_exponent(r)?);
    if w.is_empty() {
        return Err(LabError::Config("empty velocity set".into()));
    }
    let data = LateralData::new(sp, u, Direction::new(sp.grid.d, e)?);
    let size = w.len() as f64;
    let n_t = data.n_t();
    let slabs = opts.slabs.min(n_t);
    let slab_of = |j: usize| j * slabs / n_t;
    let mut per_lambda = Vec::with_capacity(w.len());
    let mut slab_cost = vec![vec![0.0; w.len()]; slabs];
    for (li, &lam) in w.lambdas.iter().enumerate() {
        let m = data.moduli(lam);
        per_lambda.push(data.norm_of(&m, p, q, &|_| true));
        for (s, row) in slab_cost.iter_mut().enumerate() {
            row[li] = data.norm_of(&m, p, q, &|j| slab_of(j) == s);
        }
    }
    let best = per_lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut value = size.powf(if r == f64::INFINITY { 1.0 } else { (r - 1.0) / r }) * best;
    let mut family = "single".to_string();
    if r > 1.0 && r != f64::INFINITY && per_lambda.iter().all(|&x| x > 0.0) {
        // minimize |W|^{r-1} sum c^r n^r subject to sum c = 1
        let e = r / (r - 1.0);
        let s: f64 = per_lambda.iter().map(|x| x.powf(-e)).sum();
        let v = (size.powf(r - 1.0) * s.powf(-(r - 1.0))).powf(1.0 / r);
        if v < value {
            value = v;
            family = "scalar".into();
        }
    }
    if slabs > 1 {
        let choice: Vec<usize> = slab_cost
            .iter()
            .map(|row| (0..row.len()).fold(0, |a, i| if row[i] < row[a] { i } else { a }))
            .collect();
        let mut norms = vec![];
        for li in 0..w.len() {
            if choice.contains(&li) {
                let m = data.moduli(w.lambdas[li]);
                norms.push(data.norm_of(&m, p, q, &|j| choice[slab_of(j)] == li));
            }
        }
        let v = sum_value(size, &norms, r);
        if v < value {
            value = v;
            family = format!("slab{slabs}");
        }
    }
    Ok(SumBound { value, family, per_lambda })
}

/// `(|W|^{-1} sum_lambda ||u||^r_{L^{p,q}_{e,lambda}})^{1/r}`.
pub fn intersection_space_norm(sp: &Spectral, u: &SpaceTimeField, p: f64, q: f64, e: &[f64], w: &VelocitySet, r: f64) -> Result<f64> {
    let (p, q, r) = (check_exponent(p)?, check_exponent(q)?, check_exponent(r)?);
    if w.is_empty() {
        return Err(LabError::Config("empty velocity set".into()));
    }
    let data = LateralData::new(sp, u, Direction::new(sp.grid.d, e)?);
    let norms: Vec<f64> = w.lambdas.iter().map(|&l| data.norm(l, p, q)).collect();
    Ok(if r == f64::INFINITY {
        norms.iter().cloned().fold(0.0, f64::max)
    } else {
        (norms.iter().map(|x| x.powf(r)).sum::<f64>() / w.len() as f64).powf(1.0 / r)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::spaces::lateral::lateral_norm;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn full_set_counts() {
        for (k, kc) in [(0, 0), (1, 1), (2, 0), (-1, 1)] {
            let w = VelocitySet::full(k, kc).unwrap();
            assert_eq!(w.len() as f64, VelocitySet::full_count(k, kc));
            assert_eq!(w.lambdas[0], -w.lambdas[w.len() - 1]);
            let scale = 2f64.powi(k + 2 * kc as i32);
            assert!(w.lambdas.iter().all(|l| (l * scale).fract() == 0.0 && l.abs() <= 2f64.powi(k)));
        }
        assert_eq!(VelocitySet::full(-3, 1).unwrap().lambdas, vec![0.0]);
        assert!(VelocitySet::full(10, 2).is_err());
    }

    #[test]
    fn thinned_is_subset() {
        let w = VelocitySet::thinned(7, 2, 16.0, 8).unwrap();
        assert_eq!(w.len(), 17);
        let scale = 2f64.powi(7 + 4);
        assert!(w.lambdas.iter().all(|l| (l * scale).fract() == 0.0));
        assert_eq!(w.lambdas[16], 16.0);
    }

    fn tilted_bump(g: GridSpec, v: f64) -> SpaceTimeField {
        SpaceTimeField::from_fn(g, SpaceTimeField::symmetric_times(0.5, 17), |x, t| {
            let y = x[0] - v * t;
            Complex64::new((-(y * y + x[1] * x[1]) * 4.0).exp(), 0.0)
        })
        .unwrap()
    }

    #[test]
    fn singleton_and_ray() {
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let u = tilted_bump(g, 2.0);
        let e = [1.0, 0.0];
        let one = VelocitySet::singleton(2.0);
        let s = sum_space_norm(&sp, &u, 2.0, f64::INFINITY, &e, &one, 2.0, SumOptions::default()).unwrap();
        let l = lateral_norm(&sp, &u, 2.0, f64::INFINITY, &e, 2.0).unwrap();
        assert!((s.value - l).abs() < 1e-12 * l);
        assert!((intersection_space_norm(&sp, &u, 2.0, f64::INFINITY, &e, &one, 2.0).unwrap() - l).abs() < 1e-12 * l);
        // a bump riding x_1 = 2t is cheapest in the frame moving with it
        let w = VelocitySet { k: 1, k_cal: 0, lambdas: vec![-2.0, -1.0, 0.0, 1.0, 2.0], thinned: true };
        let s = sum_space_norm(&sp, &u, 2.0, f64::INFINITY, &e, &w, 1.0, SumOptions::default()).unwrap();
        let aligned = s.per_lambda[4];
        assert!(s.per_lambda[..4].iter().all(|&x| x > 1.05 * aligned));
        assert!(s.value <= aligned * (1.0 + 1e-12));
    }

    #[test]
    fn r_ordering_and_monotone() {
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let u = tilted_bump(g, 1.0).add(&tilted_bump(g, -1.0));
        let w = VelocitySet { k: 0, k_cal: 0, lambdas: vec![-1.0, 0.0, 1.0], thinned: true };
        let e = [1.0, 0.0];
        let s1 = sum_space_norm(&sp, &u, 2.0, f64::INFINITY, &e, &w, 1.0, SumOptions::default()).unwrap();
        let s2 = sum_space_norm(&sp, &u, 2.0, f64::INFINITY, &e, &w, 2.0, SumOptions::default()).unwrap();
        assert!(s1.value <= s2.value * (1.0 + 1e-12));
        let min_single = s2.per_lambda.iter().cloned().fold(f64::INFINITY, f64::min) * 3f64.sqrt();
        assert!(s2.value <= min_single * (1.0 + 1e-12));
        let none = sum_space_norm(&sp, &u, 2.0, f64::INFINITY, &e, &w, 2.0, SumOptions { slabs: 0 }).unwrap();
        assert!(s2.value <= none.value * (1.0 + 1e-12));
    }

    #[test]
    fn duality_spot_check() {
        let g = GridSpec::new(2, 16, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let times = SpaceTimeField::symmetric_times(0.5, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = VelocitySet { k: 1, k_cal: 0, lambdas: vec![-2.0, 0.0, 2.0], thinned: true };
        let e = [1.0, 0.0];
        for _ in 0..5 {
            let mut draw = || {
                let c: Vec<(f64, f64)> = (0..6).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
                SpaceTimeField::from_fn(g, times.clone(), move |x, t| {
                    let g0 = (-(x[0] * x[0] + x[1] * x[1])).exp();
                    Complex64::new(c[0].0 + c[1].0 * x[0] + c[2].0 * t, c[3].1 + c[4].1 * x[1] + c[5].1 * t) * g0
                })
                .unwrap()
            };
            let u = draw();
            let v = draw();
            let wt = u.time_weights();
            let dv = g.cell_volume();
            let pair: Complex64 = u
                .slices
                .iter()
                .zip(&v.slices)
                .zip(&wt)
                .map(|((a, b), &tw)| a.iter().zip(b).map(|(x, y)| x * y.conj()).sum::<Complex64>() * tw * dv)
                .sum();
            let su = sum_space_norm(&sp, &u, 1.0, 2.0, &e, &w, 2.0, SumOptions::default()).unwrap().value;
            let iv = intersection_space_norm(&sp, &v, f64::INFINITY, 2.0, &e, &w, 2.0).unwrap();
            assert!(pair.norm() <= su * iv * (1.0 + 1e-12));
        }
    }
}
