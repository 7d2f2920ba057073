//! Frequency envelopes `gamma_k = sup_j 2^{-delta |k-j|} alpha_j` over a dyadic window.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{ComplexField, VectorField3};
use crate::littlewood_paley::dyadic_multiplier;
use crate::spacetime::SpaceTimeField;
use crate::spectral::Spectral;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEnvelope {
    pub ks: Vec<i32>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma: f64,
    pub delta: f64,
}

impl FrequencyEnvelope {
    /// Envelope of given dyadic sizes; `delta = 1/(20 d)`.
    pub fn from_alpha(ks: Vec<i32>, alpha: Vec<f64>, sigma: f64, d: usize) -> Result<Self> {
        if ks.len() != alpha.len() || ks.is_empty() {
            return Err(LabError::Config(format!("{} indices for {} sizes", ks.len(), alpha.len())));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(LabError::Config("dyadic sizes must be finite and nonnegative".into()));
        }
        let delta = 1.0 / (20.0 * d as f64);
        let gamma = ks
            .iter()
            .map(|&k| {
                ks.iter().zip(&alpha).fold(0.0f64, |m, (&j, &a)| m.max(2f64.powf(-delta * (k - j).abs() as f64) * a))
            })
            .collect();
        Ok(Self { ks, alpha, gamma, sigma, delta })
    }

    /// Largest relative violation of `gamma_k <= 2^{delta|k-j|} gamma_j`; zero up to round-off.
    pub fn slow_variation_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, &k) in self.ks.iter().enumerate() {
            for (b, &j) in self.ks.iter().enumerate() {
                let bound = self.gamma[b] * 2f64.powf(self.delta * (k - j).abs() as f64);
                let scale = self.gamma[a].max(f64::MIN_POSITIVE);
                worst = worst.max((self.gamma[a] - bound) / scale);
            }
        }
        worst
    }

    /// `min_k (gamma_k - alpha_k)`.
    pub fn majorization_margin(&self) -> f64 {
        self.gamma.iter().zip(&self.alpha).map(|(g, a)| g - a).fold(f64::INFINITY, f64::min)
    }

    /// `sum gamma^2 / sum alpha^2`.
    pub fn square_sum_ratio(&self) -> f64 {
        let g: f64 = self.gamma.iter().map(|x| x * x).sum();
        let a: f64 = self.alpha.iter().map(|x| x * x).sum();
        if a == 0.0 {
            1.0
        } else {
            g / a
        }
    }

    /// The window constant `max_k sum_j 2^{-2 delta |k-j|}` bounding `square_sum_ratio`.
    pub fn window_constant(&self) -> f64 {
        self.ks
            .iter()
            .map(|&k| self.ks.iter().map(|&j| 2f64.powf(-2.0 * self.delta * (k - j).abs() as f64)).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// The full-line constant `1 + 2 q/(1 - q)`, `q = 2^{-2 delta}`.
    pub fn geometric_constant(&self) -> f64 {
        let q = 2f64.powf(-2.0 * self.delta);
        1.0 + 2.0 * q / (1.0 - q)
    }
}

fn band_norms(sp: &Spectral, hats: &[Vec<num_complex::Complex64>], k: i32) -> f64 {
    let m = dyadic_multiplier(sp, k);
    let norm = sp.grid.volume().sqrt() / sp.grid.len() as f64;
    let s: f64 = hats.iter().map(|h| h.iter().zip(&m).map(|(z, w)| z.norm_sqr() * w * w).sum::<f64>()).sum();
    s.sqrt() * norm
}

/// `alpha_k = 2^{sigma k} sup_t ||P_k u(t)||_{L^2}` over the grid window.
pub fn frequency_envelope(sp: &Spectral, u: &SpaceTimeField, sigma: f64) -> Result<FrequencyEnvelope> {
    let ks: Vec<i32> = sp.grid.window().indices().collect();
    let hats: Vec<Vec<_>> = u
        .slices
        .iter()
        .map(|s| {
            let mut h = s.clone();
            sp.forward(&mut h);
            h
        })
        .collect();
    let alpha = ks
        .iter()
        .map(|&k| {
            let sup = hats.iter().map(|h| band_norms(sp, std::slice::from_ref(h), k)).fold(0.0, f64::max);
            2f64.powf(sigma * k as f64) * sup
        })
        .collect();
    FrequencyEnvelope::from_alpha(ks, alpha, sigma, sp.grid.d)
}

/// Data envelope from `alpha_k = 2^{sigma k} ||P_k grad phi_0||_{L^2}`.
pub fn data_envelope(sp: &Spectral, phi0: &VectorField3, sigma: f64) -> Result<FrequencyEnvelope> {
    let ks: Vec<i32> = sp.grid.window().indices().collect();
    let mut hats = Vec::new();
    for grad in sp.vector_gradient(phi0) {
        for c in &grad.comps {
            hats.push(sp.fft(&ComplexField::from_vec(sp.grid, c.iter().map(|&x| x.into()).collect())?));
        }
    }
    let alpha = ks.iter().map(|&k| 2f64.powf(sigma * k as f64) * band_norms(sp, &hats, k)).collect();
    FrequencyEnvelope::from_alpha(ks, alpha, sigma, sp.grid.d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::littlewood_paley::project_dyadic;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn single_band() {
        let g = GridSpec::new(2, 64, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let k0 = 3;
        let f = ComplexField::from_fn(g, |x| Complex64::from_polar((-(x[0] * x[0] + x[1] * x[1])).exp(), 8.0 * x[1]));
        let f = project_dyadic(&sp, &f, k0).unwrap();
        let u = SpaceTimeField::new(g, SpaceTimeField::symmetric_times(0.1, 9), vec![f.data.clone(); 9]).unwrap();
        let env = frequency_envelope(&sp, &u, 0.5).unwrap();
        let i0 = env.ks.iter().position(|&k| k == k0).unwrap();
        let a0 = env.alpha[i0];
        assert!((a0 - 2f64.powf(0.5 * k0 as f64) * band_norms(&sp, &[sp.fft(&f)], k0)).abs() < 1e-12 * a0);
        let lone = FrequencyEnvelope::from_alpha(vec![1, 2, 3, 4, 5], vec![0.0, 0.0, a0, 0.0, 0.0], 0.5, 2).unwrap();
        for (i, &k) in lone.ks.iter().enumerate() {
            let want = a0 * 2f64.powf(-(k - k0).abs() as f64 / 40.0);
            assert!((lone.gamma[i] - want).abs() < 1e-14 * a0);
        }
    }

    #[test]
    fn data_envelope_of_constant_is_zero() {
        let g = GridSpec::new(2, 16, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let env = data_envelope(&sp, &VectorField3::constant(g, [0.0, 0.0, 1.0]), 1.0).unwrap();
        assert!(env.gamma.iter().all(|&x| x == 0.0));
        assert_eq!(env.square_sum_ratio(), 1.0);
    }

    #[test]
    fn constants() {
        let env = FrequencyEnvelope::from_alpha(vec![0, 1, 2], vec![1.0; 3], 0.0, 2).unwrap();
        assert!(env.window_constant() < 3.0 && env.window_constant() <= env.geometric_constant());
        assert!(FrequencyEnvelope::from_alpha(vec![0], vec![-1.0], 0.0, 2).is_err());
    }

    proptest! {
        #[test]
        fn envelope_invariants(alpha in prop::collection::vec(0.0f64..10.0, 1..12), d in 2usize..4) {
            let ks: Vec<i32> = (0..alpha.len() as i32).collect();
            let env = FrequencyEnvelope::from_alpha(ks, alpha, 0.0, d).unwrap();
            prop_assert!(env.slow_variation_defect() <= 1e-12);
            prop_assert!(env.majorization_margin() >= 0.0);
            prop_assert!(env.square_sum_ratio() <= env.window_constant() * (1.0 + 1e-12));
        }
    }
}
