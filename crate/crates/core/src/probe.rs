//! Ensemble probes of the homogeneous linear estimates and of the Duhamel bound.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::ComplexField;
use crate::littlewood_paley::{directional_multiplier, dyadic_multiplier};
use crate::spaces::composite::{composite_norm, strichartz_exponent, CompositeParams, NormKind};
use crate::spaces::lateral::{norm_tx, norm_x_t, Direction, LateralData};
use crate::spaces::velocity::{sum_space_norm, SumOptions, VelocitySet};
use crate::spaces::free_evolution;
use crate::spacetime::SpaceTimeField;
use crate::spectral::Spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimate {
    Locsmobound,
    Latstc,
    Linnew,
    Linst,
    Linmax,
    Latsta,
    Latstb,
}

impl Estimate {
    pub const ALL: [Estimate; 7] = [
        Estimate::Locsmobound,
        Estimate::Latstc,
        Estimate::Linnew,
        Estimate::Linst,
        Estimate::Linmax,
        Estimate::Latsta,
        Estimate::Latstb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimate::Locsmobound => "locsmobound",
            Estimate::Latstc => "latstc",
            Estimate::Linnew => "linnew",
            Estimate::Linst => "linst",
            Estimate::Linmax => "linmax",
            Estimate::Latsta => "latsta",
            Estimate::Latstb => "latstb",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown estimate `{s}`")))
    }

    /// Dimension restriction, if any.
    fn check_dimension(&self, d: usize) -> Result<()> {
        let ok = match self {
            Estimate::Latstc => d >= 3,
            Estimate::Linnew | Estimate::Latsta | Estimate::Latstb => d == 2,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::Config(format!("estimate {} is not stated for d = {d}", self.name())))
        }
    }

    /// Data is additionally localized by `P_{k,e}`.
    fn directional(&self) -> bool {
        matches!(self, Estimate::Locsmobound | Estimate::Latsta)
    }

    /// Exponent `a` of the predicted right side `2^{a k} ||f||`.
    pub fn predicted_exponent(&self, d: usize, pq: (f64, f64)) -> f64 {
        let d = d as f64;
        match self {
            Estimate::Locsmobound => -0.5,
            Estimate::Latstc => (d - 1.0) / 2.0,
            Estimate::Linnew => 0.5,
            Estimate::Linst => 0.0,
            Estimate::Linmax => d / (d + 2.0),
            Estimate::Latsta | Estimate::Latstb => 2.0 / pq.0 - 0.5,
        }
    }

    /// Slope gate used by the acceptance suite.
    pub fn default_gate(&self) -> f64 {
        match self {
            Estimate::Locsmobound | Estimate::Linst => 0.15,
            _ => 0.2,
        }
    }

    /// Default lateral exponents for the two lateral Strichartz estimates.
    pub fn default_pq(&self) -> (f64, f64) {
        match self {
            Estimate::Latsta => (6.0, 3.0),
            Estimate::Latstb => (3.0, 6.0),
            _ => (f64::NAN, f64::NAN),
        }
    }
}

/// Random band-limited data: `atoms` copies of `P_k delta` at Gaussian positions of spread
/// `spread * 2^{-k}` about the box center, complex Gaussian weights, unit `L^2`. The law is
/// scale covariant, so the probed ratios carry no spurious `k` dependence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: usize,
    pub seed: u64,
    pub atoms: usize,
    pub spread: f64,
    /// Time window `[-tau 4^{-k}, tau 4^{-k}]`.
    pub tau: f64,
    pub n_t: usize,
    pub k_cal: u32,
    pub workers: usize,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self { members: 32, seed: 7, atoms: 4, spread: 1.0, tau: 1.0, n_t: 33, k_cal: 2, workers: 4 }
    }
}

impl EnsembleSpec {
    pub fn half_width(&self, k: i32) -> f64 {
        self.tau * 4f64.powi(-k)
    }

    fn times(&self, k: i32) -> Vec<f64> {
        SpaceTimeField::symmetric_times(self.half_width(k), self.n_t)
    }
}

/// Member `member` of the ensemble at band `k`, optionally also localized by `P_{k,e}`.
pub fn ensemble_member(sp: &Spectral, k: i32, e: Option<&[f64]>, spec: &EnsembleSpec, member: usize) -> Result<ComplexField> {
    let g = sp.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((k as u64 & 0xff) << 56) ^ (member as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut mult = dyadic_multiplier(sp, k);
    if let Some(e) = e {
        for (m, w) in mult.iter_mut().zip(directional_multiplier(sp, k, e)?) {
            *m *= w;
        }
    }
    let scale = spec.spread * 2f64.powi(-k);
    let mut atoms = Vec::with_capacity(spec.atoms);
    for _ in 0..spec.atoms {
        let mut x = [0.0; 3];
        for xi in x.iter_mut().take(g.d) {
            *xi = scale * rng.sample::<f64, _>(StandardNormal);
        }
        let c = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        atoms.push((x, c));
    }
    let mut hat = vec![Complex64::new(0.0, 0.0); g.len()];
    for (idx, h) in hat.iter_mut().enumerate() {
        if mult[idx] == 0.0 {
            continue;
        }
        let xi = sp.wavevector(idx);
        let s: Complex64 = atoms
            .iter()
            .map(|(x, c)| c * Complex64::from_polar(1.0, -(xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2])))
            .sum();
        *h = s * mult[idx];
    }
    let f = sp.ifft(hat);
    let n = f.norm_l2();
    if n == 0.0 {
        return Err(LabError::Config(format!("band {k} carries no grid modes")));
    }
    Ok(f.scale(Complex64::new(1.0 / n, 0.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub estimate: Estimate,
    pub d: usize,
    #[serde(rename = "K_cal")]
    pub k_cal: u32,
    pub k: Vec<i32>,
    pub max_ratio: Vec<f64>,
    pub mean_ratio: Vec<f64>,
    /// Least-squares slope of `log2(max_ratio)` against `k`.
    pub slope: f64,
    pub predicted_exponent: f64,
    pub ensemble: usize,
    pub seed: u64,
    /// Half-widths of the time windows; the torus restriction of the probe.
    pub time_half_width: Vec<f64>,
    pub lateral_exponents: Option<(f64, f64)>,
}

impl ProbeReport {
    pub fn passes(&self, gate: f64) -> bool {
        self.slope.abs() <= gate && self.max_ratio.iter().all(|r| r.is_finite())
    }
}

/// Least-squares slope of `y` against `x`.
pub fn lsq_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Left side of the estimate for data `f` of unit mass.
fn left_side(sp: &Spectral, est: Estimate, u: &SpaceTimeField, k: i32, k_cal: u32, pq: (f64, f64)) -> Result<f64> {
    let d = sp.grid.d;
    let dir = Direction::axis(d, 0);
    match est {
        Estimate::Locsmobound => {
            let data = LateralData::new(sp, u, dir);
            let l = 2f64.powi(k - 5);
            Ok([-l, 0.0, l].iter().map(|&lam| data.norm(lam, f64::INFINITY, 2.0)).fold(0.0, f64::max))
        }
        Estimate::Latstc => Ok(LateralData::new(sp, u, dir).norm(0.0, 2.0, f64::INFINITY)),
        Estimate::Linnew => {
            let w = VelocitySet::thinned(k + 5, k_cal, 2f64.powi(k + 2), 8)?;
            Ok(sum_space_norm(sp, u, 2.0, f64::INFINITY, &dir.e[..d], &w, 2.0, SumOptions::default())?.value)
        }
        Estimate::Linst => norm_tx(u, strichartz_exponent(d)),
        Estimate::Linmax => norm_x_t(u, strichartz_exponent(d), f64::INFINITY),
        Estimate::Latsta | Estimate::Latstb => Ok(LateralData::new(sp, u, dir).norm(0.0, pq.0, pq.1)),
    }
}

/// Ratio of left side to `2^{a k}` for every member at band `k`.
fn band_ratios(sp: &Spectral, est: Estimate, k: i32, spec: &EnsembleSpec, pq: (f64, f64)) -> Result<Vec<f64>> {
    let d = sp.grid.d;
    let e = Direction::axis(d, 0).e;
    let a = est.predicted_exponent(d, pq);
    let one = |m: usize| -> Result<f64> {
        let f = ensemble_member(sp, k, est.directional().then_some(&e[..d]), spec, m)?;
        let u = free_evolution(sp, &f.data, spec.times(k))?;
        Ok(left_side(sp, est, &u, k, spec.k_cal, pq)? / 2f64.powf(a * k as f64))
    };
    let workers = spec.workers.clamp(1, spec.members.max(1));
    let chunks: Vec<Vec<usize>> = (0..workers).map(|w| (w..spec.members).step_by(workers).collect()).collect();
    let mut out = vec![0.0; spec.members];
    let results: Vec<Result<Vec<(usize, f64)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|c| s.spawn(|| c.iter().map(|&m| one(m).map(|r| (m, r))).collect::<Result<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("probe worker panicked")).collect()
    });
    for r in results {
        for (m, v) in r? {
            out[m] = v;
        }
    }
    Ok(out)
}

/// Probes `est` over the bands `ks`; lateral exponents default per estimate.
pub fn probe(sp: &Spectral, est: Estimate, ks: &[i32], spec: &EnsembleSpec, pq: Option<(f64, f64)>) -> Result<ProbeReport> {
    let d = sp.grid.d;
    est.check_dimension(d)?;
    if spec.members < 16 {
        return Err(LabError::Config(format!("ensemble of {} members, need at least 16", spec.members)));
    }
    if ks.len() < 3 {
        return Err(LabError::Config("slope needs at least three bands".into()));
    }
    if spec.n_t < 9 || spec.n_t % 2 == 0 {
        return Err(LabError::Config(format!("{} time nodes, need an odd count of at least 9", spec.n_t)));
    }
    let pq = pq.unwrap_or(est.default_pq());
    if matches!(est, Estimate::Latsta | Estimate::Latstb) {
        let (p, q) = pq;
        let ok = p > 2.0 && q >= 2.0 && (1.0 / p + 1.0 / q - 0.5).abs() < 1e-12;
        let side = if est == Estimate::Latsta { p >= q } else { p <= q };
        if !(ok && side) {
            return Err(LabError::Config(format!("lateral exponents ({p}, {q}) outside the admissible range")));
        }
    }
    let window = sp.grid.window();
    let mut maxr = Vec::new();
    let mut meanr = Vec::new();
    for &k in ks {
        window.check(k)?;
        let r = band_ratios(sp, est, k, spec, pq)?;
        maxr.push(r.iter().cloned().fold(0.0, f64::max));
        meanr.push(r.iter().sum::<f64>() / r.len() as f64);
    }
    let x: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let y: Vec<f64> = maxr.iter().map(|r| r.log2()).collect();
    Ok(ProbeReport {
        estimate: est,
        d,
        k_cal: spec.k_cal,
        k: ks.to_vec(),
        max_ratio: maxr,
        mean_ratio: meanr,
        slope: lsq_slope(&x, &y),
        predicted_exponent: est.predicted_exponent(d, pq),
        ensemble: spec.members,
        seed: spec.seed,
        time_half_width: ks.iter().map(|&k| spec.half_width(k)).collect(),
        lateral_exponents: pq.0.is_finite().then_some(pq),
    })
}

/// `e^{it Delta} f` at a single time.
pub fn propagate(sp: &Spectral, f: &[Complex64], t: f64) -> Vec<Complex64> {
    let mut h = f.to_vec();
    sp.forward(&mut h);
    for (z, &k2) in h.iter_mut().zip(sp.ksq()) {
        *z *= Complex64::from_polar(1.0, -t * k2);
    }
    sp.inverse(&mut h);
    h
}

/// Forcing term of the inhomogeneous problem, as a function of time.
pub type Source<'a> = dyn Fn(f64) -> Vec<Complex64> + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuhamelReport {
    pub k: i32,
    pub ratio: f64,
    pub g_norm: f64,
    pub u0_norm: f64,
    pub n_bound: f64,
    pub n_family: String,
    /// Richardson estimate of the quadrature error, relative to the solution's `L^2_{t,x}` size.
    pub quadrature_error: f64,
    pub steps_per_unit_time: usize,
}

/// Solution of `(i d_t + Delta) u = h`, `u(0) = u0` at `times`: the Duhamel integral
/// `-i int_0^t e^{i(t-s) Delta} h(s) ds` in the interaction picture, by the midpoint rule with
/// `steps_per_unit` nodes per unit time (at least one per interval between output times).
pub fn duhamel_solution(sp: &Spectral, u0: &[Complex64], h: &Source, times: &[f64], steps_per_unit: usize) -> Result<SpaceTimeField> {
    let ksq = sp.ksq();
    let mut u0h = u0.to_vec();
    sp.forward(&mut u0h);
    let mut slices = vec![Vec::new(); times.len()];
    // integrate outward from t = 0 in both directions
    let order: Vec<usize> = {
        let mut pos: Vec<usize> = (0..times.len()).filter(|&j| times[j] >= 0.0).collect();
        pos.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let mut neg: Vec<usize> = (0..times.len()).filter(|&j| times[j] < 0.0).collect();
        neg.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        pos.into_iter().chain(neg).collect()
    };
    let mut acc = vec![Complex64::new(0.0, 0.0); u0h.len()];
    let mut t_prev = 0.0;
    for &j in &order {
        let t = times[j];
        if t < 0.0 && t_prev > 0.0 {
            acc.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            t_prev = 0.0;
        }
        let span = t - t_prev;
        let m = ((span.abs() * steps_per_unit as f64).ceil() as usize).max(1);
        let ds = span / m as f64;
        for i in 0..m {
            let s = t_prev + (i as f64 + 0.5) * ds;
            let mut hh = h(s);
            sp.forward(&mut hh);
            for ((a, z), &k2) in acc.iter_mut().zip(&hh).zip(ksq) {
                *a += z * Complex64::from_polar(ds, s * k2);
            }
        }
        t_prev = t;
        let mut out: Vec<Complex64> = u0h
            .iter()
            .zip(&acc)
            .zip(ksq)
            .map(|((a, b), &k2)| (a - Complex64::i() * b) * Complex64::from_polar(1.0, -t * k2))
            .collect();
        sp.inverse(&mut out);
        slices[j] = out;
    }
    SpaceTimeField::new(sp.grid, times.to_vec(), slices)
}

/// `G_k(u) / (||u0|| + N_k(h))` for the inhomogeneous solution on `times`.
pub fn duhamel_probe(
    sp: &Spectral,
    u0: &ComplexField,
    h: &Source,
    times: &[f64],
    k: i32,
    params: CompositeParams,
    steps_per_unit: usize,
) -> Result<DuhamelReport> {
    if steps_per_unit < 64 {
        return Err(LabError::Config(format!("{steps_per_unit} quadrature nodes per unit time, need at least 64")));
    }
    let hs = SpaceTimeField::new(sp.grid, times.to_vec(), times.iter().map(|&t| h(t)).collect())?;
    let coarse = duhamel_solution(sp, &u0.data, h, times, steps_per_unit)?;
    let fine = duhamel_solution(sp, &u0.data, h, times, 2 * steps_per_unit)?;
    let size = fine.norm_l2().max(f64::MIN_POSITIVE);
    let quadrature_error = fine.add(&coarse.scale(-1.0)).norm_l2() / 3.0 / size;
    let g = composite_norm(sp, &fine, k, NormKind::G, params)?;
    let u0_norm = u0.norm_l2();
    let (n_bound, n_family) = if hs.norm_l2() == 0.0 {
        (0.0, "zero".to_string())
    } else {
        let n = composite_norm(sp, &hs, k, NormKind::N, params)?;
        (n.value, n.family)
    };
    Ok(DuhamelReport {
        k,
        ratio: g.value / (u0_norm + n_bound),
        g_norm: g.value,
        u0_norm,
        n_bound,
        n_family,
        quadrature_error,
        steps_per_unit_time: 2 * steps_per_unit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::spacetime::schrodinger_residual;
    use std::f64::consts::PI;

    fn small_spec() -> EnsembleSpec {
        EnsembleSpec { members: 16, n_t: 17, ..Default::default() }
    }

    #[test]
    fn single_mode_residual() {
        let g = GridSpec::new(2, 16, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let f = ComplexField::plane_wave(g, [2.0, 1.0, 0.0]);
        let u = free_evolution(&sp, &f.data, SpaceTimeField::symmetric_times(0.02, 17)).unwrap();
        for j in 2..15 {
            assert!(schrodinger_residual(&sp, &u, j).unwrap().max_abs() < 1e-8);
        }
    }

    #[test]
    fn members_are_deterministic_and_localized() {
        let g = GridSpec::new(2, 64, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let s = small_spec();
        let a = ensemble_member(&sp, 3, None, &s, 5).unwrap();
        let b = ensemble_member(&sp, 3, None, &s, 5).unwrap();
        let c = ensemble_member(&sp, 3, None, &s, 6).unwrap();
        assert_eq!(a.data, b.data);
        assert!(a.sub(&c).max_abs() > 1e-3);
        assert!((a.norm_l2() - 1.0).abs() < 1e-12);
        let u = SpaceTimeField::new(g, SpaceTimeField::symmetric_times(1.0, 9), vec![a.data; 9]).unwrap();
        assert!(u.band_leakage(&sp, 3) < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let g = GridSpec::new(3, 8, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        assert!(matches!(probe(&sp, Estimate::Linnew, &[0, 1, 2], &small_spec(), None), Err(LabError::Config(_))));
        let g2 = Spectral::new(GridSpec::new(2, 8, 2.0 * PI).unwrap());
        assert!(matches!(probe(&g2, Estimate::Latstc, &[0, 1, 2], &small_spec(), None), Err(LabError::Config(_))));
        let few = EnsembleSpec { members: 8, ..small_spec() };
        assert!(probe(&g2, Estimate::Linst, &[0, 1, 2], &few, None).is_err());
        assert_eq!(Estimate::parse("linmax").unwrap(), Estimate::Linmax);
        assert!(Estimate::parse("nope").is_err());
    }

    #[test]
    fn linst_is_scale_invariant() {
        // same samples on a box of half the size: the data is u(2x), times shrink by 4
        let s = small_spec();
        let a = Spectral::new(GridSpec::new(2, 64, 2.0 * PI).unwrap());
        let b = Spectral::new(GridSpec::new(2, 64, PI).unwrap());
        let f = ensemble_member(&a, 3, None, &s, 0).unwrap();
        let fb = ComplexField::from_vec(b.grid, f.data.iter().map(|z| z * 2.0).collect()).unwrap();
        let ua = free_evolution(&a, &f.data, SpaceTimeField::symmetric_times(0.02, 17)).unwrap();
        let ub = free_evolution(&b, &fb.data, SpaceTimeField::symmetric_times(0.005, 17)).unwrap();
        let ra = norm_tx(&ua, 4.0).unwrap() / f.norm_l2();
        let rb = norm_tx(&ub, 4.0).unwrap() / fb.norm_l2();
        assert!((ra / rb - 1.0).abs() < 0.02, "{ra} {rb}");
    }

    #[test]
    fn lsq_slope_exact() {
        assert!((lsq_slope(&[1.0, 2.0, 3.0], &[0.5, 1.0, 1.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn locsmobound_flat_small() {
        let sp = Spectral::new(GridSpec::new(2, 64, 2.0 * PI).unwrap());
        let r = probe(&sp, Estimate::Locsmobound, &[1, 2, 3, 4], &small_spec(), None).unwrap();
        assert!(r.slope.abs() < 0.3, "{r:?}");
    }

    #[test]
    fn duhamel_homogeneous_and_linear() {
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let k = 2;
        let s = small_spec();
        let times = SpaceTimeField::symmetric_times(s.half_width(k), 9);
        let mut p = CompositeParams::new(2);
        p.directions = 4;
        let f = ensemble_member(&sp, k, None, &s, 1).unwrap();
        let zero = |_: f64| vec![Complex64::new(0.0, 0.0); g.len()];
        let hom = duhamel_probe(&sp, &f, &zero, &times, k, p, 64).unwrap();
        let free = free_evolution(&sp, &f.data, times.clone()).unwrap();
        let gk = composite_norm(&sp, &free, k, NormKind::G, p).unwrap().value;
        assert!((hom.ratio - gk).abs() < 1e-10 * gk);
        // forcing by a free wave: u = -i t e^{it Delta} f
        let src = |t: f64| propagate(&sp, &f.data, t);
        let src2 = |t: f64| src(t).into_iter().map(|z| z * 2.0).collect::<Vec<_>>();
        let u = duhamel_solution(&sp, &vec![Complex64::new(0.0, 0.0); g.len()], &src, &times, 64).unwrap();
        for (j, &t) in times.iter().enumerate() {
            let want = free.slice(j).scale(Complex64::new(0.0, -t));
            assert!(u.slice(j).sub(&want).max_abs() < 1e-10, "t={t}");
        }
        let u0 = ComplexField::zeros(g);
        let a = duhamel_probe(&sp, &u0, &src, &times, k, p, 64).unwrap();
        let b = duhamel_probe(&sp, &u0, &src2, &times, k, p, 64).unwrap();
        assert!((a.ratio - b.ratio).abs() < 1e-10 * a.ratio);
        assert!(a.quadrature_error < 1e-10);
    }
}
