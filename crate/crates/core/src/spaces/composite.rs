//! Dyadic function-space norms assembled from Strichartz, maximal and lateral pieces.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::lateral::{direction_set, lateral_norm, norm_t_x, norm_tx, norm_x_t, Direction, LateralData};
use super::velocity::{sum_space_norm, SumOptions, VelocitySet, MAX_FULL_COUNT};
use crate::error::{LabError, Result};
use crate::littlewood_paley::directional_multiplier;
use crate::spacetime::SpaceTimeField;
use crate::spectral::Spectral;

/// Spectral mass allowed outside `I_k`.
pub const BAND_TOLERANCE: f64 = 0.01;
/// Shell offset in `|j - k| <= 20`.
pub const SHELL: i32 = 20;
/// Offset of the velocity sets `W_{k+40}`, `W_{k-40}` and of `|lambda| < 2^{k-40}`.
pub const VELOCITY_OFFSET: i32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    F,
    F0,
    G,
    N,
    S,
}

impl NormKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormKind::F => "F",
            NormKind::F0 => "F0",
            NormKind::G => "G",
            NormKind::N => "N",
            NormKind::S => "S",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeParams {
    pub d: usize,
    pub k_cal: u32,
    /// Only used by `S_k^omega`.
    pub omega: f64,
    /// Planar direction count (ignored for `d = 3`).
    pub directions: usize,
    /// Half-size of the thinned velocity sets.
    pub velocity_half: usize,
    pub slabs: usize,
}

impl CompositeParams {
    pub fn new(d: usize) -> Self {
        Self { d, k_cal: 2, omega: 0.0, directions: 16, velocity_half: 8, slabs: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub kind: NormKind,
    pub k: i32,
    pub value: f64,
    pub directions: usize,
    /// Candidate family behind an upper bound, or `exact`.
    pub family: String,
    /// Named weighted terms; `value` is their sum.
    pub parts: Vec<(String, f64)>,
}

/// Strichartz exponent `p_d = (2d + 4)/d`.
pub fn strichartz_exponent(d: usize) -> f64 {
    (2.0 * d as f64 + 4.0) / d as f64
}

/// `W_j`, in full when small enough, else thinned to the speeds `<= 2^{k+2}` that band
/// `k` can reach.
fn velocity_set(j: i32, k: i32, k_cal: u32, half: usize) -> Result<VelocitySet> {
    if VelocitySet::full_count(j, k_cal) <= MAX_FULL_COUNT as f64 && VelocitySet::full_count(j, k_cal) <= (2 * half + 1) as f64 {
        VelocitySet::full(j, k_cal)
    } else {
        VelocitySet::thinned(j, k_cal, 2f64.powi(k + 2), half)
    }
}

fn project_dir(sp: &Spectral, u: &SpaceTimeField, j: i32, e: &[f64]) -> Result<Option<SpaceTimeField>> {
    let m = directional_multiplier(sp, j, e)?;
    let mut any = false;
    let mut slices = Vec::with_capacity(u.n_t());
    for s in &u.slices {
        let mut h = s.clone();
        sp.forward(&mut h);
        for (z, &w) in h.iter_mut().zip(&m) {
            *z *= w;
            any |= w != 0.0 && z.norm_sqr() > 0.0;
        }
        sp.inverse(&mut h);
        slices.push(h);
    }
    Ok(if any { Some(SpaceTimeField { grid: u.grid, times: u.times.clone(), slices }) } else { None })
}

struct Ctx<'a> {
    sp: &'a Spectral,
    k: i32,
    params: CompositeParams,
    dirs: Vec<Direction>,
}

impl Ctx<'_> {
    fn d(&self) -> usize {
        self.params.d
    }

    fn pd(&self) -> f64 {
        strichartz_exponent(self.d())
    }

    fn shells(&self) -> impl Iterator<Item = i32> {
        let w = self.sp.grid.window();
        (self.k - SHELL).max(w.k_min)..=(self.k + SHELL).min(w.k_max)
    }

    fn sup_lateral(&self, u: &SpaceTimeField, p: f64, q: f64) -> Result<f64> {
        let mut m: f64 = 0.0;
        for dir in &self.dirs {
            m = m.max(lateral_norm(self.sp, u, p, q, &dir.e[..self.d()], 0.0)?);
        }
        Ok(m)
    }

    /// `sup_{|j-k|<=20} sup_e sup_lambda ||P_{j,e} u||_{L^{p,q}_{e,lambda}}`.
    fn sup_shell(&self, u: &SpaceTimeField, p: f64, q: f64, lambdas: &[f64]) -> Result<f64> {
        let mut m: f64 = 0.0;
        for j in self.shells() {
            for dir in &self.dirs {
                if let Some(pu) = project_dir(self.sp, u, j, &dir.e[..self.d()])? {
                    let data = LateralData::new(self.sp, &pu, *dir);
                    for &l in lambdas {
                        m = m.max(data.norm(l, p, q));
                    }
                }
            }
        }
        Ok(m)
    }

    /// `sup_e ||u||_{Sum^1 L^{p,q}_{e,W}}` over the candidate family.
    fn sup_sum(&self, u: &SpaceTimeField, p: f64, q: f64, w: &VelocitySet) -> Result<(f64, String)> {
        let mut best = (0.0, String::from("single"));
        for dir in &self.dirs {
            let s = sum_space_norm(self.sp, u, p, q, &dir.e[..self.d()], w, 1.0, SumOptions { slabs: self.params.slabs })?;
            if s.value > best.0 {
                best = (s.value, s.family);
            }
        }
        Ok(best)
    }

    fn f0_parts(&self, u: &SpaceTimeField) -> Result<(Vec<(String, f64)>, String)> {
        let k = self.k as f64;
        let w = velocity_set(self.k + VELOCITY_OFFSET, self.k, self.params.k_cal, self.params.velocity_half)?;
        let (lat, fam) = self.sup_sum(u, 2.0, f64::INFINITY, &w)?;
        let family = if w.thinned { format!("{fam}/thin{}", w.len()) } else { fam };
        Ok((
            vec![
                ("LinfL2".into(), norm_t_x(u, f64::INFINITY, 2.0)?),
                ("L4".into(), norm_tx(u, 4.0)?),
                ("L4Linf".into(), 2f64.powf(-k / 2.0) * norm_x_t(u, 4.0, f64::INFINITY)?),
                ("L2inf_W".into(), 2f64.powf(-k / 2.0) * lat),
            ],
            family,
        ))
    }

    fn f_parts_high(&self, u: &SpaceTimeField) -> Result<Vec<(String, f64)>> {
        let k = self.k as f64;
        let d = self.d() as f64;
        let pd = self.pd();
        Ok(vec![
            ("LinfL2".into(), norm_t_x(u, f64::INFINITY, 2.0)?),
            ("Lpd".into(), norm_tx(u, pd)?),
            ("LpdLinf".into(), 2f64.powf(-k * d / (d + 2.0)) * norm_x_t(u, pd, f64::INFINITY)?),
            ("L2inf".into(), 2f64.powf(-k * (d - 1.0) / 2.0) * self.sup_lateral(u, 2.0, f64::INFINITY)?),
        ])
    }

    fn g_parts(&self, u: &SpaceTimeField) -> Result<(Vec<(String, f64)>, String)> {
        let k = self.k as f64;
        if self.d() == 2 {
            let (mut parts, family) = self.f0_parts(u)?;
            let tiny = 2f64.powi(self.k - VELOCITY_OFFSET - 1);
            parts.push(("L36".into(), 2f64.powf(-k / 6.0) * self.sup_lateral(u, 3.0, 6.0)?));
            parts.push(("Pje_L63".into(), 2f64.powf(k / 6.0) * self.sup_shell(u, 6.0, 3.0, &[0.0])?));
            parts.push(("Pje_Linf2".into(), 2f64.powf(k / 2.0) * self.sup_shell(u, f64::INFINITY, 2.0, &[-tiny, 0.0, tiny])?));
            Ok((parts, family))
        } else {
            let mut parts = self.f_parts_high(u)?;
            parts.push(("Pje_Linf2".into(), 2f64.powf(k / 2.0) * self.sup_shell(u, f64::INFINITY, 2.0, &[0.0])?));
            Ok((parts, "exact".into()))
        }
    }

    /// Cost of each part of the `N_k` splitting for `f`.
    fn n_costs(&self, f: &SpaceTimeField) -> Result<Vec<(String, f64)>> {
        let k = self.k as f64;
        let pd = self.pd();
        let dual = pd / (pd - 1.0);
        if self.d() == 2 {
            let w = velocity_set(self.k - VELOCITY_OFFSET, self.k, self.params.k_cal, self.params.velocity_half)?;
            Ok(vec![
                ("L4/3".into(), norm_tx(f, dual)?),
                ("L3/2,6/5_e1".into(), 2f64.powf(k / 6.0) * lateral_norm(self.sp, f, 1.5, 1.2, &[1.0, 0.0], 0.0)?),
                ("L3/2,6/5_e2".into(), 2f64.powf(k / 6.0) * lateral_norm(self.sp, f, 1.5, 1.2, &[0.0, 1.0], 0.0)?),
                ("L12_W".into(), 2f64.powf(-k / 2.0) * self.sup_sum(f, 1.0, 2.0, &w)?.0),
            ])
        } else {
            Ok(vec![
                ("Lpd'".into(), norm_tx(f, dual)?),
                ("L12".into(), 2f64.powf(-k / 2.0) * self.sup_lateral(f, 1.0, 2.0)?),
            ])
        }
    }

    fn n_bound(&self, f: &SpaceTimeField) -> Result<(Vec<(String, f64)>, String)> {
        let whole = self.n_costs(f)?;
        let (mut best_i, mut best) = (0, f64::INFINITY);
        for (i, (_, c)) in whole.iter().enumerate() {
            if *c < best {
                best = *c;
                best_i = i;
            }
        }
        let mut parts: Vec<(String, f64)> = whole.iter().map(|(n, _)| (n.clone(), 0.0)).collect();
        parts[best_i].1 = best;
        let mut family = format!("one:{}", whole[best_i].0);
        let slabs = self.params.slabs.min(f.n_t());
        if slabs > 1 {
            let n_t = f.n_t();
            let slab_of = |j: usize| j * slabs / n_t;
            let mut choice = vec![0; slabs];
            for (s, c) in choice.iter_mut().enumerate() {
                let costs = self.n_costs(&f.mask_times(|j| slab_of(j) == s))?;
                *c = (0..costs.len()).fold(0, |a, i| if costs[i].1 < costs[a].1 { i } else { a });
            }
            let mut split: Vec<(String, f64)> = whole.iter().map(|(n, _)| (n.clone(), 0.0)).collect();
            for (part, entry) in split.iter_mut().enumerate() {
                if choice.contains(&part) {
                    let piece = f.mask_times(|j| choice[slab_of(j)] == part);
                    entry.1 = self.n_costs(&piece)?[part].1;
                }
            }
            let total: f64 = split.iter().map(|x| x.1).sum();
            if total < best {
                parts = split;
                family = format!("slab{slabs}");
            }
        }
        Ok((parts, family))
    }

    fn s_parts(&self, u: &SpaceTimeField) -> Result<Vec<(String, f64)>> {
        let (k, d, w) = (self.k as f64, self.d() as f64, self.params.omega);
        if !(0.0..=0.5).contains(&w) {
            return Err(LabError::Config(format!("omega = {w} outside [0, 1/2]")));
        }
        let pd = self.pd();
        let two_w = 1.0 / (0.5 + w / d);
        let pdw = 1.0 / (1.0 / pd + w / d);
        let c = 2f64.powf(k * w);
        Ok(vec![
            ("LinfL2w".into(), c * norm_t_x(u, f64::INFINITY, two_w)?),
            ("LpdLpdw".into(), c * norm_t_x(u, pd, pdw)?),
            ("LpdwLinf".into(), c * 2f64.powf(-k * d / (d + 2.0)) * norm_x_t(u, pdw, f64::INFINITY)?),
        ])
    }
}

/// Evaluates `F_k`, `F_k^0`, `G_k`, `N_k` or `S_k^omega` for band-`k` data. `F_k` for
/// `d = 2` is the single-term bound `J = 1`, `m_1 = 0`; `N_k` and the `W`-sum pieces are
/// upper bounds over the candidate family named in the report.
pub fn composite_norm(sp: &Spectral, u: &SpaceTimeField, k: i32, kind: NormKind, params: CompositeParams) -> Result<NormReport> {
    let d = sp.grid.d;
    if params.d != d {
        return Err(LabError::Config(format!("norm parameters for d = {} on a d = {d} grid", params.d)));
    }
    if kind == NormKind::F0 && d != 2 {
        return Err(LabError::Config("F_k^0 is defined for d = 2 only".into()));
    }
    sp.grid.window().check(k)?;
    u.check_band(sp, k, BAND_TOLERANCE)?;
    if d == 2 && u.half_width() > 2f64.powi(2 * params.k_cal as i32) * (1.0 + 1e-12) {
        return Err(LabError::Config(format!(
            "time half-width {} exceeds 2^(2K) = {}",
            u.half_width(),
            2f64.powi(2 * params.k_cal as i32)
        )));
    }
    let dirs = direction_set(d, params.directions)?;
    let ctx = Ctx { sp, k, params, dirs };
    let (parts, family) = match (kind, d) {
        (NormKind::F0, _) | (NormKind::F, 2) => {
            let (p, fam) = ctx.f0_parts(u)?;
            (p, if kind == NormKind::F { format!("J1m0/{fam}") } else { fam })
        }
        (NormKind::F, _) => (ctx.f_parts_high(u)?, "exact".into()),
        (NormKind::G, _) => ctx.g_parts(u)?,
        (NormKind::N, _) => ctx.n_bound(u)?,
        (NormKind::S, _) => (ctx.s_parts(u)?, "exact".into()),
    };
    let value = parts.iter().map(|x| x.1).sum();
    Ok(NormReport { kind, k, value, directions: ctx.dirs.len(), family, parts })
}

/// CSV row: scenario, k, norm name, direction count, value, candidate-family id.
pub fn norm_csv_row(scenario: &str, r: &NormReport) -> Vec<String> {
    vec![
        scenario.to_string(),
        r.k.to_string(),
        r.kind.name().to_string(),
        r.directions.to_string(),
        crate::io::fmt_f64(r.value),
        r.family.clone(),
    ]
}

pub const NORM_CSV_HEADER: [&str; 6] = ["scenario", "k", "norm", "directions", "value", "family"];

/// `e^{it Delta} f` sampled at `times`, by the exact Fourier propagator.
pub fn free_evolution(sp: &Spectral, f: &[Complex64], times: Vec<f64>) -> Result<SpaceTimeField> {
    let mut hat = f.to_vec();
    sp.forward(&mut hat);
    let slices = times
        .iter()
        .map(|&t| {
            let mut h: Vec<Complex64> =
                hat.iter().zip(sp.ksq()).map(|(z, &k2)| z * Complex64::from_polar(1.0, -t * k2)).collect();
            sp.inverse(&mut h);
            h
        })
        .collect();
    SpaceTimeField::new(sp.grid, times, slices)
}
