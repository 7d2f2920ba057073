//! The acceptance suite: twelve numerical criteria, each reported as one pass/fail line
//! with the measured quantities.

use std::f64::consts::PI;
use std::fmt;

use crate::caloric::{default_q_prime, ParabolicGrid};
use crate::error::Result;
use crate::experiments::{
    a0_max, aform_rows, conservation_run, covariance_check, decaying_bands, dyadic_decay, l2_distance, lipschitz_linearity,
    lipschitz_run, residual_rows, schcov2_rows,
};
use crate::flow::{energy_e1, evolve_to, helical_wave, max_stable_dt, smap_rhs, FlowState, SphereField};
use crate::gauge::{extract_gauge, AForm, CaloricGauge, GaugeSettings, Identity, TimeDerivative};
use crate::grid::GridSpec;
use crate::probe::{probe, EnsembleSpec, Estimate};
use crate::scenario::{gaussian_bump, random_band_field};
use crate::spaces::envelope::{frequency_envelope, FrequencyEnvelope};
use crate::spaces::free_evolution;
use crate::spacetime::SpaceTimeField;
use crate::spectral::Spectral;

pub const COUNT: u32 = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2} {:<28} {verdict}  {}", self.id, self.name, self.detail)
    }
}

pub fn name(id: u32) -> &'static str {
    match id {
        1 => "conservation",
        2 => "helical convergence",
        3 => "gauge identities",
        4 => "caloric condition A0 = 0",
        5 => "integral representation",
        6 => "modified Schrodinger equation",
        7 => "gauge covariance",
        8 => "derivative-field mass",
        9 => "linear probes",
        10 => "heat-flow dyadic decay",
        11 => "Lipschitz dependence",
        12 => "frequency envelopes",
        _ => "unknown",
    }
}

/// Runs criterion `id`; evaluation errors count as failures.
pub fn run(id: u32) -> CriterionResult {
    let out = match id {
        1 => conservation(),
        2 => helical(),
        3 => identities(),
        4 => caloric_condition(),
        5 => integral_representation(),
        6 => modified_schrodinger(),
        7 => covariance(),
        8 => mass(),
        9 => probes(),
        10 => heat_decay(),
        11 => lipschitz(),
        12 => envelopes(),
        _ => Ok((false, format!("no criterion {id}"))),
    };
    let (passed, detail) = out.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult { id, name: name(id), passed, detail }
}

pub fn run_all() -> Vec<CriterionResult> {
    (1..=COUNT).map(run).collect()
}

type Outcome = Result<(bool, String)>;

const BUMP_EPS: f64 = 0.05;
const Q: [f64; 3] = [0.0, 0.0, 1.0];

fn bump_setup(n: usize) -> Result<(Spectral, SphereField)> {
    let g = GridSpec::new(2, n, 16.0)?;
    let f = gaussian_bump(g, Q, BUMP_EPS, 1.0)?;
    Ok((Spectral::new(g), f))
}

fn gauge(sp: &Spectral, f: &SphereField, pg: &ParabolicGrid) -> Result<CaloricGauge> {
    CaloricGauge::build(sp, f, pg, 2, default_q_prime(f.q))
}

fn conservation() -> Outcome {
    let (sp, f) = bump_setup(128)?;
    let dt = 0.5 * max_stable_dt(&sp);
    let (_, s) = conservation_run(&sp, &f, 1.0, dt, 50)?;
    let ok = s.e0_drift <= 1e-6 && s.e1_drift <= 1e-6;
    Ok((ok, format!("dE0/E0 = {:.2e}, dE1/E1 = {:.2e} (<= 1e-6), {} steps", s.e0_drift, s.e1_drift, s.steps)))
}

fn helical_error(n: usize, dt: f64, t: f64) -> Result<f64> {
    let g = GridSpec::new(2, n, 2.0 * PI)?;
    let sp = Spectral::new(g);
    let (kappa, theta) = (1.0, PI / 4.0);
    let end = evolve_to(&sp, &FlowState::new(helical_wave(g, kappa, theta, 0.0)), t, dt)?;
    Ok(l2_distance(&end.field, &helical_wave(g, kappa, theta, t)))
}

/// At `n = 256` the admissible steps leave only round-off, so the order is measured on
/// a coarse grid where steps near the stability bound are allowed.
fn helical() -> Outcome {
    let e = helical_error(256, 1e-4, 0.5)?;
    let e_half = helical_error(256, 5e-5, 0.5)?;
    let (a, b) = (helical_error(16, 0.04, 0.5)?, helical_error(16, 0.02, 0.5)?);
    let ok = e <= 1e-4 && a / b >= 8.0;
    Ok((
        ok,
        format!(
            "n=256: err(1e-4) = {e:.2e} (<= 1e-4), err(5e-5) = {e_half:.2e}; n=16: err(0.04)/err(0.02) = {:.2} (>= 8)",
            a / b
        ),
    ))
}

/// Round-off level below which a residual counts as converged.
const FLOOR: f64 = 1e-13;

fn identity_linf(n: usize) -> Result<Vec<(Identity, f64)>> {
    let (sp, f) = bump_setup(n)?;
    let pg = ParabolicGrid::for_grid(&sp.grid, 64.0, 1.1)?;
    let cg = gauge(&sp, &f, &pg)?;
    let stack = cg.stack(&sp)?;
    let td = TimeDerivative { dphi: smap_rhs(&sp, &f), dv: None, dw: None };
    let g0 = extract_gauge(&sp, &cg.traj, &cg.frame, 0, Some(&td))?;
    let rows = residual_rows(&sp, &cg, &stack, &g0)?;
    Ok([Identity::Id1, Identity::Id3, Identity::HeatCov, Identity::SchCov]
        .into_iter()
        .map(|id| (id, rows.iter().filter(|r| r.identity == id.name()).map(|r| r.linf).fold(0.0, f64::max)))
        .collect())
}

fn identities() -> Outcome {
    let coarse = identity_linf(64)?;
    let fine = identity_linf(128)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for ((id, c), (_, f)) in coarse.iter().zip(&fine) {
        let converged = *f <= 1e-8 && (c / f >= 10.0 || c.max(*f) <= FLOOR);
        ok &= converged;
        parts.push(format!("{} {:.1e} -> {:.1e}", id.name(), c, f));
    }
    Ok((ok, format!("Linf n=64 -> n=128: {} (<= 1e-8, >= 10x or both <= {FLOOR:.0e})", parts.join(", "))))
}

fn caloric_condition() -> Outcome {
    let (sp, f) = bump_setup(128)?;
    let pg = ParabolicGrid::for_grid(&sp.grid, 64.0, 1.1)?;
    let a = a0_max(&gauge(&sp, &f, &pg)?.stack(&sp)?);
    let b = a0_max(&gauge(&sp, &f, &pg.refine())?.stack(&sp)?);
    Ok((a <= 1e-6 && a / b >= 4.0, format!("max|A0| = {a:.2e} (<= 1e-6), refined {b:.2e}, reduction {:.1}x (>= 4)", a / b)))
}

fn aform_worst(sp: &Spectral, f: &SphereField, s_max: f64) -> Result<(f64, f64)> {
    let pg = ParabolicGrid::for_grid(&sp.grid, s_max, 1.1)?;
    let rows = aform_rows(sp, &gauge(sp, f, &pg)?.stack(sp)?, s_max)?;
    let direct: Vec<_> = rows.iter().filter(|r| r.form == AForm::Direct).collect();
    Ok((direct.iter().map(|r| r.relative_l2).fold(0.0, f64::max), direct.iter().map(|r| r.tail_bound).fold(0.0, f64::max)))
}

fn integral_representation() -> Outcome {
    let (sp, f) = bump_setup(128)?;
    let (a, ta) = aform_worst(&sp, &f, 64.0)?;
    let (b, tb) = aform_worst(&sp, &f, 256.0)?;
    Ok((
        a <= 0.02 && b <= 0.01,
        format!("rel L2: S_max=64 {a:.2e} (<= 2e-2, tail {ta:.1e}), S_max=256 {b:.2e} (<= 1e-2, tail {tb:.1e})"),
    ))
}

fn modified_schrodinger() -> Outcome {
    let (sp, f) = bump_setup(128)?;
    let pg = ParabolicGrid::for_grid(&sp.grid, 64.0, 1.1)?;
    let set = GaugeSettings { pgrid: &pg, substeps: 2, q_prime: default_q_prime(f.q), flow_dt: 0.5 * max_stable_dt(&sp) };
    let rows = schcov2_rows(&sp, &f, &[1e-4, 5e-5], set)?;
    let ratio = rows[0].l2 / rows[1].l2;
    Ok((ratio >= 3.5, format!("L2 residual h=1e-4 {:.2e}, h=5e-5 {:.2e}, ratio {ratio:.2} (>= 3.5)", rows[0].l2, rows[1].l2)))
}

fn covariance() -> Outcome {
    let (sp, f) = bump_setup(128)?;
    let pg = ParabolicGrid::for_grid(&sp.grid, 64.0, 1.1)?;
    let c = covariance_check(&sp, &f, &pg, 2, 1.1)?;
    Ok((
        c.max_a_diff <= 1e-8 && c.max_psi_modulus_diff <= 1e-8,
        format!("max|A-A'| = {:.2e}, max||psi|-|psi'|| = {:.2e} (<= 1e-8)", c.max_a_diff, c.max_psi_modulus_diff),
    ))
}

fn mass() -> Outcome {
    let (sp, f) = bump_setup(128)?;
    let pg = ParabolicGrid::for_grid(&sp.grid, 64.0, 1.1)?;
    let cg = gauge(&sp, &f, &pg)?;
    let g0 = extract_gauge(&sp, &cg.traj, &cg.frame, 0, None)?;
    let e1 = energy_e1(&sp, &f);
    let rel = (g0.derivative_mass() - e1).abs() / e1;
    Ok((rel <= 1e-10, format!("|sum ||psi_m||^2 - E1| / E1 = {rel:.2e} (<= 1e-10)")))
}

fn probes() -> Outcome {
    let sp = Spectral::new(GridSpec::new(2, 128, 2.0 * PI)?);
    let spec = EnsembleSpec::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for est in [Estimate::Locsmobound, Estimate::Linst, Estimate::Linnew, Estimate::Linmax] {
        let r = probe(&sp, est, &[2, 3, 4, 5], &spec, None)?;
        let pass = r.passes(est.default_gate());
        ok &= pass;
        parts.push(format!("{} {:+.3} (<= {})", est.name(), r.slope, est.default_gate()));
    }
    Ok((ok, format!("slopes, k = 2..5, {} members: {}", spec.members, parts.join(", "))))
}

fn heat_decay() -> Outcome {
    let (sp, f) = bump_setup(128)?;
    let ks: Vec<i32> = sp.grid.window().indices().filter(|&k| k >= 0).collect();
    let rows = dyadic_decay(&sp, &f, &ks, 2, 2)?;
    let good = decaying_bands(&rows, 4.0);
    let factors: Vec<String> = ks
        .iter()
        .map(|&k| {
            let r: Vec<f64> = rows.iter().filter(|r| r.k == k).map(|r| r.norm).collect();
            format!("k={k}: {:.1}x/{:.1}x", r[0] / r[1], r[1] / r[2])
        })
        .collect();
    Ok((good.len() >= 3, format!("{} bands decay >= 4x per quadrupling (need 3); {}", good.len(), factors.join(", "))))
}

fn lipschitz() -> Outcome {
    let (sp, f) = bump_setup(128)?;
    let dt = 0.5 * max_stable_dt(&sp);
    let rows = lipschitz_run(&sp, &f, &[1e-2, 5e-3], 1.0, 1.0, dt, 10)?;
    let dev = lipschitz_linearity(&rows);
    Ok((
        dev <= 0.2,
        format!(
            "sup_t ||phi^0 - phi^h||: h=1e-2 {:.3e}, h=5e-3 {:.3e}, ratio {:.3} (2 within 20%)",
            rows[0].distance,
            rows[1].distance,
            rows[0].distance / rows[1].distance
        ),
    ))
}

/// Unweighted envelopes of random multi-band data; weighted ones are reported only, since
/// `2^{sigma k}` weights concentrate the sizes and the square-sum ratio then approaches the
/// window constant rather than 4.
fn envelopes() -> Outcome {
    let sp = Spectral::new(GridSpec::new(2, 128, 2.0 * PI)?);
    let window: Vec<i32> = sp.grid.window().indices().collect();
    let layouts = [vec![0, 1, 2, 3], window.clone(), vec![1, 3, 5]];
    let (mut defect, mut ratio, mut margin, mut weighted) = (0.0f64, 0.0f64, f64::INFINITY, 0.0f64);
    let mut bound = 0.0;
    for bands in &layouts {
        for seed in 0..8 {
            let w = random_band_field(&sp, bands, seed)?;
            let u = free_evolution(&sp, &w.data, SpaceTimeField::symmetric_times(0.05, 9))?;
            let env: FrequencyEnvelope = frequency_envelope(&sp, &u, 0.0)?;
            defect = defect.max(env.slow_variation_defect());
            ratio = ratio.max(env.square_sum_ratio());
            margin = margin.min(env.majorization_margin());
            bound = env.window_constant();
            weighted = weighted.max(frequency_envelope(&sp, &u, 1.0)?.square_sum_ratio());
        }
    }
    Ok((
        defect <= 1e-12 && ratio <= 4.0 && margin >= 0.0,
        format!(
            "slow-variation defect {defect:.1e} (<= 1e-12), max sum g^2 / sum a^2 = {ratio:.3} (<= 4), \
             3 band layouts x 8 seeds; sigma=1: {weighted:.3} (window constant {bound:.2})"
        ),
    ))
}
