//! Experiment pipelines behind the command-line runner: evolution with conservation
//! monitoring, the caloric-gauge report, norm tables, probes, and plot-ready reports.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::caloric::{default_q_prime, rotate_q_prime, ParabolicGrid};
use crate::error::{LabError, Result};
use crate::flow::{energy_e0, energy_e1, evolve, evolve_to, helical_wave, smap_rhs, write_checkpoint, FlowState, SphereField};
use crate::gauge::{
    a_from_integral, extract_gauge, identity_residual, psi_s_derivative, AForm, CaloricGauge, GaugeData, GaugeSettings,
    Identity, ResidualAux, ResidualRow, TimeDerivative, TimeFamily,
};
use crate::grid::{dot3, ComplexField, GridSpec, RealField};
use crate::io::{fmt_f64, write_csv, write_json};
use crate::littlewood_paley::{dyadic_multiplier, project_dyadic, project_dyadic_vec};
use crate::probe::{duhamel_probe, ensemble_member, probe, propagate, DuhamelReport, Estimate, ProbeReport};
use crate::scenario::{check_smallness, initial_data, perturb, ScenarioConfig, ScenarioKind};
use crate::spaces::composite::{norm_csv_row, CompositeParams, NormKind, NormReport, NORM_CSV_HEADER};
use crate::spaces::envelope::{data_envelope, FrequencyEnvelope};
use crate::spaces::{composite_norm, free_evolution};
use crate::spacetime::SpaceTimeField;
use crate::spectral::Spectral;

/// Cells from the box faces scanned by the boundary-tail monitor.
pub const TAIL_WIDTH: usize = 4;

// ---------------------------------------------------------------- evolution

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationRow {
    pub t: f64,
    pub e0: f64,
    pub e1: f64,
    pub sphere_drift: f64,
    pub boundary_tail: f64,
}

impl ConservationRow {
    fn of(sp: &Spectral, s: &FlowState) -> Self {
        Self {
            t: s.t,
            e0: energy_e0(&s.field),
            e1: energy_e1(sp, &s.field),
            sphere_drift: s.field.phi.sphere_drift(),
            boundary_tail: s.field.boundary_tail(TAIL_WIDTH),
        }
    }

    fn cells(&self) -> Vec<String> {
        [self.t, self.e0, self.e1, self.sphere_drift, self.boundary_tail].iter().map(|&x| fmt_f64(x)).collect()
    }
}

pub const CONSERVATION_HEADER: [&str; 5] = ["t", "E0", "E1", "sphere_drift", "boundary_tail"];

/// Relative change of `x` against `x0`, absolute when `x0 = 0`.
pub fn relative_drift(x0: f64, x: f64) -> f64 {
    if x0 == 0.0 {
        (x - x0).abs()
    } else {
        ((x - x0) / x0).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveSummary {
    pub steps: usize,
    pub dt: f64,
    pub t_end: f64,
    pub e0_drift: f64,
    pub e1_drift: f64,
    /// `L^2` distance to the exact helical solution at `t_end`.
    pub exact_error: Option<f64>,
    pub rows: Vec<ConservationRow>,
}

/// Evolves `field` to `t_end`, recording the conserved quantities every `cadence` steps.
pub fn conservation_run(sp: &Spectral, field: &SphereField, t_end: f64, dt: f64, cadence: usize) -> Result<(FlowState, EvolveSummary)> {
    let mut rows = Vec::new();
    let end = evolve(sp, &FlowState::new(field.clone()), t_end, dt, cadence, &mut |s| {
        rows.push(ConservationRow::of(sp, s));
        Ok(())
    })?;
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    let summary = EvolveSummary {
        steps: end.step_count,
        dt,
        t_end,
        e0_drift: relative_drift(first.e0, last.e0),
        e1_drift: relative_drift(first.e1, last.e1),
        exact_error: None,
        rows,
    };
    Ok((end, summary))
}

/// `L^2` distance between two maps.
pub fn l2_distance(a: &SphereField, b: &SphereField) -> f64 {
    a.phi.sub(&b.phi).norm_l2()
}

/// Homogeneous Sobolev distance `||D^s (a - b)||_{L^2}` with `s = (d - 2)/2`.
pub fn critical_distance(sp: &Spectral, a: &SphereField, b: &SphereField) -> f64 {
    let s = (sp.grid.d as f64 - 2.0) / 2.0;
    if s == 0.0 {
        return l2_distance(a, b);
    }
    let diff = a.phi.sub(&b.phi);
    let mut total = 0.0;
    for c in &diff.comps {
        let h = sp.fft(&ComplexField { grid: sp.grid, data: c.iter().map(|&x| x.into()).collect() });
        total += h.iter().zip(sp.ksq()).map(|(z, k2)| k2.powf(s) * z.norm_sqr()).sum::<f64>();
    }
    (total * sp.grid.cell_volume() / sp.grid.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRow {
    pub h: f64,
    /// `sup_t` of the critical distance over the sampled times.
    pub distance: f64,
}

/// Evolves `base` and each perturbed copy in lockstep; `samples` equally spaced times.
pub fn lipschitz_run(sp: &Spectral, base: &SphereField, hs: &[f64], width: f64, t_end: f64, dt: f64, samples: usize) -> Result<Vec<LipschitzRow>> {
    let mut out = Vec::new();
    for &h in hs {
        let mut a = FlowState::new(base.clone());
        let mut b = FlowState::new(perturb(base, h, width)?);
        let mut sup = critical_distance(sp, &a.field, &b.field);
        for j in 1..=samples {
            let t = t_end * j as f64 / samples as f64;
            a = evolve_to(sp, &a, t, dt)?;
            b = evolve_to(sp, &b, t, dt)?;
            sup = sup.max(critical_distance(sp, &a.field, &b.field));
        }
        out.push(LipschitzRow { h, distance: sup });
    }
    Ok(out)
}

/// Largest departure of `distance(h) / distance(h')` from `h / h'` relative to `h / h'`.
pub fn lipschitz_linearity(rows: &[LipschitzRow]) -> f64 {
    let mut worst: f64 = 0.0;
    for w in rows.windows(2) {
        let want = w[0].h / w[1].h;
        worst = worst.max((w[0].distance / w[1].distance / want - 1.0).abs());
    }
    worst
}

pub fn run_evolve(cfg: &ScenarioConfig, out: &Path) -> Result<EvolveSummary> {
    let sp = Spectral::new(cfg.grid()?);
    let field = initial_data(cfg, &sp)?;
    let dt = cfg.flow_dt(&sp);
    write_checkpoint(out, "initial", &FlowState::new(field.clone()), dt)?;
    let (end, mut summary) = conservation_run(&sp, &field, cfg.run.t_end, dt, cfg.outputs.cadence)?;
    write_checkpoint(out, "final", &end, dt)?;
    let rows: Vec<Vec<String>> = summary.rows.iter().map(|r| r.cells()).collect();
    write_csv(&out.join("conservation.csv"), &CONSERVATION_HEADER, &rows)?;
    if cfg.scenario == ScenarioKind::Helical {
        let exact = helical_wave(sp.grid, cfg.physics.kappa, cfg.physics.theta, end.t);
        summary.exact_error = Some(l2_distance(&end.field, &exact));
    }
    if cfg.scenario == ScenarioKind::NearbyPair {
        let rows = lipschitz_run(&sp, &field, &cfg.physics.h, cfg.physics.width, cfg.run.t_end, dt, 10)?;
        let cells: Vec<Vec<String>> = rows.iter().map(|r| vec![fmt_f64(r.h), fmt_f64(r.distance)]).collect();
        write_csv(&out.join("lipschitz.csv"), &["h", "distance"], &cells)?;
        let dev = lipschitz_linearity(&rows);
        write_json(&out.join("lipschitz.json"), &serde_json::json!({ "rows": rows, "linearity_defect": dev }))?;
        if dev > 0.2 {
            return Err(LabError::GateFailed(format!("lipschitz linearity defect {dev:.3} > 0.2")));
        }
    }
    write_json(&out.join("evolve_summary.json"), &SummaryView::from(&summary))?;
    Ok(summary)
}

#[derive(Serialize)]
struct SummaryView {
    steps: usize,
    dt: f64,
    t_end: f64,
    e0_drift: f64,
    e1_drift: f64,
    exact_error: Option<f64>,
}

impl From<&EvolveSummary> for SummaryView {
    fn from(s: &EvolveSummary) -> Self {
        Self { steps: s.steps, dt: s.dt, t_end: s.t_end, e0_drift: s.e0_drift, e1_drift: s.e1_drift, exact_error: s.exact_error }
    }
}

// ---------------------------------------------------------------- gauge

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AFormRow {
    pub m: usize,
    pub form: AForm,
    pub s_max: f64,
    /// `||A_m - integral||_{L^2} / ||A_m||_{L^2}` at `s = 0`.
    pub relative_l2: f64,
    pub tail_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A0Monitor {
    pub max: f64,
    pub refined_max: f64,
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCheck {
    pub rotation: f64,
    pub max_a_diff: f64,
    pub max_psi_modulus_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeReport {
    pub residuals: Vec<ResidualRow>,
    pub aform: Vec<AFormRow>,
    pub a0: A0Monitor,
    pub covariance: CovarianceCheck,
    pub derivative_mass: f64,
    pub e1: f64,
    pub frame_defect: f64,
    pub smallness: f64,
}

/// `max_{nodes, x} |A_0|` of a gauge.
pub fn a0_max(stack: &[GaugeData]) -> f64 {
    stack.iter().map(|g| g.a[0].max_abs()).fold(0.0, f64::max)
}

/// Relative `L^2` distance `||a - b|| / ||a||`, absolute when `a = 0`.
pub fn relative_l2(a: &RealField, b: &RealField) -> f64 {
    let num = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * a.grid.cell_volume();
    let den = a.norm_l2();
    if den == 0.0 {
        num.sqrt()
    } else {
        num.sqrt() / den
    }
}

/// Direct `A_m(0)` against the integral representation, for every `m` and both integrands.
pub fn aform_rows(sp: &Spectral, stack: &[GaugeData], s_max: f64) -> Result<Vec<AFormRow>> {
    let mut rows = Vec::new();
    for m in 1..=sp.grid.d {
        for form in [AForm::Direct, AForm::Expanded] {
            let int = a_from_integral(sp, stack, m, form, 0)?;
            rows.push(AFormRow { m, form, s_max, relative_l2: relative_l2(&stack[0].a[m], &int.field), tail_bound: int.tail_bound });
        }
    }
    Ok(rows)
}

/// Gauge fields under two frame choices at every node.
pub fn covariance_check(sp: &Spectral, field: &SphereField, pgrid: &ParabolicGrid, substeps: usize, rotation: f64) -> Result<CovarianceCheck> {
    let q1 = default_q_prime(field.q);
    let q2 = rotate_q_prime(field.q, q1, rotation);
    let a = CaloricGauge::build(sp, field, pgrid, substeps, q1)?.stack(sp)?;
    let b = CaloricGauge::build(sp, field, pgrid, substeps, q2)?.stack(sp)?;
    let (mut da, mut dp) = (0.0f64, 0.0f64);
    for (ga, gb) in a.iter().zip(&b) {
        for m in 0..=sp.grid.d {
            for (x, y) in ga.a[m].data.iter().zip(&gb.a[m].data) {
                da = da.max((x - y).abs());
            }
            for (x, y) in ga.psi[m].data.iter().zip(&gb.psi[m].data) {
                dp = dp.max((x.norm() - y.norm()).abs());
            }
        }
    }
    Ok(CovarianceCheck { rotation, max_a_diff: da, max_psi_modulus_diff: dp })
}

/// Spatial and parabolic identities at every node, plus the `s = 0` Schrodinger identity.
pub fn residual_rows(sp: &Spectral, cg: &CaloricGauge, stack: &[GaugeData], g0: &GaugeData) -> Result<Vec<ResidualRow>> {
    let none = ResidualAux::default();
    let nodes = &cg.traj.pgrid.s_nodes;
    let mut rows = vec![ResidualRow::new(Identity::SchCov, g0, identity_residual(sp, g0, Identity::SchCov, &none)?, None)];
    for (i, g) in stack.iter().enumerate() {
        for id in [Identity::Id1, Identity::Id3, Identity::HeatCov] {
            rows.push(ResidualRow::new(id, g, identity_residual(sp, g, id, &none)?, None));
        }
        let aux = ResidualAux { dpsi_ds: Some(psi_s_derivative(stack, nodes, i)), ..Default::default() };
        rows.push(ResidualRow::new(Identity::HeatCov2, g, identity_residual(sp, g, Identity::HeatCov2, &aux)?, None));
    }
    Ok(rows)
}

/// `SchCov2` residual at `s = 0` for each time stencil `h`.
pub fn schcov2_rows(sp: &Spectral, field: &SphereField, hs: &[f64], set: GaugeSettings) -> Result<Vec<ResidualRow>> {
    let state = FlowState::new(field.clone());
    let mut rows = Vec::new();
    for &h in hs {
        let fam = TimeFamily::build(sp, &state, h, set)?;
        let g = fam.gauge_at(sp, 0)?;
        let aux = ResidualAux { dpsi_dt: Some(fam.dpsi_dt(sp, 0)?), ..Default::default() };
        rows.push(ResidualRow::new(Identity::SchCov2, &g, identity_residual(sp, &g, Identity::SchCov2, &aux)?, Some(h)));
    }
    Ok(rows)
}

pub fn gauge_report(sp: &Spectral, field: &SphereField, cfg: &ScenarioConfig) -> Result<GaugeReport> {
    let smallness = check_smallness(sp, field)?;
    let r = &cfg.run;
    let pgrid = ParabolicGrid::for_grid(&sp.grid, r.s_max, r.s_ratio)?;
    let cg = CaloricGauge::build(sp, field, &pgrid, r.heat_substeps, default_q_prime(field.q))?;
    let stack = cg.stack(sp)?;
    let td = TimeDerivative { dphi: smap_rhs(sp, field), dv: None, dw: None };
    let g0 = extract_gauge(sp, &cg.traj, &cg.frame, 0, Some(&td))?;
    let mut residuals = residual_rows(sp, &cg, &stack, &g0)?;
    if let Some(h) = r.time_stencil {
        let set = GaugeSettings { pgrid: &pgrid, substeps: r.heat_substeps, q_prime: default_q_prime(field.q), flow_dt: cfg.flow_dt(sp) };
        residuals.extend(schcov2_rows(sp, field, &[h, 0.5 * h], set)?);
    }
    let aform = aform_rows(sp, &stack, r.s_max)?;
    let refined = CaloricGauge::build(sp, field, &pgrid.refine(), r.heat_substeps, default_q_prime(field.q))?.stack(sp)?;
    let (max, refined_max) = (a0_max(&stack), a0_max(&refined));
    let a0 = A0Monitor { max, refined_max, reduction: if refined_max > 0.0 { max / refined_max } else { f64::INFINITY } };
    let covariance = covariance_check(sp, field, &pgrid, r.heat_substeps, 1.1)?;
    Ok(GaugeReport {
        residuals,
        aform,
        a0,
        covariance,
        derivative_mass: g0.derivative_mass(),
        e1: energy_e1(sp, field),
        frame_defect: cg.defect(),
        smallness,
    })
}

pub const RESIDUAL_HEADER: [&str; 6] = ["identity", "s", "L2", "Linf", "n", "dt"];

pub fn run_gauge(cfg: &ScenarioConfig, out: &Path) -> Result<GaugeReport> {
    let sp = Spectral::new(cfg.grid()?);
    let field = initial_data(cfg, &sp)?;
    let rep = gauge_report(&sp, &field, cfg)?;
    let rows: Vec<Vec<String>> = rep
        .residuals
        .iter()
        .map(|r| {
            vec![
                r.identity.clone(),
                fmt_f64(r.s),
                fmt_f64(r.l2),
                fmt_f64(r.linf),
                r.n.to_string(),
                r.dt.map(fmt_f64).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&out.join("residuals.csv"), &RESIDUAL_HEADER, &rows)?;
    write_json(&out.join("gauge_report.json"), &rep)?;
    Ok(rep)
}

// ---------------------------------------------------------------- norms

/// Tangent coordinates `(phi - Q).e_1 + i (phi - Q).e_2` in the frame of `Q'`.
pub fn tangent_coordinate(field: &SphereField) -> ComplexField {
    let q = field.q;
    let e1 = default_q_prime(q);
    let e2 = crate::grid::cross3(q, e1);
    let g = field.grid();
    ComplexField {
        grid: g,
        data: (0..g.len())
            .map(|i| {
                let p = field.phi.get(i);
                let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
                Complex64::new(dot3(d, e1), dot3(d, e2))
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTable {
    pub reports: Vec<NormReport>,
    /// `(k, omega', omega, S^{omega'} / S^{omega})` for `omega' < omega`.
    pub s_ordering: Vec<(i32, f64, f64, f64)>,
    pub envelope: FrequencyEnvelope,
}

/// Norms of the free evolution of each dyadic piece of `w` over `[-4^{-k}, 4^{-k}]`.
pub fn norm_table(sp: &Spectral, w: &ComplexField, ks: &[i32], base: CompositeParams, omegas: &[f64]) -> Result<Vec<(i32, Vec<NormReport>)>> {
    let mut out = Vec::new();
    let total = w.norm_l2();
    for &k in ks {
        let piece = project_dyadic(sp, w, k)?;
        if piece.norm_l2() <= 1e-10 * total.max(f64::MIN_POSITIVE) {
            continue;
        }
        let u = free_evolution(sp, &piece.data, SpaceTimeField::symmetric_times(4f64.powi(-k), 33))?;
        let mut reps = Vec::new();
        let kinds: &[NormKind] = if sp.grid.d == 2 { &[NormKind::F0, NormKind::F, NormKind::G, NormKind::N] } else { &[NormKind::F, NormKind::G, NormKind::N] };
        for &kind in kinds {
            reps.push(composite_norm(sp, &u, k, kind, base)?);
        }
        for &om in omegas {
            reps.push(composite_norm(sp, &u, k, NormKind::S, CompositeParams { omega: om, ..base })?);
        }
        out.push((k, reps));
    }
    Ok(out)
}

pub fn run_norms(cfg: &ScenarioConfig, out: &Path) -> Result<NormTable> {
    let sp = Spectral::new(cfg.grid()?);
    let field = initial_data(cfg, &sp)?;
    let w = tangent_coordinate(&field);
    let ks: Vec<i32> = if cfg.run.ks.is_empty() { sp.grid.window().indices().collect() } else { cfg.run.ks.clone() };
    let base = CompositeParams { d: sp.grid.d, k_cal: cfg.run.k_cal, directions: cfg.run.directions, ..CompositeParams::new(sp.grid.d) };
    let mut omegas = cfg.run.omega.clone();
    omegas.sort_by(f64::total_cmp);
    let table = norm_table(&sp, &w, &ks, base, &omegas)?;
    let mut reports = Vec::new();
    let mut s_ordering = Vec::new();
    for (k, reps) in table {
        let s: Vec<f64> = reps.iter().filter(|r| r.kind == NormKind::S).map(|r| r.value).collect();
        for a in 0..s.len() {
            for b in a + 1..s.len() {
                s_ordering.push((k, omegas[a], omegas[b], s[a] / s[b]));
            }
        }
        reports.extend(reps);
    }
    let rows: Vec<Vec<String>> = reports.iter().map(|r| norm_csv_row(cfg.scenario.name(), r)).collect();
    write_csv(&out.join("norms.csv"), &NORM_CSV_HEADER, &rows)?;
    let envelope = data_envelope(&sp, &field.phi, cfg.run.sigma)?;
    write_csv(&out.join("envelope.csv"), &["k", "alpha", "gamma"], &envelope_rows(&envelope))?;
    let table = NormTable { reports, s_ordering, envelope };
    write_json(&out.join("norms.json"), &table)?;
    if let Some(bad) = table.s_ordering.iter().find(|x| x.3 > 2.0) {
        return Err(LabError::GateFailed(format!("S ordering at k = {}: S^{} / S^{} = {:.3} > 2", bad.0, bad.1, bad.2, bad.3)));
    }
    Ok(table)
}

fn envelope_rows(e: &FrequencyEnvelope) -> Vec<Vec<String>> {
    e.ks.iter().enumerate().map(|(i, k)| vec![k.to_string(), fmt_f64(e.alpha[i]), fmt_f64(e.gamma[i])]).collect()
}

// ---------------------------------------------------------------- probes

/// Bands probed by default: `{2, 3, 4, 5}` clipped to the grid window.
pub fn default_probe_bands(grid: &GridSpec) -> Vec<i32> {
    let w = grid.window();
    (2..=5).filter(|&k| w.contains(k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuhamelSweep {
    pub reports: Vec<DuhamelReport>,
    /// `max ratio / min ratio` over the bands.
    pub spread: f64,
}

/// `u0 = 0` forced by `4^k e^{it Delta} f_k` (a packet carried by the free flow).
pub fn duhamel_sweep(sp: &Spectral, ks: &[i32], cfg: &ScenarioConfig) -> Result<DuhamelSweep> {
    let spec = cfg.ensemble();
    let mut params = CompositeParams::new(sp.grid.d);
    params.k_cal = cfg.run.k_cal;
    params.directions = cfg.run.directions.min(8);
    let mut reports = Vec::new();
    for &k in ks {
        let f = ensemble_member(sp, k, None, &spec, 0)?;
        let c = 4f64.powi(k);
        let src = |t: f64| propagate(sp, &f.data, t).into_iter().map(|z| z * c).collect::<Vec<_>>();
        let times = SpaceTimeField::symmetric_times(spec.half_width(k), 17);
        let u0 = ComplexField::zeros(sp.grid);
        reports.push(duhamel_probe(sp, &u0, &src, &times, k, params, 64)?);
    }
    let hi = reports.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let lo = reports.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(DuhamelSweep { reports, spread: hi / lo })
}

pub fn run_probe(cfg: &ScenarioConfig, out: &Path) -> Result<Vec<ProbeReport>> {
    let sp = Spectral::new(cfg.grid()?);
    let ks = if cfg.run.ks.is_empty() { default_probe_bands(&sp.grid) } else { cfg.run.ks.clone() };
    let spec = cfg.ensemble();
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for name in &cfg.run.estimates {
        if name == "duhamel" {
            let sweep = duhamel_sweep(&sp, &ks, cfg)?;
            write_json(&out.join("probe_duhamel.json"), &sweep)?;
            if sweep.spread > 2.0 {
                failed.push(format!("duhamel ratio spread {:.3} > 2", sweep.spread));
            }
            continue;
        }
        let est = Estimate::parse(name)?;
        let rep = probe(&sp, est, &ks, &spec, None)?;
        write_json(&out.join(format!("probe_{}.json", est.name())), &rep)?;
        if !rep.passes(est.default_gate()) {
            failed.push(format!("{} slope {:.4} exceeds {}", est.name(), rep.slope, est.default_gate()));
        }
        reports.push(rep);
    }
    if !failed.is_empty() {
        return Err(LabError::GateFailed(failed.join("; ")));
    }
    Ok(reports)
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub k: i32,
    pub s: f64,
    pub norm: f64,
}

/// `||P_k (phi(s) - Q)||_{L^2}` along the heat flow at `s = 4^{m - k}`, `m = 0..=steps`.
pub fn dyadic_decay(sp: &Spectral, field: &SphereField, ks: &[i32], steps: i32, substeps: usize) -> Result<Vec<DecayRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        let p0 = 4f64.powi(-k);
        let first = 4f64.powi(-sp.grid.window().k_max).min(p0);
        let pg = ParabolicGrid::geometric(4f64.powi(steps) * p0, first, 4f64.powf(0.125))?;
        let traj = crate::caloric::heat_evolve(sp, field, &pg, substeps)?;
        for m in 0..=steps {
            let s = 4f64.powi(m) * p0;
            let i = pg
                .s_nodes
                .iter()
                .position(|x| (x / s - 1.0).abs() < 1e-9)
                .ok_or_else(|| LabError::InvalidGrid(format!("no parabolic node at s = {s}")))?;
            let phi = &traj.snapshots[i].phi;
            let q = crate::grid::VectorField3::constant(sp.grid, field.q);
            rows.push(DecayRow { k, s, norm: project_dyadic_vec(sp, &phi.sub(&q), k)?.norm_l2() });
        }
    }
    Ok(rows)
}

/// Bands whose decay factor per quadrupling of `s` is at least `factor` at every step.
pub fn decaying_bands(rows: &[DecayRow], factor: f64) -> Vec<i32> {
    let mut ks: Vec<i32> = rows.iter().map(|r| r.k).collect();
    ks.dedup();
    ks.into_iter()
        .filter(|&k| {
            let r: Vec<&DecayRow> = rows.iter().filter(|r| r.k == k).collect();
            r.windows(2).all(|w| w[0].norm >= factor * w[1].norm)
        })
        .collect()
}

pub fn run_report(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let sp = Spectral::new(cfg.grid()?);
    let field = initial_data(cfg, &sp)?;
    let ks: Vec<i32> = if cfg.run.ks.is_empty() { sp.grid.window().indices().filter(|&k| k >= 0).collect() } else { cfg.run.ks.clone() };
    let rows = dyadic_decay(&sp, &field, &ks, 2, cfg.run.heat_substeps)?;
    let cells: Vec<Vec<String>> = rows.iter().map(|r| vec![r.k.to_string(), fmt_f64(r.s), fmt_f64(r.norm)]).collect();
    write_csv(&out.join("heat_decay.csv"), &["k", "s", "norm"], &cells)?;
    let env = data_envelope(&sp, &field.phi, cfg.run.sigma)?;
    write_csv(&out.join("envelope.csv"), &["k", "alpha", "gamma"], &envelope_rows(&env))?;
    let spectrum = radial_spectrum(&sp, &tangent_coordinate(&field));
    write_csv(&out.join("spectrum.csv"), &["k", "mass"], &spectrum.iter().map(|(k, m)| vec![k.to_string(), fmt_f64(*m)]).collect::<Vec<_>>())?;
    Ok(())
}

/// `||P_k w||_{L^2}^2` per band of the window.
pub fn radial_spectrum(sp: &Spectral, w: &ComplexField) -> Vec<(i32, f64)> {
    let hat = sp.fft(w);
    let c = sp.grid.cell_volume() / sp.grid.len() as f64;
    sp.grid
        .window()
        .indices()
        .map(|k| {
            let m = dyadic_multiplier(sp, k);
            (k, hat.iter().zip(&m).map(|(z, x)| z.norm_sqr() * x * x).sum::<f64>() * c)
        })
        .collect()
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub scenario: String,
    pub config_sha256: String,
    pub versions: Vec<(String, String)>,
    pub seed: u64,
    pub workers: usize,
    pub wall_time_s: f64,
    pub status: String,
}

pub fn config_hash(cfg: &ScenarioConfig) -> String {
    Sha256::digest(cfg.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `command` on `cfg`, writing `manifest.json` (and `error.json` on failure) to `out`.
pub fn run_command(command: &str, cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    let result = match command {
        "evolve" => run_evolve(cfg, out).map(|_| ()),
        "gauge" => run_gauge(cfg, out).map(|_| ()),
        "norms" => run_norms(cfg, out).map(|_| ()),
        "probe" => run_probe(cfg, out).map(|_| ()),
        "report" => run_report(cfg, out),
        other => Err(LabError::Config(format!("unknown command `{other}`"))),
    };
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => {
            write_json(&out.join("error.json"), &serde_json::json!({ "error": e.to_string(), "exit_code": e.exit_code() }))?;
            format!("error: {e}")
        }
    };
    let manifest = Manifest {
        command: command.into(),
        scenario: cfg.scenario.name().into(),
        config_sha256: config_hash(cfg),
        versions: vec![
            ("smaplab".into(), env!("CARGO_PKG_VERSION").into()),
            ("checkpoint_scheme".into(), crate::flow::SCHEME.into()),
        ],
        seed: cfg.run.seed,
        workers: cfg.run.workers,
        wall_time_s: start.elapsed().as_secs_f64(),
        status,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    result
}

/// Output directory of a run: `dir` when given, else the configured one.
pub fn output_dir(cfg: &ScenarioConfig, dir: Option<PathBuf>) -> PathBuf {
    dir.unwrap_or_else(|| cfg.outputs.dir.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn small(kind: ScenarioKind) -> ScenarioConfig {
        let mut c = ScenarioConfig::new(kind);
        c.grid.n = 32;
        if kind != ScenarioKind::Helical {
            c.grid.box_length = 8.0;
        }
        c.run.t_end = 0.05;
        c.run.s_max = 8.0;
        c.run.s_ratio = 1.2;
        c
    }

    #[test]
    fn constant_evolve_and_gauge() {
        let dir = tempfile::tempdir().unwrap();
        let c = small(ScenarioKind::Constant);
        let s = run_evolve(&c, dir.path()).unwrap();
        assert!(s.rows.iter().all(|r| r.e0 == 0.0 && r.e1 == 0.0));
        let text = fs::read_to_string(dir.path().join("conservation.csv")).unwrap();
        assert!(text.starts_with("t,E0,E1,sphere_drift,boundary_tail\n"));
        let g = run_gauge(&c, dir.path()).unwrap();
        assert!(g.residuals.iter().all(|r| r.l2 == 0.0 && r.linf == 0.0));
        assert!(g.covariance.max_a_diff < 1e-12);
    }

    #[test]
    fn helical_error_is_small() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(ScenarioKind::Helical);
        c.run.t_end = 0.1;
        let s = run_evolve(&c, dir.path()).unwrap();
        assert!(s.exact_error.unwrap() < 1e-4);
    }

    #[test]
    fn deterministic_outputs_and_manifest() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = small(ScenarioKind::GaussianBump);
        run_command("evolve", &c, a.path()).unwrap();
        run_command("evolve", &c, b.path()).unwrap();
        for f in ["conservation.csv", "evolve_summary.json", "final.bin"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let m: Manifest = serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m.config_sha256.len(), 64);
        assert_eq!(m.status, "ok");
    }

    #[test]
    fn failures_map_to_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(ScenarioKind::GaussianBump);
        c.physics.amplitude = 3.0;
        let e = run_command("gauge", &c, dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(dir.path().join("error.json").exists());
        let mut c = small(ScenarioKind::GaussianBump);
        c.grid.d = 3;
        c.grid.n = 8;
        c.run.estimates = vec!["linnew".into()];
        c.run.ks = vec![0, 1, 2];
        assert!(matches!(run_probe(&c, dir.path()), Err(LabError::Config(_))));
        let mut c = small(ScenarioKind::GaussianBump);
        c.run.dt = Some(1.0);
        assert_eq!(run_command("evolve", &c, dir.path()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn helical_norms_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(ScenarioKind::Helical);
        c.grid.n = 32;
        c.run.directions = 4;
        let t = run_norms(&c, dir.path()).unwrap();
        assert!(!t.reports.is_empty());
        assert!(t.s_ordering.iter().all(|x| x.3 <= 2.0));
        let text = fs::read_to_string(dir.path().join("norms.csv")).unwrap();
        assert!(text.starts_with("scenario,k,norm,directions,value,family\nhelical,"));
    }

    #[test]
    fn lipschitz_scaling_small() {
        let g = GridSpec::new(2, 32, 8.0).unwrap();
        let sp = Spectral::new(g);
        let base = crate::scenario::gaussian_bump(g, [0.0, 0.0, 1.0], 0.05, 1.0).unwrap();
        let dt = 0.5 * crate::flow::max_stable_dt(&sp);
        let rows = lipschitz_run(&sp, &base, &[1e-2, 5e-3], 1.0, 0.2, dt, 4).unwrap();
        assert!(lipschitz_linearity(&rows) < 0.05, "{rows:?}");
        assert!(critical_distance(&sp, &base, &base) == 0.0);
    }

    #[test]
    fn relative_helpers() {
        assert_eq!(relative_drift(0.0, 1e-3), 1e-3);
        assert!((relative_drift(2.0, 2.2) - 0.1).abs() < 1e-12);
        let rows = vec![DecayRow { k: 1, s: 1.0, norm: 16.0 }, DecayRow { k: 1, s: 4.0, norm: 4.0 }, DecayRow { k: 2, s: 1.0, norm: 1.0 }, DecayRow { k: 2, s: 4.0, norm: 0.5 }];
        assert_eq!(decaying_bands(&rows, 4.0), vec![1]);
    }
}
