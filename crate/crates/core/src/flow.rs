//! Schrodinger map flow `d_t phi = phi x Delta phi`, its linearization, and the
//! conserved energies.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{LabError, Result};
use crate::grid::{dot3, GridSpec, VectorField3};
use crate::io;
use crate::spectral::Spectral;

/// Largest `dt * max|xi|^2` accepted by the RK4 integrator. The imaginary-axis
/// stability interval of classical RK4 ends at `2 sqrt 2`.
pub const RK4_STABILITY: f64 = 2.8;

/// Largest pre-projection sphere drift accepted per step.
pub const DRIFT_LIMIT: f64 = 1e-6;

/// Sphere-valued map with its base point `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereField {
    pub phi: VectorField3,
    pub q: [f64; 3],
}

impl SphereField {
    /// Wraps `phi`, checking the pointwise constraint `||phi| - 1| <= 1e-10`.
    pub fn new(phi: VectorField3, q: [f64; 3]) -> Result<Self> {
        if !phi.is_finite() {
            return Err(LabError::Constraint("non-finite sphere field".into()));
        }
        let drift = phi.sphere_drift();
        if drift > 1e-10 {
            return Err(LabError::Constraint(format!("sphere drift {drift:e}")));
        }
        if (dot3(q, q).sqrt() - 1.0).abs() > 1e-12 {
            return Err(LabError::Constraint("base point is not a unit vector".into()));
        }
        Ok(Self { phi, q })
    }

    /// Projects an arbitrary nonvanishing field onto the sphere.
    pub fn project(phi: VectorField3, q: [f64; 3]) -> Result<Self> {
        Self::new(phi.normalized(), q)
    }

    pub fn constant(grid: GridSpec, q: [f64; 3]) -> Self {
        Self { phi: VectorField3::constant(grid, q), q }
    }

    pub fn grid(&self) -> GridSpec {
        self.phi.grid
    }

    /// Largest `|phi - Q|` over the cells within `width` cells of the box faces.
    pub fn boundary_tail(&self, width: usize) -> f64 {
        let g = self.grid();
        let mut m: f64 = 0.0;
        for i in 0..g.len() {
            let idx = g.unravel(i);
            let near = (0..g.d).any(|a| idx[a] < width || idx[a] >= g.n - width);
            if near {
                let p = self.phi.get(i);
                let d = [p[0] - self.q[0], p[1] - self.q[1], p[2] - self.q[2]];
                m = m.max(dot3(d, d).sqrt());
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub field: SphereField,
    pub t: f64,
    pub step_count: usize,
}

impl FlowState {
    pub fn new(field: SphereField) -> Self {
        Self { field, t: 0.0, step_count: 0 }
    }
}

/// `phi x Delta phi`, two-thirds dealiased.
pub fn smap_rhs(sp: &Spectral, field: &SphereField) -> VectorField3 {
    sp.vector_dealias(&raw_rhs(sp, &field.phi))
}

fn raw_rhs(sp: &Spectral, phi: &VectorField3) -> VectorField3 {
    let lap = sp.vector_laplacian(phi);
    phi.cross(&lap)
}

/// `phi_lin x Delta phi + phi x Delta phi_lin`.
pub fn linearized_rhs(sp: &Spectral, field: &SphereField, phi_lin: &VectorField3) -> Result<VectorField3> {
    let tangency = field.phi.dot(phi_lin).max_abs();
    if tangency > 1e-8 {
        return Err(LabError::Constraint(format!("phi_lin not tangent: |phi.phi_lin| = {tangency:e}")));
    }
    Ok(sp.vector_dealias(&linearized_raw(sp, &field.phi, phi_lin)))
}

fn linearized_raw(sp: &Spectral, phi: &VectorField3, lin: &VectorField3) -> VectorField3 {
    let lap = sp.vector_laplacian(phi);
    let lap_lin = sp.vector_laplacian(lin);
    lin.cross(&lap).add(&phi.cross(&lap_lin))
}

/// Exact helical solution `(sin th cos u, sin th sin u, cos th)`, `u = kappa x_1 - omega t`,
/// `omega = kappa^2 cos th`.
pub fn helical_wave(grid: GridSpec, kappa: f64, theta: f64, t: f64) -> SphereField {
    let omega = kappa * kappa * theta.cos();
    let (s, c) = theta.sin_cos();
    let phi = VectorField3::from_fn(grid, |x| {
        let u = kappa * x[0] - omega * t;
        [s * u.cos(), s * u.sin(), c]
    });
    SphereField { phi, q: [0.0, 0.0, 1.0] }
}

/// `E_0 = int |phi - Q|^2`.
pub fn energy_e0(field: &SphereField) -> f64 {
    let q = field.q;
    let phi = &field.phi;
    let mut s = 0.0;
    for i in 0..phi.len() {
        let p = phi.get(i);
        let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
        s += dot3(d, d);
    }
    s * field.grid().cell_volume()
}

/// `E_1 = int sum_m |d_m phi|^2`, evaluated on the Fourier side.
pub fn energy_e1(sp: &Spectral, field: &SphereField) -> f64 {
    dirichlet_energy(sp, &field.phi)
}

pub fn dirichlet_energy(sp: &Spectral, phi: &VectorField3) -> f64 {
    let g = phi.grid;
    let mut total = 0.0;
    for c in &phi.comps {
        let mut h: Vec<_> = c.iter().map(|&x| num_complex::Complex64::new(x, 0.0)).collect();
        sp.forward(&mut h);
        for a in 0..g.d {
            let k = sp.k_axis(a);
            total += h.iter().zip(k).map(|(z, k)| k * k * z.norm_sqr()).sum::<f64>();
        }
    }
    total * g.cell_volume() / g.len() as f64
}

/// Largest accepted step for this grid.
pub fn max_stable_dt(sp: &Spectral) -> f64 {
    RK4_STABILITY / sp.max_dealiased_ksq()
}

fn check_dt(sp: &Spectral, dt: f64) -> Result<()> {
    let limit = max_stable_dt(sp);
    if !(dt > 0.0) || dt > limit {
        return Err(LabError::StepTooLarge { dt, limit });
    }
    Ok(())
}

fn rk4_step(sp: &Spectral, phi: &VectorField3, h: f64) -> VectorField3 {
    let f = |p: &VectorField3| sp.vector_dealias(&raw_rhs(sp, p));
    let k1 = f(phi);
    let k2 = f(&phi.axpy(0.5 * h, &k1));
    let k3 = f(&phi.axpy(0.5 * h, &k2));
    let k4 = f(&phi.axpy(h, &k3));
    let mut out = phi.clone();
    for c in 0..3 {
        for i in 0..phi.len() {
            out.comps[c][i] += h / 6.0 * (k1.comps[c][i] + 2.0 * k2.comps[c][i] + 2.0 * k3.comps[c][i] + k4.comps[c][i]);
        }
    }
    out
}

fn accept(phi: VectorField3, step: usize) -> Result<VectorField3> {
    if !phi.is_finite() {
        return Err(LabError::Divergence { step });
    }
    let drift = phi.sphere_drift();
    if drift > DRIFT_LIMIT {
        return Err(LabError::Stability { step, drift, limit: DRIFT_LIMIT });
    }
    Ok(phi.normalized())
}

/// Number of steps and the adjusted signed step so the run ends exactly at `t_end`.
fn schedule(t0: f64, t_end: f64, dt: f64) -> (usize, f64) {
    let span = t_end - t0;
    if span == 0.0 {
        return (0, 0.0);
    }
    let steps = ((span.abs() / dt) - 1e-9).ceil().max(1.0) as usize;
    (steps, span / steps as f64)
}

/// Advances `state` to `t_end` (which may lie before `state.t`) with RK4 steps of size at
/// most `dt`, projecting onto the sphere after each step. `observe` runs on the initial
/// state, every `cadence` steps, and on the final state.
pub fn evolve(
    sp: &Spectral,
    state: &FlowState,
    t_end: f64,
    dt: f64,
    cadence: usize,
    observe: &mut dyn FnMut(&FlowState) -> Result<()>,
) -> Result<FlowState> {
    check_dt(sp, dt)?;
    let (steps, h) = schedule(state.t, t_end, dt);
    let mut cur = state.clone();
    observe(&cur)?;
    for j in 0..steps {
        let step = cur.step_count + 1;
        let next = accept(rk4_step(sp, &cur.field.phi, h), step)?;
        cur.field.phi = next;
        cur.step_count = step;
        cur.t = if j + 1 == steps { t_end } else { state.t + (j + 1) as f64 * h };
        if j + 1 == steps || (cadence > 0 && (j + 1) % cadence == 0) {
            observe(&cur)?;
        }
    }
    Ok(cur)
}

/// `evolve` without observers.
pub fn evolve_to(sp: &Spectral, state: &FlowState, t_end: f64, dt: f64) -> Result<FlowState> {
    evolve(sp, state, t_end, dt, 0, &mut |_| Ok(()))
}

/// Evolves a map and a tangent perturbation together; the perturbation follows the
/// linearized flow and is projected onto the tangent plane after each step.
pub fn evolve_linearized(
    sp: &Spectral,
    state: &FlowState,
    phi_lin: &VectorField3,
    t_end: f64,
    dt: f64,
) -> Result<(FlowState, VectorField3)> {
    check_dt(sp, dt)?;
    linearized_rhs(sp, &state.field, phi_lin)?;
    let (steps, h) = schedule(state.t, t_end, dt);
    let f = |p: &VectorField3, l: &VectorField3| {
        (sp.vector_dealias(&raw_rhs(sp, p)), sp.vector_dealias(&linearized_raw(sp, p, l)))
    };
    let mut cur = state.clone();
    let mut lin = phi_lin.clone();
    for j in 0..steps {
        let phi = &cur.field.phi;
        let (a1, b1) = f(phi, &lin);
        let (a2, b2) = f(&phi.axpy(0.5 * h, &a1), &lin.axpy(0.5 * h, &b1));
        let (a3, b3) = f(&phi.axpy(0.5 * h, &a2), &lin.axpy(0.5 * h, &b2));
        let (a4, b4) = f(&phi.axpy(h, &a3), &lin.axpy(h, &b3));
        let combine = |y: &VectorField3, k: [&VectorField3; 4]| {
            y.axpy(h / 6.0, k[0]).axpy(h / 3.0, k[1]).axpy(h / 3.0, k[2]).axpy(h / 6.0, k[3])
        };
        let new_phi = combine(phi, [&a1, &a2, &a3, &a4]);
        let new_lin = combine(&lin, [&b1, &b2, &b3, &b4]);
        let step = cur.step_count + 1;
        // derivative of the projection x -> x/|x| at new_phi
        let proj_lin = new_phi.zip_map(&new_lin, |p, l| {
            let r = dot3(p, p).sqrt();
            let u = [p[0] / r, p[1] / r, p[2] / r];
            let s = dot3(u, l);
            [(l[0] - s * u[0]) / r, (l[1] - s * u[1]) / r, (l[2] - s * u[2]) / r]
        });
        cur.field.phi = accept(new_phi, step)?;
        if !proj_lin.is_finite() {
            return Err(LabError::Divergence { step });
        }
        lin = proj_lin;
        cur.step_count = step;
        cur.t = if j + 1 == steps { t_end } else { state.t + (j + 1) as f64 * h };
    }
    Ok((cur, lin))
}

/// Pointwise `|d_t phi - phi x Delta phi|` residual of a trajectory given the time
/// derivative `dphi_dt`.
pub fn equation_residual(sp: &Spectral, field: &SphereField, dphi_dt: &VectorField3) -> f64 {
    dphi_dt.sub(&raw_rhs(sp, &field.phi)).max_abs()
}

/// Exact time derivative of the helical wave.
pub fn helical_time_derivative(grid: GridSpec, kappa: f64, theta: f64, t: f64) -> VectorField3 {
    let omega = kappa * kappa * theta.cos();
    let s = theta.sin();
    VectorField3::from_fn(grid, |x| {
        let u = kappa * x[0] - omega * t;
        [s * omega * u.sin(), -s * omega * u.cos(), 0.0]
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub t: f64,
    pub step_count: usize,
    pub scheme: String,
    pub dt: f64,
    pub q: [f64; 3],
}

pub const SCHEME: &str = "rk4-projected-dealiased";

/// Writes `<stem>.bin` / `<stem>.json` (field dump) and `<stem>.meta.json`.
pub fn write_checkpoint(dir: &Path, stem: &str, state: &FlowState, dt: f64) -> Result<()> {
    let phi = &state.field.phi;
    io::write_dump(
        &dir.join(format!("{stem}.bin")),
        &phi.grid,
        &[&phi.comps[0], &phi.comps[1], &phi.comps[2]],
        state.t,
    )?;
    let meta = CheckpointMeta {
        t: state.t,
        step_count: state.step_count,
        scheme: SCHEME.into(),
        dt,
        q: state.field.q,
    };
    io::write_json(&dir.join(format!("{stem}.meta.json")), &meta)
}

pub fn read_checkpoint(dir: &Path, stem: &str) -> Result<FlowState> {
    let (h, comps) = io::read_dump(&dir.join(format!("{stem}.bin")))?;
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.meta.json")))?)?;
    let grid = GridSpec::new(h.d, h.n, h.box_length)?;
    let mut it = comps.into_iter();
    let phi = VectorField3::from_comps(grid, [it.next().unwrap_or_default(), it.next().unwrap_or_default(), it.next().unwrap_or_default()])?;
    Ok(FlowState { field: SphereField::new(phi, meta.q)?, t: meta.t, step_count: meta.step_count })
}

/// Pointwise triple product `phi . v`, used as a tangency monitor.
pub fn tangency(phi: &VectorField3, v: &VectorField3) -> f64 {
    (0..phi.len()).fold(0.0, |m, i| m.max(dot3(phi.get(i), v.get(i)).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::cross3;
    use std::f64::consts::PI;

    fn bump(grid: GridSpec, eps: f64) -> SphereField {
        let phi = VectorField3::from_fn(grid, |x| {
            let g = (-(x[0] * x[0] + x[1] * x[1])).exp();
            [eps * g, eps * g * x[0], 1.0]
        });
        SphereField::project(phi, [0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn constant_is_fixed_point() {
        let g = GridSpec::new(2, 16, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let s = FlowState::new(SphereField::constant(g, [0.0, 0.0, 1.0]));
        assert_eq!(smap_rhs(&sp, &s.field).max_abs(), 0.0);
        let out = evolve_to(&sp, &s, 0.3, 0.01).unwrap();
        assert_eq!(out.field, s.field);
        assert!((out.t - 0.3).abs() < 1e-15);
        assert_eq!(energy_e0(&out.field), 0.0);
        assert_eq!(energy_e1(&sp, &out.field), 0.0);
    }

    #[test]
    fn rhs_is_tangent() {
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let h = helical_wave(g, 1.0, PI / 4.0, 0.0);
        let r = raw_rhs(&sp, &h.phi);
        assert!(tangency(&h.phi, &r) < 1e-12);
    }

    #[test]
    fn helical_is_exact_solution() {
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        for &th in &[PI / 4.0, PI / 2.0, 0.3] {
            let h = helical_wave(g, 2.0, th, 0.7);
            let dt = helical_time_derivative(g, 2.0, th, 0.7);
            assert!(equation_residual(&sp, &h, &dt) < 1e-10);
        }
        let flat = helical_wave(g, 1.0, 0.0, 0.0);
        assert!(raw_rhs(&sp, &flat.phi).max_abs() < 1e-15);
    }

    #[test]
    fn helical_energy_closed_form() {
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let th = 0.6;
        let e1 = energy_e1(&sp, &helical_wave(g, 3.0, th, 0.0));
        let exact = 9.0 * th.sin().powi(2) * g.volume();
        assert!((e1 - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn rhs_matches_finite_difference_oracle() {
        let g = GridSpec::new(2, 128, 16.0).unwrap();
        let sp = Spectral::new(g);
        let eps = 0.1;
        let exact = |x: [f64; 3]| {
            let e = (-(x[0] * x[0] + x[1] * x[1])).exp();
            crate::grid::normalize3([eps * e, eps * e * x[0], 1.0])
        };
        let f = bump(g, eps);
        // second-order central differences of the closed form, Richardson-extrapolated
        let fd_lap = |x: [f64; 3], h: f64| {
            let c = exact(x);
            let mut lap = [0.0; 3];
            for a in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += h;
                xm[a] -= h;
                let (p, m) = (exact(xp), exact(xm));
                for q in 0..3 {
                    lap[q] += (p[q] - 2.0 * c[q] + m[q]) / (h * h);
                }
            }
            lap
        };
        let fd = VectorField3::from_fn(g, |x| {
            let a = fd_lap(x, 1e-2);
            let b = fd_lap(x, 5e-3);
            let lap = [(4.0 * b[0] - a[0]) / 3.0, (4.0 * b[1] - a[1]) / 3.0, (4.0 * b[2] - a[2]) / 3.0];
            cross3(exact(x), lap)
        });
        let spec = smap_rhs(&sp, &f);
        let rel = (spec.norm_l2() - fd.norm_l2()).abs() / spec.norm_l2();
        assert!(rel < 1e-6, "rel {rel}");
        assert!(spec.sub(&fd).norm_l2() < 1e-6 * spec.norm_l2());
    }

    #[test]
    fn rejects_large_step() {
        let g = GridSpec::new(2, 64, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let s = FlowState::new(SphereField::constant(g, [0.0, 0.0, 1.0]));
        let dt = 2.0 * max_stable_dt(&sp);
        assert!(matches!(evolve_to(&sp, &s, 1.0, dt), Err(LabError::StepTooLarge { .. })));
    }

    #[test]
    fn linearized_tangency_and_translation() {
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let h = helical_wave(g, 1.0, PI / 4.0, 0.0);
        let d1 = sp.vector_derivative(&h.phi, 0);
        let lin = linearized_rhs(&sp, &h, &d1).unwrap();
        let expect = sp.vector_derivative(&smap_rhs(&sp, &h), 0);
        assert!(lin.sub(&expect).max_abs() < 1e-9);
        let r = smap_rhs(&sp, &h);
        let a = h.phi.dot(&lin);
        let b = d1.dot(&r);
        for i in 0..g.len() {
            assert!((a.data[i] + b.data[i]).abs() < 1e-8);
        }
        let bad = VectorField3::constant(g, [0.0, 0.0, 1.0]);
        assert!(matches!(linearized_rhs(&sp, &h, &bad), Err(LabError::Constraint(_))));
        let q = SphereField::constant(g, [0.0, 0.0, 1.0]);
        let tangent = VectorField3::constant(g, [0.3, -0.2, 0.0]);
        assert_eq!(linearized_rhs(&sp, &q, &tangent).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn time_reversal() {
        let g = GridSpec::new(2, 32, 8.0).unwrap();
        let sp = Spectral::new(g);
        let s = FlowState::new(bump(g, 0.1));
        let dt = g.dt_hint;
        let fwd = evolve_to(&sp, &s, 0.2, dt).unwrap();
        let back = evolve_to(&sp, &fwd, 0.0, dt).unwrap();
        let err = back.field.phi.sub(&s.field.phi).norm_l2();
        assert!(err < 1e-7, "{err:e}");
        assert_eq!(back.step_count, 2 * fwd.step_count);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new(2, 16, 8.0).unwrap();
        let s = FlowState { field: bump(g, 0.1), t: 0.5, step_count: 12 };
        write_checkpoint(dir.path(), "c0", &s, 1e-3).unwrap();
        assert_eq!(read_checkpoint(dir.path(), "c0").unwrap(), s);
    }
}
