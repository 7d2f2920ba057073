//! Caloric gauge: harmonic map heat flow in the parabolic time `s` and the frame
//! obtained by parallel transport back from `s = S_max`.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{LabError, Result};
use crate::flow::{dirichlet_energy, SphereField, DRIFT_LIMIT};
use crate::grid::{cross3, dot3, normalize3, GridSpec, VectorField3};
use crate::io;
use crate::spectral::Spectral;

/// Largest ratio between consecutive positive nodes.
pub const MAX_RATIO: f64 = 1.25;

/// Geometric parabolic grid `0 = s_0 < s_1 < ... < s_N = S_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolicGrid {
    pub s_nodes: Vec<f64>,
    pub s_max: f64,
}

impl ParabolicGrid {
    /// Nodes `s_j = S_max r^{-(N-j)}`, `j = 1..N`, with `N` the least count putting
    /// `s_1 <= first_max`.
    pub fn geometric(s_max: f64, first_max: f64, ratio: f64) -> Result<Self> {
        if !(s_max > 0.0) || !(first_max > 0.0) || !(ratio > 1.0 && ratio <= MAX_RATIO) {
            return Err(LabError::InvalidGrid(format!(
                "parabolic grid needs S_max > 0, first node > 0 and ratio in (1, {MAX_RATIO}]"
            )));
        }
        let span = (s_max / first_max).max(1.0).ln() / ratio.ln();
        let count = span.ceil() as usize + 1;
        let mut s_nodes = vec![0.0];
        for j in 1..=count {
            s_nodes.push(s_max * ratio.powi(-((count - j) as i32)));
        }
        *s_nodes.last_mut().unwrap() = s_max;
        Self::from_nodes(s_nodes)
    }

    /// Default grid for a spatial grid: first node at most `4^{-k_max}`.
    pub fn for_grid(grid: &GridSpec, s_max: f64, ratio: f64) -> Result<Self> {
        let k_max = grid.window().k_max;
        Self::geometric(s_max, 4f64.powi(-k_max), ratio)
    }

    pub fn from_nodes(s_nodes: Vec<f64>) -> Result<Self> {
        if s_nodes.len() < 3 || s_nodes[0] != 0.0 {
            return Err(LabError::InvalidGrid("parabolic grid must start at 0 with at least 3 nodes".into()));
        }
        for w in s_nodes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(LabError::InvalidGrid("parabolic nodes must increase strictly".into()));
            }
            if w[0] > 0.0 && w[1] / w[0] > MAX_RATIO * (1.0 + 1e-12) {
                return Err(LabError::InvalidGrid(format!("node ratio {} exceeds {MAX_RATIO}", w[1] / w[0])));
            }
        }
        let s_max = *s_nodes.last().unwrap();
        Ok(Self { s_nodes, s_max })
    }

    pub fn len(&self) -> usize {
        self.s_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_nodes.is_empty()
    }

    /// Halves every interval: geometric midpoints between positive nodes, and the ladder
    /// continued below `s_1` with the halved ratio until the first interval is at most
    /// half its old length.
    pub fn refine(&self) -> Self {
        let s = &self.s_nodes;
        let r = (s[2] / s[1]).sqrt();
        let mut low = vec![s[1]];
        while *low.last().unwrap() > 0.5 * s[1] * (1.0 + 1e-12) {
            let x = low.last().unwrap() / r;
            low.push(x);
        }
        let mut out = vec![0.0];
        out.extend(low.iter().rev().take(low.len() - 1));
        for j in 1..s.len() {
            if j > 1 {
                out.push((s[j - 1] * s[j]).sqrt());
            }
            out.push(s[j]);
        }
        Self { s_nodes: out, s_max: self.s_max }
    }

    fn check_for(&self, grid: &GridSpec) -> Result<()> {
        let first = 4f64.powi(-grid.window().k_max);
        if self.s_nodes[1] > first * (1.0 + 1e-12) {
            return Err(LabError::InvalidGrid(format!(
                "first parabolic node {} exceeds 4^-k_max = {first}",
                self.s_nodes[1]
            )));
        }
        Ok(())
    }
}

/// Heat-flow snapshots at every node and at every interval midpoint.
#[derive(Debug, Clone)]
pub struct HeatTrajectory {
    pub pgrid: ParabolicGrid,
    pub snapshots: Vec<SphereField>,
    /// `midpoints[i]` sits at `(s_i + s_{i+1}) / 2`.
    pub midpoints: Vec<SphereField>,
    pub substeps: usize,
}

impl HeatTrajectory {
    pub fn grid(&self) -> GridSpec {
        self.snapshots[0].grid()
    }

    pub fn q(&self) -> [f64; 3] {
        self.snapshots[0].q
    }

    /// `||phi(s_i) - Q||_inf` per node.
    pub fn deviation_profile(&self) -> Vec<f64> {
        self.snapshots.iter().map(|f| deviation(f)).collect()
    }
}

fn deviation(f: &SphereField) -> f64 {
    let q = f.q;
    (0..f.phi.len()).fold(0.0, |m, i| {
        let p = f.phi.get(i);
        m.max(dot3([p[0] - q[0], p[1] - q[1], p[2] - q[2]], [p[0] - q[0], p[1] - q[1], p[2] - q[2]]).sqrt())
    })
}

/// `phi |grad phi|^2` and the Laplacian.
fn nonlinear_and_laplacian(sp: &Spectral, phi: &VectorField3) -> (VectorField3, VectorField3) {
    let (grad, lap) = sp.vector_gradient_laplacian(phi);
    let mut energy = vec![0.0; phi.len()];
    for g in &grad {
        for c in 0..3 {
            for (e, x) in energy.iter_mut().zip(&g.comps[c]) {
                *e += x * x;
            }
        }
    }
    let mut out = phi.clone();
    for c in 0..3 {
        for (o, e) in out.comps[c].iter_mut().zip(&energy) {
            *o *= e;
        }
    }
    (out, lap)
}

/// `Delta phi + phi sum_m |d_m phi|^2`.
pub fn heat_rhs(sp: &Spectral, field: &SphereField) -> VectorField3 {
    let (n, lap) = nonlinear_and_laplacian(sp, &field.phi);
    lap.add(&n)
}

/// One integrating-factor RK4 (Lawson) step of size `h` for `u_s = Delta u + N(u)`.
fn lawson_step(sp: &Spectral, u: &VectorField3, h: f64) -> VectorField3 {
    let n = |p: &VectorField3| nonlinear_and_laplacian(sp, p).0;
    let e = |p: &VectorField3| sp.vector_heat(p, 0.5 * h);
    let k1 = n(u);
    let k2 = n(&e(&u.axpy(0.5 * h, &k1)));
    let eu = e(u);
    let k3 = n(&eu.axpy(0.5 * h, &k2));
    let k4 = n(&e(&eu.axpy(h, &k3)));
    let inner = e(&u.axpy(h / 6.0, &k1)).axpy(h / 3.0, &k2).axpy(h / 3.0, &k3);
    e(&inner).axpy(h / 6.0, &k4)
}

fn accept(u: VectorField3, step: usize) -> Result<VectorField3> {
    if !u.is_finite() {
        return Err(LabError::Divergence { step });
    }
    let drift = u.sphere_drift();
    if drift > DRIFT_LIMIT {
        return Err(LabError::Stability { step, drift, limit: DRIFT_LIMIT });
    }
    Ok(u.normalized())
}

/// One Lawson step, split in halves (recursively) when the pre-projection drift is large.
fn advance(sp: &Spectral, u: &VectorField3, h: f64, step: usize, depth: usize) -> Result<VectorField3> {
    let next = lawson_step(sp, u, h);
    if next.is_finite() && next.sphere_drift() > 1e-2 * DRIFT_LIMIT && depth < 10 {
        let half = advance(sp, u, 0.5 * h, step, depth + 1)?;
        return advance(sp, &half, 0.5 * h, step, depth + 1);
    }
    accept(next, step)
}

/// Integrates the heat flow across `pgrid` with `substeps` (even) Lawson steps per interval,
/// renormalizing after every step.
pub fn heat_evolve(sp: &Spectral, initial: &SphereField, pgrid: &ParabolicGrid, substeps: usize) -> Result<HeatTrajectory> {
    pgrid.check_for(&sp.grid)?;
    if substeps < 2 || substeps % 2 != 0 {
        return Err(LabError::Config("heat substeps must be even and at least 2".into()));
    }
    let q = initial.q;
    let s = &pgrid.s_nodes;
    let mut snapshots = Vec::with_capacity(s.len());
    let mut midpoints = Vec::with_capacity(s.len() - 1);
    let mut u = initial.phi.clone();
    snapshots.push(initial.clone());
    let mut step = 0;
    for j in 0..s.len() - 1 {
        let h = (s[j + 1] - s[j]) / substeps as f64;
        for m in 0..substeps {
            step += 1;
            u = advance(sp, &u, h, step, 0)?;
            if m + 1 == substeps / 2 {
                midpoints.push(SphereField { phi: u.clone(), q });
            }
        }
        snapshots.push(SphereField { phi: u.clone(), q });
    }
    Ok(HeatTrajectory { pgrid: pgrid.clone(), snapshots, midpoints, substeps })
}

/// Pointwise `3x3` matrices.
pub type MatrixField = Vec<[[f64; 3]; 3]>;

/// `R = Delta phi phi^T - phi (Delta phi)^T` at node `i`.
pub fn r_matrix(sp: &Spectral, traj: &HeatTrajectory, i: usize) -> MatrixField {
    let phi = &traj.snapshots[i].phi;
    let lap = sp.vector_laplacian(phi);
    outer_antisym(&lap, phi)
}

/// `a b^T - b a^T` pointwise.
pub fn outer_antisym(a: &VectorField3, b: &VectorField3) -> MatrixField {
    (0..a.len())
        .map(|p| {
            let x = a.get(p);
            let y = b.get(p);
            let mut m = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    m[r][c] = x[r] * y[c] - y[r] * x[c];
                }
            }
            m
        })
        .collect()
}

/// Orthonormal tangent frame per parabolic node.
#[derive(Debug, Clone)]
pub struct FrameField {
    pub v: Vec<VectorField3>,
    pub w: Vec<VectorField3>,
    pub q_prime: [f64; 3],
}

/// Deterministic unit vector orthogonal to `q`.
pub fn default_q_prime(q: [f64; 3]) -> [f64; 3] {
    let e = if q[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let s = dot3(e, q);
    normalize3([e[0] - s * q[0], e[1] - s * q[1], e[2] - s * q[2]])
}

/// `q_prime` rotated by `theta` in the plane orthogonal to `q`.
pub fn rotate_q_prime(q: [f64; 3], q_prime: [f64; 3], theta: f64) -> [f64; 3] {
    let b = cross3(q, q_prime);
    let (s, c) = theta.sin_cos();
    [c * q_prime[0] + s * b[0], c * q_prime[1] + s * b[1], c * q_prime[2] + s * b[2]]
}

/// Projects `(a, b)` onto the tangent plane at `p` and applies the symmetric
/// (Lowdin) orthonormalization, which commutes with in-plane rotations of the pair.
fn tangent_lowdin(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let pa = dot3(p, a);
    let pb = dot3(p, b);
    let a = [a[0] - pa * p[0], a[1] - pa * p[1], a[2] - pa * p[2]];
    let b = [b[0] - pb * p[0], b[1] - pb * p[1], b[2] - pb * p[2]];
    let saa = dot3(a, a);
    let sbb = dot3(b, b);
    let sab = dot3(a, b);
    // inverse square root of the 2x2 Gram matrix
    let tr = saa + sbb;
    let det = saa * sbb - sab * sab;
    let sq = det.sqrt();
    let t = (tr + 2.0 * sq).sqrt();
    // S^{1/2} = (S + sqrt(det) I) / t, so S^{-1/2} = (S^{1/2})^{-1}
    let h11 = (saa + sq) / t;
    let h22 = (sbb + sq) / t;
    let h12 = sab / t;
    let hdet = h11 * h22 - h12 * h12;
    let i11 = h22 / hdet;
    let i22 = h11 / hdet;
    let i12 = -h12 / hdet;
    let v = [i11 * a[0] + i12 * b[0], i11 * a[1] + i12 * b[1], i11 * a[2] + i12 * b[2]];
    let w = [i12 * a[0] + i22 * b[0], i12 * a[1] + i22 * b[1], i12 * a[2] + i22 * b[2]];
    (v, w)
}

fn orthonormalize(phi: &VectorField3, v: &mut VectorField3, w: &mut VectorField3) -> Result<()> {
    for i in 0..phi.len() {
        let (a, b) = tangent_lowdin(phi.get(i), v.get(i), w.get(i));
        if !(a.iter().chain(&b).all(|x| x.is_finite())) {
            return Err(LabError::InvalidFrame(format!("degenerate frame at grid point {i}")));
        }
        v.set(i, a);
        w.set(i, b);
    }
    Ok(())
}

/// `R v = Delta phi (phi . v) - phi (Delta phi . v)` pointwise.
fn apply_r(phi: &VectorField3, lap: &VectorField3, v: &VectorField3) -> VectorField3 {
    let mut out = VectorField3::zeros(phi.grid);
    for i in 0..phi.len() {
        let p = phi.get(i);
        let l = lap.get(i);
        let x = v.get(i);
        let a = dot3(p, x);
        let b = dot3(l, x);
        out.set(i, [l[0] * a - p[0] * b, l[1] * a - p[1] * b, l[2] * a - p[2] * b]);
    }
    out
}

/// Parallel transport `d_s v = R v` from `S_max` back to `s = 0`.
///
/// Both `v` and `w` are carried by RK4 and re-orthonormalized at every node, starting from
/// the tangent projections of `Q'` and `Q x Q'` at `phi(S_max)`.
pub fn transport_frame(sp: &Spectral, traj: &HeatTrajectory, q_prime: [f64; 3]) -> Result<FrameField> {
    let q = traj.q();
    if dot3(q, q_prime).abs() > 1e-10 || (dot3(q_prime, q_prime).sqrt() - 1.0).abs() > 1e-10 {
        return Err(LabError::Constraint("Q' must be a unit vector orthogonal to Q".into()));
    }
    let last = traj.snapshots.len() - 1;
    let dev = deviation(&traj.snapshots[last]);
    if dev > 0.5 {
        return Err(LabError::FarFromEquilibrium { deviation: dev });
    }
    let grid = traj.grid();
    let s = &traj.pgrid.s_nodes;
    let phi_end = &traj.snapshots[last].phi;
    let mut v = VectorField3::constant(grid, q_prime);
    let mut w = VectorField3::constant(grid, cross3(q, q_prime));
    orthonormalize(phi_end, &mut v, &mut w)?;
    let mut vs = vec![v.clone()];
    let mut ws = vec![w.clone()];
    let mut lap_hi = sp.vector_laplacian(phi_end);
    for i in (0..last).rev() {
        let h = s[i] - s[i + 1];
        let phi_hi = &traj.snapshots[i + 1].phi;
        let phi_mid = &traj.midpoints[i].phi;
        let phi_lo = &traj.snapshots[i].phi;
        let lap_mid = sp.vector_laplacian(phi_mid);
        let lap_lo = sp.vector_laplacian(phi_lo);
        let rk = |x: &VectorField3| {
            let k1 = apply_r(phi_hi, &lap_hi, x);
            let k2 = apply_r(phi_mid, &lap_mid, &x.axpy(0.5 * h, &k1));
            let k3 = apply_r(phi_mid, &lap_mid, &x.axpy(0.5 * h, &k2));
            let k4 = apply_r(phi_lo, &lap_lo, &x.axpy(h, &k3));
            x.axpy(h / 6.0, &k1).axpy(h / 3.0, &k2).axpy(h / 3.0, &k3).axpy(h / 6.0, &k4)
        };
        v = rk(&v);
        w = rk(&w);
        orthonormalize(phi_lo, &mut v, &mut w)?;
        vs.push(v.clone());
        ws.push(w.clone());
        lap_hi = lap_lo;
    }
    vs.reverse();
    ws.reverse();
    Ok(FrameField { v: vs, w: ws, q_prime })
}

/// Weights of the derivative at `x[i]` of the Lagrange interpolant through the `width`
/// nodes nearest to `i` (clamped at the ends). Returns the first stencil index and weights.
pub fn derivative_weights(x: &[f64], i: usize, width: usize) -> (usize, Vec<f64>) {
    let width = width.min(x.len());
    let lo = i.saturating_sub(width / 2).min(x.len() - width);
    let nodes = &x[lo..lo + width];
    let xi = x[i];
    let mut weights = vec![0.0; width];
    for j in 0..width {
        // l_j'(xi) = sum_{m != j} 1/(x_j - x_m) prod_{l != j,m} (xi - x_l)/(x_j - x_l)
        let mut total = 0.0;
        for m in 0..width {
            if m == j {
                continue;
            }
            let mut prod = 1.0 / (nodes[j] - nodes[m]);
            for l in 0..width {
                if l != j && l != m {
                    prod *= (xi - nodes[l]) / (nodes[j] - nodes[l]);
                }
            }
            total += prod;
        }
        weights[j] = total;
    }
    (lo, weights)
}

/// Discrete `d_s` of a per-node field family with a `width`-point Lagrange stencil.
pub fn s_derivative(x: &[f64], fields: &[VectorField3], i: usize, width: usize) -> VectorField3 {
    let (lo, wts) = derivative_weights(x, i, width);
    let mut out = VectorField3::zeros(fields[0].grid);
    for (j, wt) in wts.iter().enumerate() {
        out = out.axpy(*wt, &fields[lo + j]);
    }
    out
}

/// Stencil width for discrete parabolic derivatives.
pub const S_STENCIL: usize = 5;

/// `max_x |w . d_s v|` at every node, with the discrete `d_s`.
pub fn a0_profile(traj: &HeatTrajectory, frame: &FrameField) -> Vec<f64> {
    let s = &traj.pgrid.s_nodes;
    (0..s.len())
        .map(|i| {
            let dv = s_derivative(s, &frame.v, i, S_STENCIL);
            frame.w[i].dot(&dv).max_abs()
        })
        .collect()
}

/// Largest violation over nodes and points of `|v|=|w|=1`, `v.w = 0`, tangency and
/// `w = phi x v`.
pub fn frame_defect(traj: &HeatTrajectory, frame: &FrameField) -> f64 {
    let mut m: f64 = 0.0;
    for (k, f) in traj.snapshots.iter().enumerate() {
        for i in 0..f.phi.len() {
            let p = f.phi.get(i);
            let v = frame.v[k].get(i);
            let w = frame.w[k].get(i);
            let c = cross3(p, v);
            m = m
                .max((dot3(v, v).sqrt() - 1.0).abs())
                .max((dot3(w, w).sqrt() - 1.0).abs())
                .max(dot3(v, w).abs())
                .max(dot3(p, v).abs())
                .max(dot3(p, w).abs())
                .max((0..3).fold(0.0, |a: f64, j| a.max((c[j] - w[j]).abs())));
        }
    }
    m
}

/// Dirichlet energy per node.
pub fn energy_profile(sp: &Spectral, traj: &HeatTrajectory) -> Vec<f64> {
    traj.snapshots.iter().map(|f| dirichlet_energy(sp, &f.phi)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryIndex {
    pub s_nodes: Vec<f64>,
    #[serde(rename = "S_max")]
    pub s_max: f64,
    pub scheme: String,
    pub substeps: usize,
}

pub const HEAT_SCHEME: &str = "lawson-rk4-projected";

/// One field dump per node plus `index.json`.
pub fn write_trajectory(dir: &Path, traj: &HeatTrajectory) -> Result<()> {
    for (i, f) in traj.snapshots.iter().enumerate() {
        let c = &f.phi.comps;
        io::write_dump(&dir.join(format!("node_{i:04}.bin")), &f.phi.grid, &[&c[0], &c[1], &c[2]], traj.pgrid.s_nodes[i])?;
    }
    io::write_json(
        &dir.join("index.json"),
        &TrajectoryIndex {
            s_nodes: traj.pgrid.s_nodes.clone(),
            s_max: traj.pgrid.s_max,
            scheme: HEAT_SCHEME.into(),
            substeps: traj.substeps,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::helical_wave;
    use crate::littlewood_paley::project_dyadic_vec;
    use std::f64::consts::PI;

    fn bump(grid: GridSpec, eps: f64) -> SphereField {
        let phi = VectorField3::from_fn(grid, |x| {
            let g = (-(x[0] * x[0] + x[1] * x[1])).exp();
            [eps * g, eps * g * x[0], 1.0]
        });
        SphereField::project(phi, [0.0, 0.0, 1.0]).unwrap()
    }

    fn setup(n: usize) -> (GridSpec, Spectral) {
        let g = GridSpec::new(2, n, 16.0).unwrap();
        (g, Spectral::new(g))
    }

    #[test]
    fn parabolic_grid_shape() {
        let (g, _) = setup(64);
        let p = ParabolicGrid::for_grid(&g, 64.0, 1.2).unwrap();
        assert_eq!(p.s_nodes[0], 0.0);
        assert!(p.s_nodes[1] <= 4f64.powi(-g.window().k_max));
        assert_eq!(*p.s_nodes.last().unwrap(), 64.0);
        let r = p.refine();
        assert!(r.s_nodes.len() >= 2 * p.s_nodes.len() - 1);
        assert!(r.s_nodes[1] <= 0.5 * p.s_nodes[1] * (1.0 + 1e-12));
        assert!(ParabolicGrid::from_nodes(r.s_nodes.clone()).is_ok());
        for s in &p.s_nodes {
            assert!(r.s_nodes.contains(s));
        }
        assert!(ParabolicGrid::from_nodes(vec![0.0, 1.0, 2.0]).is_err());
        assert!(ParabolicGrid::geometric(1.0, 0.1, 1.5).is_err());
    }

    #[test]
    fn heat_rhs_tangent() {
        let (g, sp) = setup(128);
        for f in [bump(g, 0.2), helical_wave(GridSpec::new(2, 32, 2.0 * PI).unwrap(), 1.0, 0.7, 0.0)] {
            let sp2 = Spectral::new(f.grid());
            let r = heat_rhs(&sp2, &f);
            assert!(f.phi.dot(&r).max_abs() < 1e-10);
        }
        let c = SphereField::constant(g, [0.0, 0.0, 1.0]);
        assert_eq!(heat_rhs(&sp, &c).max_abs(), 0.0);
    }

    #[test]
    fn helical_heat_rhs_closed_form() {
        // Delta phi = -k^2 (phi - cos th e3); |grad phi|^2 = k^2 sin^2 th
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let (k, th) = (2.0, 0.7);
        let f = helical_wave(g, k, th, 0.0);
        let r = heat_rhs(&sp, &f);
        let expect = f.phi.map(|p| {
            let a = -k * k + k * k * th.sin().powi(2);
            [a * p[0], a * p[1], a * p[2] + k * k * th.cos()]
        });
        assert!(r.sub(&expect).max_abs() < 1e-10);
    }

    #[test]
    fn r_matrix_antisymmetric() {
        let (g, sp) = setup(32);
        let p = ParabolicGrid::for_grid(&g, 4.0, 1.25).unwrap();
        let t = heat_evolve(&sp, &bump(g, 0.2), &p, 2).unwrap();
        let r = r_matrix(&sp, &t, 3);
        for m in &r {
            for a in 0..3 {
                for b in 0..3 {
                    assert!((m[a][b] + m[b][a]).abs() < 1e-12);
                }
            }
        }
        let c = SphereField::constant(g, [0.0, 0.0, 1.0]);
        let tc = heat_evolve(&sp, &c, &p, 2).unwrap();
        assert!(r_matrix(&sp, &tc, 2).iter().all(|m| m.iter().flatten().all(|x| *x == 0.0)));
    }

    #[test]
    fn r_matrix_matches_parabolic_derivative() {
        let (g, sp) = setup(32);
        let p = ParabolicGrid::for_grid(&g, 4.0, 1.2).unwrap();
        let f = bump(g, 0.2);
        let mut errs = vec![];
        for pg in [p.clone(), p.refine()] {
            let t = heat_evolve(&sp, &f, &pg, 2).unwrap();
            let phis: Vec<VectorField3> = t.snapshots.iter().map(|s| s.phi.clone()).collect();
            // same s in both grids
            let target = p.s_nodes[p.len() / 2];
            let i = pg.s_nodes.iter().position(|&x| (x - target).abs() <= 1e-12 * target).unwrap();
            let ds = s_derivative(&pg.s_nodes, &phis, i, 3);
            let alt = outer_antisym(&ds, &phis[i]);
            let r = r_matrix(&sp, &t, i);
            let e = r.iter().zip(&alt).fold(0.0f64, |m, (a, b)| {
                (0..3).fold(m, |m, x| (0..3).fold(m, |m, y| m.max((a[x][y] - b[x][y]).abs())))
            });
            errs.push(e);
        }
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
    }

    #[test]
    fn constant_trajectory_and_frame() {
        let (g, sp) = setup(16);
        let q = [0.0, 0.0, 1.0];
        let c = SphereField::constant(g, q);
        let p = ParabolicGrid::for_grid(&g, 4.0, 1.25).unwrap();
        let t = heat_evolve(&sp, &c, &p, 2).unwrap();
        assert!(t.snapshots.iter().all(|s| s.phi == c.phi));
        let qp = default_q_prime(q);
        let fr = transport_frame(&sp, &t, qp).unwrap();
        for k in 0..p.len() {
            assert!(fr.v[k].sub(&VectorField3::constant(g, qp)).max_abs() < 1e-15);
            assert!(fr.w[k].sub(&VectorField3::constant(g, cross3(q, qp))).max_abs() < 1e-15);
        }
        assert!(transport_frame(&sp, &t, [0.0, 0.6, 0.8]).is_err());
    }

    #[test]
    fn heat_decay_energy_and_frame() {
        // a wide box keeps the torus mean of phi - Q below the decay target
        let g = GridSpec::new(2, 128, 32.0).unwrap();
        let sp = Spectral::new(g);
        let f = bump(g, 0.2);
        let p = ParabolicGrid::for_grid(&g, 100.0, 1.2).unwrap();
        let t = heat_evolve(&sp, &f, &p, 2).unwrap();
        let dev = t.deviation_profile();
        assert!(dev[dev.len() - 1] < 0.01 * dev[0]);
        for w in dev[1..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        let e = energy_profile(&sp, &t);
        for w in e.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        for (k, s) in t.snapshots.iter().enumerate().skip(1) {
            let r = heat_rhs(&sp, s);
            assert!(s.phi.dot(&r).max_abs() < 1e-8, "node {k}");
        }
        let fr = transport_frame(&sp, &t, default_q_prime(f.q)).unwrap();
        assert!(frame_defect(&t, &fr) < 1e-8);
    }

    #[test]
    fn dyadic_decay() {
        let (g, sp) = setup(64);
        let f = bump(g, 0.2);
        let k = 1;
        let p0 = 4f64.powi(-k);
        // ratio 4^{1/8} puts nodes exactly at p0, 4 p0 and 16 p0
        let pg = ParabolicGrid::geometric(16.0 * p0, 4f64.powi(-g.window().k_max), 4f64.powf(0.125)).unwrap();
        let t = heat_evolve(&sp, &f, &pg, 2).unwrap();
        let norm_at = |s: f64| {
            let i = pg.s_nodes.iter().position(|x| (x / s - 1.0).abs() < 1e-9).unwrap();
            project_dyadic_vec(&sp, &t.snapshots[i].phi, k).unwrap().norm_l2()
        };
        let a = norm_at(p0);
        let b = norm_at(4.0 * p0);
        let c = norm_at(16.0 * p0);
        assert!(a / b >= 4.0 && b / c >= 4.0, "{a} {b} {c}");
    }

    #[test]
    fn lowdin_is_rotation_equivariant() {
        let p = normalize3([0.1, -0.2, 1.0]);
        let a = [1.0, 0.05, 0.0];
        let b = [0.02, 0.9, 0.1];
        let (v, w) = tangent_lowdin(p, a, b);
        assert!(dot3(v, w).abs() < 1e-15 && (dot3(v, v) - 1.0).abs() < 1e-15);
        let th: f64 = 0.4;
        let (s, c) = th.sin_cos();
        let ra = [c * a[0] + s * b[0], c * a[1] + s * b[1], c * a[2] + s * b[2]];
        let rb = [-s * a[0] + c * b[0], -s * a[1] + c * b[1], -s * a[2] + c * b[2]];
        let (v2, w2) = tangent_lowdin(p, ra, rb);
        for j in 0..3 {
            assert!((v2[j] - (c * v[j] + s * w[j])).abs() < 1e-14);
            assert!((w2[j] - (-s * v[j] + c * w[j])).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_weights_exact_on_polynomials() {
        let x = [0.0, 0.1, 0.25, 0.3, 0.7, 1.1];
        for i in 0..x.len() {
            let (lo, w) = derivative_weights(&x, i, 5);
            let d: f64 = w.iter().enumerate().map(|(j, wt)| wt * x[lo + j].powi(4)).sum();
            assert!((d - 4.0 * x[i].powi(3)).abs() < 1e-10);
        }
    }

    #[test]
    fn far_from_equilibrium_rejected() {
        let (g, sp) = setup(16);
        let p = ParabolicGrid::for_grid(&g, 4.0, 1.25).unwrap();
        let f = SphereField::constant(g, [0.0, 0.0, 1.0]);
        let mut t = heat_evolve(&sp, &f, &p, 2).unwrap();
        let last = t.snapshots.len() - 1;
        t.snapshots[last] = SphereField::constant(g, [1.0, 0.0, 0.0]);
        t.snapshots[last].q = [0.0, 0.0, 1.0];
        assert!(matches!(transport_frame(&sp, &t, [1.0, 0.0, 0.0]), Err(LabError::FarFromEquilibrium { .. })));
    }
}
