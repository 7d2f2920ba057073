//! Run configuration and the initial-data families.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::PathBuf;

use crate::error::{LabError, Result};
use crate::flow::{energy_e1, helical_wave, max_stable_dt, SphereField};
use crate::grid::{cross3, dot3, normalize3, ComplexField, GridSpec, VectorField3};
use crate::probe::{ensemble_member, EnsembleSpec};
use crate::spectral::Spectral;

/// Smallness surrogate for the gauge scenarios: `E_1^{1/2} <= 0.3`.
pub const SMALLNESS: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Constant,
    Helical,
    GaussianBump,
    NearbyPair,
    RandomBand,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Constant => "constant",
            ScenarioKind::Helical => "helical",
            ScenarioKind::GaussianBump => "gaussian_bump",
            ScenarioKind::NearbyPair => "nearby_pair",
            ScenarioKind::RandomBand => "random_band",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    pub n: usize,
    pub box_length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { d: 2, n: 128, box_length: 16.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    /// Base point; normalized on use.
    pub q: [f64; 3],
    /// Helical polar angle.
    pub theta: f64,
    /// Helical wavenumber; must be a lattice wavenumber of the box.
    pub kappa: f64,
    pub amplitude: f64,
    pub width: f64,
    /// Perturbation sizes for `nearby_pair`.
    pub h: Vec<f64>,
    /// Bands present in `random_band`.
    pub bands: Vec<i32>,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            q: [0.0, 0.0, 1.0],
            theta: PI / 4.0,
            kappa: 1.0,
            amplitude: 0.05,
            width: 1.0,
            h: vec![1e-2, 5e-3],
            bands: vec![0, 1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub t_end: f64,
    /// Flow step; half the stability bound when absent.
    pub dt: Option<f64>,
    pub s_max: f64,
    pub s_ratio: f64,
    pub heat_substeps: usize,
    /// Time stencil for the time-direction gauge fields; skipped when absent.
    pub time_stencil: Option<f64>,
    pub k_cal: u32,
    pub directions: usize,
    pub seed: u64,
    pub workers: usize,
    /// Estimates probed by `probe`.
    pub estimates: Vec<String>,
    /// Bands for `norms` and `probe`; the full window when empty.
    pub ks: Vec<i32>,
    pub ensemble: usize,
    pub omega: Vec<f64>,
    pub sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            dt: None,
            s_max: 64.0,
            s_ratio: 1.1,
            heat_substeps: 2,
            time_stencil: None,
            k_cal: 2,
            directions: 16,
            seed: 7,
            workers: 4,
            estimates: vec!["locsmobound".into(), "linst".into(), "linnew".into(), "linmax".into()],
            ks: vec![],
            ensemble: 32,
            omega: vec![0.0, 0.25, 0.5],
            sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Steps between conservation rows.
    pub cadence: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), cadence: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioKind) -> Self {
        let mut c = Self {
            scenario,
            grid: GridConfig::default(),
            physics: PhysicsConfig::default(),
            run: RunConfig::default(),
            outputs: OutputConfig::default(),
        };
        if matches!(scenario, ScenarioKind::Helical | ScenarioKind::RandomBand) {
            c.grid.box_length = 2.0 * PI;
        }
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.d, self.grid.n, self.grid.box_length)
    }

    pub fn q(&self) -> Result<[f64; 3]> {
        let n = dot3(self.physics.q, self.physics.q).sqrt();
        if !(n > 0.0) {
            return Err(LabError::Config("base point q must be nonzero".into()));
        }
        Ok(normalize3(self.physics.q))
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.grid()?;
        self.q()?;
        let p = &self.physics;
        let r = &self.run;
        if !(r.t_end >= 0.0) || r.dt.is_some_and(|dt| !(dt > 0.0)) {
            return Err(LabError::Config("t_end must be >= 0 and dt > 0".into()));
        }
        if !(r.s_max > 0.0) || !(r.s_ratio > 1.0) || r.heat_substeps == 0 {
            return Err(LabError::Config("need s_max > 0, s_ratio > 1, heat_substeps >= 1".into()));
        }
        if !(p.width > 0.0) {
            return Err(LabError::Config("bump width must be positive".into()));
        }
        if self.scenario == ScenarioKind::Helical {
            let m = p.kappa * g.box_length / (2.0 * PI);
            if (m - m.round()).abs() > 1e-9 {
                return Err(LabError::Config(format!("kappa = {} is not a lattice wavenumber", p.kappa)));
            }
        }
        if self.scenario == ScenarioKind::NearbyPair && (p.h.is_empty() || p.h.iter().any(|h| !(*h > 0.0))) {
            return Err(LabError::Config("nearby_pair needs positive perturbation sizes".into()));
        }
        if r.workers == 0 {
            return Err(LabError::Config("workers must be >= 1".into()));
        }
        if self.outputs.dir.as_os_str().is_empty() {
            return Err(LabError::Config("empty output directory".into()));
        }
        Ok(())
    }

    /// Flow step actually used.
    pub fn flow_dt(&self, sp: &Spectral) -> f64 {
        self.run.dt.unwrap_or(0.5 * max_stable_dt(sp))
    }

    pub fn ensemble(&self) -> EnsembleSpec {
        EnsembleSpec {
            members: self.run.ensemble,
            seed: self.run.seed,
            k_cal: self.run.k_cal,
            workers: self.run.workers,
            ..Default::default()
        }
    }
}

/// Two unit tangent vectors at `q`.
fn tangent_basis(q: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let a = if q[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = dot3(a, q);
    let e1 = normalize3([a[0] - d * q[0], a[1] - d * q[1], a[2] - d * q[2]]);
    (e1, cross3(q, e1))
}

/// `Q + eps g (e_1 + (x_1/w) e_2)`, `g = exp(-|x|^2/w^2)`, projected onto the sphere.
pub fn gaussian_bump(grid: GridSpec, q: [f64; 3], eps: f64, width: f64) -> Result<SphereField> {
    let (e1, e2) = tangent_basis(q);
    let phi = VectorField3::from_fn(grid, |x| {
        let r2 = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (width * width);
        let g = eps * (-r2).exp();
        let b = g * x[0] / width;
        [q[0] + g * e1[0] + b * e2[0], q[1] + g * e1[1] + b * e2[1], q[2] + g * e1[2] + b * e2[2]]
    });
    SphereField::project(phi, q)
}

/// Tangent perturbation used by `nearby_pair`: an off-center bump along `Q x e_1`.
pub fn perturb(field: &SphereField, h: f64, width: f64) -> Result<SphereField> {
    let (_, e2) = tangent_basis(field.q);
    let g = field.grid();
    let c = 0.5 * width;
    let mut phi = field.phi.clone();
    for i in 0..g.len() {
        let x = g.position(i);
        let r2 = ((x[0] - c).powi(2) + x[1] * x[1] + x[2] * x[2]) / (width * width);
        let p = field.phi.get(i);
        let b = h * (-r2).exp();
        let t = dot3(e2, p);
        phi.set(i, [p[0] + b * (e2[0] - t * p[0]), p[1] + b * (e2[1] - t * p[1]), p[2] + b * (e2[2] - t * p[2])]);
    }
    SphereField::project(phi, field.q)
}

/// Sum of unit random members over `bands` with amplitudes uniform in `[0.5, 1.5]`.
pub fn random_band_field(sp: &Spectral, bands: &[i32], seed: u64) -> Result<ComplexField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = EnsembleSpec { seed, ..Default::default() };
    let mut w = ComplexField::zeros(sp.grid);
    for &k in bands {
        sp.grid.window().check(k)?;
        let a: f64 = rng.random_range(0.5..1.5);
        let f = ensemble_member(sp, k, None, &spec, 0)?;
        w = w.add(&f.scale(Complex64::new(a, 0.0)));
    }
    Ok(w)
}

/// `Q + eps (Re w e_1 + Im w e_2)`, projected.
pub fn random_band(sp: &Spectral, q: [f64; 3], eps: f64, bands: &[i32], seed: u64) -> Result<SphereField> {
    let w = random_band_field(sp, bands, seed)?;
    let (e1, e2) = tangent_basis(q);
    let phi = VectorField3::from_fn(sp.grid, |_| q);
    let mut phi = phi;
    for (i, z) in w.data.iter().enumerate() {
        let (a, b) = (eps * z.re, eps * z.im);
        phi.set(i, [q[0] + a * e1[0] + b * e2[0], q[1] + a * e1[1] + b * e2[1], q[2] + a * e1[2] + b * e2[2]]);
    }
    SphereField::project(phi, q)
}

/// Initial data of the scenario; `nearby_pair` yields the unperturbed member.
pub fn initial_data(cfg: &ScenarioConfig, sp: &Spectral) -> Result<SphereField> {
    let g = sp.grid;
    let q = cfg.q()?;
    let p = &cfg.physics;
    match cfg.scenario {
        ScenarioKind::Constant => Ok(SphereField::constant(g, q)),
        ScenarioKind::Helical => Ok(helical_wave(g, p.kappa, p.theta, 0.0)),
        ScenarioKind::GaussianBump | ScenarioKind::NearbyPair => gaussian_bump(g, q, p.amplitude, p.width),
        ScenarioKind::RandomBand => random_band(sp, q, p.amplitude, &p.bands, cfg.run.seed),
    }
}

/// Rejects gauge runs on data with `E_1^{1/2} > 0.3`.
pub fn check_smallness(sp: &Spectral, field: &SphereField) -> Result<f64> {
    let e = energy_e1(sp, field).sqrt();
    if e > SMALLNESS {
        return Err(LabError::Config(format!("E_1^(1/2) = {e:.4} exceeds the smallness bound {SMALLNESS}")));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::energy_e0;

    #[test]
    fn toml_round_trip_and_defaults() {
        let c = ScenarioConfig::new(ScenarioKind::GaussianBump);
        let back = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        let min = ScenarioConfig::from_toml("scenario = \"constant\"\n[grid]\nd = 2\nn = 16\nbox_length = 8.0\n").unwrap();
        assert_eq!(min.run, RunConfig::default());
        assert!(ScenarioConfig::from_toml("scenario = \"bogus\"").is_err());
        assert!(ScenarioConfig::from_toml("scenario = \"constant\"\n[run]\nfoo = 1\n").is_err());
    }

    #[test]
    fn validation() {
        let mut c = ScenarioConfig::new(ScenarioKind::Helical);
        c.physics.kappa = 1.5;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::new(ScenarioKind::GaussianBump);
        c.run.s_ratio = 1.0;
        assert!(c.validate().is_err());
        c = ScenarioConfig::new(ScenarioKind::NearbyPair);
        c.physics.h = vec![];
        assert!(c.validate().is_err());
    }

    #[test]
    fn data_families() {
        let g = GridSpec::new(2, 64, 16.0).unwrap();
        let sp = Spectral::new(g);
        let q = [0.0, 0.0, 1.0];
        let b = gaussian_bump(g, q, 0.05, 1.0).unwrap();
        assert!(b.phi.sphere_drift() < 1e-12);
        assert!(check_smallness(&sp, &b).is_ok());
        assert!(check_smallness(&sp, &gaussian_bump(g, q, 2.0, 1.0).unwrap()).is_err());
        let c = cfg_bump();
        assert_eq!(initial_data(&c, &sp).unwrap(), b);
        let h1 = perturb(&b, 1e-2, 1.0).unwrap();
        let h2 = perturb(&b, 5e-3, 1.0).unwrap();
        let d1 = h1.phi.sub(&b.phi).norm_l2();
        let d2 = h2.phi.sub(&b.phi).norm_l2();
        assert!((d1 / d2 - 2.0).abs() < 1e-3);
        let z = SphereField::constant(g, q);
        assert_eq!(energy_e0(&z), 0.0);
        let sp2 = Spectral::new(GridSpec::new(2, 64, 2.0 * PI).unwrap());
        let r = random_band(&sp2, q, 0.02, &[1, 2, 3], 3).unwrap();
        assert_eq!(r, random_band(&sp2, q, 0.02, &[1, 2, 3], 3).unwrap());
        assert!(random_band(&sp2, q, 0.02, &[40], 3).is_err());
    }

    fn cfg_bump() -> ScenarioConfig {
        let mut c = ScenarioConfig::new(ScenarioKind::GaussianBump);
        c.grid.n = 64;
        c
    }
}
