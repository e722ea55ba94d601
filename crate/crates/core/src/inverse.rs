//! Inverse source problem: separable admissible sources, observations
//! `(Y(T₀), ∂_t y|_ω)`, Tikhonov reconstruction and stability ratios.

use std::f64::consts::TAU;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::ProblemCoefficients;
use crate::error::{check_len, Error, Result};
use crate::geometry::{BulkField, CoupledField, DiskMesh, SurfaceField};
use crate::operators::{bulk_laplacian, laplace_beltrami, norm, CoupledOperator, NormKind};
use crate::region::Region;
use crate::solver::{run, time_derivative, Scheme, SolverOptions, SourcePair, Stepper, TimeGrid, Trajectory, Window};

/// Known time profile `r(t, θ)` of a separable source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnownFactor {
    Constant { value: f64 },
    /// `e^{−rate·t}`.
    Exponential { rate: f64 },
    /// `1 + amplitude·sin(frequency·t)·cos(mode·θ)`.
    Modulated { amplitude: f64, frequency: f64, mode: u32 },
    /// `1 + amplitude·sin(frequency·t + mode·θ + phase)`.
    Wave {
        amplitude: f64,
        frequency: f64,
        mode: i32,
        phase: f64,
    },
}

impl KnownFactor {
    pub fn value(&self, t: f64, theta: f64) -> f64 {
        match *self {
            KnownFactor::Constant { value } => value,
            KnownFactor::Exponential { rate } => (-rate * t).exp(),
            KnownFactor::Modulated {
                amplitude,
                frequency,
                mode,
            } => 1.0 + amplitude * (frequency * t).sin() * (mode as f64 * theta).cos(),
            KnownFactor::Wave {
                amplitude,
                frequency,
                mode,
                phase,
            } => 1.0 + amplitude * (frequency * t + mode as f64 * theta + phase).sin(),
        }
    }

    /// `∂_t r`.
    pub fn dt(&self, t: f64, theta: f64) -> f64 {
        match *self {
            KnownFactor::Constant { .. } => 0.0,
            KnownFactor::Exponential { rate } => -rate * (-rate * t).exp(),
            KnownFactor::Modulated {
                amplitude,
                frequency,
                mode,
            } => amplitude * frequency * (frequency * t).cos() * (mode as f64 * theta).cos(),
            KnownFactor::Wave {
                amplitude,
                frequency,
                mode,
                phase,
            } => amplitude * frequency * (frequency * t + mode as f64 * theta + phase).cos(),
        }
    }

    fn random(rng: &mut ChaCha8Rng, spec: &RandomSourceSpec) -> Self {
        KnownFactor::Wave {
            amplitude: rng.random_range(spec.amplitude_min..=spec.amplitude_max),
            frequency: rng.random_range(spec.frequency_min..=spec.frequency_max),
            mode: rng.random_range(-(spec.max_mode as i32)..=spec.max_mode as i32),
            phase: rng.random_range(0.0..TAU),
        }
    }
}

/// Truncated trigonometric source basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    /// Radial factors `cos(kπr/R)`, `k = 0..radial`.
    pub radial: usize,
    /// Angular factors `1, cos θ, sin θ, cos 2θ, …`.
    pub angular: usize,
    /// Surface functions, same angular sequence.
    pub surface: usize,
    /// Upper bound on `radial·angular + surface`.
    pub cap: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            radial: 4,
            angular: 16,
            surface: 16,
            cap: 80,
        }
    }
}

fn angular_function(a: usize, theta: f64) -> f64 {
    let m = a.div_ceil(2) as f64;
    if a == 0 {
        1.0
    } else if a % 2 == 1 {
        (m * theta).cos()
    } else {
        (m * theta).sin()
    }
}

/// Basis functions sampled on a mesh, each of unit discrete L² norm.
#[derive(Clone, Debug)]
pub struct SourceBasis {
    pub config: BasisConfig,
    mesh: DiskMesh,
    bulk: Vec<Vec<f64>>,
    surface: Vec<Vec<f64>>,
}

impl SourceBasis {
    pub fn new(mesh: &DiskMesh, config: BasisConfig) -> Result<Self> {
        let requested = config.radial * config.angular + config.surface;
        if requested > config.cap {
            return Err(Error::BasisCapExceeded {
                requested,
                cap: config.cap,
            });
        }
        let max_mode = config.angular.max(config.surface) / 2;
        if 2 * max_mode >= mesh.nth() {
            return Err(Error::param(
                "inverse.basis",
                format!("angular mode {max_mode} is not resolved by nth = {}", mesh.nth()),
            ));
        }
        let radius = mesh.radius();
        let mut bulk = Vec::with_capacity(config.radial * config.angular);
        for k in 0..config.radial {
            for a in 0..config.angular {
                let v = mesh
                    .sample_bulk(|r, th| (k as f64 * std::f64::consts::PI * r / radius).cos() * angular_function(a, th))
                    .values;
                bulk.push(v);
            }
        }
        let mut surface = Vec::with_capacity(config.surface);
        for a in 0..config.surface {
            surface.push(mesh.sample_surface(|th| angular_function(a, th)).values);
        }
        for v in bulk.iter_mut() {
            let n = l2_bulk(mesh, v);
            v.iter_mut().for_each(|x| *x /= n);
        }
        for v in surface.iter_mut() {
            let n = l2_surface(mesh, v);
            v.iter_mut().for_each(|x| *x /= n);
        }
        Ok(Self {
            config,
            mesh: mesh.clone(),
            bulk,
            surface,
        })
    }

    pub fn len(&self) -> usize {
        self.bulk.len() + self.surface.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bulk_len(&self) -> usize {
        self.bulk.len()
    }

    /// `(f, g)` of basis function `k`; bulk functions come first.
    pub fn function(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        if k < self.bulk.len() {
            (self.bulk[k].clone(), vec![0.0; self.mesh.nth()])
        } else {
            (vec![0.0; self.mesh.cell_count()], self.surface[k - self.bulk.len()].clone())
        }
    }

    pub fn combine(&self, coeffs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("basis coefficients", self.len(), coeffs.len())?;
        let mut f = vec![0.0; self.mesh.cell_count()];
        let mut g = vec![0.0; self.mesh.nth()];
        for (c, v) in coeffs.iter().zip(&self.bulk) {
            for (x, y) in f.iter_mut().zip(v) {
                *x += c * y;
            }
        }
        for (c, v) in coeffs[self.bulk.len()..].iter().zip(&self.surface) {
            for (x, y) in g.iter_mut().zip(v) {
                *x += c * y;
            }
        }
        Ok((f, g))
    }

    /// `⟨φ_k, φ_l⟩_𝕃²`, row-major.
    pub fn gram(&self) -> Vec<f64> {
        let n = self.len();
        let mut g = vec![0.0; n * n];
        let nb = self.bulk.len();
        for k in 0..n {
            for l in k..n {
                let v = match (k < nb, l < nb) {
                    (true, true) => bulk_dot(&self.mesh, &self.bulk[k], &self.bulk[l]),
                    (false, false) => surface_dot(&self.mesh, &self.surface[k - nb], &self.surface[l - nb]),
                    _ => 0.0,
                };
                g[k * n + l] = v;
                g[l * n + k] = v;
            }
        }
        g
    }

    /// Random coefficients, decaying with the angular mode.
    pub fn random_coefficients(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let cfg = self.config;
        let mut c = Vec::with_capacity(self.len());
        for k in 0..cfg.radial {
            for a in 0..cfg.angular {
                let decay = 1.0 / (1.0 + (k + a.div_ceil(2)) as f64);
                c.push(decay * rng.random_range(-1.0..1.0));
            }
        }
        for a in 0..cfg.surface {
            c.push(rng.random_range(-1.0..1.0) / (1.0 + a.div_ceil(2) as f64));
        }
        c
    }
}

fn bulk_dot(mesh: &DiskMesh, a: &[f64], b: &[f64]) -> f64 {
    let nth = mesh.nth();
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(k, (x, y))| mesh.cell_area(k / nth) * x * y)
        .sum()
}

fn surface_dot(mesh: &DiskMesh, a: &[f64], b: &[f64]) -> f64 {
    mesh.node_length() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

fn l2_bulk(mesh: &DiskMesh, a: &[f64]) -> f64 {
    bulk_dot(mesh, a, a).sqrt()
}

fn l2_surface(mesh: &DiskMesh, a: &[f64]) -> f64 {
    surface_dot(mesh, a, a).sqrt()
}

/// `‖(f, g)‖_𝕃²`.
pub fn pair_l2(mesh: &DiskMesh, f: &[f64], g: &[f64]) -> f64 {
    (bulk_dot(mesh, f, f) + surface_dot(mesh, g, g)).sqrt()
}

/// Parameters of the random admissible sources used by the ensembles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSourceSpec {
    pub basis: BasisConfig,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub frequency_min: f64,
    pub frequency_max: f64,
    pub max_mode: u32,
}

impl Default for RandomSourceSpec {
    fn default() -> Self {
        Self {
            basis: BasisConfig::default(),
            amplitude_min: 0.1,
            amplitude_max: 0.5,
            frequency_min: 0.5,
            frequency_max: 2.0,
            max_mode: 2,
        }
    }
}

impl RandomSourceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.amplitude_min && self.amplitude_min <= self.amplitude_max && self.amplitude_max < 1.0) {
            return Err(Error::param(
                "sources.amplitude_max",
                format!(
                    "need 0 <= amplitude_min <= amplitude_max < 1, got {} / {}",
                    self.amplitude_min, self.amplitude_max
                ),
            ));
        }
        if !(0.0 <= self.frequency_min && self.frequency_min <= self.frequency_max && self.frequency_max.is_finite()) {
            return Err(Error::param(
                "sources.frequency_max",
                format!("need 0 <= frequency_min <= frequency_max, got {} / {}", self.frequency_min, self.frequency_max),
            ));
        }
        Ok(())
    }
}

/// Witness of a failed admissibility check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub time: f64,
    pub dof: usize,
    pub derivative: f64,
    pub value_at_t_obs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub admissible: bool,
    pub witness: Option<Violation>,
    /// Smallest `C₀` that passes on the grid (infinite if `F(T₀)` vanishes
    /// where `F_t` does not).
    pub minimal_c0: f64,
}

/// Relative slack of the admissibility inequality.
pub const ADMISSIBILITY_SLACK: f64 = 1e-12;

/// Checks `|F_t(t_n)| ≤ C₀ |F(T₀)|` at every grid time and dof.
pub fn check_admissible(
    values: &[Vec<f64>],
    derivatives: &[Vec<f64>],
    obs_index: usize,
    c0: f64,
) -> Result<Admissibility> {
    check_len("source derivative snapshots", values.len(), derivatives.len())?;
    let at_obs = values.get(obs_index).ok_or(Error::TooFewSteps {
        required: obs_index + 1,
        found: values.len(),
    })?;
    let mut witness = None;
    let mut minimal: f64 = 0.0;
    for (n, d) in derivatives.iter().enumerate() {
        check_len("source derivative", at_obs.len(), d.len())?;
        for (k, (&dv, &fv)) in d.iter().zip(at_obs).enumerate() {
            let (a, b) = (dv.abs(), fv.abs());
            if a > 0.0 {
                minimal = minimal.max(if b > 0.0 { a / b } else { f64::INFINITY });
            }
            if witness.is_none() && a > c0 * b * (1.0 + ADMISSIBILITY_SLACK) {
                witness = Some(Violation {
                    step: n,
                    time: f64::NAN,
                    dof: k,
                    derivative: dv,
                    value_at_t_obs: fv,
                });
            }
        }
    }
    Ok(Admissibility {
        admissible: witness.is_none(),
        witness,
        minimal_c0: minimal,
    })
}

/// `F = f·r(t, θ)` on Ω and `G = g·r̃(t, θ)` on Γ with the certified `C₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableSource {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub r: KnownFactor,
    pub r_tilde: KnownFactor,
    pub t_obs: f64,
    /// `min |r(T₀, ·)|`.
    pub r0: f64,
    /// `min |r̃(T₀, ·)|`.
    pub r0_tilde: f64,
    pub c0: f64,
    mesh: DiskMesh,
}

/// Builds a separable source, certifying `C₀ = max(sup|r_t|/r₀, sup|r̃_t|/r̃₀)`
/// with the suprema taken over `grid` and the mesh.
pub fn make_separable(
    mesh: &DiskMesh,
    f: Vec<f64>,
    g: Vec<f64>,
    r: KnownFactor,
    r_tilde: KnownFactor,
    grid: &TimeGrid,
    t_obs: f64,
) -> Result<SeparableSource> {
    check_len("f", mesh.cell_count(), f.len())?;
    check_len("g", mesh.nth(), g.len())?;
    if f.iter().chain(&g).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("separable source amplitude".into()));
    }
    let thetas: Vec<f64> = (0..mesh.nth()).map(|j| mesh.theta(j)).collect();
    let min_at = |k: &KnownFactor, what: &str| -> Result<f64> {
        let mut m = f64::INFINITY;
        for (j, &th) in thetas.iter().enumerate() {
            let v = k.value(t_obs, th).abs();
            if v == 0.0 {
                return Err(Error::DegenerateKnownPart {
                    location: format!("{what} at node angle index {j} (θ = {th})"),
                });
            }
            m = m.min(v);
        }
        Ok(m)
    };
    let r0 = min_at(&r, "r")?;
    let r0_tilde = min_at(&r_tilde, "r̃")?;
    let sup_dt = |k: &KnownFactor| {
        grid.times()
            .iter()
            .flat_map(|&t| thetas.iter().map(move |&th| k.dt(t, th).abs()))
            .fold(0.0, f64::max)
    };
    let c0 = (sup_dt(&r) / r0).max(sup_dt(&r_tilde) / r0_tilde);
    Ok(SeparableSource {
        f,
        g,
        r,
        r_tilde,
        t_obs,
        r0,
        r0_tilde,
        c0,
        mesh: mesh.clone(),
    })
}

impl SeparableSource {
    /// Random in-basis amplitudes with random wave factors.
    pub fn random(mesh: &DiskMesh, spec: &RandomSourceSpec, window: &Window, seed: u64) -> Result<Self> {
        spec.validate()?;
        let basis = SourceBasis::new(mesh, spec.basis)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = basis.random_coefficients(&mut rng);
        let r = KnownFactor::random(&mut rng, spec);
        let rt = KnownFactor::random(&mut rng, spec);
        let (f, g) = basis.combine(&coeffs)?;
        make_separable(mesh, f, g, r, rt, &window.grid()?, window.t_obs())
    }

    pub fn mesh(&self) -> &DiskMesh {
        &self.mesh
    }

    fn fill(&self, t: f64, out: &mut [f64], derivative: bool) {
        let nth = self.mesh.nth();
        let nc = self.mesh.cell_count();
        let eval = |k: &KnownFactor, th: f64| if derivative { k.dt(t, th) } else { k.value(t, th) };
        let rs: Vec<f64> = (0..nth).map(|j| eval(&self.r, self.mesh.theta(j))).collect();
        for (k, (o, fv)) in out[..nc].iter_mut().zip(&self.f).enumerate() {
            *o = fv * rs[k % nth];
        }
        for (j, (o, gv)) in out[nc..].iter_mut().zip(&self.g).enumerate() {
            *o = gv * eval(&self.r_tilde, self.mesh.theta(j));
        }
    }

    /// Writes `(F(t), G(t))`.
    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        self.fill(t, out, false);
    }

    /// Writes `(F_t(t), G_t(t))`.
    pub fn derivative_into(&self, t: f64, out: &mut [f64]) {
        self.fill(t, out, true);
    }

    pub fn source_pair(&self) -> SourcePair {
        let me = Arc::new(self.clone());
        SourcePair::function(move |t, out| me.value_into(t, out))
    }

    pub fn derivative_pair(&self) -> SourcePair {
        let me = Arc::new(self.clone());
        SourcePair::function(move |t, out| me.derivative_into(t, out))
    }

    pub fn snapshots(&self, grid: &TimeGrid) -> Vec<Vec<f64>> {
        grid.times()
            .iter()
            .map(|&t| {
                let mut v = vec![0.0; self.mesh.dof_count()];
                self.value_into(t, &mut v);
                v
            })
            .collect()
    }

    pub fn derivative_snapshots(&self, grid: &TimeGrid) -> Vec<Vec<f64>> {
        grid.times()
            .iter()
            .map(|&t| {
                let mut v = vec![0.0; self.mesh.dof_count()];
                self.derivative_into(t, &mut v);
                v
            })
            .collect()
    }

    /// Admissibility with the certified `C₀` on `grid`.
    pub fn check(&self, grid: &TimeGrid) -> Result<Admissibility> {
        let idx = grid
            .index_of(self.t_obs)
            .ok_or(Error::OffGridObservationTime { t: self.t_obs })?;
        let mut a = check_admissible(&self.snapshots(grid), &self.derivative_snapshots(grid), idx, self.c0)?;
        if let Some(w) = a.witness.as_mut() {
            w.time = grid.time(w.step);
        }
        Ok(a)
    }

    /// `‖(F, G)‖_{𝕃²_T}` over the whole grid, trapezoidal in time.
    pub fn l2_t_norm(&self, grid: &TimeGrid) -> f64 {
        let nc = self.mesh.cell_count();
        let mut v = vec![0.0; self.mesh.dof_count()];
        let mut total = 0.0;
        for (n, t) in grid.times().into_iter().enumerate() {
            self.value_into(t, &mut v);
            let w = if n == 0 || n == grid.steps { 0.5 } else { 1.0 } * grid.dt();
            total += w * (bulk_dot(&self.mesh, &v[..nc], &v[..nc]) + surface_dot(&self.mesh, &v[nc..], &v[nc..]));
        }
        total.sqrt()
    }

    /// `‖(f, g)‖_𝕃²`.
    pub fn amplitude_l2(&self) -> f64 {
        pair_l2(&self.mesh, &self.f, &self.g)
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut s = self.clone();
        s.f.iter_mut().for_each(|v| *v *= k);
        s.g.iter_mut().for_each(|v| *v *= k);
        s
    }

    /// Same known factors, amplitudes `self − other`.
    pub fn difference(&self, other: &SeparableSource) -> Result<Self> {
        if self.r != other.r || self.r_tilde != other.r_tilde {
            return Err(Error::param("inverse", "difference of sources with different known factors"));
        }
        let mut s = self.clone();
        s.f.iter_mut().zip(&other.f).for_each(|(a, b)| *a -= b);
        s.g.iter_mut().zip(&other.g).for_each(|(a, b)| *a -= b);
        Ok(s)
    }
}

/// Observation data: the snapshot at `T₀` and `∂_t y` on `ω` over `[t0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub t0: f64,
    pub t_end: f64,
    pub t_obs: f64,
    /// Flat coupled vector `Y(T₀)`.
    pub snapshot: Vec<f64>,
    /// `‖Y(T₀)‖` in the equivalent ℍ² norm.
    pub snapshot_h2: f64,
    /// Cells of `ω`.
    pub cells: Vec<usize>,
    /// `∂_t y` on `ω`, one row per grid time in `[t0, T]`.
    pub interior_dt: Vec<Vec<f64>>,
    /// Trapezoidal weights of those times.
    pub time_weights: Vec<f64>,
    /// `‖∂_t y‖_{L²(ω_{t0,T})}`.
    pub dt_norm: f64,
}

impl ObservationRecord {
    fn from_parts(
        mesh: &DiskMesh,
        window: &Window,
        cells: Vec<usize>,
        snapshot: Vec<f64>,
        interior_dt: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let y = CoupledField::from_slice(mesh, &snapshot)?;
        let snapshot_h2 = norm(mesh, &y, NormKind::H2eq)?;
        let dt = window.dt();
        let m = interior_dt.len();
        let time_weights: Vec<f64> = (0..m)
            .map(|n| if n == 0 || n + 1 == m { 0.5 * dt } else { dt })
            .collect();
        let nth = mesh.nth();
        let mut s = 0.0;
        for (w, row) in time_weights.iter().zip(&interior_dt) {
            for (&k, v) in cells.iter().zip(row) {
                s += w * mesh.cell_area(k / nth) * v * v;
            }
        }
        Ok(Self {
            t0: window.t0,
            t_end: window.t_end,
            t_obs: window.t_obs(),
            snapshot,
            snapshot_h2,
            cells,
            interior_dt,
            time_weights,
            dt_norm: s.sqrt(),
        })
    }

    /// `‖Y(T₀)‖_{ℍ²} + ‖∂_t y‖_{L²(ω_{t0,T})}`.
    pub fn norm(&self) -> f64 {
        self.snapshot_h2 + self.dt_norm
    }

    fn combine(&self, mesh: &DiskMesh, other: &Self, a: f64, b: f64) -> Result<Self> {
        if self.cells != other.cells || self.interior_dt.len() != other.interior_dt.len() {
            return Err(Error::param("observation", "records use different regions or windows"));
        }
        let lin = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect::<Vec<f64>>();
        let window = self.window();
        Self::from_parts(
            mesh,
            &window,
            self.cells.clone(),
            lin(&self.snapshot, &other.snapshot),
            self.interior_dt
                .iter()
                .zip(&other.interior_dt)
                .map(|(x, y)| lin(x, y))
                .collect(),
        )
    }

    fn window(&self) -> Window {
        Window {
            t_start: self.t0,
            t0: self.t0,
            t_end: self.t_end,
            steps: self.interior_dt.len() - 1,
        }
    }

    pub fn sub(&self, mesh: &DiskMesh, other: &Self) -> Result<Self> {
        self.combine(mesh, other, 1.0, -1.0)
    }

    pub fn add(&self, mesh: &DiskMesh, other: &Self) -> Result<Self> {
        self.combine(mesh, other, 1.0, 1.0)
    }

    /// Hilbert feature vector: its Euclidean norm squared is
    /// `‖y‖² + ‖Δy‖² + ‖y_Γ‖² + ‖Δ_Γ y_Γ‖² + ‖∂_t y‖²_{L²(ω_{t0,T})}`.
    pub fn features(&self, mesh: &DiskMesh) -> Result<Vec<f64>> {
        let y = CoupledField::from_slice(mesh, &self.snapshot)?;
        let nth = mesh.nth();
        let lap = bulk_laplacian(mesh, &y.bulk, &y.surface);
        let lb = laplace_beltrami(mesh, &y.surface);
        let sh = mesh.node_length().sqrt();
        let mut out = Vec::with_capacity(2 * mesh.dof_count() + self.cells.len() * self.interior_dt.len());
        for (k, v) in y.bulk.values.iter().enumerate() {
            out.push(mesh.cell_area(k / nth).sqrt() * v);
        }
        for (k, v) in lap.iter().enumerate() {
            out.push(mesh.cell_area(k / nth).sqrt() * v);
        }
        out.extend(y.surface.values.iter().map(|v| sh * v));
        out.extend(lb.iter().map(|v| sh * v));
        for (w, row) in self.time_weights.iter().zip(&self.interior_dt) {
            for (&k, v) in self.cells.iter().zip(row) {
                out.push((w * mesh.cell_area(k / nth)).sqrt() * v);
            }
        }
        Ok(out)
    }

    /// Adds i.i.d. Gaussian noise of standard deviation `delta·rms` to the
    /// snapshot values and to the derivative samples, each block with its
    /// own root mean square.
    pub fn with_noise(&self, mesh: &DiskMesh, delta: f64, seed: u64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::param("inverse.noise_levels", format!("must be nonnegative, got {delta}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rms = |v: &mut dyn Iterator<Item = f64>| {
            let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
            if n == 0 {
                0.0
            } else {
                (s / n as f64).sqrt()
            }
        };
        let sig_y = delta * rms(&mut self.snapshot.iter().copied());
        let sig_z = delta * rms(&mut self.interior_dt.iter().flatten().copied());
        let mut noise = |s: f64| -> f64 {
            let e: f64 = StandardNormal.sample(&mut rng);
            s * e
        };
        let snapshot = self.snapshot.iter().map(|v| v + noise(sig_y)).collect();
        let interior_dt = self
            .interior_dt
            .iter()
            .map(|row| row.iter().map(|v| v + noise(sig_z)).collect())
            .collect();
        Self::from_parts(mesh, &self.window(), self.cells.clone(), snapshot, interior_dt)
    }
}

/// Extracts the observation from a trajectory on `window.grid()`.
pub fn observe(traj: &Trajectory, window: &Window, region: &Region) -> Result<ObservationRecord> {
    let grid = window.grid()?;
    if traj.grid.steps != grid.steps
        || (traj.grid.t_start - grid.t_start).abs() > 1e-12
        || (traj.grid.t_end - grid.t_end).abs() > 1e-12
    {
        return Err(Error::OffGridObservationTime { t: window.t_obs() });
    }
    let mesh = &traj.mesh;
    let cells = region.cells(mesh)?;
    let obs = window.t_obs_index()?;
    if grid.index_of(window.t_obs()) != Some(obs) {
        return Err(Error::OffGridObservationTime { t: window.t_obs() });
    }
    let z = time_derivative(traj)?;
    let first = window.t0_index()?;
    let interior_dt = z[first..]
        .iter()
        .map(|row| cells.iter().map(|&k| row[k]).collect())
        .collect();
    ObservationRecord::from_parts(mesh, window, cells, traj.states[obs].clone(), interior_dt)
}

/// Assembled forward problem with zero initial data.
#[derive(Clone, Debug)]
pub struct ForwardProblem {
    pub mesh: DiskMesh,
    pub window: Window,
    pub region: Region,
    stepper: Arc<Stepper>,
}

impl ForwardProblem {
    pub fn new(mesh: &DiskMesh, c: &ProblemCoefficients, window: Window, region: Region, scheme: Scheme) -> Result<Self> {
        c.validate(mesh)?;
        region.mask(mesh)?;
        let grid = window.grid()?;
        let op = Arc::new(CoupledOperator::assemble(mesh, c)?);
        let stepper = Arc::new(Stepper::new(op, scheme, grid.dt(), SolverOptions::default())?);
        Ok(Self {
            mesh: mesh.clone(),
            window,
            region,
            stepper,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.window.grid().expect("validated at construction")
    }

    pub fn solve(&self, src: &SeparableSource) -> Result<Trajectory> {
        run(&self.stepper, &CoupledField::zeros(&self.mesh), &src.source_pair(), self.grid())
    }

    pub fn observe_source(&self, src: &SeparableSource) -> Result<ObservationRecord> {
        observe(&self.solve(src)?, &self.window, &self.region)
    }

    /// Observation of `(f·r, g·r̃)` from zero initial data.
    pub fn forward_map(&self, f: &BulkField, g: &SurfaceField, r: KnownFactor, r_tilde: KnownFactor) -> Result<ObservationRecord> {
        self.mesh.check_bulk(f)?;
        self.mesh.check_surface(g)?;
        let src = make_separable(
            &self.mesh,
            f.values.clone(),
            g.values.clone(),
            r,
            r_tilde,
            &self.grid(),
            self.window.t_obs(),
        )?;
        self.observe_source(&src)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub coeffs: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    /// `‖M c − d‖` in the observation norm.
    pub residual: f64,
    /// `‖(f̂, ĝ)‖_𝕃²`.
    pub solution_norm: f64,
    pub basis_dim: usize,
    /// Ratio of extreme eigenvalues of the regularized normal matrix.
    pub condition_estimate: f64,
}

/// Probing matrix of the forward map on a source basis.
#[derive(Clone, Debug)]
pub struct Reconstructor {
    pub basis: SourceBasis,
    pub r: KnownFactor,
    pub r_tilde: KnownFactor,
    columns: Vec<Vec<f64>>,
    normal: Vec<f64>,
    gram: Vec<f64>,
}

impl Reconstructor {
    /// Probes every basis function (in parallel, columns keyed by index).
    pub fn probe(problem: &ForwardProblem, basis: SourceBasis, r: KnownFactor, r_tilde: KnownFactor) -> Result<Self> {
        let mesh = &problem.mesh;
        let columns = (0..basis.len())
            .into_par_iter()
            .map(|k| {
                let (f, g) = basis.function(k);
                let f = BulkField::from_values(mesh, f)?;
                let g = SurfaceField::scalar(g);
                problem.forward_map(&f, &g, r, r_tilde)?.features(mesh)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = columns.len();
        let mut normal = vec![0.0; n * n];
        for k in 0..n {
            for l in k..n {
                let v: f64 = columns[k].iter().zip(&columns[l]).map(|(a, b)| a * b).sum();
                normal[k * n + l] = v;
                normal[l * n + k] = v;
            }
        }
        let gram = basis.gram();
        Ok(Self {
            basis,
            r,
            r_tilde,
            columns,
            normal,
            gram,
        })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// `M c` as a feature vector.
    pub fn apply(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len("basis coefficients", self.dim(), coeffs.len())?;
        let m = self.columns.first().map_or(0, Vec::len);
        let mut out = vec![0.0; m];
        for (c, col) in coeffs.iter().zip(&self.columns) {
            for (o, v) in out.iter_mut().zip(col) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    /// Minimizes `‖M c − d‖² + ε ‖(f, g)‖²_𝕃²` through the normal equations.
    pub fn reconstruct(&self, data: &[f64], epsilon: f64) -> Result<Reconstruction> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::param("inverse.epsilon", format!("must be positive, got {epsilon}")));
        }
        let n = self.dim();
        let m = self.columns.first().map_or(0, Vec::len);
        check_len("observation features", m, data.len())?;
        let a = Mat::<f64>::from_fn(n, n, |i, j| self.normal[i * n + j] + epsilon * self.gram[i * n + j]);
        let llt = a
            .llt(Side::Lower)
            .map_err(|_| Error::SingularNormalEquations { epsilon })?;
        let mut rhs = Mat::<f64>::from_fn(n, 1, |i, _| {
            self.columns[i].iter().zip(data).map(|(p, q)| p * q).sum::<f64>()
        });
        llt.solve_in_place(rhs.as_mut());
        let coeffs: Vec<f64> = (0..n).map(|i| rhs[(i, 0)]).collect();
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularNormalEquations { epsilon });
        }
        let eig = a
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let condition_estimate = match (eig.first(), eig.last()) {
            (Some(lo), Some(hi)) if *lo > 0.0 => hi / lo,
            _ => f64::INFINITY,
        };
        let fitted = self.apply(&coeffs)?;
        let residual = fitted
            .iter()
            .zip(data)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        let (f, g) = self.basis.combine(&coeffs)?;
        let solution_norm = pair_l2(&self.basis.mesh, &f, &g);
        Ok(Reconstruction {
            coeffs,
            f,
            g,
            epsilon,
            residual,
            solution_norm,
            basis_dim: n,
            condition_estimate,
        })
    }
}

/// `‖(f̂ − f, ĝ − g)‖_𝕃² / ‖(f, g)‖_𝕃²`.
pub fn relative_error(mesh: &DiskMesh, rec: &Reconstruction, f: &[f64], g: &[f64]) -> f64 {
    let df: Vec<f64> = rec.f.iter().zip(f).map(|(a, b)| a - b).collect();
    let dg: Vec<f64> = rec.g.iter().zip(g).map(|(a, b)| a - b).collect();
    pair_l2(mesh, &df, &dg) / pair_l2(mesh, f, g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub delta: f64,
    pub relative_error: f64,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Seed of the noise draw for level `index`.
pub fn noise_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub basis_dim: usize,
    /// Coefficients of the synthetic source.
    pub truth: Vec<f64>,
    pub epsilon: f64,
    pub noiseless: Reconstruction,
    pub noiseless_error: f64,
    pub noise: Vec<NoisePoint>,
    pub noise_slope: f64,
    /// `(ε, residual, solution norm)` along the regularization grid.
    pub l_curve: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub basis: BasisConfig,
    pub epsilon: f64,
    pub noise_levels: Vec<f64>,
    pub epsilon_grid: Vec<f64>,
    pub r: KnownFactor,
    pub r_tilde: KnownFactor,
    pub seed: u64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            basis: BasisConfig::default(),
            epsilon: 1e-10,
            noise_levels: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
            epsilon_grid: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7],
            r: KnownFactor::Modulated {
                amplitude: 0.5,
                frequency: 1.0,
                mode: 1,
            },
            r_tilde: KnownFactor::Exponential { rate: 0.5 },
            seed: 1,
        }
    }
}

/// Noiseless and noisy reconstructions of a random in-basis source.
pub fn reconstruction_experiment(problem: &ForwardProblem, cfg: &ReconstructionConfig) -> Result<ReconstructionReport> {
    let mesh = &problem.mesh;
    let basis = SourceBasis::new(mesh, cfg.basis)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truth = basis.random_coefficients(&mut rng);
    let (f, g) = basis.combine(&truth)?;
    let rec = Reconstructor::probe(problem, basis, cfg.r, cfg.r_tilde)?;
    let src = make_separable(mesh, f.clone(), g.clone(), cfg.r, cfg.r_tilde, &problem.grid(), problem.window.t_obs())?;
    let obs = problem.observe_source(&src)?;
    let data = obs.features(mesh)?;
    let noiseless = rec.reconstruct(&data, cfg.epsilon)?;
    let noiseless_error = relative_error(mesh, &noiseless, &f, &g);
    let noise = cfg
        .noise_levels
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            let noisy = obs.with_noise(mesh, delta, noise_seed(cfg.seed, i))?;
            let r = rec.reconstruct(&noisy.features(mesh)?, cfg.epsilon)?;
            Ok(NoisePoint {
                delta,
                relative_error: relative_error(mesh, &r, &f, &g),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let noise_slope = if noise.len() >= 2 {
        loglog_slope(
            &noise.iter().map(|p| p.delta).collect::<Vec<_>>(),
            &noise.iter().map(|p| p.relative_error).collect::<Vec<_>>(),
        )
    } else {
        f64::NAN
    };
    let l_curve = cfg
        .epsilon_grid
        .iter()
        .map(|&e| rec.reconstruct(&data, e).map(|r| (e, r.residual, r.solution_norm)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReconstructionReport {
        basis_dim: rec.dim(),
        truth,
        epsilon: cfg.epsilon,
        noiseless,
        noiseless_error,
        noise,
        noise_slope,
        l_curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// Single admissible sources.
    pub ensemble: usize,
    /// Difference pairs sharing a known factor.
    pub pairs: usize,
    pub seed: u64,
    pub sources: RandomSourceSpec,
    /// Factor used for the scale-invariance check.
    pub scale: f64,
    pub check_scaling: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            ensemble: 50,
            pairs: 25,
            seed: 1,
            sources: RandomSourceSpec::default(),
            scale: 3.7,
            check_scaling: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySample {
    pub member: usize,
    pub seed: u64,
    pub c0: f64,
    pub source_norm: f64,
    pub snapshot_h2: f64,
    pub dt_norm: f64,
    pub rho: Option<f64>,
    pub rho_scaled: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub pair: usize,
    pub seed: u64,
    /// `‖(f₁ − f₂, g₁ − g₂)‖_𝕃²`.
    pub source_distance: f64,
    pub snapshot_h2: f64,
    pub dt_norm: f64,
    /// `snapshot_h2 + dt_norm` of the difference.
    pub observation_distance: f64,
    pub rho: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoSummary {
    pub count: usize,
    pub skipped: usize,
    pub min: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
}

impl RhoSummary {
    pub fn from_values(values: impl Iterator<Item = Option<f64>>) -> Self {
        let all: Vec<Option<f64>> = values.collect();
        let mut v: Vec<f64> = all.iter().filter_map(|x| *x).collect();
        v.sort_by(f64::total_cmp);
        let median = if v.is_empty() {
            None
        } else if v.len() % 2 == 1 {
            Some(v[v.len() / 2])
        } else {
            Some(0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2]))
        };
        Self {
            count: v.len(),
            skipped: all.len() - v.len(),
            min: v.first().copied(),
            median,
            max: v.last().copied(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessCheck {
    pub observation_tolerance: f64,
    pub source_tolerance: f64,
    pub checked: usize,
    /// Pairs with observation distance within tolerance.
    pub coincident_observations: usize,
    /// Of those, pairs whose sources differ beyond tolerance.
    pub violations: usize,
    pub min_observation_distance: f64,
}

/// Checks that coinciding observations imply coinciding sources.
pub fn uniqueness_check(distances: impl Iterator<Item = (f64, f64)>) -> UniquenessCheck {
    let mut u = UniquenessCheck {
        observation_tolerance: 1e-10,
        source_tolerance: 1e-6,
        checked: 0,
        coincident_observations: 0,
        violations: 0,
        min_observation_distance: f64::INFINITY,
    };
    for (obs, src) in distances {
        u.checked += 1;
        u.min_observation_distance = u.min_observation_distance.min(obs);
        if obs <= u.observation_tolerance {
            u.coincident_observations += 1;
            if src > u.source_tolerance {
                u.violations += 1;
            }
        }
    }
    u
}

pub const STABILITY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub schema_version: u32,
    pub nr: usize,
    pub nth: usize,
    pub window_steps: usize,
    pub samples: Vec<StabilitySample>,
    pub pairs: Vec<PairSample>,
    pub single: RhoSummary,
    pub difference: RhoSummary,
    /// Largest `|ρ(κF) − ρ(F)| / ρ(F)` over the ensemble.
    pub scale_deviation: Option<f64>,
    pub uniqueness: UniquenessCheck,
}

impl StabilityReport {
    /// Largest ratio over singles and differences.
    pub fn max_rho(&self) -> Option<f64> {
        match (self.single.max, self.difference.max) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }
}

/// `ρ = num / den`, `None` for `0/0`.
pub fn ratio(num: f64, den: f64) -> Option<f64> {
    if num == 0.0 && den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

fn pair_seed(seed: u64, pair: usize) -> u64 {
    seed.rotate_left(17) ^ (pair as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F)
}

/// Two in-basis sources sharing random known factors.
pub fn random_pair(mesh: &DiskMesh, spec: &RandomSourceSpec, window: &Window, seed: u64) -> Result<(SeparableSource, SeparableSource)> {
    spec.validate()?;
    let basis = SourceBasis::new(mesh, spec.basis)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = KnownFactor::random(&mut rng, spec);
    let rt = KnownFactor::random(&mut rng, spec);
    let grid = window.grid()?;
    let mut make = || -> Result<SeparableSource> {
        let c = basis.random_coefficients(&mut rng);
        let (f, g) = basis.combine(&c)?;
        make_separable(mesh, f, g, r, rt, &grid, window.t_obs())
    };
    let a = make()?;
    let b = make()?;
    Ok((a, b))
}

/// Ratio of source distance to observation distance for a pair sharing
/// its known factors.
pub fn difference_sample(problem: &ForwardProblem, pair: usize, seed: u64, a: &SeparableSource, b: &SeparableSource) -> Result<PairSample> {
    let mesh = &problem.mesh;
    let d = a.difference(b)?;
    let oa = problem.observe_source(a)?;
    let ob = problem.observe_source(b)?;
    let od = oa.sub(mesh, &ob)?;
    let source_distance = d.amplitude_l2();
    let observation_distance = od.norm();
    Ok(PairSample {
        pair,
        seed,
        source_distance,
        snapshot_h2: od.snapshot_h2,
        dt_norm: od.dt_norm,
        observation_distance,
        rho: ratio(source_distance, observation_distance),
    })
}

/// Ratios `ρ` over random admissible sources and difference pairs.
pub fn stability_experiment(problem: &ForwardProblem, cfg: &StabilityConfig) -> Result<StabilityReport> {
    if cfg.ensemble + cfg.pairs < 2 {
        return Err(Error::param("stability.ensemble", "need at least two samples"));
    }
    let mesh = &problem.mesh;
    let grid = problem.grid();
    let samples = (0..cfg.ensemble)
        .into_par_iter()
        .map(|m| -> Result<StabilitySample> {
            let seed = crate::carleman::member_seed(cfg.seed, m);
            let src = SeparableSource::random(mesh, &cfg.sources, &problem.window, seed)?;
            let obs = problem.observe_source(&src)?;
            let num = src.l2_t_norm(&grid);
            let rho = ratio(num, obs.norm());
            let rho_scaled = if cfg.check_scaling {
                let s = src.scaled(cfg.scale);
                let o = problem.observe_source(&s)?;
                ratio(s.l2_t_norm(&grid), o.norm())
            } else {
                None
            };
            Ok(StabilitySample {
                member: m,
                seed,
                c0: src.c0,
                source_norm: num,
                snapshot_h2: obs.snapshot_h2,
                dt_norm: obs.dt_norm,
                rho,
                rho_scaled,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = (0..cfg.pairs)
        .into_par_iter()
        .map(|p| {
            let seed = pair_seed(cfg.seed, p);
            let (a, b) = random_pair(mesh, &cfg.sources, &problem.window, seed)?;
            difference_sample(problem, p, seed, &a, &b)
        })
        .collect::<Result<Vec<_>>>()?;
    let scale_deviation = samples
        .iter()
        .filter_map(|s| match (s.rho, s.rho_scaled) {
            (Some(a), Some(b)) => Some((a - b).abs() / a.abs()),
            _ => None,
        })
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
    let uniqueness = uniqueness_check(
        samples
            .iter()
            .map(|s| (s.snapshot_h2 + s.dt_norm, s.source_norm))
            .chain(pairs.iter().map(|p| (p.observation_distance, p.source_distance))),
    );
    Ok(StabilityReport {
        schema_version: STABILITY_SCHEMA_VERSION,
        nr: mesh.nr(),
        nth: mesh.nth(),
        window_steps: problem.window.steps,
        single: RhoSummary::from_values(samples.iter().map(|s| s.rho)),
        difference: RhoSummary::from_values(pairs.iter().map(|p| p.rho)),
        samples,
        pairs,
        scale_deviation,
        uniqueness,
    })
}

/// `|b − a| / |a|`.
pub fn relative_drift(a: f64, b: f64) -> f64 {
    (b - a).abs() / a.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Preset;

    fn small_window() -> Window {
        Window::new(0.0, 0.2, 1.0, 16).unwrap()
    }

    fn small_basis() -> BasisConfig {
        BasisConfig {
            radial: 2,
            angular: 5,
            surface: 5,
            cap: 20,
        }
    }

    fn problem(c: &ProblemCoefficients, mesh: &DiskMesh) -> ForwardProblem {
        let region = Region::AnnularSector {
            r_min: 0.4,
            r_max: 0.8,
            theta_min: 0.0,
            theta_max: std::f64::consts::PI,
        };
        ForwardProblem::new(mesh, c, small_window(), region, Scheme::ImplicitEuler).unwrap()
    }

    #[test]
    fn exponential_profile_admissibility() {
        let m = DiskMesh::new(1.0, 3, 8).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let t_obs = 0.5;
        let ones = vec![1.0; m.cell_count()];
        let s = make_separable(&m, ones, vec![1.0; 8], KnownFactor::Exponential { rate: 1.0 }, KnownFactor::Constant { value: 2.0 }, &grid, t_obs).unwrap();
        assert!((s.c0 - t_obs.exp()).abs() < 1e-12);
        let a = s.check(&grid).unwrap();
        assert!(a.admissible);
        assert!((a.minimal_c0 - t_obs.exp()).abs() < 1e-12);
        let idx = grid.index_of(t_obs).unwrap();
        let strict = check_admissible(&s.snapshots(&grid), &s.derivative_snapshots(&grid), idx, 0.99 * t_obs.exp()).unwrap();
        assert!(!strict.admissible);
        assert_eq!(strict.witness.unwrap().step, 0);
    }

    #[test]
    fn constant_profile_has_zero_c0() {
        let m = DiskMesh::new(1.0, 3, 8).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let s = make_separable(&m, vec![0.3; 24], vec![1.0; 8], KnownFactor::Constant { value: 1.0 }, KnownFactor::Constant { value: 1.0 }, &grid, 0.5).unwrap();
        assert_eq!(s.c0, 0.0);
        assert!(s.check(&grid).unwrap().admissible);
    }

    #[test]
    fn zero_denominator_fails_with_witness() {
        // F(T₀, ·) vanishes at dof 1 while F_t does not
        let values = vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let derivs = vec![vec![0.0, 0.5], vec![0.0, 0.5], vec![0.0, 0.5]];
        let a = check_admissible(&values, &derivs, 1, 1e6).unwrap();
        assert!(!a.admissible);
        assert_eq!(a.witness.unwrap().dof, 1);
        assert_eq!(a.minimal_c0, f64::INFINITY);
    }

    #[test]
    fn modulated_profile_c0_by_grid_sweep() {
        let m = DiskMesh::new(1.0, 3, 8).unwrap();
        let w = Window::new(0.0, 0.3, 3.3, 200).unwrap();
        let grid = w.grid().unwrap();
        let r = KnownFactor::Modulated { amplitude: 0.5, frequency: 1.0, mode: 1 };
        let s = make_separable(&m, vec![1.0; 24], vec![1.0; 8], r, KnownFactor::Constant { value: 1.0 }, &grid, w.t_obs()).unwrap();
        let mut sup: f64 = 0.0;
        let mut rmin = f64::INFINITY;
        for t in grid.times() {
            for j in 0..8 {
                let th = m.theta(j);
                sup = sup.max((0.5 * t.cos() * th.cos()).abs());
            }
        }
        for j in 0..8 {
            rmin = rmin.min((1.0 + 0.5 * w.t_obs().sin() * m.theta(j).cos()).abs());
        }
        assert!(rmin >= 0.5);
        assert!((s.c0 - sup / rmin).abs() < 1e-14);
        assert!(s.c0 <= 1.0);
    }

    #[test]
    fn degenerate_known_part_rejected() {
        let m = DiskMesh::new(1.0, 3, 8).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let r = KnownFactor::Constant { value: 0.0 };
        assert!(matches!(
            make_separable(&m, vec![1.0; 24], vec![1.0; 8], r, r, &grid, 0.5),
            Err(Error::DegenerateKnownPart { .. })
        ));
    }

    #[test]
    fn random_sources_are_admissible() {
        let m = DiskMesh::new(1.0, 6, 16).unwrap();
        let spec = RandomSourceSpec {
            basis: small_basis(),
            ..Default::default()
        };
        let w = small_window();
        for seed in 0..20 {
            let s = SeparableSource::random(&m, &spec, &w, seed).unwrap();
            assert!(s.check(&w.grid().unwrap()).unwrap().admissible);
        }
    }

    #[test]
    fn observation_of_zero_and_constants() {
        let m = DiskMesh::new(1.0, 8, 16).unwrap();
        let c = ProblemCoefficients::identity(&m);
        let p = problem(&c, &m);
        let z = make_separable(&m, vec![0.0; m.cell_count()], vec![0.0; 16], KnownFactor::Constant { value: 1.0 }, KnownFactor::Constant { value: 1.0 }, &p.grid(), p.window.t_obs()).unwrap();
        let rec = p.observe_source(&z).unwrap();
        assert_eq!(rec.norm(), 0.0);
        assert!(rec.snapshot.iter().all(|v| *v == 0.0));

        let cst = ObservationRecord::from_parts(&m, &p.window, rec.cells.clone(), vec![2.0; m.dof_count()], rec.interior_dt.clone()).unwrap();
        let pi = std::f64::consts::PI;
        assert!((cst.snapshot_h2 - 2.0 * (pi.sqrt() + (2.0 * pi).sqrt())).abs() < 1e-10);
    }

    #[test]
    fn constant_in_space_derivative_norm() {
        let m = DiskMesh::new(1.0, 8, 16).unwrap();
        let window = small_window();
        let grid = window.grid().unwrap();
        let region = Region::Disk { radius: 0.5 };
        let mut prev = f64::INFINITY;
        for k in [1usize, 2, 4] {
            let w = window.refined(k);
            let g = w.grid().unwrap();
            let traj = Trajectory {
                mesh: m.clone(),
                grid: g,
                scheme: Scheme::ImplicitEuler,
                states: g.times().iter().map(|t| vec![(-t).exp(); m.dof_count()]).collect(),
                sources: SourcePair::Zero,
                residuals: vec![0.0; g.steps],
            };
            let rec = observe(&traj, &w, &region).unwrap();
            let area = region.area(&m).unwrap();
            let exact = (area * 0.5 * ((-2.0 * w.t0).exp() - (-2.0 * w.t_end).exp())).sqrt();
            let err = (rec.dt_norm - exact).abs();
            assert!(err < prev);
            assert!(err < 0.05 * g.dt() * g.dt() + 1e-12 || err < prev / 3.0);
            prev = err;
        }
        let _ = grid;
    }

    #[test]
    fn forward_map_is_linear() {
        let m = DiskMesh::new(1.0, 6, 16).unwrap();
        let c = Preset::Drifted { strength: 0.5 }.build(&m).unwrap();
        let p = problem(&c, &m);
        let r = KnownFactor::Modulated { amplitude: 0.5, frequency: 1.0, mode: 1 };
        let rt = KnownFactor::Exponential { rate: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut rb = || BulkField::from_values(&m, (0..m.cell_count()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let (f1, f2) = (rb(), rb());
            let g1 = SurfaceField::scalar((0..16).map(|j| (j as f64).sin()).collect());
            let g2 = SurfaceField::scalar((0..16).map(|j| (j as f64 * 0.3).cos()).collect());
            let f12 = BulkField::from_values(&m, f1.values.iter().zip(&f2.values).map(|(a, b)| a + b).collect()).unwrap();
            let g12 = SurfaceField::scalar(g1.values.iter().zip(&g2.values).map(|(a, b)| a + b).collect());
            let o1 = p.forward_map(&f1, &g1, r, rt).unwrap();
            let o2 = p.forward_map(&f2, &g2, r, rt).unwrap();
            let o12 = p.forward_map(&f12, &g12, r, rt).unwrap();
            let sum = o1.add(&m, &o2).unwrap();
            let d = o12.sub(&m, &sum).unwrap();
            let (fa, fb) = (o12.features(&m).unwrap(), d.features(&m).unwrap());
            let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n(&fb) <= 1e-8 * n(&fa));
        }
    }

    #[test]
    fn constant_data_snapshot_is_exact() {
        let m = DiskMesh::new(1.0, 4, 8).unwrap();
        let mut c = ProblemCoefficients::identity(&m);
        c.potential.fill(0.0);
        c.surface_potential.fill(0.0);
        let region = Region::Disk { radius: 0.5 };
        let w = Window::new(0.0, 0.01, 0.05, 8).unwrap();
        let p = ForwardProblem::new(&m, &c, w, region, Scheme::ImplicitEuler).unwrap();
        let one = KnownFactor::Constant { value: 1.0 };
        let obs = p.forward_map(&BulkField::from_values(&m, vec![1.0; m.cell_count()]).unwrap(), &SurfaceField::scalar(vec![1.0; 8]), one, one).unwrap();
        // constant data stays constant: y(T₀) = T₀ exactly for the discrete scheme
        for v in &obs.snapshot {
            assert!((v - w.t_obs()).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_checks() {
        let m = DiskMesh::new(1.0, 4, 8).unwrap();
        assert!(matches!(
            SourceBasis::new(&m, BasisConfig { cap: 10, ..small_basis() }),
            Err(Error::BasisCapExceeded { requested: 15, cap: 10 })
        ));
        assert!(SourceBasis::new(&m, BasisConfig { angular: 9, ..small_basis() }).is_err());
        let b = SourceBasis::new(&m, small_basis()).unwrap();
        let g = b.gram();
        for k in 0..b.len() {
            assert!((g[k * b.len() + k] - 1.0).abs() < 1e-12);
        }
    }

    fn reconstructor(m: &DiskMesh) -> (ForwardProblem, Reconstructor) {
        let c = Preset::Drifted { strength: 0.5 }.build(m).unwrap();
        let p = problem(&c, m);
        let basis = SourceBasis::new(m, small_basis()).unwrap();
        let r = KnownFactor::Modulated { amplitude: 0.5, frequency: 1.0, mode: 1 };
        let rec = Reconstructor::probe(&p, basis, r, KnownFactor::Exponential { rate: 0.5 }).unwrap();
        (p, rec)
    }

    #[test]
    fn zero_data_reconstructs_zero_and_inverse_crime() {
        let m = DiskMesh::new(1.0, 6, 16).unwrap();
        let (p, rec) = reconstructor(&m);
        let features_len = rec.apply(&vec![0.0; rec.dim()]).unwrap().len();
        let z = rec.reconstruct(&vec![0.0; features_len], 1e-6).unwrap();
        assert!(z.coeffs.iter().all(|v| *v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = rec.basis.random_coefficients(&mut rng);
        let (f, g) = rec.basis.combine(&truth).unwrap();
        let src = make_separable(&m, f.clone(), g.clone(), rec.r, rec.r_tilde, &p.grid(), p.window.t_obs()).unwrap();
        let data = p.observe_source(&src).unwrap().features(&m).unwrap();
        let r = rec.reconstruct(&data, 1e-10).unwrap();
        assert!(relative_error(&m, &r, &f, &g) <= 1e-3);
        assert!(matches!(rec.reconstruct(&data, 0.0), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn tikhonov_monotonicity() {
        let m = DiskMesh::new(1.0, 6, 16).unwrap();
        let (p, rec) = reconstructor(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = rec.basis.random_coefficients(&mut rng);
        let (f, g) = rec.basis.combine(&truth).unwrap();
        let src = make_separable(&m, f, g, rec.r, rec.r_tilde, &p.grid(), p.window.t_obs()).unwrap();
        let obs = p.observe_source(&src).unwrap().with_noise(&m, 1e-2, 9).unwrap();
        let data = obs.features(&m).unwrap();
        let runs: Vec<Reconstruction> = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6].iter().map(|&e| rec.reconstruct(&data, e).unwrap()).collect();
        for w in runs.windows(2) {
            assert!(w[1].residual <= w[0].residual * (1.0 + 1e-9));
            assert!(w[1].solution_norm >= w[0].solution_norm * (1.0 - 1e-9));
        }
    }

    #[test]
    fn noise_is_seeded() {
        let m = DiskMesh::new(1.0, 6, 16).unwrap();
        let c = ProblemCoefficients::identity(&m);
        let p = problem(&c, &m);
        let src = SeparableSource::random(&m, &RandomSourceSpec { basis: small_basis(), ..Default::default() }, &p.window, 2).unwrap();
        let obs = p.observe_source(&src).unwrap();
        let a = obs.with_noise(&m, 1e-3, 4).unwrap();
        let b = obs.with_noise(&m, 1e-3, 4).unwrap();
        let c2 = obs.with_noise(&m, 1e-3, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c2);
        assert_eq!(obs.with_noise(&m, 0.0, 4).unwrap(), obs);
    }

    #[test]
    fn identical_pair_is_skipped_and_scaling_invariant() {
        let m = DiskMesh::new(1.0, 6, 16).unwrap();
        let c = Preset::RandomSmooth { seed: 2 }.build(&m).unwrap();
        let p = problem(&c, &m);
        let spec = RandomSourceSpec { basis: small_basis(), ..Default::default() };
        let (a, _) = random_pair(&m, &spec, &p.window, 3).unwrap();
        let s = difference_sample(&p, 0, 3, &a, &a).unwrap();
        assert_eq!(s.rho, None);
        let cfg = StabilityConfig { ensemble: 4, pairs: 2, seed: 7, sources: spec, ..Default::default() };
        let rep = stability_experiment(&p, &cfg).unwrap();
        assert!(rep.scale_deviation.unwrap() <= 1e-10);
        assert_eq!(rep.uniqueness.violations, 0);
        assert_eq!(rep, stability_experiment(&p, &cfg).unwrap());
        assert!(rep.max_rho().unwrap().is_finite());
    }

    #[test]
    fn slope_fit() {
        let x = [1e-4, 1e-3, 1e-2];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn factor() -> impl Strategy<Value = KnownFactor> {
            prop_oneof![
                (0.1f64..3.0).prop_map(|value| KnownFactor::Constant { value }),
                (-2.0f64..2.0).prop_map(|rate| KnownFactor::Exponential { rate }),
                (0.0f64..0.9, 0.0f64..4.0, 0u32..4).prop_map(|(amplitude, frequency, mode)| KnownFactor::Modulated {
                    amplitude,
                    frequency,
                    mode
                }),
                (0.0f64..0.9, 0.0f64..4.0, -3i32..4, 0.0f64..6.3).prop_map(|(amplitude, frequency, mode, phase)| {
                    KnownFactor::Wave {
                        amplitude,
                        frequency,
                        mode,
                        phase,
                    }
                }),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn make_separable_is_admissible(r in factor(), rt in factor(), seed in 0u64..1000, steps in 2usize..40) {
                let m = DiskMesh::new(1.0, 3, 8).unwrap();
                let w = Window::new(0.0, 0.25, 1.25, 4 * steps).unwrap();
                let grid = w.grid().unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f: Vec<f64> = (0..m.cell_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                let s = make_separable(&m, f, g, r, rt, &grid, w.t_obs()).unwrap();
                let a = s.check(&grid).unwrap();
                prop_assert!(a.admissible, "{:?}", a.witness);
                prop_assert!(a.minimal_c0 <= s.c0 * (1.0 + 1e-12));
            }

            #[test]
            fn ratio_is_scale_invariant(seed in 0u64..200, k in 0.01f64..100.0) {
                let m = DiskMesh::new(1.0, 4, 8).unwrap();
                let c = ProblemCoefficients::identity(&m);
                let w = Window::new(0.0, 0.1, 0.5, 8).unwrap();
                let p = ForwardProblem::new(&m, &c, w, Region::Disk { radius: 0.6 }, Scheme::ImplicitEuler).unwrap();
                let spec = RandomSourceSpec { basis: BasisConfig { radial: 2, angular: 3, surface: 3, cap: 9 }, ..Default::default() };
                let s = SeparableSource::random(&m, &spec, &w, seed).unwrap();
                let grid = p.grid();
                let rho = ratio(s.l2_t_norm(&grid), p.observe_source(&s).unwrap().norm()).unwrap();
                let ks = s.scaled(k);
                let rho_k = ratio(ks.l2_t_norm(&grid), p.observe_source(&ks).unwrap().norm()).unwrap();
                prop_assert!((rho - rho_k).abs() <= 1e-10 * rho);
            }
        }
    }
}
