//! Carleman weights on the disk and weighted energies of computed
//! trajectories.
//!
//! `η⁰ = R² − |x|²` vanishes on Γ, is positive inside and has a
//! nonvanishing gradient away from the origin. For `t ∈ (t0, T)`
//!
//! ```text
//!   α = (e^{2λ‖η⁰‖∞} − e^{λη⁰}) / ((t − t0)(T − t)),
//!   ξ = e^{λη⁰} / ((t − t0)(T − t)).
//! ```

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::ProblemCoefficients;
use crate::error::{check_len, Error, Result};
use crate::geometry::{CoupledField, DiskMesh};
use crate::inverse::{RandomSourceSpec, SeparableSource};
use crate::operators::{
    bulk_gradient_energy_per_cell, conormal_derivative, surface_face_gradients, CoupledOperator,
};
use crate::region::Region;
use crate::solver::{run, time_derivative, Scheme, SolverOptions, Stepper, TimeGrid, Window};

/// `η⁰ = R² − r²` sampled per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eta0Field {
    pub radius: f64,
    /// `η⁰(r_i)` per ring.
    pub ring_values: Vec<f64>,
    /// `∂_r η⁰ = −2r_i` per ring; the angular component is zero.
    pub ring_radial_gradient: Vec<f64>,
    /// `c` with `∂_ν η⁰ ≤ −c` on Γ.
    pub c_bound: f64,
    pub omega_prime_radius: f64,
    /// `‖η⁰‖∞ = R²`, attained at the origin.
    pub sup: f64,
    nth: usize,
}

impl Eta0Field {
    pub fn value(&self, cell: usize) -> f64 {
        self.ring_values[cell / self.nth]
    }

    pub fn gradient(&self, cell: usize) -> [f64; 2] {
        [self.ring_radial_gradient[cell / self.nth], 0.0]
    }

    /// Coupled field `(η⁰, 0)`.
    pub fn coupled(&self, mesh: &DiskMesh) -> CoupledField {
        let r2 = self.radius * self.radius;
        let mut f = mesh.sample_coupled(|r, _| r2 - r * r);
        f.surface.values.fill(0.0);
        f
    }

    /// `inf |∇η⁰|` over `Ω ∖ ω′`, i.e. `2ρ′`.
    pub fn min_gradient_outside(&self) -> f64 {
        2.0 * self.omega_prime_radius
    }

    /// `min |∇η⁰|` over cell centers outside `ω′`.
    pub fn min_cell_gradient_outside(&self, mesh: &DiskMesh) -> f64 {
        (0..mesh.nr())
            .filter(|&i| mesh.r_center(i) >= self.omega_prime_radius)
            .map(|i| self.ring_radial_gradient[i].abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Builds `η⁰` and checks its defining properties on `mesh`.
pub fn build_eta0(mesh: &DiskMesh, omega_prime_radius: f64) -> Result<Eta0Field> {
    let radius = mesh.radius();
    if !(omega_prime_radius > 0.0 && omega_prime_radius < radius) {
        return Err(Error::param(
            "carleman.omega_prime_radius",
            format!("must lie in (0, {radius}), got {omega_prime_radius}"),
        ));
    }
    let r2 = radius * radius;
    let ring_values: Vec<f64> = (0..mesh.nr()).map(|i| r2 - mesh.r_center(i).powi(2)).collect();
    let ring_radial_gradient: Vec<f64> = (0..mesh.nr()).map(|i| -2.0 * mesh.r_center(i)).collect();
    let eta = Eta0Field {
        radius,
        ring_values,
        ring_radial_gradient,
        c_bound: 2.0 * radius,
        omega_prime_radius,
        sup: r2,
        nth: mesh.nth(),
    };
    if eta.ring_values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidMesh("η⁰ must be positive at every cell".into()));
    }
    let on_boundary = r2 - radius * radius;
    if on_boundary.abs() > 1e-12 {
        return Err(Error::InvalidMesh("η⁰ must vanish on Γ".into()));
    }
    if !(eta.min_cell_gradient_outside(mesh) > 0.0) {
        return Err(Error::InvalidMesh("∇η⁰ vanishes outside ω′".into()));
    }
    Ok(eta)
}

/// `∂_ν η⁰` at every node, one-sided as in [`conormal_derivative`].
pub fn eta0_normal_derivative(mesh: &DiskMesh, eta: &Eta0Field) -> Vec<f64> {
    let last = *eta.ring_values.last().expect("mesh has rings");
    vec![-last / (0.5 * mesh.dr()); mesh.nth()]
}

/// Node-wise `(∂_ν^A η⁰, β₀ ∂_ν η⁰)`; the bound requires the first to be
/// at most the second, and the second negative.
pub fn eta0_conormal_bound(
    mesh: &DiskMesh,
    eta: &Eta0Field,
    c: &ProblemCoefficients,
) -> Result<Vec<(f64, f64)>> {
    let beta0 = c.validate(mesh)?.beta0;
    let cn = conormal_derivative(mesh, &eta.coupled(mesh), c)?;
    let dn = eta0_normal_derivative(mesh, eta);
    Ok(cn.values.iter().zip(dn).map(|(a, d)| (*a, beta0 * d)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightValues {
    pub alpha: f64,
    pub xi: f64,
    /// `−2sα`.
    pub log_weight: f64,
    /// `e^{−2sα}`, exactly zero below the smallest normal number.
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightPoint {
    Cell(usize),
    Node(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanWeightSet {
    pub s: f64,
    pub lambda: f64,
    pub t0: f64,
    pub t_end: f64,
    pub eta0: Eta0Field,
}

impl CarlemanWeightSet {
    pub fn new(eta0: Eta0Field, s: f64, lambda: f64, t0: f64, t_end: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::param("carleman.s_grid", format!("s must be positive, got {s}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::param("carleman.lambda", format!("must be positive, got {lambda}")));
        }
        if !(t_end > t0) {
            return Err(Error::param("time.t_end", format!("window ({t0}, {t_end}) is empty")));
        }
        Ok(Self {
            s,
            lambda,
            t0,
            t_end,
            eta0,
        })
    }

    /// `(t − t0)(T − t)`.
    pub fn theta(&self, t: f64) -> f64 {
        (t - self.t0) * (self.t_end - t)
    }

    pub fn t_mid(&self) -> f64 {
        0.5 * (self.t0 + self.t_end)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t > self.t0 && t < self.t_end {
            Ok(())
        } else {
            Err(Error::OutsideWindow {
                t,
                t0: self.t0,
                t1: self.t_end,
            })
        }
    }

    /// Weights at a value `eta` of `η⁰`.
    pub fn at_eta(&self, t: f64, eta: f64) -> Result<WeightValues> {
        self.check_time(t)?;
        let th = self.theta(t);
        let e = (self.lambda * eta).exp();
        let alpha = ((2.0 * self.lambda * self.eta0.sup).exp() - e) / th;
        let xi = e / th;
        let log_weight = -2.0 * self.s * alpha;
        let weight = if log_weight < f64::MIN_POSITIVE.ln() {
            0.0
        } else {
            log_weight.exp()
        };
        Ok(WeightValues {
            alpha,
            xi,
            log_weight,
            weight,
        })
    }

    pub fn eval(&self, t: f64, point: WeightPoint) -> Result<WeightValues> {
        let eta = match point {
            WeightPoint::Cell(k) => self.eta0.value(k),
            WeightPoint::Node(_) => 0.0,
        };
        self.at_eta(t, eta)
    }

    /// `∇α = −λξ∇η⁰` in polar components.
    pub fn grad_alpha(&self, t: f64, cell: usize) -> Result<[f64; 2]> {
        let w = self.eval(t, WeightPoint::Cell(cell))?;
        let g = self.eta0.gradient(cell);
        Ok([-self.lambda * w.xi * g[0], -self.lambda * w.xi * g[1]])
    }

    /// `∂_t α` and `∂_t ξ`.
    pub fn time_derivatives(&self, t: f64, eta: f64) -> Result<(f64, f64)> {
        let w = self.at_eta(t, eta)?;
        let dth = (self.t_end - t) - (t - self.t0);
        let th = self.theta(t);
        Ok((-w.alpha * dth / th, -w.xi * dth / th))
    }

    /// `C` with `|∂_t α|, |∂_t ξ| ≤ Cξ²` on the whole window.
    pub fn time_derivative_constant(&self) -> f64 {
        (2.0 * self.lambda * self.eta0.sup).exp() * (self.t_end - self.t0)
    }
}

/// `σ = A∇η⁰·∇η⁰` per cell.
pub fn sigma(mesh: &DiskMesh, eta: &Eta0Field, c: &ProblemCoefficients) -> Result<Vec<f64>> {
    c.check_sizes(mesh)?;
    Ok((0..mesh.cell_count())
        .map(|k| {
            let g = eta.gradient(k);
            c.diffusion[k].form(g, g)
        })
        .collect())
}

/// The terms on both sides of the Carleman inequality, each already carrying
/// its powers of `s` and `λ`. The right side is taken with `C = 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedNorms {
    pub bulk_dt: f64,
    pub bulk_div: f64,
    pub bulk_grad: f64,
    pub bulk_zero: f64,
    pub surface_dt: f64,
    pub surface_div: f64,
    pub surface_grad: f64,
    pub surface_zero: f64,
    pub surface_conormal: f64,
    pub observation: f64,
    pub bulk_source: f64,
    pub surface_source: f64,
}

impl WeightedNorms {
    pub const LHS_NAMES: [&'static str; 9] = [
        "bulk_dt",
        "bulk_div",
        "bulk_grad",
        "bulk_zero",
        "surface_dt",
        "surface_div",
        "surface_grad",
        "surface_zero",
        "surface_conormal",
    ];
    pub const RHS_NAMES: [&'static str; 3] = ["observation", "bulk_source", "surface_source"];

    pub fn lhs_terms(&self) -> [f64; 9] {
        [
            self.bulk_dt,
            self.bulk_div,
            self.bulk_grad,
            self.bulk_zero,
            self.surface_dt,
            self.surface_div,
            self.surface_grad,
            self.surface_zero,
            self.surface_conormal,
        ]
    }

    pub fn rhs_terms(&self) -> [f64; 3] {
        [self.observation, self.bulk_source, self.surface_source]
    }

    pub fn lhs(&self) -> f64 {
        self.lhs_terms().iter().sum()
    }

    pub fn rhs(&self) -> f64 {
        self.rhs_terms().iter().sum()
    }

    /// `LHS / RHS`, or `None` when the right side vanishes.
    pub fn ratio(&self) -> Option<f64> {
        let rhs = self.rhs();
        (rhs > 0.0).then(|| self.lhs() / rhs)
    }

    pub fn all_terms(&self) -> impl Iterator<Item = f64> {
        self.lhs_terms().into_iter().chain(self.rhs_terms())
    }
}

/// Where `Lz`, `L_Γ z_Γ` come from.
#[derive(Clone, Copy, Debug)]
pub enum LzSource<'a> {
    /// Flat `(F_t, G_t)` per grid time.
    Supplied(&'a [Vec<f64>]),
    /// `∂_t z − 𝒜z` from the discrete operator.
    Discrete,
}

/// Evaluates the weighted terms for every weight set in `weights` (all on
/// the same window). `z` holds one flat coupled vector per time of `grid`.
/// Time quadrature uses the grid times strictly inside `(t0, T)`.
pub fn carleman_sides_multi(
    op: &CoupledOperator,
    grid: &TimeGrid,
    z: &[Vec<f64>],
    lz: LzSource<'_>,
    weights: &[CarlemanWeightSet],
    omega: &[bool],
) -> Result<Vec<WeightedNorms>> {
    let mesh = op.mesh();
    check_len("z trajectory", grid.len(), z.len())?;
    check_len("omega mask", mesh.cell_count(), omega.len())?;
    if let LzSource::Supplied(s) = lz {
        check_len("supplied Lz", grid.len(), s.len())?;
    }
    let Some(first) = weights.first() else {
        return Ok(Vec::new());
    };
    for w in weights {
        if w.t0 != first.t0 || w.t_end != first.t_end {
            return Err(Error::param("carleman", "weight sets use different windows"));
        }
    }
    let (t0, t1) = (first.t0, first.t_end);
    let tol = 1e-9 * grid.dt();
    if t0 < grid.t_start - tol || t1 > grid.t_end + tol {
        return Err(Error::OutsideWindow {
            t: if t0 < grid.t_start { t0 } else { t1 },
            t0: grid.t_start,
            t1: grid.t_end,
        });
    }
    let dz = crate::solver::time_derivative_series(z, grid.dt())?;
    let nc = mesh.cell_count();
    let nth = mesh.nth();
    let h = mesh.node_length();
    let dt = grid.dt();
    let mut out = vec![WeightedNorms::default(); weights.len()];
    let mut az = vec![0.0; z[0].len()];

    for n in 0..grid.len() {
        let t = grid.time(n);
        if !(t > t0 + tol && t < t1 - tol) {
            continue;
        }
        let zn = &z[n];
        let (div, div_s) = op.diffusion_parts(zn);
        let grad = bulk_gradient_energy_per_cell(mesh, zn);
        let face = surface_face_gradients(mesh, &zn[nc..]);
        let conormal = op.interface_flux_slice(zn);
        let lz_n: Vec<f64> = match lz {
            LzSource::Supplied(s) => s[n].clone(),
            LzSource::Discrete => {
                op.apply_slice(zn, &mut az);
                dz[n].iter().zip(&az).map(|(d, a)| d - a).collect()
            }
        };

        for (w, acc) in weights.iter().zip(out.iter_mut()) {
            let (s, lam) = (w.s, w.lambda);
            let mut part = WeightedNorms::default();
            for i in 0..mesh.nr() {
                let wv = w.at_eta(t, w.eta0.ring_values[i])?;
                if wv.weight == 0.0 {
                    continue;
                }
                let area = mesh.cell_area(i);
                let (e, xi) = (wv.weight, wv.xi);
                let (mut dt2, mut div2, mut g2, mut z2, mut obs, mut l2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..nth {
                    let k = i * nth + j;
                    dt2 += dz[n][k] * dz[n][k];
                    div2 += div[k] * div[k];
                    g2 += grad[k];
                    z2 += zn[k] * zn[k];
                    if omega[k] {
                        obs += zn[k] * zn[k];
                    }
                    l2 += lz_n[k] * lz_n[k];
                }
                part.bulk_dt += area * e * dt2 / (s * xi);
                part.bulk_div += area * e * div2 / (s * xi);
                part.bulk_grad += e * s * lam * lam * xi * g2;
                part.bulk_zero += area * e * s.powi(3) * lam.powi(4) * xi.powi(3) * z2;
                part.observation += area * e * s.powi(3) * lam.powi(4) * xi.powi(3) * obs;
                part.bulk_source += area * e * l2;
            }
            let wv = w.at_eta(t, 0.0)?;
            if wv.weight > 0.0 {
                let (e, xi) = (wv.weight, wv.xi);
                let (mut dt2, mut div2, mut g2, mut z2, mut cn2, mut l2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..nth {
                    let k = nc + j;
                    dt2 += dz[n][k] * dz[n][k];
                    div2 += div_s[j] * div_s[j];
                    g2 += face[j] * face[j];
                    z2 += zn[k] * zn[k];
                    cn2 += conormal[j] * conormal[j];
                    l2 += lz_n[k] * lz_n[k];
                }
                part.surface_dt += h * e * dt2 / (s * xi);
                part.surface_div += h * e * div2 / (s * xi);
                part.surface_grad += h * e * s * lam * xi * g2;
                part.surface_zero += h * e * s.powi(3) * lam.powi(3) * xi.powi(3) * z2;
                part.surface_conormal += h * e * s * lam * xi * cn2;
                part.surface_source += h * e * l2;
            }
            acc.bulk_dt += dt * part.bulk_dt;
            acc.bulk_div += dt * part.bulk_div;
            acc.bulk_grad += dt * part.bulk_grad;
            acc.bulk_zero += dt * part.bulk_zero;
            acc.surface_dt += dt * part.surface_dt;
            acc.surface_div += dt * part.surface_div;
            acc.surface_grad += dt * part.surface_grad;
            acc.surface_zero += dt * part.surface_zero;
            acc.surface_conormal += dt * part.surface_conormal;
            acc.observation += dt * part.observation;
            acc.bulk_source += dt * part.bulk_source;
            acc.surface_source += dt * part.surface_source;
        }
    }
    Ok(out)
}

/// Single weight set version of [`carleman_sides_multi`].
pub fn carleman_sides(
    op: &CoupledOperator,
    grid: &TimeGrid,
    z: &[Vec<f64>],
    lz: LzSource<'_>,
    weights: &CarlemanWeightSet,
    omega: &[bool],
) -> Result<WeightedNorms> {
    Ok(carleman_sides_multi(op, grid, z, lz, std::slice::from_ref(weights), omega)?
        .pop()
        .expect("one weight set"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub window: Window,
    pub scheme: Scheme,
    pub lambda: f64,
    pub s_grid: Vec<f64>,
    pub omega: Region,
    pub omega_prime_radius: f64,
    pub ensemble: usize,
    pub seed: u64,
    pub sources: RandomSourceSpec,
    /// Evaluate `Lz` from the supplied `(F_t, G_t)` instead of the discrete operator.
    pub supplied_lz: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            window: Window::default(),
            scheme: Scheme::Trapezoidal,
            lambda: 1.5,
            s_grid: vec![2.0, 4.0, 8.0, 16.0, 32.0],
            omega: Region::Disk { radius: 0.3 },
            omega_prime_radius: 0.2,
            ensemble: 20,
            seed: 1,
            sources: RandomSourceSpec::default(),
            supplied_lz: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub member: usize,
    pub seed: u64,
    pub s: f64,
    pub lambda: f64,
    pub terms: WeightedNorms,
    /// `None` when both sides vanish.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// `(s, max ratio over the ensemble)`; `None` if every member was skipped.
    pub max_ratio: Vec<(f64, Option<f64>)>,
    pub skipped: usize,
}

impl SweepTable {
    pub fn overall_max(&self) -> Option<f64> {
        self.max_ratio
            .iter()
            .filter_map(|(_, r)| *r)
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }
}

/// Member seed derived from the sweep seed.
pub fn member_seed(seed: u64, member: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(member as u64 + 1)
}

/// Solves the forward problem for random admissible separable sources,
/// forms `z = ∂_t y` and evaluates both sides for every `s`.
pub fn carleman_sweep(
    mesh: &DiskMesh,
    c: &ProblemCoefficients,
    cfg: &SweepConfig,
) -> Result<SweepTable> {
    if cfg.s_grid.is_empty() || cfg.s_grid.windows(2).any(|w| !(w[1] > w[0])) || cfg.s_grid[0] < 1.0 {
        return Err(Error::param(
            "carleman.s_grid",
            format!("must be increasing with entries >= 1, got {:?}", cfg.s_grid),
        ));
    }
    let sources = (0..cfg.ensemble)
        .map(|m| {
            let seed = member_seed(cfg.seed, m);
            SeparableSource::random(mesh, &cfg.sources, &cfg.window, seed).map(|s| (m, seed, s))
        })
        .collect::<Result<Vec<_>>>()?;
    sweep_sources(mesh, c, cfg, &sources)
}

/// [`carleman_sweep`] with explicit `(member, seed, source)` triples.
pub fn sweep_sources(
    mesh: &DiskMesh,
    c: &ProblemCoefficients,
    cfg: &SweepConfig,
    sources: &[(usize, u64, SeparableSource)],
) -> Result<SweepTable> {
    let grid = cfg.window.grid()?;
    let eta = build_eta0(mesh, cfg.omega_prime_radius)?;
    if let Region::Disk { radius } = cfg.omega {
        if radius <= cfg.omega_prime_radius {
            return Err(Error::param(
                "carleman.omega",
                format!("ω′ (radius {}) must lie inside ω (radius {radius})", cfg.omega_prime_radius),
            ));
        }
    }
    let omega = cfg.omega.mask(mesh)?;
    let weights = cfg
        .s_grid
        .iter()
        .map(|&s| CarlemanWeightSet::new(eta.clone(), s, cfg.lambda, cfg.window.t0, cfg.window.t_end))
        .collect::<Result<Vec<_>>>()?;
    let op = Arc::new(CoupledOperator::assemble(mesh, c)?);
    let stepper = Stepper::new(op.clone(), cfg.scheme, grid.dt(), SolverOptions::default())?;
    let zero = CoupledField::zeros(mesh);

    let per_member: Vec<Vec<SweepRow>> = sources
        .par_iter()
        .map(|(member, seed, src)| -> Result<Vec<SweepRow>> {
            let traj = run(&stepper, &zero, &src.source_pair(), grid)?;
            let z = time_derivative(&traj)?;
            let ft = src.derivative_snapshots(&grid);
            let lz = if cfg.supplied_lz {
                LzSource::Supplied(&ft)
            } else {
                LzSource::Discrete
            };
            let terms = carleman_sides_multi(&op, &grid, &z, lz, &weights, &omega)?;
            Ok(cfg
                .s_grid
                .iter()
                .zip(terms)
                .map(|(&s, t)| SweepRow {
                    member: *member,
                    seed: *seed,
                    s,
                    lambda: cfg.lambda,
                    ratio: t.ratio(),
                    terms: t,
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<SweepRow> = per_member.into_iter().flatten().collect();
    let skipped = rows.iter().filter(|r| r.ratio.is_none()).count();
    let max_ratio = cfg
        .s_grid
        .iter()
        .map(|&s| {
            let m = rows
                .iter()
                .filter(|r| r.s == s)
                .filter_map(|r| r.ratio)
                .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
            (s, m)
        })
        .collect();
    Ok(SweepTable {
        rows,
        max_ratio,
        skipped,
    })
}
