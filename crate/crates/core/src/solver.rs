//! Implicit time integration of the coupled system.
//!
//! With `K` and `M` from [`CoupledOperator`], one step solves
//!
//! ```text
//!   implicit Euler:  (M + Δt K) Y₊ = M Y + Δt M ℱ₊
//!   trapezoidal:     (M + Δt/2 K) Y₊ = (M − Δt/2 K) Y + Δt/2 M (ℱ + ℱ₊)
//! ```
//!
//! which is `(I − Δt𝒜)Y₊ = Y + Δtℱ₊` (resp. its trapezoidal average)
//! multiplied by `M`. The system matrix is factored once per step size.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{CoupledField, DiskMesh};
use crate::operators::CoupledOperator;
use crate::sparse::{norm2, CsrMatrix, SparseLu};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImplicitEuler,
    Trapezoidal,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "implicit_euler" | "euler" => Ok(Scheme::ImplicitEuler),
            "trapezoidal" | "crank_nicolson" => Ok(Scheme::Trapezoidal),
            other => Err(Error::param("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::ImplicitEuler => "implicit_euler",
            Scheme::Trapezoidal => "trapezoidal",
        })
    }
}

/// Uniform grid `t_n = t_start + n·Δt`, `n = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("steps", "must be at least 1"));
        }
        if !(t_start.is_finite() && t_end.is_finite() && t_end > t_start) {
            return Err(Error::param(
                "t_end",
                format!("need finite t_start < t_end, got [{t_start}, {t_end}]"),
            ));
        }
        Ok(Self {
            t_start,
            t_end,
            steps,
        })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_end
        } else {
            self.t_start + n as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index `n` with `t_n = t` up to rounding, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_start) / self.dt();
        let n = x.round();
        if (x - n).abs() < 1e-9 && n >= 0.0 && n as usize <= self.steps {
            Some(n as usize)
        } else {
            None
        }
    }
}

/// Simulation interval `[t_start, t_end]` containing the observation window
/// `(t0, t_end)` with `T₀ = (t0 + t_end)/2` on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_start: f64,
    pub t0: f64,
    pub t_end: f64,
    /// Steps inside `(t0, t_end)`; must be even.
    pub steps: usize,
}

impl Window {
    pub fn new(t_start: f64, t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        let w = Self {
            t_start,
            t0,
            t_end,
            steps,
        };
        w.grid()?;
        Ok(w)
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    /// `T₀ = (t0 + T)/2`.
    pub fn t_obs(&self) -> f64 {
        0.5 * (self.t0 + self.t_end)
    }

    pub fn pre_steps(&self) -> Result<usize> {
        let x = (self.t0 - self.t_start) / self.dt();
        if x < -1e-9 || (x - x.round()).abs() > 1e-9 {
            return Err(Error::param(
                "time.t0",
                format!(
                    "t0 - t_start = {} must be a whole number of steps of {}",
                    self.t0 - self.t_start,
                    self.dt()
                ),
            ));
        }
        Ok(x.round() as usize)
    }

    /// The simulation grid on `[t_start, t_end]`.
    pub fn grid(&self) -> Result<TimeGrid> {
        if self.steps < 2 || !self.steps.is_multiple_of(2) {
            return Err(Error::param(
                "time.steps",
                format!("must be even and at least 2, got {}", self.steps),
            ));
        }
        if !(self.t_start <= self.t0 && self.t0 < self.t_end) {
            return Err(Error::param(
                "time.t0",
                format!(
                    "need t_start <= t0 < t_end, got {} / {} / {}",
                    self.t_start, self.t0, self.t_end
                ),
            ));
        }
        let pre = self.pre_steps()?;
        TimeGrid::new(self.t_start, self.t_end, pre + self.steps)
    }

    /// Index of `t0` on [`Window::grid`].
    pub fn t0_index(&self) -> Result<usize> {
        self.pre_steps()
    }

    /// Index of `T₀` on [`Window::grid`].
    pub fn t_obs_index(&self) -> Result<usize> {
        Ok(self.pre_steps()? + self.steps / 2)
    }

    /// Same interval with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            steps: self.steps * factor,
            ..*self
        }
    }
}

impl Default for Window {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t0: 0.3,
            t_end: 3.3,
            steps: 200,
        }
    }
}

type SourceFn = dyn Fn(f64, &mut [f64]) + Send + Sync;

/// Right-hand side `ℱ = (F, G)` on a time grid, as flat coupled vectors.
#[derive(Clone)]
pub enum SourcePair {
    Zero,
    /// One flat vector per grid time.
    Snapshots(Arc<Vec<Vec<f64>>>),
    /// Writes `ℱ(t)` into the buffer.
    Function(Arc<SourceFn>),
}

impl fmt::Debug for SourcePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourcePair::Zero => f.write_str("Zero"),
            SourcePair::Snapshots(s) => write!(f, "Snapshots({})", s.len()),
            SourcePair::Function(_) => f.write_str("Function"),
        }
    }
}

impl SourcePair {
    pub fn function(f: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        SourcePair::Function(Arc::new(f))
    }

    /// Source that does not depend on time.
    pub fn constant(v: Vec<f64>) -> Self {
        SourcePair::function(move |_, out| out.copy_from_slice(&v))
    }

    pub fn eval_into(&self, n: usize, t: f64, out: &mut [f64]) -> Result<()> {
        match self {
            SourcePair::Zero => out.fill(0.0),
            SourcePair::Snapshots(s) => {
                let v = s.get(n).ok_or(Error::TooFewSteps {
                    required: n + 1,
                    found: s.len(),
                })?;
                check_len("source snapshot", out.len(), v.len())?;
                out.copy_from_slice(v);
            }
            SourcePair::Function(f) => f(t, out),
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("source at t = {t}")));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SourcePair::Zero)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual `‖b − Ax‖/‖b‖` required of every linear solve.
    pub rtol: f64,
    /// Iterative refinement sweeps after the direct solve.
    pub max_refinements: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            max_refinements: 3,
        }
    }
}

/// Factored one-step map for a fixed operator, scheme and step size.
#[derive(Debug)]
pub struct Stepper {
    op: Arc<CoupledOperator>,
    scheme: Scheme,
    dt: f64,
    lhs: CsrMatrix,
    explicit: CsrMatrix,
    lu: SparseLu,
    options: SolverOptions,
}

impl Stepper {
    pub fn new(op: Arc<CoupledOperator>, scheme: Scheme, dt: f64, options: SolverOptions) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        let theta = match scheme {
            Scheme::ImplicitEuler => 1.0,
            Scheme::Trapezoidal => 0.5,
        };
        let m = CsrMatrix::diagonal(op.mass());
        let k = op.stiffness();
        let lhs = m.combine(1.0, k, theta * dt);
        let explicit = if theta < 1.0 {
            m.combine(1.0, k, -(1.0 - theta) * dt)
        } else {
            m
        };
        let lu = lhs.factorize()?;
        Ok(Self {
            op,
            scheme,
            dt,
            lhs,
            explicit,
            lu,
            options,
        })
    }

    pub fn operator(&self) -> &CoupledOperator {
        &self.op
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `y` by one step. `f_now`, `f_next` are `ℱ(t_n)`, `ℱ(t_{n+1})`.
    /// Returns the new state and the relative residual of the linear solve.
    pub fn step(&self, y: &[f64], f_now: &[f64], f_next: &[f64], index: usize) -> Result<(Vec<f64>, f64)> {
        let n = self.lhs.dim();
        check_len("state", n, y.len())?;
        check_len("source", n, f_now.len())?;
        check_len("source", n, f_next.len())?;
        let mass = self.op.mass();
        let mut rhs = self.explicit.mul_vec(y);
        match self.scheme {
            Scheme::ImplicitEuler => {
                for k in 0..n {
                    rhs[k] += self.dt * mass[k] * f_next[k];
                }
            }
            Scheme::Trapezoidal => {
                for k in 0..n {
                    rhs[k] += 0.5 * self.dt * mass[k] * (f_now[k] + f_next[k]);
                }
            }
        }
        self.solve(&rhs, index)
    }

    fn solve(&self, rhs: &[f64], index: usize) -> Result<(Vec<f64>, f64)> {
        let bnorm = norm2(rhs);
        let mut x = rhs.to_vec();
        self.lu.solve_in_place(&mut x);
        if bnorm == 0.0 {
            return Ok((x, 0.0));
        }
        let mut res = vec![0.0; rhs.len()];
        let mut rel = f64::INFINITY;
        for sweep in 0..=self.options.max_refinements {
            self.lhs.mul_vec_into(&x, &mut res);
            for (r, b) in res.iter_mut().zip(rhs) {
                *r = b - *r;
            }
            rel = norm2(&res) / bnorm;
            if rel <= self.options.rtol || sweep == self.options.max_refinements {
                break;
            }
            self.lu.solve_in_place(&mut res);
            for (xi, d) in x.iter_mut().zip(&res) {
                *xi += d;
            }
        }
        if !(rel <= self.options.rtol) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDiverged {
                step: index,
                residual: rel,
            });
        }
        Ok((x, rel))
    }
}

/// States on a time grid, with the residual of every linear solve.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub mesh: DiskMesh,
    pub grid: TimeGrid,
    pub scheme: Scheme,
    /// Flat coupled vectors, one per grid time.
    pub states: Vec<Vec<f64>>,
    pub sources: SourcePair,
    /// Relative residual of step `n → n+1`.
    pub residuals: Vec<f64>,
}

impl Trajectory {
    pub fn state(&self, n: usize) -> Result<CoupledField> {
        CoupledField::from_slice(&self.mesh, &self.states[n])
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Integrates from `y0` over `grid`.
pub fn solve_trajectory(
    op: Arc<CoupledOperator>,
    y0: &CoupledField,
    sources: &SourcePair,
    grid: TimeGrid,
    scheme: Scheme,
    options: SolverOptions,
) -> Result<Trajectory> {
    let stepper = Stepper::new(op, scheme, grid.dt(), options)?;
    run(&stepper, y0, sources, grid)
}

/// Integrates with an already factored stepper; `grid.dt()` must match.
pub fn run(stepper: &Stepper, y0: &CoupledField, sources: &SourcePair, grid: TimeGrid) -> Result<Trajectory> {
    let mesh = stepper.operator().mesh().clone();
    mesh.check_coupled(y0)?;
    if (grid.dt() - stepper.dt()).abs() > 1e-12 * stepper.dt() {
        return Err(Error::param(
            "dt",
            format!("grid step {} differs from factored step {}", grid.dt(), stepper.dt()),
        ));
    }
    let n = mesh.dof_count();
    let mut states = Vec::with_capacity(grid.len());
    let mut residuals = Vec::with_capacity(grid.steps);
    states.push(y0.to_vec());
    let mut f = vec![0.0; n];
    let mut f_next = vec![0.0; n];
    sources.eval_into(0, grid.time(0), &mut f)?;
    for k in 0..grid.steps {
        sources.eval_into(k + 1, grid.time(k + 1), &mut f_next)?;
        let (y, res) = stepper.step(&states[k], &f, &f_next, k)?;
        states.push(y);
        residuals.push(res);
        std::mem::swap(&mut f, &mut f_next);
    }
    Ok(Trajectory {
        mesh,
        grid,
        scheme: stepper.scheme(),
        states,
        sources: sources.clone(),
        residuals,
    })
}

/// `∂_t` of a sampled series: centered in the interior, second-order
/// one-sided at both ends.
pub fn time_derivative_series(values: &[Vec<f64>], dt: f64) -> Result<Vec<Vec<f64>>> {
    let len = values.len();
    if len < 3 {
        return Err(Error::TooFewSteps {
            required: 3,
            found: len,
        });
    }
    let n = values[0].len();
    let mut out = Vec::with_capacity(len);
    let h2 = 2.0 * dt;
    out.push((0..n)
        .map(|k| (-3.0 * values[0][k] + 4.0 * values[1][k] - values[2][k]) / h2)
        .collect());
    for m in 1..len - 1 {
        out.push((0..n).map(|k| (values[m + 1][k] - values[m - 1][k]) / h2).collect());
    }
    let l = len - 1;
    out.push((0..n)
        .map(|k| (3.0 * values[l][k] - 4.0 * values[l - 1][k] + values[l - 2][k]) / h2)
        .collect());
    Ok(out)
}

/// `z = ∂_t Y` at every grid time.
pub fn time_derivative(traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
    time_derivative_series(&traj.states, traj.grid.dt())
}
