//! Manufactured-solution convergence studies.
//!
//! - temporal: `y = e^{−t}` constant in space, `F = G = −e^{−t}`, any coefficients
//!   without potentials
//! - spatial: `y = e^{−t}(R² − r²)` with identity coefficients,
//!   `F = e^{−t}(4 − (R² − r²))`, `G = −2R e^{−t}`

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::ProblemCoefficients;
use crate::error::{Error, Result};
use crate::geometry::{CoupledField, DiskMesh};
use crate::operators::{norm, CoupledOperator, NormKind};
use crate::solver::{solve_trajectory, Scheme, SolverOptions, SourcePair, TimeGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub nr: usize,
    pub nth: usize,
    pub steps: usize,
    /// Refinement parameter (`Δt` or `Δr`).
    pub h: f64,
    pub error: f64,
    /// `log₂(e_{k−1}/e_k)`; absent on the coarsest level.
    pub order: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub kind: String,
    pub scheme: Scheme,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    fn new(kind: &str, scheme: Scheme, raw: Vec<(usize, usize, usize, f64, f64)>) -> Self {
        let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(raw.len());
        for (nr, nth, steps, h, error) in raw {
            let order = rows.last().map(|p| (p.error / error).ln() / (p.h / h).ln());
            rows.push(ConvergenceRow {
                nr,
                nth,
                steps,
                h,
                error,
                order,
            });
        }
        Self {
            kind: kind.into(),
            scheme,
            rows,
        }
    }

    /// Order between the two finest levels.
    pub fn observed_order(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.order)
    }
}

fn check_levels(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::param("convergence.levels", "need at least two refinement levels"));
    }
    Ok(())
}

/// Max-norm error over all grid times of the constant-in-space solution.
pub fn temporal_error(mesh: &DiskMesh, c: &ProblemCoefficients, scheme: Scheme, t_end: f64, steps: usize) -> Result<f64> {
    if c.potential.iter().chain(&c.surface_potential).any(|p| *p != 0.0) {
        return Err(Error::param("coefficients", "the temporal study needs p = q = 0"));
    }
    let op = Arc::new(CoupledOperator::assemble(mesh, c)?);
    let grid = TimeGrid::new(0.0, t_end, steps)?;
    let src = SourcePair::function(|t, out| out.fill(-(-t).exp()));
    let traj = solve_trajectory(op, &CoupledField::constant(mesh, 1.0), &src, grid, scheme, SolverOptions::default())?;
    Ok(traj
        .states
        .iter()
        .zip(grid.times())
        .flat_map(|(s, t)| s.iter().map(move |v| (v - (-t).exp()).abs()))
        .fold(0.0, f64::max))
}

/// Halves `Δt` across `levels` starting from `steps`.
pub fn temporal_study(mesh: &DiskMesh, c: &ProblemCoefficients, scheme: Scheme, t_end: f64, steps: usize, levels: usize) -> Result<ConvergenceTable> {
    check_levels(levels)?;
    let raw = (0..levels)
        .map(|k| {
            let n = steps << k;
            Ok((mesh.nr(), mesh.nth(), n, t_end / n as f64, temporal_error(mesh, c, scheme, t_end, n)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceTable::new("temporal", scheme, raw))
}

/// 𝕃² error at `t_end` of the radial solution.
pub fn spatial_error(mesh: &DiskMesh, scheme: Scheme, t_end: f64, steps: usize) -> Result<f64> {
    let r = mesh.radius();
    let op = Arc::new(CoupledOperator::assemble(mesh, &ProblemCoefficients::identity(mesh))?);
    let exact = |t: f64| mesh.sample_coupled(|rr, _| (-t).exp() * (r * r - rr * rr));
    let m = mesh.clone();
    let src = SourcePair::function(move |t, out| {
        let e = (-t).exp();
        let f = m.sample_coupled(|rr, _| e * (4.0 - (r * r - rr * rr)));
        let nc = m.cell_count();
        out[..nc].copy_from_slice(&f.bulk.values);
        out[nc..].fill(-2.0 * r * e);
    });
    let grid = TimeGrid::new(0.0, t_end, steps)?;
    let traj = solve_trajectory(op, &exact(0.0), &src, grid, scheme, SolverOptions::default())?;
    let diff: Vec<f64> = traj
        .final_state()
        .iter()
        .zip(exact(t_end).to_vec())
        .map(|(a, b)| a - b)
        .collect();
    norm(mesh, &CoupledField::from_slice(mesh, &diff)?, NormKind::L2)
}

/// Doubles `nr` and `nth` across `levels` at a fixed fine time step.
pub fn spatial_study(mesh: &DiskMesh, scheme: Scheme, t_end: f64, steps: usize, levels: usize) -> Result<ConvergenceTable> {
    check_levels(levels)?;
    let mut m = mesh.clone();
    let mut raw = Vec::with_capacity(levels);
    for _ in 0..levels {
        raw.push((m.nr(), m.nth(), steps, m.dr(), spatial_error(&m, scheme, t_end, steps)?));
        m = m.refined();
    }
    Ok(ConvergenceTable::new("spatial", scheme, raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Preset;

    #[test]
    fn orders_on_small_meshes() {
        let m = DiskMesh::new(1.0, 3, 6).unwrap();
        let mut c = Preset::RandomSmooth { seed: 1 }.build(&m).unwrap();
        c.potential.fill(0.0);
        c.surface_potential.fill(0.0);
        let ie = temporal_study(&m, &c, Scheme::ImplicitEuler, 1.0, 25, 3).unwrap();
        assert!(ie.observed_order().unwrap() >= 0.9);
        let tr = temporal_study(&m, &c, Scheme::Trapezoidal, 1.0, 25, 3).unwrap();
        assert!(tr.observed_order().unwrap() >= 1.7);
        assert_eq!(tr.rows[0].order, None);
        let sp = spatial_study(&DiskMesh::new(1.0, 4, 8).unwrap(), Scheme::Trapezoidal, 0.5, 200, 3).unwrap();
        assert!(sp.observed_order().unwrap() >= 1.5, "{sp:?}");
    }

    #[test]
    fn rejects_potentials_and_single_level() {
        let m = DiskMesh::new(1.0, 3, 6).unwrap();
        let c = Preset::Drifted { strength: 0.5 }.build(&m).unwrap();
        assert!(temporal_error(&m, &c, Scheme::ImplicitEuler, 1.0, 10).is_err());
        let id = ProblemCoefficients::identity(&m);
        assert!(temporal_study(&m, &id, Scheme::ImplicitEuler, 1.0, 10, 1).is_err());
    }
}
