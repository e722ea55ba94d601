//! Subcommand pipelines.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use wentzell_core::carleman::{carleman_sweep, SweepTable, WeightedNorms};
use wentzell_core::convergence::{spatial_study, temporal_study, ConvergenceTable};
use wentzell_core::geometry::{CoupledField, DiskMesh};
use wentzell_core::inverse::{
    relative_drift, reconstruction_experiment, ForwardProblem, ReconstructionReport, SeparableSource, SourceBasis,
    StabilityReport, stability_experiment,
};
use wentzell_core::io::{write_field_csv, write_mesh_json};
use wentzell_core::operators::{norm, CoupledOperator, NormKind};
use wentzell_core::solver::{solve_trajectory, Scheme, SolverOptions, SourcePair};

use crate::config::{ExperimentConfig, InitialState};
use crate::error::CliError;
use crate::export::{Cell, OutputDir, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Forward,
    Convergence,
    Carleman,
    Reconstruct,
    Stability,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Forward => "forward",
            Subcommand::Convergence => "convergence",
            Subcommand::Carleman => "carleman",
            Subcommand::Reconstruct => "reconstruct",
            Subcommand::Stability => "stability",
        }
    }
}

pub fn run_subcommand(cmd: Subcommand, cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    match cmd {
        Subcommand::Forward => forward(cfg, out),
        Subcommand::Convergence => convergence(cfg, out).map(|_| ()),
        Subcommand::Carleman => carleman(cfg, out).map(|_| ()),
        Subcommand::Reconstruct => reconstruct(cfg, out).map(|_| ()),
        Subcommand::Stability => stability(cfg, out).map(|_| ()),
    }
}

fn field_csv(values: &[f64]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_field_csv(&mut buf, values)?;
    Ok(buf)
}

fn initial_state(mesh: &DiskMesh, kind: InitialState) -> CoupledField {
    let r2 = mesh.radius() * mesh.radius();
    match kind {
        InitialState::Zero => CoupledField::zeros(mesh),
        InitialState::Constant => CoupledField::constant(mesh, 1.0),
        InitialState::Bump => mesh.sample_coupled(|r, th| (r2 - r * r) * (1.0 + r * th.cos())),
    }
}

/// Trajectory on the full grid, per-step norms and snapshots.
pub fn forward(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let mesh = cfg.mesh()?;
    let c = cfg.coefficients_on(&mesh)?;
    let window = cfg.window()?;
    let grid = window.grid()?;
    let op = Arc::new(CoupledOperator::assemble(&mesh, &c)?);
    let sources = if cfg.forward.random_source {
        SeparableSource::random(&mesh, &cfg.sources, &window, cfg.seed)?.source_pair()
    } else {
        SourcePair::Zero
    };
    let y0 = initial_state(&mesh, cfg.forward.initial);
    let traj = solve_trajectory(op, &y0, &sources, grid, cfg.time.scheme, SolverOptions::default())?;

    let mut buf = Vec::new();
    write_mesh_json(&mut buf, &mesh)?;
    out.write("mesh.json", &buf)?;
    out.write_json("ellipticity.json", &c.validate(&mesh)?)?;

    let mut norms = Table::new(&["step", "time", "l2", "h1", "h2eq", "residual"]);
    for (n, t) in grid.times().into_iter().enumerate() {
        let y = traj.state(n)?;
        norms.push(vec![
            n.into(),
            t.into(),
            norm(&mesh, &y, NormKind::L2)?.into(),
            norm(&mesh, &y, NormKind::H1)?.into(),
            norm(&mesh, &y, NormKind::H2eq)?.into(),
            n.checked_sub(1).map(|k| traj.residuals[k]).into(),
        ]);
    }
    out.write_csv("forward_norms.csv", &norms)?;

    let every = cfg.forward.snapshot_every;
    for n in 0..=grid.steps {
        if (every > 0 && n % every == 0) || n == grid.steps {
            out.write(&format!("state_{n:05}.csv"), &field_csv(&traj.states[n])?)?;
        }
    }
    let obs = window.t_obs_index()?;
    out.write("snapshot_t_obs.csv", &field_csv(&traj.states[obs])?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub temporal_implicit_euler: Option<f64>,
    pub temporal_trapezoidal: Option<f64>,
    pub spatial: Option<f64>,
}

fn convergence_rows(table: &mut Table, t: &ConvergenceTable) {
    for r in &t.rows {
        table.push(vec![
            t.kind.as_str().into(),
            t.scheme.to_string().into(),
            r.nr.into(),
            r.nth.into(),
            r.steps.into(),
            r.h.into(),
            r.error.into(),
            r.order.into(),
        ]);
    }
}

/// Temporal orders for both schemes on the configured coefficients (with
/// potentials removed), spatial order on identity coefficients.
pub fn convergence(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ConvergenceSummary, CliError> {
    let k = &cfg.convergence;
    let mesh = cfg.mesh()?;
    let mut c = cfg.coefficients_on(&mesh)?;
    c.potential.fill(0.0);
    c.surface_potential.fill(0.0);
    let ie = temporal_study(&mesh, &c, Scheme::ImplicitEuler, k.temporal_t_end, k.temporal_steps, k.levels)?;
    let tr = temporal_study(&mesh, &c, Scheme::Trapezoidal, k.temporal_t_end, k.temporal_steps, k.levels)?;
    let coarse = DiskMesh::new(cfg.mesh.radius, k.spatial_nr, k.spatial_nth)
        .map_err(|e| CliError::Config {
            key: "convergence.spatial_nr".into(),
            message: e.to_string(),
        })?;
    let sp = spatial_study(&coarse, Scheme::Trapezoidal, k.spatial_t_end, k.spatial_steps, k.levels)?;
    let mut table = Table::new(&["kind", "scheme", "nr", "nth", "steps", "h", "error", "order"]);
    for t in [&ie, &tr, &sp] {
        convergence_rows(&mut table, t);
    }
    out.write_csv("convergence.csv", &table)?;
    let summary = ConvergenceSummary {
        temporal_implicit_euler: ie.observed_order(),
        temporal_trapezoidal: tr.observed_order(),
        spatial: sp.observed_order(),
    };
    out.write_json("convergence_summary.json", &summary)?;
    Ok(summary)
}

const CARLEMAN_COLUMNS: [&str; 17] = [
    "member",
    "seed",
    "s",
    "lambda",
    WeightedNorms::LHS_NAMES[0],
    WeightedNorms::LHS_NAMES[1],
    WeightedNorms::LHS_NAMES[2],
    WeightedNorms::LHS_NAMES[3],
    WeightedNorms::LHS_NAMES[4],
    WeightedNorms::LHS_NAMES[5],
    WeightedNorms::LHS_NAMES[6],
    WeightedNorms::LHS_NAMES[7],
    WeightedNorms::LHS_NAMES[8],
    WeightedNorms::RHS_NAMES[0],
    WeightedNorms::RHS_NAMES[1],
    WeightedNorms::RHS_NAMES[2],
    "ratio",
];

pub fn carleman_table(t: &SweepTable) -> Table {
    let mut table = Table::new(&CARLEMAN_COLUMNS);
    for r in &t.rows {
        let mut row: Vec<Cell> = vec![r.member.into(), r.seed.into(), r.s.into(), r.lambda.into()];
        row.extend(r.terms.all_terms().map(Cell::from));
        row.push(r.ratio.into());
        table.push(row);
    }
    table
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanSummary {
    pub max_ratio: Vec<(f64, Option<f64>)>,
    pub overall_max: Option<f64>,
    pub skipped: usize,
}

pub fn carleman(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<SweepTable, CliError> {
    let mesh = cfg.mesh()?;
    let c = cfg.coefficients_on(&mesh)?;
    let table = carleman_sweep(&mesh, &c, &cfg.sweep_config()?)?;
    out.write_csv("carleman_rows.csv", &carleman_table(&table))?;
    let mut per_s = Table::new(&["s", "max_ratio"]);
    for (s, m) in &table.max_ratio {
        per_s.push(vec![(*s).into(), (*m).into()]);
    }
    out.write_csv("carleman_max_ratio.csv", &per_s)?;
    out.write_json(
        "carleman_summary.json",
        &CarlemanSummary {
            max_ratio: table.max_ratio.clone(),
            overall_max: table.overall_max(),
            skipped: table.skipped,
        },
    )?;
    Ok(table)
}

pub fn forward_problem(cfg: &ExperimentConfig, mesh: &DiskMesh, refine: usize) -> Result<ForwardProblem, CliError> {
    let c = cfg.coefficients_on(mesh)?;
    let window = cfg.window()?.refined(refine);
    Ok(ForwardProblem::new(mesh, &c, window, cfg.inverse.omega, cfg.time.scheme)?)
}

pub fn reconstruct(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ReconstructionReport, CliError> {
    let mesh = cfg.mesh()?;
    let problem = forward_problem(cfg, &mesh, 1)?;
    let rc = cfg.reconstruction_config();
    let report = reconstruction_experiment(&problem, &rc)?;
    let basis = SourceBasis::new(&mesh, rc.basis)?;
    let (f, g) = basis.combine(&report.truth)?;
    out.write("f_true.csv", &field_csv(&f)?)?;
    out.write("g_true.csv", &field_csv(&g)?)?;
    out.write("f_hat.csv", &field_csv(&report.noiseless.f)?)?;
    out.write("g_hat.csv", &field_csv(&report.noiseless.g)?)?;
    let mut noise = Table::new(&["delta", "relative_error"]);
    for p in &report.noise {
        noise.push(vec![p.delta.into(), p.relative_error.into()]);
    }
    out.write_csv("noise_sweep.csv", &noise)?;
    let mut lc = Table::new(&["epsilon", "residual", "solution_norm"]);
    for (e, r, s) in &report.l_curve {
        lc.push(vec![(*e).into(), (*r).into(), (*s).into()]);
    }
    out.write_csv("l_curve.csv", &lc)?;
    out.write_json("reconstruction.json", &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementDrift {
    pub coarse_max_rho: Option<f64>,
    pub fine_max_rho: Option<f64>,
    pub drift: Option<f64>,
}

pub fn stability_tables(report: &StabilityReport) -> (Table, Table) {
    let mut samples = Table::new(&[
        "member",
        "seed",
        "c0",
        "source_norm",
        "snapshot_h2",
        "dt_norm",
        "rho",
        "rho_scaled",
    ]);
    for s in &report.samples {
        samples.push(vec![
            s.member.into(),
            s.seed.into(),
            s.c0.into(),
            s.source_norm.into(),
            s.snapshot_h2.into(),
            s.dt_norm.into(),
            s.rho.into(),
            s.rho_scaled.into(),
        ]);
    }
    let mut pairs = Table::new(&[
        "pair",
        "seed",
        "source_distance",
        "snapshot_h2",
        "dt_norm",
        "observation_distance",
        "rho",
    ]);
    for p in &report.pairs {
        pairs.push(vec![
            p.pair.into(),
            p.seed.into(),
            p.source_distance.into(),
            p.snapshot_h2.into(),
            p.dt_norm.into(),
            p.observation_distance.into(),
            p.rho.into(),
        ]);
    }
    (samples, pairs)
}

pub fn stability(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<StabilityReport, CliError> {
    let mesh = cfg.mesh()?;
    let sc = cfg.stability_config();
    let report = stability_experiment(&forward_problem(cfg, &mesh, 1)?, &sc)?;
    let (samples, pairs) = stability_tables(&report);
    out.write_csv("stability_samples.csv", &samples)?;
    out.write_csv("stability_pairs.csv", &pairs)?;
    out.write_json("stability_report.json", &report)?;
    if cfg.stability.refinement_check {
        let fine_mesh = mesh.refined();
        let fine = stability_experiment(&forward_problem(cfg, &fine_mesh, 2)?, &sc)?;
        let (a, b) = (report.max_rho(), fine.max_rho());
        out.write_json(
            "stability_refinement.json",
            &RefinementDrift {
                coarse_max_rho: a,
                fine_max_rho: b,
                drift: a.zip(b).map(|(a, b)| relative_drift(a, b)),
            },
        )?;
    }
    Ok(report)
}
