//! Discrete bulk-surface operator, its bilinear form, the conormal
//! derivative and the norms.
//!
//! # Discretization
//!
//! The diffusion energy `∫_Ω A∇y·∇z` is a sum over cell corners. Each corner
//! of cell `K` pairs one radial face and one angular face of `K`; on each
//! face the gradient component normal to it is a two-point difference. A
//! face of weight `W_f` (length × center distance) that is touched by `n_f`
//! corners contributes `W_f / n_f` to each, so that
//!
//! ```text
//!   Σ_corners |ĝ|² = Σ_faces W_f g_f²        (the discrete |∇y|²)
//!   Σ_corners ĝᵀ A_K ĝ ≥ β₀ Σ_faces W_f g_f²
//! ```
//!
//! where `ĝ = (√w_r g_r, √w_θ g_θ)`. The outer radial face of the last ring
//! connects the cell to its boundary node at distance `Δr/2`; that face is
//! where the bulk flux enters the surface equation. The face at `r = 0` has
//! zero length and is never used.
//!
//! Drifts use Green-Gauss cell gradients (face differences averaged with
//! face-length weights) and centered node differences on Γ. Both are
//! bounded in norm by the face gradients above, which is what the
//! coercivity shift `μ` relies on.
//!
//! The assembled stiffness `K` satisfies `𝔞[u, v] = vᵀ K u`, and the operator
//! is `𝒜 = −M⁻¹ K` with `M` the diagonal 𝕃² mass.

use serde::{Deserialize, Serialize};

use crate::coefficients::{ProblemCoefficients, SymMat2};
use crate::error::{check_len, Result};
use crate::geometry::{tangential_gradient, BulkField, CoupledField, DiskMesh, SurfaceField};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// `coef · (u[to] − u[from])`.
#[derive(Clone, Copy, Debug)]
pub struct Difference {
    pub from: usize,
    pub to: usize,
    pub coef: f64,
}

impl Difference {
    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.coef * (u[self.to] - u[self.from])
    }
}

/// One corner of a cell: weighted radial and angular differences.
#[derive(Clone, Copy, Debug)]
pub struct Corner {
    pub cell: usize,
    pub radial: Option<Difference>,
    pub angular: Difference,
}

impl Corner {
    #[inline]
    pub fn gradient(&self, u: &[f64]) -> [f64; 2] {
        [self.radial.map_or(0.0, |d| d.eval(u)), self.angular.eval(u)]
    }
}

/// All cell corners of the mesh, in cell order.
pub fn corners(mesh: &DiskMesh) -> Vec<Corner> {
    let nr = mesh.nr();
    let nth = mesh.nth();
    let dr = mesh.dr();
    let dth = mesh.dth();
    let mut out = Vec::with_capacity(4 * mesh.cell_count());
    for i in 0..nr {
        let ri = mesh.r_center(i);
        // angular faces of ring i: W = area_i, four corner uses
        let ang_coef = (mesh.cell_area(i) / 4.0).sqrt() / (ri * dth);
        for j in 0..nth {
            let k = mesh.cell(i, j);
            let inner = if i == 0 {
                None
            } else {
                let w = mesh.r_face(i) * dth * dr / 4.0;
                Some(Difference {
                    from: mesh.cell(i - 1, j),
                    to: k,
                    coef: w.sqrt() / dr,
                })
            };
            let outer = if i + 1 < nr {
                let w = mesh.r_face(i + 1) * dth * dr / 4.0;
                Difference {
                    from: k,
                    to: mesh.cell(i + 1, j),
                    coef: w.sqrt() / dr,
                }
            } else {
                let half = 0.5 * dr;
                let w = mesh.node_length() * half / 2.0;
                Difference {
                    from: k,
                    to: mesh.node_dof(j),
                    coef: w.sqrt() / half,
                }
            };
            let lower = Difference {
                from: mesh.cell(i, mesh.jm(j)),
                to: k,
                coef: ang_coef,
            };
            let upper = Difference {
                from: k,
                to: mesh.cell(i, mesh.jp(j)),
                coef: ang_coef,
            };
            for (radial, angular) in [
                (inner, lower),
                (inner, upper),
                (Some(outer), lower),
                (Some(outer), upper),
            ] {
                out.push(Corner {
                    cell: k,
                    radial,
                    angular,
                });
            }
        }
    }
    out
}

/// Green-Gauss gradient `[g_r, g_θ]` per cell (uses the trace at Γ).
pub fn cell_gradients(mesh: &DiskMesh, u: &[f64]) -> Vec<[f64; 2]> {
    let nr = mesh.nr();
    let nth = mesh.nth();
    let dr = mesh.dr();
    let mut g = Vec::with_capacity(mesh.cell_count());
    for i in 0..nr {
        let ri = mesh.r_center(i);
        let r_in = mesh.r_face(i);
        let r_out = mesh.r_face(i + 1);
        for j in 0..nth {
            let k = mesh.cell(i, j);
            let g_in = if i == 0 {
                0.0
            } else {
                (u[k] - u[mesh.cell(i - 1, j)]) / dr
            };
            let g_out = if i + 1 < nr {
                (u[mesh.cell(i + 1, j)] - u[k]) / dr
            } else {
                (u[mesh.node_dof(j)] - u[k]) / (0.5 * dr)
            };
            let gr = (r_out * g_out + r_in * g_in) / (2.0 * ri);
            let gt =
                (u[mesh.cell(i, mesh.jp(j))] - u[mesh.cell(i, mesh.jm(j))]) / (2.0 * ri * mesh.dth());
            g.push([gr, gt]);
        }
    }
    g
}

/// The `(from, to, coef)` pieces of the Green-Gauss gradient of cell `(i, j)`,
/// as `(component, difference)` pairs with `g = Σ coef·(u[to] − u[from])`.
fn cell_gradient_stencil(mesh: &DiskMesh, i: usize, j: usize) -> Vec<(usize, Difference)> {
    let nr = mesh.nr();
    let dr = mesh.dr();
    let ri = mesh.r_center(i);
    let k = mesh.cell(i, j);
    let mut s = Vec::with_capacity(4);
    if i > 0 {
        s.push((
            0,
            Difference {
                from: mesh.cell(i - 1, j),
                to: k,
                coef: mesh.r_face(i) / (2.0 * ri * dr),
            },
        ));
    }
    if i + 1 < nr {
        s.push((
            0,
            Difference {
                from: k,
                to: mesh.cell(i + 1, j),
                coef: mesh.r_face(i + 1) / (2.0 * ri * dr),
            },
        ));
    } else {
        s.push((
            0,
            Difference {
                from: k,
                to: mesh.node_dof(j),
                coef: mesh.r_face(i + 1) / (ri * dr),
            },
        ));
    }
    s.push((
        1,
        Difference {
            from: mesh.cell(i, mesh.jm(j)),
            to: mesh.cell(i, mesh.jp(j)),
            coef: 1.0 / (2.0 * ri * mesh.dth()),
        },
    ));
    s
}

fn surface_face_diffusion(c: &ProblemCoefficients, j: usize, jp: usize) -> f64 {
    0.5 * (c.surface_diffusion[j] + c.surface_diffusion[jp])
}

/// Assembled `𝒜` of the coupled system.
#[derive(Clone, Debug)]
pub struct CoupledOperator {
    mesh: DiskMesh,
    mass: Vec<f64>,
    bulk_diffusion: CsrMatrix,
    surface_diffusion: CsrMatrix,
    drift: CsrMatrix,
    reaction: Vec<f64>,
    stiffness: CsrMatrix,
}

impl CoupledOperator {
    pub fn assemble(mesh: &DiskMesh, c: &ProblemCoefficients) -> Result<Self> {
        c.check_sizes(mesh)?;
        let n = mesh.dof_count();

        let mut bd = TripletBuilder::new(n);
        for corner in corners(mesh) {
            let a = &c.diffusion[corner.cell];
            add_corner(&mut bd, &corner, a);
        }

        let mut sd = TripletBuilder::new(n);
        let h = mesh.node_length();
        for j in 0..mesh.nth() {
            let jp = mesh.jp(j);
            let w = surface_face_diffusion(c, j, jp) / h;
            let (a, b) = (mesh.node_dof(j), mesh.node_dof(jp));
            sd.add(a, a, w);
            sd.add(b, b, w);
            sd.add(a, b, -w);
            sd.add(b, a, -w);
        }

        let mut dr = TripletBuilder::new(n);
        for i in 0..mesh.nr() {
            for j in 0..mesh.nth() {
                let k = mesh.cell(i, j);
                let area = mesh.cell_area(i);
                let b = c.drift[k];
                for (comp, d) in cell_gradient_stencil(mesh, i, j) {
                    let v = area * b[comp] * d.coef;
                    dr.add(k, d.to, v);
                    dr.add(k, d.from, -v);
                }
            }
        }
        for j in 0..mesh.nth() {
            // h · b_j · (u_{j+1} − u_{j−1}) / (2h)
            let v = 0.5 * c.surface_drift[j];
            let row = mesh.node_dof(j);
            dr.add(row, mesh.node_dof(mesh.jp(j)), v);
            dr.add(row, mesh.node_dof(mesh.jm(j)), -v);
        }

        let mass = mesh.mass();
        let mut reaction = Vec::with_capacity(n);
        for i in 0..mesh.nr() {
            for j in 0..mesh.nth() {
                reaction.push(mass[mesh.cell(i, j)] * c.potential[mesh.cell(i, j)]);
            }
        }
        reaction.extend(c.surface_potential.iter().map(|q| q * h));

        let bulk_diffusion = bd.build();
        let surface_diffusion = sd.build();
        let drift = dr.build();
        let stiffness = bulk_diffusion
            .combine(1.0, &surface_diffusion, 1.0)
            .combine(1.0, &drift, 1.0)
            .add_diagonal(&reaction);
        Ok(Self {
            mesh: mesh.clone(),
            mass,
            bulk_diffusion,
            surface_diffusion,
            drift,
            reaction,
            stiffness,
        })
    }

    pub fn mesh(&self) -> &DiskMesh {
        &self.mesh
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `K` with `𝔞[u, v] = vᵀ K u`.
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn bulk_diffusion(&self) -> &CsrMatrix {
        &self.bulk_diffusion
    }

    pub fn surface_diffusion(&self) -> &CsrMatrix {
        &self.surface_diffusion
    }

    pub fn drift(&self) -> &CsrMatrix {
        &self.drift
    }

    pub fn symmetric_part(&self) -> CsrMatrix {
        self.stiffness
            .combine(0.5, &self.stiffness.transpose(), 0.5)
    }

    pub fn skew_part(&self) -> CsrMatrix {
        self.stiffness
            .combine(0.5, &self.stiffness.transpose(), -0.5)
    }

    /// Sparse matrix of `𝒜 = −M⁻¹K`.
    pub fn matrix(&self) -> CsrMatrix {
        let inv: Vec<f64> = self.mass.iter().map(|m| -1.0 / m).collect();
        self.stiffness.scale_rows(&inv)
    }

    pub fn apply_slice(&self, u: &[f64], out: &mut [f64]) {
        self.stiffness.mul_vec_into(u, out);
        for (o, m) in out.iter_mut().zip(&self.mass) {
            *o = -*o / m;
        }
    }

    pub fn apply(&self, u: &CoupledField) -> Result<CoupledField> {
        self.mesh.check_coupled(u)?;
        let x = u.to_vec();
        let mut out = vec![0.0; x.len()];
        self.apply_slice(&x, &mut out);
        CoupledField::from_slice(&self.mesh, &out)
    }

    /// Conormal flux density that the bulk feeds into each surface node.
    pub fn interface_flux(&self, u: &CoupledField) -> Result<SurfaceField> {
        self.mesh.check_coupled(u)?;
        let x = u.to_vec();
        Ok(SurfaceField::scalar(self.interface_flux_slice(&x)))
    }

    pub fn interface_flux_slice(&self, x: &[f64]) -> Vec<f64> {
        let kx = self.bulk_diffusion.mul_vec(x);
        let h = self.mesh.node_length();
        kx[self.mesh.cell_count()..].iter().map(|v| v / h).collect()
    }

    /// `div(A∇y)` per cell (with the trace as boundary value) and
    /// `div_Γ(D∇_Γ y_Γ)` per node.
    pub fn diffusion_parts(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nc = self.mesh.cell_count();
        let kb = self.bulk_diffusion.mul_vec(x);
        let ks = self.surface_diffusion.mul_vec(x);
        let bulk = (0..nc).map(|k| -kb[k] / self.mass[k]).collect();
        let surf = (nc..x.len()).map(|k| -ks[k] / self.mass[k]).collect();
        (bulk, surf)
    }

    /// Reaction diagonal `M·(p, q)`.
    pub fn reaction(&self) -> &[f64] {
        &self.reaction
    }
}

fn add_corner(b: &mut TripletBuilder, corner: &Corner, a: &SymMat2) {
    let parts: [(Option<Difference>, usize); 2] = [(corner.radial, 0), (Some(corner.angular), 1)];
    let entry = |p: usize, q: usize| match (p, q) {
        (0, 0) => a.rr,
        (1, 1) => a.tt,
        _ => a.rt,
    };
    for (dp, p) in parts {
        let Some(dp) = dp else { continue };
        for (dq, q) in parts {
            let Some(dq) = dq else { continue };
            let v = entry(p, q) * dp.coef * dq.coef;
            b.add(dp.to, dq.to, v);
            b.add(dp.to, dq.from, -v);
            b.add(dp.from, dq.to, -v);
            b.add(dp.from, dq.from, v);
        }
    }
}

/// `𝔞[u, v]` by direct quadrature over corners, cells, faces and nodes.
pub fn bilinear_form(
    mesh: &DiskMesh,
    c: &ProblemCoefficients,
    u: &CoupledField,
    v: &CoupledField,
) -> Result<f64> {
    mesh.check_coupled(u)?;
    mesh.check_coupled(v)?;
    c.check_sizes(mesh)?;
    let x = u.to_vec();
    let z = v.to_vec();

    let mut bulk = 0.0;
    for corner in corners(mesh) {
        bulk += c.diffusion[corner.cell].form(corner.gradient(&z), corner.gradient(&x));
    }
    let grads = cell_gradients(mesh, &x);
    for i in 0..mesh.nr() {
        let area = mesh.cell_area(i);
        for j in 0..mesh.nth() {
            let k = mesh.cell(i, j);
            let b = c.drift[k];
            let g = grads[k];
            bulk += area * ((b[0] * g[0] + b[1] * g[1]) * z[k] + c.potential[k] * x[k] * z[k]);
        }
    }

    let h = mesh.node_length();
    let (ug, vg) = (&u.surface.values, &v.surface.values);
    let centered = tangential_gradient(mesh, &u.surface)?;
    let mut surf = 0.0;
    for j in 0..mesh.nth() {
        let jp = mesh.jp(j);
        let gu = (ug[jp] - ug[j]) / h;
        let gv = (vg[jp] - vg[j]) / h;
        surf += h * surface_face_diffusion(c, j, jp) * gu * gv;
        surf += h
            * (c.surface_drift[j] * centered.values[j] * vg[j]
                + c.surface_potential[j] * ug[j] * vg[j]);
    }
    Ok(bulk + surf)
}

/// `⟨u, v⟩_𝕃²`.
pub fn inner_product(mesh: &DiskMesh, u: &CoupledField, v: &CoupledField) -> Result<f64> {
    mesh.check_coupled(u)?;
    mesh.check_coupled(v)?;
    Ok(weighted_dot(&mesh.mass(), &u.to_vec(), &v.to_vec()))
}

pub fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Outward conormal derivative per boundary node:
/// `a_rr (y_Γ − y_{N−1})/(Δr/2) + a_rθ ∇_Γ y_Γ` with `A` of the adjacent cell
/// and the centered tangential gradient of the trace.
pub fn conormal_derivative(
    mesh: &DiskMesh,
    y: &CoupledField,
    c: &ProblemCoefficients,
) -> Result<SurfaceField> {
    let parts = boundary_gradients(mesh, y)?;
    c.check_sizes(mesh)?;
    let last = mesh.nr() - 1;
    Ok(SurfaceField::scalar(
        parts
            .iter()
            .enumerate()
            .map(|(j, &[n, t])| {
                let a = &c.diffusion[mesh.cell(last, j)];
                a.rr * n + a.rt * t
            })
            .collect(),
    ))
}

/// Node-wise `[∂_ν y, ∇_Γ y_Γ]`: one-sided normal difference and centered
/// tangential difference of the trace.
pub fn boundary_gradients(mesh: &DiskMesh, y: &CoupledField) -> Result<Vec<[f64; 2]>> {
    mesh.check_coupled(y)?;
    let tang = tangential_gradient(mesh, &y.surface)?;
    let last = mesh.nr() - 1;
    let half = 0.5 * mesh.dr();
    Ok((0..mesh.nth())
        .map(|j| {
            let n = (y.surface.values[j] - y.bulk.at(last, j)) / half;
            [n, tang.values[j]]
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    /// `max_j |lhs_j − rhs_j|`.
    pub max_abs: f64,
    /// `max_j max(|lhs_j|, |rhs_j|)`, the magnitude the residual is compared to.
    pub scale: f64,
}

impl IdentityResidual {
    pub fn relative(&self) -> f64 {
        self.max_abs / self.scale.max(1.0)
    }
}

/// Both sides of
/// `(∂_ν^A ψ)² − (A∇_Γψ·ν)² = |A^{1/2}ν|² (|A^{1/2}∇ψ|² − |A^{1/2}∇_Γψ|²)`
/// at every boundary node, from the node-wise decomposition
/// `∇ψ = ∇_Γψ + (∂_νψ) ν`.
pub fn conormal_identity_check(
    mesh: &DiskMesh,
    psi: &CoupledField,
    c: &ProblemCoefficients,
) -> Result<IdentityResidual> {
    c.check_sizes(mesh)?;
    let parts = boundary_gradients(mesh, psi)?;
    let last = mesh.nr() - 1;
    let nu = [1.0, 0.0];
    let mut max_abs: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (j, &[n, t]) in parts.iter().enumerate() {
        let a = &c.diffusion[mesh.cell(last, j)];
        let grad = [n, t];
        let tang = [0.0, t];
        let conormal = a.form(grad, nu);
        let tang_normal = a.form(tang, nu);
        let lhs = conormal * conormal - tang_normal * tang_normal;
        let rhs = a.form(nu, nu) * (a.form(grad, grad) - a.form(tang, tang));
        max_abs = max_abs.max((lhs - rhs).abs());
        scale = scale.max(lhs.abs()).max(rhs.abs());
    }
    Ok(IdentityResidual { max_abs, scale })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    L2,
    H1,
    /// `‖u‖ + ‖Δu‖` on Ω plus `‖u_Γ‖ + ‖Δ_Γ u_Γ‖` on Γ.
    H2eq,
}

impl std::str::FromStr for NormKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "L2" => Ok(NormKind::L2),
            "h1" | "H1" => Ok(NormKind::H1),
            "h2eq" | "H2eq" | "H2" => Ok(NormKind::H2eq),
            other => Err(crate::Error::param("kind", format!("unknown norm `{other}`"))),
        }
    }
}

pub fn bulk_l2(mesh: &DiskMesh, y: &BulkField) -> f64 {
    let nth = mesh.nth();
    (0..mesh.nr())
        .map(|i| mesh.cell_area(i) * y.values[i * nth..(i + 1) * nth].iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

pub fn surface_l2(mesh: &DiskMesh, y: &SurfaceField) -> f64 {
    (mesh.node_length() * y.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// `Σ_faces W_f g_f²` for the bulk part (uses the trace at Γ).
pub fn bulk_gradient_energy(mesh: &DiskMesh, u: &[f64]) -> f64 {
    corners(mesh)
        .iter()
        .map(|c| {
            let g = c.gradient(u);
            g[0] * g[0] + g[1] * g[1]
        })
        .sum()
}

/// `∫_K |∇u|²` per cell, from the corners of `K`.
pub fn bulk_gradient_energy_per_cell(mesh: &DiskMesh, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.cell_count()];
    for c in corners(mesh) {
        let g = c.gradient(u);
        out[c.cell] += g[0] * g[0] + g[1] * g[1];
    }
    out
}

/// Face differences `(u_{j+1} − u_j)/(RΔθ)` of a surface field.
pub fn surface_face_gradients(mesh: &DiskMesh, u: &[f64]) -> Vec<f64> {
    let h = mesh.node_length();
    (0..mesh.nth()).map(|j| (u[mesh.jp(j)] - u[j]) / h).collect()
}

pub fn surface_gradient_energy(mesh: &DiskMesh, u: &[f64]) -> f64 {
    mesh.node_length()
        * surface_face_gradients(mesh, u)
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
}

/// Identity-coefficient Laplacian per cell with the trace as boundary value.
///
/// Interior faces use two-point fluxes; the flux through Γ uses the
/// quadratic through `y_{N−2}`, `y_{N−1}` and `y_Γ`, so the operator is
/// exact on `R² − r²`.
pub fn bulk_laplacian(mesh: &DiskMesh, y: &BulkField, trace: &SurfaceField) -> Vec<f64> {
    let nr = mesh.nr();
    let nth = mesh.nth();
    let dr = mesh.dr();
    let dth = mesh.dth();
    let mut out = Vec::with_capacity(mesh.cell_count());
    for i in 0..nr {
        let ri = mesh.r_center(i);
        let area = mesh.cell_area(i);
        for j in 0..nth {
            let yk = y.at(i, j);
            let flux_out = if i + 1 < nr {
                (y.at(i + 1, j) - yk) / dr
            } else {
                (8.0 * trace.values[j] - 9.0 * yk + y.at(i - 1, j)) / (3.0 * dr)
            };
            let flux_in = if i == 0 { 0.0 } else { (yk - y.at(i - 1, j)) / dr };
            let ang = (y.at(i, mesh.jp(j)) - 2.0 * yk + y.at(i, mesh.jm(j))) / (ri * dth);
            let s = flux_out * mesh.r_face(i + 1) * dth - flux_in * mesh.r_face(i) * dth + ang * dr;
            out.push(s / area);
        }
    }
    out
}

/// `Δ_Γ u = (u_{j+1} − 2u_j + u_{j−1}) / (RΔθ)²`.
pub fn laplace_beltrami(mesh: &DiskMesh, u: &SurfaceField) -> Vec<f64> {
    let h = mesh.node_length();
    (0..mesh.nth())
        .map(|j| (u.values[mesh.jp(j)] - 2.0 * u.values[j] + u.values[mesh.jm(j)]) / (h * h))
        .collect()
}

pub fn surface_norm(mesh: &DiskMesh, u: &SurfaceField, kind: NormKind) -> Result<f64> {
    mesh.check_surface(u)?;
    let l2 = surface_l2(mesh, u);
    Ok(match kind {
        NormKind::L2 => l2,
        NormKind::H1 => (l2 * l2 + surface_gradient_energy(mesh, &u.values)).sqrt(),
        NormKind::H2eq => {
            let lb = SurfaceField::scalar(laplace_beltrami(mesh, u));
            l2 + surface_l2(mesh, &lb)
        }
    })
}

pub fn norm(mesh: &DiskMesh, u: &CoupledField, kind: NormKind) -> Result<f64> {
    mesh.check_coupled(u)?;
    Ok(match kind {
        NormKind::L2 => {
            let b = bulk_l2(mesh, &u.bulk);
            let s = surface_l2(mesh, &u.surface);
            (b * b + s * s).sqrt()
        }
        NormKind::H1 => {
            let x = u.to_vec();
            let l2 = norm(mesh, u, NormKind::L2)?;
            let nc = mesh.cell_count();
            (l2 * l2 + bulk_gradient_energy(mesh, &x) + surface_gradient_energy(mesh, &x[nc..]))
                .sqrt()
        }
        NormKind::H2eq => {
            let lap = bulk_laplacian(mesh, &u.bulk, &u.surface);
            let lap = BulkField::from_values(mesh, lap)?;
            bulk_l2(mesh, &u.bulk) + bulk_l2(mesh, &lap) + surface_norm(mesh, &u.surface, NormKind::H2eq)?
        }
    })
}

/// Checks lengths of a flat coupled vector.
pub fn check_flat(mesh: &DiskMesh, x: &[f64]) -> Result<()> {
    check_len("coupled vector", mesh.dof_count(), x.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Preset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(mesh: &DiskMesh, rng: &mut ChaCha8Rng) -> CoupledField {
        let v: Vec<f64> = (0..mesh.dof_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        CoupledField::from_slice(mesh, &v).unwrap()
    }

    #[test]
    fn constants_are_in_the_kernel() {
        let m = DiskMesh::new(1.0, 6, 12).unwrap();
        for p in Preset::all_defaults() {
            let mut c = p.build(&m).unwrap();
            c.potential.fill(0.0);
            c.surface_potential.fill(0.0);
            let op = CoupledOperator::assemble(&m, &c).unwrap();
            let out = op.apply(&CoupledField::constant(&m, 1.0)).unwrap();
            assert!(out.max_abs() < 1e-12, "{p:?}: {}", out.max_abs());
        }
    }

    #[test]
    fn potentials_only_act_on_constants() {
        let m = DiskMesh::new(1.0, 5, 10).unwrap();
        let mut c = ProblemCoefficients::identity(&m);
        c.potential.fill(2.0);
        c.surface_potential.fill(3.0);
        let op = CoupledOperator::assemble(&m, &c).unwrap();
        let out = op.apply(&CoupledField::constant(&m, 1.0)).unwrap();
        assert!(out.bulk.values.iter().all(|v| (v + 2.0).abs() < 1e-12));
        assert!(out.surface.values.iter().all(|v| (v + 3.0).abs() < 1e-12));
    }

    #[test]
    fn surface_row_receives_face_flux() {
        let r = 1.5;
        let m = DiskMesh::new(r, 16, 32).unwrap();
        let c = ProblemCoefficients::identity(&m);
        let op = CoupledOperator::assemble(&m, &c).unwrap();
        let mut u = m.sample_coupled(|rr, _| r * r - rr * rr);
        u.surface.values.fill(0.0);
        let out = op.apply(&u).unwrap();
        let last = m.nr() - 1;
        for j in 0..m.nth() {
            // outward face flux of the last cell, per unit boundary length
            let face_flux = (0.0 - u.bulk.at(last, j)) / (0.5 * m.dr());
            assert!((out.surface.values[j] + face_flux).abs() < 1e-12);
            assert!((out.surface.values[j] - 2.0 * r).abs() <= m.dr());
        }
        let flux = op.interface_flux(&u).unwrap();
        let cn = conormal_derivative(&m, &u, &c).unwrap();
        for j in 0..m.nth() {
            assert!((flux.values[j] - cn.values[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn bulk_cells_conserve_interface_flux() {
        let m = DiskMesh::new(1.0, 6, 12).unwrap();
        let c = Preset::RandomSmooth { seed: 5 }.build(&m).unwrap();
        let op = CoupledOperator::assemble(&m, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_field(&m, &mut rng);
        // rows of the bulk diffusion part sum to zero over all dofs
        let kx = op.bulk_diffusion().mul_vec(&u.to_vec());
        assert!(kx.iter().sum::<f64>().abs() < 1e-11);
    }

    #[test]
    fn conormal_of_paraboloid() {
        let r = 1.0;
        for (nr, nth) in [(16, 32), (32, 64)] {
            let m = DiskMesh::new(r, nr, nth).unwrap();
            let mut c = ProblemCoefficients::identity(&m);
            let a = |th: f64| 2.0 + th.cos();
            for i in 0..nr {
                for j in 0..nth {
                    c.diffusion[m.cell(i, j)] = SymMat2::scalar(a(m.theta(j)));
                }
            }
            let u = m.sample_coupled(|rr, _| r * r - rr * rr);
            let cn = conormal_derivative(&m, &u, &c).unwrap();
            for j in 0..nth {
                let exact = -2.0 * r * a(m.theta(j));
                assert!((cn.values[j] - exact).abs() <= 3.0 * m.dr() * 0.5 + 1e-12);
            }
            let cst = conormal_derivative(&m, &CoupledField::constant(&m, 4.0), &c).unwrap();
            assert!(cst.values.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn form_of_constants() {
        let m = DiskMesh::new(1.0, 8, 16).unwrap();
        let mut c = Preset::Anisotropic.build(&m).unwrap();
        c.potential = (0..m.cell_count()).map(|k| 1.0 + (k % 3) as f64).collect();
        c.surface_potential = (0..m.nth()).map(|j| 0.5 * j as f64).collect();
        let u = CoupledField::constant(&m, 1.5);
        let got = bilinear_form(&m, &c, &u, &u).unwrap();
        let mass = m.mass();
        let ip: f64 = (0..m.cell_count()).map(|k| mass[k] * c.potential[k]).sum::<f64>()
            + c.surface_potential.iter().sum::<f64>() * m.node_length();
        assert!((got - 2.25 * ip).abs() < 1e-12 * ip.abs());
    }

    #[test]
    fn dirichlet_energy_of_linear_function_is_area() {
        let mut prev = f64::INFINITY;
        for (nr, nth) in [(16, 32), (32, 64), (64, 128)] {
            let m = DiskMesh::new(1.0, nr, nth).unwrap();
            let c = ProblemCoefficients::identity(&m);
            let mut u = m.sample_coupled(|r, th| r * th.cos());
            // drop the surface energy, keep only the bulk part
            let x = u.to_vec();
            let bulk = bulk_gradient_energy(&m, &x);
            let err = (bulk - PI).abs();
            assert!(err < 4.0 * m.dr() * m.dr() * PI + 1e-12, "{nr}: {err}");
            assert!(err < prev);
            prev = err;
            u.surface.values.fill(0.0);
            let _ = bilinear_form(&m, &c, &u, &u).unwrap();
        }
    }

    #[test]
    fn transpose_identity_random_pairs() {
        let m = DiskMesh::new(1.3, 7, 14).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for p in Preset::all_defaults() {
            let c = p.build(&m).unwrap();
            let op = CoupledOperator::assemble(&m, &c).unwrap();
            for _ in 0..10 {
                let u = random_field(&m, &mut rng);
                let v = random_field(&m, &mut rng);
                let form = bilinear_form(&m, &c, &u, &v).unwrap();
                let au = op.apply(&u).unwrap();
                let ip = -inner_product(&m, &au, &v).unwrap();
                let scale = norm(&m, &u, NormKind::H1).unwrap() * norm(&m, &v, NormKind::H1).unwrap();
                assert!((form - ip).abs() <= 1e-12 * scale.max(1.0), "{p:?}");
            }
        }
    }

    #[test]
    fn symmetric_without_drift() {
        let m = DiskMesh::new(1.0, 6, 12).unwrap();
        let c = Preset::RandomSmooth { seed: 3 }.build(&m).unwrap();
        let mut c0 = c.clone();
        c0.drift.iter_mut().for_each(|b| *b = [0.0, 0.0]);
        c0.surface_drift.fill(0.0);
        let op = CoupledOperator::assemble(&m, &c0).unwrap();
        assert!(op.stiffness().max_abs_asymmetry() < 1e-13);
        assert!(op.skew_part().triplets().all(|(_, _, v)| v.abs() < 1e-13));
        let op = CoupledOperator::assemble(&m, &c).unwrap();
        assert!(op.stiffness().max_abs_asymmetry() > 1e-6);
    }

    #[test]
    fn norms_of_constants_and_sine() {
        let m = DiskMesh::new(1.0, 16, 32).unwrap();
        let one = CoupledField::constant(&m, 1.0);
        assert!((bulk_l2(&m, &one.bulk) - PI.sqrt()).abs() < 1e-10);
        assert!((surface_l2(&m, &one.surface) - (2.0 * PI).sqrt()).abs() < 1e-10);
        let h2 = norm(&m, &one.scaled(2.0), NormKind::H2eq).unwrap();
        assert!((h2 - 2.0 * (PI.sqrt() + (2.0 * PI).sqrt())).abs() < 1e-10);

        let mut prev = f64::INFINITY;
        for n in [32, 64, 128] {
            let m = DiskMesh::new(1.0, 2, n).unwrap();
            let s = m.sample_surface(f64::sin);
            let err = (surface_norm(&m, &s, NormKind::H2eq).unwrap() - 2.0 * PI.sqrt()).abs();
            assert!(err <= m.dth() * m.dth());
            assert!(err < prev / 3.5);
            prev = err;
        }
        assert!("h3".parse::<NormKind>().is_err());
    }

    #[test]
    fn bulk_laplacian_exact_on_paraboloid() {
        let m = DiskMesh::new(1.7, 8, 16).unwrap();
        let r = m.radius();
        let u = m.sample_coupled(|rr, _| r * r - rr * rr);
        for v in bulk_laplacian(&m, &u.bulk, &u.surface) {
            assert!((v + 4.0).abs() < 1e-11, "{v}");
        }
    }

    #[test]
    fn conormal_identity_is_algebraic() {
        let m = DiskMesh::new(1.0, 6, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let id = ProblemCoefficients::identity(&m);
        let psi = random_field(&m, &mut rng);
        let res = conormal_identity_check(&m, &psi, &id).unwrap();
        assert!(res.relative() <= 1e-12);
        let res = conormal_identity_check(&m, &CoupledField::constant(&m, 3.0), &id).unwrap();
        assert_eq!(res.max_abs, 0.0);
        assert_eq!(res.scale, 0.0);
    }

    /// One node expanded symbolically:
    /// lhs = a_rr² n² + 2 a_rr a_rθ n t = rhs.
    #[test]
    fn conormal_identity_single_node_expansion() {
        let (rr, rt, tt, n, t): (f64, f64, f64, f64, f64) = (2.3, -0.7, 1.9, 0.37, -1.21);
        let lhs = (rr * n + rt * t).powi(2) - (rt * t).powi(2);
        let expanded = rr * rr * n * n + 2.0 * rr * rt * n * t;
        let rhs = rr * (rr * n * n + 2.0 * rt * n * t + tt * t * t - tt * t * t);
        assert!((lhs - expanded).abs() < 1e-14);
        assert!((rhs - expanded).abs() < 1e-14);
    }
}
