//! Polar finite-volume mesh of the disk `Ω = {|x| < R}` and the discrete
//! calculus on its boundary circle `Γ`.
//!
//! Cells are annular sectors `[iΔr, (i+1)Δr] × [jΔθ, (j+1)Δθ]` with centers
//! `r_i = (i+½)Δr`, `θ_j = (j+½)Δθ`. Boundary nodes sit at `(R, θ_j)`, on the
//! outer radial faces of the last ring. The boundary value is an unknown of
//! its own (the surface field), so the trace of the bulk field *is* the
//! surface field by construction.
//!
//! Vectors in the polar frame are stored as `[radial, angular]` components
//! with respect to the orthonormal frame `(e_r, e_θ)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeshParams", into = "MeshParams")]
pub struct DiskMesh {
    radius: f64,
    nr: usize,
    nth: usize,
    dr: f64,
    dth: f64,
}

/// Serialized description of a mesh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshParams {
    pub radius: f64,
    pub nr: usize,
    pub nth: usize,
}

impl TryFrom<MeshParams> for DiskMesh {
    type Error = Error;

    fn try_from(p: MeshParams) -> Result<Self> {
        DiskMesh::new(p.radius, p.nr, p.nth)
    }
}

impl From<DiskMesh> for MeshParams {
    fn from(m: DiskMesh) -> Self {
        MeshParams {
            radius: m.radius,
            nr: m.nr,
            nth: m.nth,
        }
    }
}

impl DiskMesh {
    pub fn new(radius: f64, nr: usize, nth: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidMesh(format!("radius must be positive, got {radius}")));
        }
        if nr < 2 {
            return Err(Error::InvalidMesh(format!("need at least 2 radial cells, got {nr}")));
        }
        if nth < 4 || !nth.is_multiple_of(2) {
            return Err(Error::InvalidMesh(format!(
                "angular cell count must be even and at least 4, got {nth}"
            )));
        }
        Ok(Self {
            radius,
            nr,
            nth,
            dr: radius / nr as f64,
            dth: 2.0 * PI / nth as f64,
        })
    }

    pub fn params(&self) -> MeshParams {
        self.clone().into()
    }

    /// Same disk with both cell counts doubled.
    pub fn refined(&self) -> Self {
        Self::new(self.radius, 2 * self.nr, 2 * self.nth).expect("refinement keeps a valid mesh")
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nth(&self) -> usize {
        self.nth
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    pub fn dth(&self) -> f64 {
        self.dth
    }

    pub fn cell_count(&self) -> usize {
        self.nr * self.nth
    }

    pub fn node_count(&self) -> usize {
        self.nth
    }

    /// Length of the coupled unknown vector: cells followed by boundary nodes.
    pub fn dof_count(&self) -> usize {
        self.cell_count() + self.nth
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i * self.nth + j
    }

    /// Index of boundary node `j` in the coupled unknown vector.
    #[inline]
    pub fn node_dof(&self, j: usize) -> usize {
        self.cell_count() + j
    }

    #[inline]
    pub fn jp(&self, j: usize) -> usize {
        if j + 1 == self.nth {
            0
        } else {
            j + 1
        }
    }

    #[inline]
    pub fn jm(&self, j: usize) -> usize {
        if j == 0 {
            self.nth - 1
        } else {
            j - 1
        }
    }

    /// Periodic angular index for an arbitrary signed offset.
    pub fn wrap(&self, j: isize) -> usize {
        j.rem_euclid(self.nth as isize) as usize
    }

    #[inline]
    pub fn r_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dr
    }

    #[inline]
    pub fn theta(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dth
    }

    /// Radius of radial face `k`, the inner face of ring `k` (`k = nr` is Γ).
    #[inline]
    pub fn r_face(&self, k: usize) -> f64 {
        k as f64 * self.dr
    }

    #[inline]
    pub fn cell_area(&self, i: usize) -> f64 {
        self.r_center(i) * self.dr * self.dth
    }

    /// Arclength carried by one boundary node.
    #[inline]
    pub fn node_length(&self) -> f64 {
        self.radius * self.dth
    }

    pub fn radial_face_length(&self, k: usize) -> f64 {
        self.r_face(k) * self.dth
    }

    pub fn angular_face_length(&self) -> f64 {
        self.dr
    }

    /// Unit normal of a radial face in the polar frame.
    pub fn radial_face_normal(&self) -> [f64; 2] {
        [1.0, 0.0]
    }

    /// Unit normal of an angular face in the polar frame.
    pub fn angular_face_normal(&self) -> [f64; 2] {
        [0.0, 1.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.nr).map(|i| self.cell_area(i)).sum::<f64>() * self.nth as f64
    }

    pub fn boundary_length(&self) -> f64 {
        self.node_length() * self.nth as f64
    }

    /// Diagonal of the 𝕃² mass: cell areas followed by node arclengths.
    pub fn mass(&self) -> Vec<f64> {
        let mut m = Vec::with_capacity(self.dof_count());
        for i in 0..self.nr {
            let a = self.cell_area(i);
            m.extend(std::iter::repeat_n(a, self.nth));
        }
        m.extend(std::iter::repeat_n(self.node_length(), self.nth));
        m
    }

    /// Bulk field sampled at cell centers from `f(r, θ)`.
    pub fn sample_bulk(&self, mut f: impl FnMut(f64, f64) -> f64) -> BulkField {
        let mut values = Vec::with_capacity(self.cell_count());
        for i in 0..self.nr {
            let r = self.r_center(i);
            for j in 0..self.nth {
                values.push(f(r, self.theta(j)));
            }
        }
        BulkField {
            nr: self.nr,
            nth: self.nth,
            values,
        }
    }

    /// Scalar surface field sampled at boundary nodes from `f(θ)`.
    pub fn sample_surface(&self, f: impl Fn(f64) -> f64) -> SurfaceField {
        SurfaceField::scalar((0..self.nth).map(|j| f(self.theta(j))).collect())
    }

    /// Coupled field whose surface part is `f` evaluated on `r = R`.
    pub fn sample_coupled(&self, f: impl Fn(f64, f64) -> f64) -> CoupledField {
        let surface = self.sample_surface(|th| f(self.radius, th));
        CoupledField {
            bulk: self.sample_bulk(&f),
            surface,
        }
    }

    pub fn check_bulk(&self, y: &BulkField) -> Result<()> {
        check_len("bulk field", self.cell_count(), y.values.len())?;
        check_len("bulk field angular count", self.nth, y.nth)
    }

    pub fn check_surface(&self, y: &SurfaceField) -> Result<()> {
        check_len("surface field", self.nth, y.values.len())
    }

    pub fn check_coupled(&self, u: &CoupledField) -> Result<()> {
        self.check_bulk(&u.bulk)?;
        self.check_surface(&u.surface)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    Scalar,
    /// Component with respect to the unit tangent `e_θ`.
    Tangent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceField {
    pub values: Vec<f64>,
    pub kind: SurfaceKind,
}

impl SurfaceField {
    pub fn scalar(values: Vec<f64>) -> Self {
        Self {
            values,
            kind: SurfaceKind::Scalar,
        }
    }

    pub fn tangent(values: Vec<f64>) -> Self {
        Self {
            values,
            kind: SurfaceKind::Tangent,
        }
    }

    pub fn zeros(mesh: &DiskMesh) -> Self {
        Self::scalar(vec![0.0; mesh.nth()])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Field rotated by `k` nodes: `out[j] = self[j + k]` (periodic).
    pub fn shifted(&self, k: isize) -> Self {
        let n = self.values.len() as isize;
        let values = (0..n)
            .map(|j| self.values[(j + k).rem_euclid(n) as usize])
            .collect();
        Self {
            values,
            kind: self.kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BulkField {
    pub nr: usize,
    pub nth: usize,
    /// Row-major `(i, j)` values, `i` radial.
    pub values: Vec<f64>,
}

impl BulkField {
    pub fn zeros(mesh: &DiskMesh) -> Self {
        Self {
            nr: mesh.nr(),
            nth: mesh.nth(),
            values: vec![0.0; mesh.cell_count()],
        }
    }

    pub fn from_values(mesh: &DiskMesh, values: Vec<f64>) -> Result<Self> {
        check_len("bulk field", mesh.cell_count(), values.len())?;
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("bulk cell {k}")));
        }
        Ok(Self {
            nr: mesh.nr(),
            nth: mesh.nth(),
            values,
        })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.nth + j]
    }
}

/// The coupled unknown `Y = (y, y_Γ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledField {
    pub bulk: BulkField,
    pub surface: SurfaceField,
}

impl CoupledField {
    pub fn zeros(mesh: &DiskMesh) -> Self {
        Self {
            bulk: BulkField::zeros(mesh),
            surface: SurfaceField::zeros(mesh),
        }
    }

    pub fn constant(mesh: &DiskMesh, c: f64) -> Self {
        Self {
            bulk: BulkField {
                nr: mesh.nr(),
                nth: mesh.nth(),
                values: vec![c; mesh.cell_count()],
            },
            surface: SurfaceField::scalar(vec![c; mesh.nth()]),
        }
    }

    pub fn new(mesh: &DiskMesh, bulk: BulkField, surface: SurfaceField) -> Result<Self> {
        let u = Self { bulk, surface };
        mesh.check_coupled(&u)?;
        Ok(u)
    }

    /// Flat vector: cells then boundary nodes.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.bulk.values.len() + self.surface.values.len());
        v.extend_from_slice(&self.bulk.values);
        v.extend_from_slice(&self.surface.values);
        v
    }

    pub fn from_slice(mesh: &DiskMesh, v: &[f64]) -> Result<Self> {
        check_len("coupled vector", mesh.dof_count(), v.len())?;
        let nc = mesh.cell_count();
        Ok(Self {
            bulk: BulkField {
                nr: mesh.nr(),
                nth: mesh.nth(),
                values: v[..nc].to_vec(),
            },
            surface: SurfaceField::scalar(v[nc..].to_vec()),
        })
    }

    pub fn len(&self) -> usize {
        self.bulk.values.len() + self.surface.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.bulk.values.iter().chain(self.surface.values.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.bulk
            .values
            .iter_mut()
            .chain(self.surface.values.iter_mut())
    }

    pub fn scale(&mut self, a: f64) {
        self.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &CoupledField) {
        for (x, y) in self.iter_mut().zip(other.iter()) {
            *x += a * y;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Centered tangential gradient `(u_{j+1} − u_{j−1}) / (2RΔθ)` of a scalar
/// surface field, as a tangent field.
pub fn tangential_gradient(mesh: &DiskMesh, u: &SurfaceField) -> Result<SurfaceField> {
    mesh.check_surface(u)?;
    if u.kind != SurfaceKind::Scalar {
        return Err(Error::param("u", "tangential gradient needs a scalar field"));
    }
    let h = 2.0 * mesh.node_length();
    let values = (0..mesh.nth())
        .map(|j| (u.values[mesh.jp(j)] - u.values[mesh.jm(j)]) / h)
        .collect();
    Ok(SurfaceField::tangent(values))
}

/// Surface divergence built as the negative transpose of
/// [`tangential_gradient`] under the node measure `RΔθ`. With face values
/// `X_{j+½} = (X_j + X_{j+1})/2` this is `(X_{j+½} − X_{j−½}) / (RΔθ)`.
pub fn surface_divergence(mesh: &DiskMesh, x: &SurfaceField) -> Result<SurfaceField> {
    mesh.check_surface(x)?;
    if x.kind != SurfaceKind::Tangent {
        return Err(Error::param("X", "surface divergence needs a tangent field"));
    }
    let h = mesh.node_length();
    let values = (0..mesh.nth())
        .map(|j| {
            let up = 0.5 * (x.values[j] + x.values[mesh.jp(j)]);
            let down = 0.5 * (x.values[mesh.jm(j)] + x.values[j]);
            (up - down) / h
        })
        .collect();
    Ok(SurfaceField::scalar(values))
}

pub fn surface_calculus(
    mesh: &DiskMesh,
    u: &SurfaceField,
    x: &SurfaceField,
) -> Result<(SurfaceField, SurfaceField)> {
    Ok((tangential_gradient(mesh, u)?, surface_divergence(mesh, x)?))
}

/// Pointwise `⟨X, Y⟩_Γ` on the circle (single tangent component).
pub fn tangent_dot(x: &SurfaceField, y: &SurfaceField) -> Vec<f64> {
    x.values.iter().zip(&y.values).map(|(a, b)| a * b).collect()
}

/// Integral over Γ with the node measure.
pub fn surface_integral(mesh: &DiskMesh, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * mesh.node_length()
}

/// Boundary values seen by the flux stencils at the outer faces.
///
/// The surface unknown is the trace, so this returns `y_gamma` itself.
pub fn trace_restrict(y: &BulkField, y_gamma: &SurfaceField) -> Result<SurfaceField> {
    check_len("trace", y.nth, y_gamma.values.len())?;
    Ok(y_gamma.clone())
}
