//! Coefficient data `A, D, B, b, p, q` and ellipticity certification.
//!
//! `A` is stored per cell in the polar orthonormal frame `(e_r, e_θ)`; a
//! Cartesian matrix `A_c(x)` corresponds to `Qᵀ A_c Q` with `Q` the rotation by
//! `θ`. On the circle the surface diffusion `D` acts on a single tangent
//! direction and is stored as a scalar per boundary node. `B` is a per-cell
//! polar vector, `b` the tangential component of the surface drift.
//!
//! User-supplied arrays are accepted as long as they are finite and sized to
//! the mesh; smoothness of the sampled coefficients is not checked.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::DiskMesh;

/// Symmetric 2×2 matrix in the polar frame. Symmetry holds by storage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMat2 {
    pub rr: f64,
    pub rt: f64,
    pub tt: f64,
}

impl SymMat2 {
    pub const IDENTITY: SymMat2 = SymMat2 {
        rr: 1.0,
        rt: 0.0,
        tt: 1.0,
    };

    pub fn scalar(a: f64) -> Self {
        Self {
            rr: a,
            rt: 0.0,
            tt: a,
        }
    }

    pub fn diag(rr: f64, tt: f64) -> Self {
        Self { rr, rt: 0.0, tt }
    }

    /// `(λ_min, λ_max)` in closed form.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.rr + self.tt);
        let half_diff = 0.5 * (self.rr - self.tt);
        let rad = half_diff.hypot(self.rt);
        (mean - rad, mean + rad)
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.rr * v[0] + self.rt * v[1],
            self.rt * v[0] + self.tt * v[1],
        ]
    }

    /// `vᵀ A w`.
    pub fn form(&self, v: [f64; 2], w: [f64; 2]) -> f64 {
        let aw = self.apply(w);
        v[0] * aw[0] + v[1] * aw[1]
    }

    fn is_finite(&self) -> bool {
        self.rr.is_finite() && self.rt.is_finite() && self.tt.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemCoefficients {
    /// `A` per cell.
    pub diffusion: Vec<SymMat2>,
    /// `D` per boundary node.
    pub surface_diffusion: Vec<f64>,
    /// `B` per cell, `[radial, angular]`.
    pub drift: Vec<[f64; 2]>,
    /// `b` per boundary node (tangential component).
    pub surface_drift: Vec<f64>,
    /// `p` per cell.
    pub potential: Vec<f64>,
    /// `q` per boundary node.
    pub surface_potential: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    /// Greatest lower ellipticity bound over cells and nodes.
    pub beta0: f64,
    /// Least upper bound.
    pub a0: f64,
    /// Shift making `𝔞 + μ` coercive with constant `β₀/2`.
    pub mu: f64,
    pub drift_sup: f64,
    pub surface_drift_sup: f64,
    pub potential_sup: f64,
    pub surface_potential_sup: f64,
}

fn sup(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl ProblemCoefficients {
    pub fn identity(mesh: &DiskMesh) -> Self {
        let nc = mesh.cell_count();
        let nn = mesh.node_count();
        Self {
            diffusion: vec![SymMat2::IDENTITY; nc],
            surface_diffusion: vec![1.0; nn],
            drift: vec![[0.0, 0.0]; nc],
            surface_drift: vec![0.0; nn],
            potential: vec![0.0; nc],
            surface_potential: vec![0.0; nn],
        }
    }

    pub fn check_sizes(&self, mesh: &DiskMesh) -> Result<()> {
        let nc = mesh.cell_count();
        let nn = mesh.node_count();
        check_len("diffusion", nc, self.diffusion.len())?;
        check_len("drift", nc, self.drift.len())?;
        check_len("potential", nc, self.potential.len())?;
        check_len("surface diffusion", nn, self.surface_diffusion.len())?;
        check_len("surface drift", nn, self.surface_drift.len())?;
        check_len("surface potential", nn, self.surface_potential.len())
    }

    pub fn has_drift(&self) -> bool {
        self.drift.iter().any(|b| b[0] != 0.0 || b[1] != 0.0)
            || self.surface_drift.iter().any(|b| *b != 0.0)
    }

    /// Certifies ellipticity and computes the bounds used elsewhere.
    ///
    /// `μ = β₀/2 + (‖B‖²_∞ + ‖b‖²_∞)/(2β₀) + ‖p‖_∞ + ‖q‖_∞` comes from the
    /// Young split of the drift terms against half the diffusion energy.
    pub fn validate(&self, mesh: &DiskMesh) -> Result<EllipticityReport> {
        self.check_sizes(mesh)?;
        let nth = mesh.nth();
        let mut beta0 = f64::INFINITY;
        let mut a0 = f64::NEG_INFINITY;
        for (k, a) in self.diffusion.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("A at cell ({}, {})", k / nth, k % nth)));
            }
            let (lo, hi) = a.eigenvalues();
            if lo <= 0.0 {
                return Err(Error::NonElliptic {
                    location: format!("cell ({}, {})", k / nth, k % nth),
                    value: lo,
                });
            }
            beta0 = beta0.min(lo);
            a0 = a0.max(hi);
        }
        for (j, &d) in self.surface_diffusion.iter().enumerate() {
            if !d.is_finite() {
                return Err(Error::NonFinite(format!("D at node {j}")));
            }
            if d <= 0.0 {
                return Err(Error::NonElliptic {
                    location: format!("node {j}"),
                    value: d,
                });
            }
            beta0 = beta0.min(d);
            a0 = a0.max(d);
        }
        let finite = self.drift.iter().all(|b| b[0].is_finite() && b[1].is_finite())
            && self.surface_drift.iter().all(|v| v.is_finite())
            && self.potential.iter().all(|v| v.is_finite())
            && self.surface_potential.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("drift or potential".into()));
        }
        let drift_sup = sup(self.drift.iter().map(|b| b[0].hypot(b[1])));
        let surface_drift_sup = sup(self.surface_drift.iter().copied());
        let potential_sup = sup(self.potential.iter().copied());
        let surface_potential_sup = sup(self.surface_potential.iter().copied());
        let mu = 0.5 * beta0
            + (drift_sup * drift_sup + surface_drift_sup * surface_drift_sup) / (2.0 * beta0)
            + potential_sup
            + surface_potential_sup;
        Ok(EllipticityReport {
            beta0,
            a0,
            mu,
            drift_sup,
            surface_drift_sup,
            potential_sup,
            surface_potential_sup,
        })
    }
}

/// Named, reproducible coefficient families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Preset {
    Identity,
    /// `A = (a0 + a1 r²) I`, `D = a0`.
    RadialScalar { a0: f64, a1: f64 },
    /// `a_rr = 2 + sin θ`, `a_rθ = 0.5`, `a_θθ = 2`, `D = 1.5`.
    Anisotropic,
    /// Identity diffusion with drifts of size `strength` and positive potentials.
    Drifted { strength: f64 },
    /// Low-order trigonometric expansions with seeded amplitudes.
    RandomSmooth { seed: u64 },
}

impl Preset {
    pub fn parse(name: &str, params: &[(String, f64)]) -> Result<Self> {
        let get = |key: &str, default: f64| {
            params
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| *v)
                .unwrap_or(default)
        };
        Ok(match name {
            "identity" => Preset::Identity,
            "radial_scalar" => Preset::RadialScalar {
                a0: get("a0", 1.0),
                a1: get("a1", 0.5),
            },
            "anisotropic" => Preset::Anisotropic,
            "drifted" => Preset::Drifted {
                strength: get("strength", 0.5),
            },
            "random_smooth" => Preset::RandomSmooth {
                seed: get("seed", 7.0) as u64,
            },
            other => return Err(Error::UnknownPreset(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Identity => "identity",
            Preset::RadialScalar { .. } => "radial_scalar",
            Preset::Anisotropic => "anisotropic",
            Preset::Drifted { .. } => "drifted",
            Preset::RandomSmooth { .. } => "random_smooth",
        }
    }

    /// One representative of every family, for sweeps over coefficient sets.
    pub fn all_defaults() -> Vec<Preset> {
        vec![
            Preset::Identity,
            Preset::RadialScalar { a0: 1.0, a1: 0.5 },
            Preset::Anisotropic,
            Preset::Drifted { strength: 0.5 },
            Preset::RandomSmooth { seed: 7 },
        ]
    }

    pub fn build(&self, mesh: &DiskMesh) -> Result<ProblemCoefficients> {
        let mut c = ProblemCoefficients::identity(mesh);
        let big_r = mesh.radius();
        let cells = || {
            (0..mesh.nr()).flat_map(move |i| (0..mesh.nth()).map(move |j| (i, j)))
        };
        match *self {
            Preset::Identity => {}
            Preset::RadialScalar { a0, a1 } => {
                if !(a0 > 0.0 && a1 >= 0.0) {
                    return Err(Error::param("a0/a1", "need a0 > 0 and a1 >= 0"));
                }
                for (k, (i, _)) in cells().enumerate() {
                    let r = mesh.r_center(i);
                    c.diffusion[k] = SymMat2::scalar(a0 + a1 * r * r);
                }
                c.surface_diffusion.fill(a0);
            }
            Preset::Anisotropic => {
                for (k, (_, j)) in cells().enumerate() {
                    let th = mesh.theta(j);
                    c.diffusion[k] = SymMat2 {
                        rr: 2.0 + th.sin(),
                        rt: 0.5,
                        tt: 2.0,
                    };
                }
                c.surface_diffusion.fill(1.5);
            }
            Preset::Drifted { strength } => {
                for (k, (i, j)) in cells().enumerate() {
                    let r = mesh.r_center(i) / big_r;
                    let th = mesh.theta(j);
                    c.drift[k] = [strength * r * th.cos(), strength * th.sin()];
                    c.potential[k] = 1.0 + r * r;
                }
                for j in 0..mesh.nth() {
                    let th = mesh.theta(j);
                    c.surface_drift[j] = 0.6 * strength * th.cos();
                    c.surface_potential[j] = 0.5;
                }
            }
            Preset::RandomSmooth { seed } => random_smooth(mesh, seed, &mut c),
        }
        Ok(c)
    }
}

/// Trigonometric expansion `Σ_k c_k cos(kθ + φ_k) ρ^k` with `Σ|c_k| ≤ amp`.
struct TrigSeries {
    terms: Vec<(f64, f64)>,
}

impl TrigSeries {
    fn draw(rng: &mut ChaCha8Rng, order: usize, amp: f64) -> Self {
        let raw: Vec<(f64, f64)> = (0..order)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0 * PI)))
            .collect();
        let total: f64 = raw.iter().map(|(c, _)| c.abs()).sum::<f64>().max(1e-300);
        Self {
            terms: raw.into_iter().map(|(c, p)| (c * amp / total, p)).collect(),
        }
    }

    fn eval(&self, rho: f64, th: f64) -> f64 {
        self.terms
            .iter()
            .enumerate()
            .map(|(k, (c, p))| c * ((k as f64) * th + p).cos() * rho.powi(k as i32))
            .sum()
    }
}

fn random_smooth(mesh: &DiskMesh, seed: u64, c: &mut ProblemCoefficients) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = 3;
    // offsets exceed the oscillation amplitudes, so λ_min ≥ 1.5 − 0.4 − 0.4 > 0
    let arr = TrigSeries::draw(&mut rng, order, 0.4);
    let att = TrigSeries::draw(&mut rng, order, 0.4);
    let art = TrigSeries::draw(&mut rng, order, 0.3);
    let d = TrigSeries::draw(&mut rng, order, 0.5);
    let br = TrigSeries::draw(&mut rng, order, 0.3);
    let bt = TrigSeries::draw(&mut rng, order, 0.3);
    let b = TrigSeries::draw(&mut rng, order, 0.3);
    let p = TrigSeries::draw(&mut rng, order, 0.5);
    let q = TrigSeries::draw(&mut rng, order, 0.5);
    let big_r = mesh.radius();
    for i in 0..mesh.nr() {
        let rho = mesh.r_center(i) / big_r;
        for j in 0..mesh.nth() {
            let th = mesh.theta(j);
            let k = mesh.cell(i, j);
            c.diffusion[k] = SymMat2 {
                rr: 1.5 + arr.eval(rho, th),
                rt: art.eval(rho, th),
                tt: 1.5 + att.eval(rho, th),
            };
            c.drift[k] = [br.eval(rho, th), bt.eval(rho, th)];
            c.potential[k] = p.eval(rho, th);
        }
    }
    for j in 0..mesh.nth() {
        let th = mesh.theta(j);
        c.surface_diffusion[j] = 1.5 + d.eval(1.0, th);
        c.surface_drift[j] = b.eval(1.0, th);
        c.surface_potential[j] = q.eval(1.0, th);
    }
}

/// Either a named preset or explicit per-cell/per-node arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Preset(Preset),
    Explicit(ProblemCoefficients),
}

impl CoefficientSpec {
    pub fn build(&self, mesh: &DiskMesh) -> Result<ProblemCoefficients> {
        match self {
            CoefficientSpec::Preset(p) => p.build(mesh),
            CoefficientSpec::Explicit(c) => {
                c.check_sizes(mesh)?;
                Ok(c.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh() -> DiskMesh {
        DiskMesh::new(1.0, 8, 16).unwrap()
    }

    #[test]
    fn identity_bounds() {
        let m = mesh();
        let r = Preset::Identity.build(&m).unwrap().validate(&m).unwrap();
        assert_eq!(r.beta0, 1.0);
        assert_eq!(r.a0, 1.0);
        assert_eq!(r.mu, 0.5);
    }

    #[test]
    fn diagonal_bounds() {
        let m = mesh();
        let mut c = ProblemCoefficients::identity(&m);
        c.diffusion.fill(SymMat2::diag(2.0, 3.0));
        c.surface_diffusion.fill(5.0);
        let r = c.validate(&m).unwrap();
        assert_eq!(r.beta0, 2.0);
        assert_eq!(r.a0, 5.0);
    }

    #[test]
    fn anisotropic_bounds_match_dense_eigensolve() {
        let m = mesh();
        let c = Preset::Anisotropic.build(&m).unwrap();
        let r = c.validate(&m).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for a in &c.diffusion {
            let mat = nalgebra::Matrix2::new(a.rr, a.rt, a.rt, a.tt);
            let e = mat.symmetric_eigen().eigenvalues;
            lo = lo.min(e.min());
            hi = hi.max(e.max());
        }
        lo = lo.min(1.5);
        hi = hi.max(1.5);
        assert!((r.beta0 - lo).abs() < 1e-12);
        assert!((r.a0 - hi).abs() < 1e-12);
    }

    #[test]
    fn radial_scalar_minimum_at_origin() {
        let m = mesh();
        let c = Preset::RadialScalar { a0: 1.0, a1: 0.5 }.build(&m).unwrap();
        let r = c.validate(&m).unwrap();
        assert_eq!(r.beta0, 1.0);
        let rmax = m.r_center(m.nr() - 1);
        assert!((r.a0 - (1.0 + 0.5 * rmax * rmax)).abs() < 1e-14);
        let inner = c.diffusion[0].rr;
        assert!(inner >= 1.0 && inner - 1.0 <= 0.5 * m.dr() * m.dr());
    }

    #[test]
    fn random_smooth_is_deterministic() {
        let m = mesh();
        let a = Preset::RandomSmooth { seed: 7 }.build(&m).unwrap();
        let b = Preset::RandomSmooth { seed: 7 }.build(&m).unwrap();
        let bits = |c: &ProblemCoefficients| serde_json::to_string(c).unwrap();
        assert_eq!(bits(&a), bits(&b));
        let other = Preset::RandomSmooth { seed: 8 }.build(&m).unwrap();
        assert_ne!(bits(&a), bits(&other));
    }

    #[test]
    fn every_preset_validates() {
        let m = mesh();
        for p in Preset::all_defaults()
            .into_iter()
            .chain((0..20).map(|seed| Preset::RandomSmooth { seed }))
        {
            let r = p.build(&m).unwrap().validate(&m).unwrap();
            assert!(r.beta0 > 0.0 && r.beta0 <= r.a0 && r.mu.is_finite(), "{p:?}");
        }
    }

    #[test]
    fn non_elliptic_is_rejected_with_location() {
        let m = mesh();
        let mut c = ProblemCoefficients::identity(&m);
        c.diffusion[m.cell(2, 3)] = SymMat2 {
            rr: 1.0,
            rt: 2.0,
            tt: 1.0,
        };
        match c.validate(&m) {
            Err(Error::NonElliptic { location, value }) => {
                assert_eq!(location, "cell (2, 3)");
                assert!((value + 1.0).abs() < 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut c = ProblemCoefficients::identity(&m);
        c.surface_diffusion[4] = 0.0;
        assert!(matches!(c.validate(&m), Err(Error::NonElliptic { .. })));
        let mut c = ProblemCoefficients::identity(&m);
        c.potential.pop();
        assert!(matches!(c.validate(&m), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(
            Preset::parse("nope", &[]),
            Err(Error::UnknownPreset(_))
        ));
        assert_eq!(
            Preset::parse("radial_scalar", &[("a1".into(), 2.0)]).unwrap(),
            Preset::RadialScalar { a0: 1.0, a1: 2.0 }
        );
    }

    #[test]
    fn json_forms() {
        let m = DiskMesh::new(1.0, 2, 4).unwrap();
        let s: CoefficientSpec = serde_json::from_str(r#"{"name":"drifted","strength":0.25}"#).unwrap();
        assert_eq!(s, CoefficientSpec::Preset(Preset::Drifted { strength: 0.25 }));
        let explicit = CoefficientSpec::Explicit(ProblemCoefficients::identity(&m));
        let json = serde_json::to_string(&explicit).unwrap();
        let back: CoefficientSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, explicit);
        assert!(back.build(&m).is_ok());
    }

    /// Roots of `λ² − tr λ + det` by bisection on the characteristic
    /// polynomial, independent of the closed form.
    fn char_poly_roots(a: &SymMat2) -> (f64, f64) {
        let tr = a.rr + a.tt;
        let det = a.rr * a.tt - a.rt * a.rt;
        let p = |l: f64| l * l - tr * l + det;
        let bound = a.rr.abs() + a.tt.abs() + 2.0 * a.rt.abs() + 1.0;
        let mid = 0.5 * tr;
        let bisect = |mut lo: f64, mut hi: f64| {
            let s_lo = p(lo).signum();
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if p(m).signum() == s_lo {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            0.5 * (lo + hi)
        };
        if p(mid) >= 0.0 {
            return (mid, mid);
        }
        (bisect(-bound, mid), bisect(mid, bound))
    }

    #[test]
    fn closed_form_eigenvalues_match_characteristic_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let a = SymMat2 {
                rr: rng.random_range(-3.0..3.0),
                rt: rng.random_range(-3.0..3.0),
                tt: rng.random_range(-3.0..3.0),
            };
            let (lo, hi) = a.eigenvalues();
            let (plo, phi) = char_poly_roots(&a);
            assert!((lo - plo).abs() < 1e-12 && (hi - phi).abs() < 1e-12, "{a:?}");
        }
    }
}
