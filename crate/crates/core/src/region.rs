//! Interior subdomains given as cell masks.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DiskMesh;

/// A subdomain of the disk; a cell belongs to it when its center does.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    /// `{ r < radius }`.
    Disk { radius: f64 },
    /// `{ r_min < r < r_max, theta_min < θ < theta_max }`, angles in radians.
    AnnularSector {
        r_min: f64,
        r_max: f64,
        theta_min: f64,
        theta_max: f64,
    },
}

impl Default for Region {
    fn default() -> Self {
        Region::AnnularSector {
            r_min: 0.5,
            r_max: 0.8,
            theta_min: 0.0,
            theta_max: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl Region {
    pub fn contains(&self, r: f64, theta: f64) -> bool {
        match *self {
            Region::Disk { radius } => r < radius,
            Region::AnnularSector {
                r_min,
                r_max,
                theta_min,
                theta_max,
            } => {
                let th = (theta - theta_min).rem_euclid(TAU);
                r > r_min && r < r_max && th > 0.0 && th < theta_max - theta_min
            }
        }
    }

    /// Outer radius of the region.
    pub fn outer_radius(&self) -> f64 {
        match *self {
            Region::Disk { radius } => radius,
            Region::AnnularSector { r_max, .. } => r_max,
        }
    }

    /// Checks that the region sits strictly inside the disk of radius `radius`.
    pub fn validate(&self, radius: f64) -> Result<()> {
        let ok = match *self {
            Region::Disk { radius: rho } => rho > 0.0,
            Region::AnnularSector {
                r_min,
                r_max,
                theta_min,
                theta_max,
            } => r_min >= 0.0 && r_max > r_min && theta_max > theta_min && theta_max - theta_min <= TAU,
        };
        if !ok || !self.outer_radius().is_finite() {
            return Err(Error::param("omega", format!("malformed region {self:?}")));
        }
        if self.outer_radius() >= radius {
            return Err(Error::RegionTouchesBoundary(format!(
                "{self:?} reaches r = {} but the disk radius is {radius}",
                self.outer_radius()
            )));
        }
        Ok(())
    }

    /// Cell mask on `mesh`; errors if the region is empty there.
    pub fn mask(&self, mesh: &DiskMesh) -> Result<Vec<bool>> {
        self.validate(mesh.radius())?;
        let mut m = Vec::with_capacity(mesh.cell_count());
        for i in 0..mesh.nr() {
            for j in 0..mesh.nth() {
                m.push(self.contains(mesh.r_center(i), mesh.theta(j)));
            }
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::EmptyObservationRegion);
        }
        Ok(m)
    }

    /// Indices of the cells in the region.
    pub fn cells(&self, mesh: &DiskMesh) -> Result<Vec<usize>> {
        Ok(self
            .mask(mesh)?
            .iter()
            .enumerate()
            .filter_map(|(k, &b)| b.then_some(k))
            .collect())
    }

    /// Area covered by the masked cells.
    pub fn area(&self, mesh: &DiskMesh) -> Result<f64> {
        let nth = mesh.nth();
        Ok(self.cells(mesh)?.iter().map(|k| mesh.cell_area(k / nth)).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn default_sector_area_converges() {
        let exact = 0.25 * PI * (0.8f64.powi(2) - 0.5f64.powi(2)) / 1.0;
        let m = DiskMesh::new(1.0, 40, 64).unwrap();
        let a = Region::default().area(&m).unwrap();
        assert!((a - exact).abs() < 1e-12, "{a} vs {exact}");
    }

    #[test]
    fn rejects_boundary_and_empty() {
        let m = DiskMesh::new(1.0, 4, 8).unwrap();
        assert!(matches!(
            Region::Disk { radius: 1.0 }.mask(&m),
            Err(Error::RegionTouchesBoundary(_))
        ));
        assert!(matches!(
            Region::Disk { radius: 0.05 }.mask(&m),
            Err(Error::EmptyObservationRegion)
        ));
        let wrap = Region::AnnularSector {
            r_min: 0.0,
            r_max: 0.9,
            theta_min: -0.5,
            theta_max: 0.5,
        };
        assert!(wrap.contains(0.5, 6.0));
        assert!(!wrap.contains(0.5, 3.0));
    }

    #[test]
    fn serde_form() {
        let r: Region = serde_json::from_str(r#"{"shape":"disk","radius":0.3}"#).unwrap();
        assert_eq!(r, Region::Disk { radius: 0.3 });
    }
}
