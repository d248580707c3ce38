//! Hertz contact of a spherical tip and the resulting per-bin surface forces.

use std::io::Write;

use crate::config::SensorConfig;
use crate::geometry::bin_cell;
use crate::{Error, Result};

/// Press of a spherically-ended cylinder into the gel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Indentation {
    /// Surface position of the tip axis (mm).
    pub center: [f64; 2],
    pub depth: f64,
    pub tip_radius: f64,
}

impl Indentation {
    /// Builds an indentation with the configured tip and checks it against the sensor.
    pub fn new(center: [f64; 2], depth: f64, cfg: &SensorConfig) -> Result<Self> {
        let ind = Self {
            center,
            depth,
            tip_radius: cfg.tip_radius,
        };
        ind.validate(cfg)?;
        Ok(ind)
    }

    pub fn validate(&self, cfg: &SensorConfig) -> Result<()> {
        let [x, y] = self.center;
        if !(0.0..=cfg.surface_width_x).contains(&x) || !(0.0..=cfg.surface_width_y).contains(&y) {
            return Err(Error::Domain(format!(
                "indentation centre ({x}, {y}) is outside the surface"
            )));
        }
        if !(self.depth >= 0.0 && self.depth <= cfg.max_depth) {
            return Err(Error::Validation(format!(
                "depth {} outside [0, {}]",
                self.depth, cfg.max_depth
            )));
        }
        if !(self.tip_radius > 0.0) {
            return Err(Error::Validation("tip radius must be positive".into()));
        }
        if self.contact_radius() > cfg.shank_radius {
            return Err(Error::Validation(format!(
                "contact radius {:.4} mm exceeds the shank radius {} mm",
                self.contact_radius(),
                cfg.shank_radius
            )));
        }
        Ok(())
    }

    pub fn contact_radius(&self) -> f64 {
        (self.tip_radius * self.depth).sqrt()
    }

    /// Total normal load in N for an effective modulus in Pa.
    pub fn total_load(&self, e_star_pa: f64) -> f64 {
        4.0 / 3.0 * e_star_pa * 1e-6 * self.tip_radius.sqrt() * self.depth.powf(1.5)
    }

    /// Peak pressure in N/mm².
    fn peak_pressure_mpa(&self, e_star_pa: f64) -> f64 {
        let a = self.contact_radius();
        if a == 0.0 {
            return 0.0;
        }
        3.0 * self.total_load(e_star_pa) / (2.0 * std::f64::consts::PI * a * a)
    }

    /// Whether the contact patch crosses the surface boundary.
    pub fn is_truncated(&self, cfg: &SensorConfig) -> bool {
        let a = self.contact_radius();
        let [x, y] = self.center;
        x - a < 0.0 || y - a < 0.0 || x + a > cfg.surface_width_x || y + a > cfg.surface_width_y
    }
}

/// Contact pressure in Pa at radial distance `r` (mm) from the tip axis.
pub fn hertz_pressure(ind: &Indentation, e_star_pa: f64, r: f64) -> f64 {
    hertz_pressure_mpa(ind, ind.peak_pressure_mpa(e_star_pa), r) * 1e6
}

fn hertz_pressure_mpa(ind: &Indentation, p0: f64, r: f64) -> f64 {
    let a = ind.contact_radius();
    if r >= a {
        return 0.0;
    }
    p0 * (1.0 - (r * r) / (a * a)).sqrt()
}

/// Per-bin (Fx, Fy, Fz) in N, row-major with x fastest.
///
/// Forces are the traction on the gel: Fz positive into the gel.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceDistribution {
    pub nx: usize,
    pub ny: usize,
    pub forces: Vec<[f64; 3]>,
    /// The contact patch was cut by the surface boundary.
    pub truncated: bool,
}

impl ForceDistribution {
    pub fn zeros(cfg: &SensorConfig) -> Self {
        Self {
            nx: cfg.bin_nx,
            ny: cfg.bin_ny,
            forces: vec![[0.0; 3]; cfg.bin_count()],
            truncated: false,
        }
    }

    /// From an interleaved `Fx, Fy, Fz` vector.
    pub fn from_flat(nx: usize, ny: usize, flat: &[f32]) -> Result<Self> {
        if flat.len() != 3 * nx * ny {
            return Err(Error::Validation(format!(
                "expected {} label values, got {}",
                3 * nx * ny,
                flat.len()
            )));
        }
        Ok(Self {
            nx,
            ny,
            forces: flat
                .chunks_exact(3)
                .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
                .collect(),
            truncated: false,
        })
    }

    pub fn to_flat(&self) -> Vec<f32> {
        self.forces
            .iter()
            .flat_map(|f| f.iter().map(|&v| v as f32))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.forces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forces.is_empty()
    }

    /// Per-axis sum over bins.
    pub fn totals(&self) -> [f64; 3] {
        let mut t = [0.0; 3];
        for f in &self.forces {
            for k in 0..3 {
                t[k] += f[k];
            }
        }
        t
    }

    pub fn add_assign(&mut self, other: &ForceDistribution) -> Result<()> {
        if (self.nx, self.ny) != (other.nx, other.ny) {
            return Err(Error::Validation("force grids differ in shape".into()));
        }
        for (a, b) in self.forces.iter_mut().zip(&other.forces) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        self.truncated |= other.truncated;
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            forces: self.forces.iter().map(|f| f.map(|v| v * s)).collect(),
            ..self.clone()
        }
    }

    /// One component (0 = x, 1 = y, 2 = z) as `ny` rows of `nx` values.
    pub fn component_grid(&self, axis: usize) -> Vec<Vec<f64>> {
        self.forces
            .chunks(self.nx)
            .map(|row| row.iter().map(|f| f[axis]).collect())
            .collect()
    }

    /// CSV with `nx` columns and `ny` rows; row `j` holds bins `j·nx .. (j+1)·nx`.
    pub fn write_csv_grid<W: Write>(&self, axis: usize, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for row in self.component_grid(axis) {
            w.write_record(row.iter().map(|v| format!("{v:.5e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrates the Hertz traction over every bin with a midpoint rule.
pub fn bin_forces(ind: &Indentation, cfg: &SensorConfig) -> Result<ForceDistribution> {
    ind.validate(cfg)?;
    let mut dist = ForceDistribution::zeros(cfg);
    let a = ind.contact_radius();
    if a == 0.0 {
        return Ok(dist);
    }
    dist.truncated = ind.is_truncated(cfg);
    let p0 = ind.peak_pressure_mpa(cfg.effective_modulus);
    let (bw, bh) = (cfg.bin_width_x(), cfg.bin_width_y());
    let q = cfg.quadrature_subsamples;
    let (hx, hy) = (bw / q as f64, bh / q as f64);
    let da = hx * hy;
    let [cx, cy] = ind.center;
    let r_tip = ind.tip_radius;
    let ct = cfg.traction_coefficient;

    for (id, f) in dist.forces.iter_mut().enumerate() {
        let (i, j) = bin_cell(id, cfg);
        let (x0, y0) = (i as f64 * bw, j as f64 * bh);
        if x0 > cx + a || x0 + bw < cx - a || y0 > cy + a || y0 + bh < cy - a {
            continue;
        }
        let (mut fx, mut fy, mut fz) = (0.0, 0.0, 0.0);
        for sj in 0..q {
            let dy = y0 + (sj as f64 + 0.5) * hy - cy;
            for si in 0..q {
                let dx = x0 + (si as f64 + 0.5) * hx - cx;
                let r = dx.hypot(dy);
                let p = hertz_pressure_mpa(ind, p0, r);
                if p == 0.0 {
                    continue;
                }
                fz += p * da;
                if r > 0.0 {
                    let slope = r / (r_tip * r_tip - r * r).sqrt();
                    let t = ct * p * slope * da / r;
                    fx += t * dx;
                    fy += t * dy;
                }
            }
        }
        *f = [fx, fy, fz];
    }
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SensorConfig {
        SensorConfig::default()
    }

    #[test]
    fn reference_contact() {
        let ind = Indentation::new([24.5, 25.5], 1.5, &cfg()).unwrap();
        assert!((ind.contact_radius() - 7.5f64.sqrt()).abs() < 1e-12);
        let p = ind.total_load(5.477e5);
        assert!((p - 3.0).abs() < 0.01, "{p}");
    }

    #[test]
    fn zero_depth_is_no_contact() {
        let ind = Indentation::new([10.0, 10.0], 0.0, &cfg()).unwrap();
        for r in [0.0, 0.5, 3.0] {
            assert_eq!(hertz_pressure(&ind, 5.477e5, r), 0.0);
        }
        let f = bin_forces(&ind, &cfg()).unwrap();
        assert!(f.forces.iter().all(|v| *v == [0.0; 3]));
        assert!(!f.truncated);
    }

    #[test]
    fn pressure_profile() {
        let ind = Indentation::new([10.0, 10.0], 1.0, &cfg()).unwrap();
        let a = ind.contact_radius();
        let p0 = hertz_pressure(&ind, 5.477e5, 0.0);
        let expected = 3.0 * ind.total_load(5.477e5) / (2.0 * std::f64::consts::PI * a * a) * 1e6;
        assert!((p0 - expected).abs() < 1e-9 * expected);
        let half = hertz_pressure(&ind, 5.477e5, a / 2.0);
        assert!((half - p0 * 0.75f64.sqrt()).abs() < 1e-9 * p0);
        assert_eq!(hertz_pressure(&ind, 5.477e5, a), 0.0);
    }

    #[test]
    fn centered_load_matches_hertz() {
        let c = cfg();
        let ind = Indentation::new([24.5, 25.5], 1.5, &c).unwrap();
        let f = bin_forces(&ind, &c).unwrap();
        let [tx, ty, tz] = f.totals();
        let p = ind.total_load(c.effective_modulus);
        assert!((tz - p).abs() < 0.01 * p, "{tz} vs {p}");
        assert!(tx.abs() < 1e-6 * tz && ty.abs() < 1e-6 * tz, "{tx} {ty}");
        assert!(f.forces.iter().all(|v| v[2] >= 0.0));
    }

    #[test]
    fn shear_points_outward() {
        let c = cfg();
        let ind = Indentation::new([24.5, 25.5], 1.5, &c).unwrap();
        let f = bin_forces(&ind, &c).unwrap();
        let right = crate::geometry::bin_index(26.5, 25.5, &c).unwrap();
        let left = crate::geometry::bin_index(22.5, 25.5, &c).unwrap();
        assert!(f.forces[right][0] > 0.0 && f.forces[left][0] < 0.0);
    }

    #[test]
    fn edge_contact_is_truncated() {
        let c = cfg();
        let ind = Indentation::new([0.5, 25.0], 1.5, &c).unwrap();
        let f = bin_forces(&ind, &c).unwrap();
        assert!(f.truncated);
        assert!(f.totals()[2] < ind.total_load(c.effective_modulus));
    }

    #[test]
    fn invalid_indentations() {
        let c = cfg();
        assert!(matches!(Indentation::new([50.0, 1.0], 1.0, &c), Err(Error::Domain(_))));
        assert!(Indentation::new([5.0, 5.0], 1.6, &c).is_err());
        assert!(Indentation::new([5.0, 5.0], -0.1, &c).is_err());
        let narrow = SensorConfig {
            shank_radius: 2.0,
            ..cfg()
        };
        assert!(Indentation::new([5.0, 5.0], 1.0, &narrow).is_err());
    }

    #[test]
    fn flat_roundtrip_and_csv() {
        let c = cfg();
        let f = bin_forces(&Indentation::new([12.0, 30.0], 0.9, &c).unwrap(), &c).unwrap();
        let back = ForceDistribution::from_flat(25, 26, &f.to_flat()).unwrap();
        for (a, b) in f.forces.iter().zip(&back.forces) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-6 * a[k].abs().max(1e-12));
            }
        }
        let mut buf = Vec::new();
        f.write_csv_grid(2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 26);
        assert!(text.lines().all(|l| l.split(',').count() == 25));
    }
}
