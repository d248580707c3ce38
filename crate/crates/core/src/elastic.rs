//! Interior displacement of the gel under surface point loads.

use crate::config::SensorConfig;
use crate::contact::ForceDistribution;
use crate::geometry::bin_center;

/// Displacement of a point at depth `z` below a unit-free normal load `p`,
/// at lateral distance `r`: returns `(u_r, u_z)` with `u_z` into the gel and
/// `u_r` away from the load.
pub fn boussinesq(p: f64, r: f64, z: f64, youngs: f64, nu: f64) -> (f64, f64) {
    let rho = r.hypot(z);
    let k = p * (1.0 + nu) / (2.0 * std::f64::consts::PI * youngs);
    let uz = k * (z * z / rho.powi(3) + 2.0 * (1.0 - nu) / rho);
    let ur = k * (r * z / rho.powi(3) - (1.0 - 2.0 * nu) * r / (rho * (rho + z)));
    (ur, uz)
}

/// Result of summing the point-load kernels at one particle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Displacement {
    /// Sensor-frame displacement (mm); a load into the gel moves particles towards −z.
    pub u: [f64; 3],
    /// Loaded bins closer than the clamp distance.
    pub clamped: usize,
}

/// Minimum load-to-particle distance used in the kernels.
pub fn clamp_distance(cfg: &SensorConfig) -> f64 {
    0.5 * cfg.bin_width_x().min(cfg.bin_width_y())
}

/// Displacement of a particle `depth` mm below surface position `(x, y)`.
pub fn particle_displacement(
    load: &ForceDistribution,
    x: f64,
    y: f64,
    depth: f64,
    cfg: &SensorConfig,
) -> Displacement {
    let e = cfg.youngs_modulus_mpa();
    let nu = cfg.poisson_ratio;
    let min_rho = clamp_distance(cfg);
    let base = cfg.elastic_layer_thickness;
    let mut out = Displacement::default();
    for (id, f) in load.forces.iter().enumerate() {
        let p = f[2];
        if p == 0.0 {
            continue;
        }
        let [bx, by] = bin_center(id, cfg);
        let (dx, dy) = (x - bx, y - by);
        let r = dx.hypot(dy);
        let (mut rr, mut zz) = (r, depth);
        let rho = r.hypot(depth);
        if rho < min_rho {
            out.clamped += 1;
            let s = min_rho / rho.max(f64::MIN_POSITIVE);
            if rho == 0.0 {
                zz = min_rho;
            } else {
                rr *= s;
                zz *= s;
            }
        }
        let (mut ur, mut uz) = boussinesq(p, rr, zz, e, nu);
        if base.is_finite() {
            let (br, bz) = boussinesq(p, r, base.max(zz), e, nu);
            ur -= br;
            uz -= bz;
        }
        if r > 0.0 {
            out.u[0] += ur * dx / r;
            out.u[1] += ur * dy / r;
        }
        out.u[2] -= uz;
    }
    out
}
