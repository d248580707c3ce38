//! Surface bins, camera projection and field-of-view coverage.

use std::io::Write;

use crate::config::{ProjectionKind, SensorConfig};
use crate::{Error, Result};

/// Continuous pixel coordinate; pixel `(i, j)` spans `[i, i+1) × [j, j+1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

pub fn bin_index(x: f64, y: f64, cfg: &SensorConfig) -> Result<usize> {
    if !(0.0..=cfg.surface_width_x).contains(&x) || !(0.0..=cfg.surface_width_y).contains(&y) {
        return Err(Error::Domain(format!(
            "point ({x}, {y}) is outside the {}×{} mm surface",
            cfg.surface_width_x, cfg.surface_width_y
        )));
    }
    let i = ((x / cfg.bin_width_x()) as usize).min(cfg.bin_nx - 1);
    let j = ((y / cfg.bin_width_y()) as usize).min(cfg.bin_ny - 1);
    Ok(i + cfg.bin_nx * j)
}

/// Grid cell `(i, j)` of a bin id, `i` along x.
pub fn bin_cell(id: usize, cfg: &SensorConfig) -> (usize, usize) {
    (id % cfg.bin_nx, id / cfg.bin_nx)
}

pub fn bin_center(id: usize, cfg: &SensorConfig) -> [f64; 2] {
    let (i, j) = bin_cell(id, cfg);
    [
        (i as f64 + 0.5) * cfg.bin_width_x(),
        (j as f64 + 0.5) * cfg.bin_width_y(),
    ]
}

fn camera(cfg: &SensorConfig, cam: usize) -> Result<[f64; 3]> {
    cfg.camera_positions
        .get(cam)
        .copied()
        .ok_or_else(|| Error::Validation(format!("camera {cam} does not exist")))
}

/// Image position of a point, whether or not it lands on the sensor.
pub fn project_unbounded(point: [f64; 3], cam: usize, cfg: &SensorConfig) -> Result<Pixel> {
    let c = camera(cfg, cam)?;
    let dz = point[2] - c[2];
    if dz <= 0.0 {
        return Err(Error::Domain(format!(
            "point at z = {} is not in front of camera {cam}",
            point[2]
        )));
    }
    let (dx, dy) = (point[0] - c[0], point[1] - c[1]);
    let (ix, iy) = match cfg.projection {
        ProjectionKind::Pinhole => (cfg.focal_length * dx / dz, cfg.focal_length * dy / dz),
        ProjectionKind::EquidistantFisheye => {
            let rho = dx.hypot(dy);
            if rho == 0.0 {
                (0.0, 0.0)
            } else {
                let r = cfg.focal_length * rho.atan2(dz);
                (r * dx / rho, r * dy / rho)
            }
        }
    };
    let half = cfg.image_size as f64 / 2.0;
    let pitch = cfg.pixel_pitch();
    Ok(Pixel {
        u: half + ix / pitch,
        v: half + iy / pitch,
    })
}

/// Image position of a point, or `None` when it falls off the image.
pub fn project(point: [f64; 3], cam: usize, cfg: &SensorConfig) -> Result<Option<Pixel>> {
    let p = project_unbounded(point, cam, cfg)?;
    let size = cfg.image_size as f64;
    let inside = (0.0..size).contains(&p.u) && (0.0..size).contains(&p.v);
    Ok(inside.then_some(p))
}

/// Back-projects a pixel onto the plane `z = plane_z`.
pub fn unproject(pixel: Pixel, cam: usize, plane_z: f64, cfg: &SensorConfig) -> Result<[f64; 3]> {
    let c = camera(cfg, cam)?;
    let dz = plane_z - c[2];
    if dz <= 0.0 {
        return Err(Error::Domain(format!(
            "plane z = {plane_z} is not in front of camera {cam}"
        )));
    }
    let half = cfg.image_size as f64 / 2.0;
    let pitch = cfg.pixel_pitch();
    let (ix, iy) = ((pixel.u - half) * pitch, (pixel.v - half) * pitch);
    let (dx, dy) = match cfg.projection {
        ProjectionKind::Pinhole => (ix * dz / cfg.focal_length, iy * dz / cfg.focal_length),
        ProjectionKind::EquidistantFisheye => {
            let r = ix.hypot(iy);
            let theta = r / cfg.focal_length;
            if theta >= std::f64::consts::FRAC_PI_2 {
                return Err(Error::Domain(format!(
                    "pixel ({}, {}) looks at or beyond the horizon",
                    pixel.u, pixel.v
                )));
            }
            if r == 0.0 {
                (0.0, 0.0)
            } else {
                let rho = dz * theta.tan();
                (rho * ix / r, rho * iy / r)
            }
        }
    };
    Ok([c[0] + dx, c[1] + dy, plane_z])
}

/// Whether the particle-plane point below surface position `(x, y)` is imaged by `cam`.
pub fn sees(cfg: &SensorConfig, cam: usize, x: f64, y: f64) -> bool {
    matches!(
        project([x, y, cfg.particle_plane_height], cam, cfg),
        Ok(Some(_))
    )
}

/// Bins whose centres are imaged by at least one camera, ascending.
pub fn covered_bins(cfg: &SensorConfig) -> Vec<u32> {
    (0..cfg.bin_count())
        .filter(|&b| {
            let [x, y] = bin_center(b, cfg);
            (0..cfg.camera_count()).any(|c| sees(cfg, c, x, y))
        })
        .map(|b| b as u32)
        .collect()
}

/// Camera whose pinhole is laterally closest to `(x, y)`; ties go to the lower id.
pub fn nearest_camera(cfg: &SensorConfig, x: f64, y: f64) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in cfg.camera_positions.iter().enumerate() {
        let d = (c[0] - x).hypot(c[1] - y);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[derive(Clone, Debug)]
pub struct CoverageReport {
    /// Field-of-view outline of each camera on the particle plane.
    pub polygons: Vec<Vec<[f64; 2]>>,
    pub uncovered_fraction: f64,
    pub raster: (usize, usize),
}

/// Raster samples per bin edge.
pub const COVERAGE_OVERSAMPLING: usize = 10;

pub fn coverage_report(cfg: &SensorConfig) -> CoverageReport {
    let polygons = (0..cfg.camera_count()).map(|c| fov_polygon(cfg, c)).collect();
    let nx = cfg.bin_nx * COVERAGE_OVERSAMPLING;
    let ny = cfg.bin_ny * COVERAGE_OVERSAMPLING;
    let (sx, sy) = (cfg.surface_width_x / nx as f64, cfg.surface_width_y / ny as f64);
    let mut uncovered = 0usize;
    for j in 0..ny {
        let y = (j as f64 + 0.5) * sy;
        for i in 0..nx {
            let x = (i as f64 + 0.5) * sx;
            if !(0..cfg.camera_count()).any(|c| sees(cfg, c, x, y)) {
                uncovered += 1;
            }
        }
    }
    CoverageReport {
        polygons,
        uncovered_fraction: uncovered as f64 / (nx * ny) as f64,
        raster: (nx, ny),
    }
}

fn fov_polygon(cfg: &SensorConfig, cam: usize) -> Vec<[f64; 2]> {
    const PER_EDGE: usize = 8;
    let size = cfg.image_size as f64;
    let mut border = Vec::with_capacity(4 * PER_EDGE);
    for k in 0..PER_EDGE {
        border.push((size * k as f64 / PER_EDGE as f64, 0.0));
    }
    for k in 0..PER_EDGE {
        border.push((size, size * k as f64 / PER_EDGE as f64));
    }
    for k in 0..PER_EDGE {
        border.push((size * (1.0 - k as f64 / PER_EDGE as f64), size));
    }
    for k in 0..PER_EDGE {
        border.push((0.0, size * (1.0 - k as f64 / PER_EDGE as f64)));
    }
    let half = size / 2.0;
    let limit = 0.999 * std::f64::consts::FRAC_PI_2 * cfg.focal_length / cfg.pixel_pitch();
    border
        .into_iter()
        .filter_map(|(u, v)| {
            let (mut du, mut dv) = (u - half, v - half);
            if cfg.projection == ProjectionKind::EquidistantFisheye {
                let r = du.hypot(dv);
                if r > limit {
                    du *= limit / r;
                    dv *= limit / r;
                }
            }
            let px = Pixel { u: half + du, v: half + dv };
            unproject(px, cam, cfg.particle_plane_height, cfg)
                .ok()
                .map(|p| [p[0], p[1]])
        })
        .collect()
}

impl CoverageReport {
    /// CSV rows `camera,vertex,x_mm,y_mm`.
    pub fn write_polygons_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["camera", "vertex", "x_mm", "y_mm"])?;
        for (c, poly) in self.polygons.iter().enumerate() {
            for (k, p) in poly.iter().enumerate() {
                w.write_record([
                    c.to_string(),
                    k.to_string(),
                    format!("{:.5e}", p[0]),
                    format!("{:.5e}", p[1]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "cameras {} uncovered_fraction {:.5e} raster {}x{}",
            self.polygons.len(),
            self.uncovered_fraction,
            self.raster.0,
            self.raster.1
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SensorConfig {
        SensorConfig::default()
    }

    #[test]
    fn corners_and_center_bins() {
        let c = cfg();
        assert_eq!(bin_index(0.0, 0.0, &c).unwrap(), 0);
        assert_eq!(bin_index(49.0 - 1e-9, 51.0 - 1e-9, &c).unwrap(), 649);
        assert_eq!(bin_index(49.0, 51.0, &c).unwrap(), 649);
        assert_eq!(bin_index(24.5, 25.5, &c).unwrap(), 12 + 25 * 13);
    }

    #[test]
    fn off_surface_is_domain_error() {
        assert!(matches!(bin_index(-0.1, 3.0, &cfg()), Err(Error::Domain(_))));
        assert!(matches!(bin_index(3.0, 51.1, &cfg()), Err(Error::Domain(_))));
    }

    #[test]
    fn bin_center_inverts_index() {
        let c = cfg();
        for b in 0..c.bin_count() {
            let [x, y] = bin_center(b, &c);
            assert_eq!(bin_index(x, y, &c).unwrap(), b);
        }
    }

    #[test]
    fn axial_point_hits_image_center() {
        let c = cfg();
        for cam in 0..4 {
            let p = c.camera_positions[cam];
            let px = project([p[0], p[1], 6.0], cam, &c).unwrap().unwrap();
            assert_eq!((px.u, px.v), (64.0, 64.0));
        }
        let f = SensorConfig {
            projection: ProjectionKind::EquidistantFisheye,
            ..c
        };
        let p = f.camera_positions[0];
        let px = project([p[0], p[1], 3.0], 0, &f).unwrap().unwrap();
        assert_eq!((px.u, px.v), (64.0, 64.0));
    }

    #[test]
    fn similar_triangles() {
        // f = 2, plane at 4, lateral 1 mm: 0.5 mm on the sensor.
        let c = SensorConfig {
            focal_length: 2.0,
            particle_plane_height: 4.0,
            camera_positions: vec![[10.0, 10.0, 0.0]],
            ..cfg()
        };
        let px = project([11.0, 10.0, 4.0], 0, &c).unwrap().unwrap();
        assert!((px.u - (64.0 + 0.5 / c.pixel_pitch())).abs() < 1e-12);
        assert_eq!(px.v, 64.0);
    }

    #[test]
    fn behind_camera_rejected() {
        assert!(matches!(
            project([1.0, 1.0, 0.0], 0, &cfg()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn far_point_is_outside() {
        assert_eq!(project([48.0, 50.0, 6.0], 0, &cfg()).unwrap(), None);
    }

    #[test]
    fn default_layout_covers_surface() {
        let r = coverage_report(&cfg());
        assert_eq!(r.uncovered_fraction, 0.0);
        assert_eq!(r.polygons.len(), 4);
        assert_eq!(covered_bins(&cfg()).len(), 650);
    }

    #[test]
    fn single_centered_camera_covers_a_quarter() {
        // Square 50 mm surface and a 25 mm field of view at the particle plane.
        let c = SensorConfig {
            surface_width_x: 50.0,
            surface_width_y: 50.0,
            bin_nx: 25,
            bin_ny: 25,
            camera_positions: vec![[25.0, 25.0, 0.0]],
            sensor_width: 25.0 / 6.0,
            ..cfg()
        };
        let r = coverage_report(&c);
        assert!((r.uncovered_fraction - 0.75).abs() < 1e-9, "{}", r.uncovered_fraction);
        // Default surface, same field of view.
        let d = SensorConfig {
            camera_positions: vec![[24.5, 25.5, 0.0]],
            sensor_width: 25.0 / 6.0,
            ..cfg()
        };
        let r = coverage_report(&d);
        assert!((r.uncovered_fraction - 0.75).abs() < 0.01, "{}", r.uncovered_fraction);
    }

    #[test]
    fn three_cameras_leave_a_corner() {
        let c = cfg().with_cameras(&[0, 1, 2]).unwrap();
        let r = coverage_report(&c);
        // Quadrant minus the neighbours' 2.75 mm and 2.25 mm overhangs.
        let expected = (24.5 - 2.75) * (25.5 - 2.25) / (49.0 * 51.0);
        assert!((r.uncovered_fraction - expected).abs() < 2e-3, "{}", r.uncovered_fraction);
        assert!((r.uncovered_fraction - 0.25).abs() < 0.06);
        let bins = covered_bins(&c);
        assert!(bins.len() < 650 && bins.len() > 450);
    }

    #[test]
    fn polygon_csv_and_summary() {
        let r = coverage_report(&cfg());
        let mut buf = Vec::new();
        r.write_polygons_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 32);
        assert!(r.summary().starts_with("cameras 4 uncovered_fraction 0.00000e0"));
    }

    #[test]
    fn pinhole_fov_is_rectangle_of_expected_size() {
        let r = coverage_report(&cfg());
        let p = &r.polygons[0];
        let xs: Vec<f64> = p.iter().map(|q| q[0]).collect();
        let w = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
        assert!((w - 30.0).abs() < 1e-9);
    }
}
