use proptest::prelude::*;
use tactile_core::config::{ProjectionKind, SensorConfig};
use tactile_core::dimensioning::{total_thickness, DimensioningSpec, Variant};
use tactile_core::geometry::{bin_cell, bin_center, bin_index, project, project_unbounded, unproject};

fn cfg() -> SensorConfig {
    SensorConfig::default()
}

proptest! {
    #[test]
    fn every_surface_point_lies_in_its_bin(fx in 0.0f64..=1.0, fy in 0.0f64..=1.0) {
        let c = cfg();
        let (x, y) = (fx * c.surface_width_x, fy * c.surface_width_y);
        let id = bin_index(x, y, &c).unwrap();
        prop_assert!(id < c.bin_count());
        let (i, j) = bin_cell(id, &c);
        let (bw, bh) = (c.bin_width_x(), c.bin_width_y());
        prop_assert!(i as f64 * bw <= x + 1e-12 && x <= (i + 1) as f64 * bw + 1e-12);
        prop_assert!(j as f64 * bh <= y + 1e-12 && y <= (j + 1) as f64 * bh + 1e-12);
        let [cx, cy] = bin_center(id, &c);
        prop_assert!((cx - x).abs() <= bw / 2.0 + 1e-12 && (cy - y).abs() <= bh / 2.0 + 1e-12);
    }

    #[test]
    fn off_surface_points_are_rejected(x in -50.0f64..-1e-9, y in 0.0f64..51.0) {
        prop_assert!(bin_index(x, y, &cfg()).is_err());
        prop_assert!(bin_index(y.min(49.0), 51.0 - x, &cfg()).is_err());
    }

    #[test]
    fn projection_inverts_on_the_particle_plane(
        cam in 0usize..4,
        fu in 0.0f64..1.0,
        fv in 0.0f64..1.0,
        fisheye in any::<bool>(),
    ) {
        let mut c = cfg();
        if fisheye {
            c.projection = ProjectionKind::EquidistantFisheye;
        }
        let size = c.image_size as f64;
        let px = tactile_core::geometry::Pixel { u: fu * size, v: fv * size };
        let z = c.particle_plane_height;
        let p = unproject(px, cam, z, &c);
        // the default fisheye image corners look past the horizon
        prop_assume!(!fisheye || p.is_ok());
        let p = p.unwrap();
        let back = project(p, cam, &c).unwrap().expect("inside the image");
        let q = unproject(back, cam, z, &c).unwrap();
        for k in 0..3 {
            prop_assert!((p[k] - q[k]).abs() < 1e-6, "{p:?} vs {q:?}");
        }
    }

    #[test]
    fn fisheye_matches_pinhole_near_the_axis(theta in 1e-4f64..0.05, phi in 0.0f64..std::f64::consts::TAU) {
        let pin = cfg();
        let fish = SensorConfig { projection: ProjectionKind::EquidistantFisheye, ..cfg() };
        let cam = pin.camera_positions[0];
        let dz = pin.particle_plane_height - cam[2];
        let r = dz * theta.tan();
        let p = [cam[0] + r * phi.cos(), cam[1] + r * phi.sin(), pin.particle_plane_height];
        let half = pin.image_size as f64 / 2.0;
        let a = project_unbounded(p, 0, &pin).unwrap();
        let b = project_unbounded(p, 0, &fish).unwrap();
        let ra = (a.u - half).hypot(a.v - half);
        let rb = (b.u - half).hypot(b.v - half);
        prop_assert!((ra - rb).abs() <= 1e-3 * ra, "{ra} vs {rb}");
    }

    #[test]
    fn thickness_variants_are_ordered(
        silicone in 0.1f64..3.0,
        lens in 0.5f64..15.0,
        module in 0.5f64..6.0,
        board in 0.1f64..3.0,
        connector in 0.1f64..5.0,
        sensor in 0.5f64..6.0,
        fov in 1.0f64..40.0,
    ) {
        let spec = DimensioningSpec {
            silicone_stack_thickness: silicone,
            lens_to_particle_distance: lens,
            camera_module_thickness: module,
            interface_board_thickness: board,
            connector_thickness: connector,
            image_sensor_width: sensor,
            required_fov_width: fov,
        };
        let t: Vec<f64> = [Variant::IdealMinimal, Variant::RelocatedBoard, Variant::RelocatedConnector, Variant::AsBuilt]
            .iter()
            .map(|&v| total_thickness(&spec, v).unwrap())
            .collect();
        prop_assert!(t.windows(2).all(|w| w[0] <= w[1] + 1e-12), "{t:?}");
        prop_assert!(t[0] > 0.0);
    }
}

#[test]
fn bins_have_equal_area() {
    let c = cfg();
    let area = c.surface_width_x * c.surface_width_y / c.bin_count() as f64;
    for id in 0..c.bin_count() {
        let (i, j) = bin_cell(id, &c);
        let w = (i + 1) as f64 * c.bin_width_x() - i as f64 * c.bin_width_x();
        let h = (j + 1) as f64 * c.bin_width_y() - j as f64 * c.bin_width_y();
        assert!((w * h - area).abs() <= 1e-9 * area, "bin {id}");
    }
}

#[test]
fn paper_stack_totals() {
    let spec = DimensioningSpec::default();
    let want = [17.45, 14.55, 13.45, 5.0];
    for (v, w) in Variant::ALL.iter().zip(want) {
        let t = total_thickness(&spec, *v).unwrap();
        assert!((t - w).abs() < 0.01, "{}: {t}", v.as_str());
    }
}
