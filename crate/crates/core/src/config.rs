//! Sensor configuration and its flat `key = value` text format.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dataset::IndentationGrid;
use crate::dimensioning::DimensioningSpec;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionKind {
    Pinhole,
    /// Radial image distance proportional to the off-axis angle (`r = f·θ`).
    EquidistantFisheye,
}

impl ProjectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProjectionKind::Pinhole => "pinhole",
            ProjectionKind::EquidistantFisheye => "equidistant-fisheye",
        }
    }
}

impl std::str::FromStr for ProjectionKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pinhole" => Ok(ProjectionKind::Pinhole),
            "equidistant-fisheye" | "fisheye" => Ok(ProjectionKind::EquidistantFisheye),
            other => Err(format!("unknown projection kind `{other}`")),
        }
    }
}

/// Geometry, optics and material of one simulated sensor.
///
/// Lengths are millimetres. The sensor frame has `x`, `y` along the two
/// surface edges with the origin at a corner and `z` pointing from the
/// cameras towards the surface; camera pinholes sit at `z = 0` by default.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorConfig {
    pub surface_width_x: f64,
    pub surface_width_y: f64,
    pub bin_nx: usize,
    pub bin_ny: usize,
    pub camera_positions: Vec<[f64; 3]>,
    /// Height of the particle plane above the pinhole plane.
    pub particle_plane_height: f64,
    /// Depth of the particle plane below the contact surface.
    pub particle_depth: f64,
    pub focal_length: f64,
    /// Physical width of the (square) image sensor; sets the pixel pitch.
    pub sensor_width: f64,
    pub image_size: usize,
    pub projection: ProjectionKind,
    /// Bits per raw pixel; 0 keeps intensities continuous.
    pub pixel_bit_depth: u32,
    /// Particles per mm² of particle plane.
    pub particle_density: f64,
    pub particle_radius_px: f64,
    /// Effective modulus E* in Pa.
    pub effective_modulus: f64,
    pub poisson_ratio: f64,
    /// Depth of the rigid base under the soft layer; `inf` for a half-space.
    pub elastic_layer_thickness: f64,
    /// Scale of the tangential traction model (dimensionless).
    pub traction_coefficient: f64,
    pub tip_radius: f64,
    pub shank_radius: f64,
    pub max_depth: f64,
    /// Midpoint-rule subsamples per bin edge for force integration.
    pub quadrature_subsamples: usize,
    /// Standard deviation of additive pixel noise on loaded frames.
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        let (wx, wy) = (49.0, 51.0);
        Self {
            surface_width_x: wx,
            surface_width_y: wy,
            bin_nx: 25,
            bin_ny: 26,
            camera_positions: quadrant_centers(wx, wy),
            particle_plane_height: 6.0,
            particle_depth: 1.5,
            focal_length: 1.0,
            sensor_width: 5.0,
            image_size: 128,
            projection: ProjectionKind::Pinhole,
            pixel_bit_depth: 0,
            particle_density: 0.3,
            particle_radius_px: 2.0,
            effective_modulus: 5.477e5,
            poisson_ratio: 0.45,
            elastic_layer_thickness: f64::INFINITY,
            traction_coefficient: 0.3,
            tip_radius: 5.0,
            shank_radius: 5.0,
            max_depth: 1.5,
            quadrature_subsamples: 16,
            noise_sigma: 0.0,
            rng_seed: 1,
        }
    }
}

/// Pinholes at the centres of the four surface quadrants, ordered
/// (low x, low y), (high x, low y), (low x, high y), (high x, high y).
pub fn quadrant_centers(wx: f64, wy: f64) -> Vec<[f64; 3]> {
    let (qx, qy) = (wx / 4.0, wy / 4.0);
    vec![
        [qx, qy, 0.0],
        [3.0 * qx, qy, 0.0],
        [qx, 3.0 * qy, 0.0],
        [3.0 * qx, 3.0 * qy, 0.0],
    ]
}

impl SensorConfig {
    /// 64×64 frames for CPU-sized experiments.
    pub fn desk_scale() -> Self {
        Self {
            image_size: 64,
            particle_radius_px: 1.2,
            ..Self::default()
        }
    }

    pub fn camera_count(&self) -> usize {
        self.camera_positions.len()
    }

    pub fn bin_count(&self) -> usize {
        self.bin_nx * self.bin_ny
    }

    pub fn bin_width_x(&self) -> f64 {
        self.surface_width_x / self.bin_nx as f64
    }

    pub fn bin_width_y(&self) -> f64 {
        self.surface_width_y / self.bin_ny as f64
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.sensor_width / self.image_size as f64
    }

    /// Young's modulus in N/mm² recovered from E* = E / (1 − ν²).
    pub fn youngs_modulus_mpa(&self) -> f64 {
        self.effective_modulus * 1e-6 * (1.0 - self.poisson_ratio * self.poisson_ratio)
    }

    /// Same sensor with only the listed cameras, in the given order.
    pub fn with_cameras(&self, cameras: &[usize]) -> Result<Self> {
        let mut positions = Vec::with_capacity(cameras.len());
        for &c in cameras {
            positions.push(*self.camera_positions.get(c).ok_or_else(|| {
                Error::Validation(format!("camera {c} does not exist"))
            })?);
        }
        let cfg = Self {
            camera_positions: positions,
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("surface_width_x", self.surface_width_x),
            ("surface_width_y", self.surface_width_y),
            ("particle_plane_height", self.particle_plane_height),
            ("particle_depth", self.particle_depth),
            ("focal_length", self.focal_length),
            ("sensor_width", self.sensor_width),
            ("particle_density", self.particle_density),
            ("particle_radius_px", self.particle_radius_px),
            ("effective_modulus", self.effective_modulus),
            ("tip_radius", self.tip_radius),
            ("shank_radius", self.shank_radius),
            ("max_depth", self.max_depth),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.bin_nx == 0 || self.bin_ny == 0 {
            return Err(Error::Validation("bin grid must be non-empty".into()));
        }
        if self.image_size < 2 {
            return Err(Error::Validation("image_size must be at least 2".into()));
        }
        if self.pixel_bit_depth > 16 {
            return Err(Error::Validation("pixel_bit_depth must be at most 16".into()));
        }
        if !(self.elastic_layer_thickness > self.particle_depth) {
            return Err(Error::Validation(format!(
                "elastic_layer_thickness ({}) must exceed particle_depth ({})",
                self.elastic_layer_thickness, self.particle_depth
            )));
        }
        if self.quadrature_subsamples == 0 {
            return Err(Error::Validation("quadrature_subsamples must be at least 1".into()));
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return Err(Error::Validation(format!(
                "poisson_ratio must lie in (0, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        if !(self.traction_coefficient >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::Validation(
                "traction_coefficient and noise_sigma must be non-negative".into(),
            ));
        }
        if self.camera_positions.is_empty() {
            return Err(Error::Validation("at least one camera is required".into()));
        }
        for (i, c) in self.camera_positions.iter().enumerate() {
            if c[2] >= self.particle_plane_height {
                return Err(Error::Validation(format!(
                    "camera {i} is not below the particle plane"
                )));
            }
        }
        Ok(())
    }
}

/// Everything a config file can hold.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct StudyConfig {
    pub sensor: SensorConfig,
    pub dimensioning: DimensioningSpec,
    pub grid: IndentationGrid,
}

impl StudyConfig {
    pub fn desk_scale() -> Self {
        Self {
            sensor: SensorConfig::desk_scale(),
            ..Self::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines on top of the desk-scale defaults.
    /// Blank lines and `#` comments are ignored; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::desk_scale();
        let mut camera_count: Option<(usize, usize)> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigParse {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |message: String| Error::ConfigParse { line, message };
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|e| bad(format!("`{key}`: cannot parse `{v}` as a number: {e}")))
            };
            let int = |v: &str| -> Result<usize> {
                v.parse::<usize>()
                    .map_err(|e| bad(format!("`{key}`: cannot parse `{v}` as an integer: {e}")))
            };
            let s = &mut cfg.sensor;
            let d = &mut cfg.dimensioning;
            match key {
                "surface_width_x" => s.surface_width_x = num(value)?,
                "surface_width_y" => s.surface_width_y = num(value)?,
                "bin_nx" => s.bin_nx = int(value)?,
                "bin_ny" => s.bin_ny = int(value)?,
                "camera_count" => camera_count = Some((int(value)?, line)),
                "camera_positions" => {
                    let mut positions = Vec::new();
                    for triple in value.split(';').map(str::trim).filter(|t| !t.is_empty()) {
                        let parts: Vec<&str> = triple.split(',').map(str::trim).collect();
                        if parts.len() != 3 {
                            return Err(bad(format!("camera position `{triple}` needs x,y,z")));
                        }
                        positions.push([num(parts[0])?, num(parts[1])?, num(parts[2])?]);
                    }
                    s.camera_positions = positions;
                }
                "particle_plane_height" => s.particle_plane_height = num(value)?,
                "particle_depth" => s.particle_depth = num(value)?,
                "focal_length" => s.focal_length = num(value)?,
                "sensor_width" => s.sensor_width = num(value)?,
                "image_size" => s.image_size = int(value)?,
                "projection_kind" => s.projection = value.parse().map_err(bad)?,
                "pixel_bit_depth" => {
                    s.pixel_bit_depth = value
                        .parse()
                        .map_err(|e| bad(format!("`pixel_bit_depth`: {e}")))?
                }
                "particle_density" => s.particle_density = num(value)?,
                "particle_radius_px" => s.particle_radius_px = num(value)?,
                "effective_modulus" => s.effective_modulus = num(value)?,
                "poisson_ratio" => s.poisson_ratio = num(value)?,
                "elastic_layer_thickness" => s.elastic_layer_thickness = num(value)?,
                "traction_coefficient" => s.traction_coefficient = num(value)?,
                "tip_radius" => s.tip_radius = num(value)?,
                "shank_radius" => s.shank_radius = num(value)?,
                "max_depth" => s.max_depth = num(value)?,
                "quadrature_subsamples" => s.quadrature_subsamples = int(value)?,
                "noise_sigma" => s.noise_sigma = num(value)?,
                "rng_seed" => {
                    s.rng_seed = value
                        .parse()
                        .map_err(|e| bad(format!("`rng_seed`: {e}")))?
                }
                "silicone_stack_thickness" => d.silicone_stack_thickness = num(value)?,
                "lens_to_particle_distance" => d.lens_to_particle_distance = num(value)?,
                "camera_module_thickness" => d.camera_module_thickness = num(value)?,
                "interface_board_thickness" => d.interface_board_thickness = num(value)?,
                "connector_thickness" => d.connector_thickness = num(value)?,
                "image_sensor_width" => d.image_sensor_width = num(value)?,
                "required_fov_width" => d.required_fov_width = num(value)?,
                "grid_nx" => cfg.grid.nx = int(value)?,
                "grid_ny" => cfg.grid.ny = int(value)?,
                "depths" => {
                    cfg.grid.depths = value
                        .split(',')
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(num)
                        .collect::<Result<Vec<_>>>()?
                }
                other => {
                    return Err(Error::UnknownKey {
                        line,
                        key: other.to_string(),
                    })
                }
            }
        }
        if let Some((n, line)) = camera_count {
            if n != cfg.sensor.camera_count() {
                return Err(Error::ConfigParse {
                    line,
                    message: format!(
                        "camera_count = {n} but {} camera positions are given",
                        cfg.sensor.camera_count()
                    ),
                });
            }
        }
        cfg.sensor.validate()?;
        cfg.dimensioning.validate()?;
        cfg.grid.validate(&cfg.sensor)?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn to_text(&self) -> String {
        let s = &self.sensor;
        let d = &self.dimensioning;
        let mut out = String::new();
        let cams = s
            .camera_positions
            .iter()
            .map(|c| format!("{},{},{}", c[0], c[1], c[2]))
            .collect::<Vec<_>>()
            .join("; ");
        let depths = self
            .grid
            .depths
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let lines: Vec<(&str, String)> = vec![
            ("surface_width_x", s.surface_width_x.to_string()),
            ("surface_width_y", s.surface_width_y.to_string()),
            ("bin_nx", s.bin_nx.to_string()),
            ("bin_ny", s.bin_ny.to_string()),
            ("camera_count", s.camera_count().to_string()),
            ("camera_positions", cams),
            ("particle_plane_height", s.particle_plane_height.to_string()),
            ("particle_depth", s.particle_depth.to_string()),
            ("focal_length", s.focal_length.to_string()),
            ("sensor_width", s.sensor_width.to_string()),
            ("image_size", s.image_size.to_string()),
            ("projection_kind", s.projection.as_str().to_string()),
            ("pixel_bit_depth", s.pixel_bit_depth.to_string()),
            ("particle_density", s.particle_density.to_string()),
            ("particle_radius_px", s.particle_radius_px.to_string()),
            ("effective_modulus", s.effective_modulus.to_string()),
            ("poisson_ratio", s.poisson_ratio.to_string()),
            ("elastic_layer_thickness", s.elastic_layer_thickness.to_string()),
            ("traction_coefficient", s.traction_coefficient.to_string()),
            ("tip_radius", s.tip_radius.to_string()),
            ("shank_radius", s.shank_radius.to_string()),
            ("max_depth", s.max_depth.to_string()),
            ("quadrature_subsamples", s.quadrature_subsamples.to_string()),
            ("noise_sigma", s.noise_sigma.to_string()),
            ("rng_seed", s.rng_seed.to_string()),
            ("silicone_stack_thickness", d.silicone_stack_thickness.to_string()),
            ("lens_to_particle_distance", d.lens_to_particle_distance.to_string()),
            ("camera_module_thickness", d.camera_module_thickness.to_string()),
            ("interface_board_thickness", d.interface_board_thickness.to_string()),
            ("connector_thickness", d.connector_thickness.to_string()),
            ("image_sensor_width", d.image_sensor_width.to_string()),
            ("required_fov_width", d.required_fov_width.to_string()),
            ("grid_nx", self.grid.nx.to_string()),
            ("grid_ny", self.grid.ny.to_string()),
            ("depths", depths),
        ];
        for (k, v) in lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = StudyConfig::desk_scale();
        cfg.sensor.projection = ProjectionKind::EquidistantFisheye;
        cfg.sensor.camera_positions.pop();
        cfg.grid.depths = vec![0.25, 1.0];
        let back = StudyConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = StudyConfig::parse("bin_nx = 25\nflux_capacitor = 1\n").unwrap_err();
        assert!(matches!(err, Error::UnknownKey { line: 2, .. }));
    }

    #[test]
    fn malformed_lines_report_position() {
        assert!(matches!(
            StudyConfig::parse("bin_nx 25"),
            Err(Error::ConfigParse { line: 1, .. })
        ));
        assert!(matches!(
            StudyConfig::parse("\n\nimage_size = big"),
            Err(Error::ConfigParse { line: 3, .. })
        ));
    }

    #[test]
    fn camera_count_must_match_positions() {
        let err = StudyConfig::parse("camera_count = 3").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { .. }));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = StudyConfig::parse("# sensor\n\nimage_size = 32 # small\n").unwrap();
        assert_eq!(cfg.sensor.image_size, 32);
    }

    #[test]
    fn default_bins_are_650() {
        let cfg = SensorConfig::default();
        assert_eq!(cfg.bin_count(), 650);
        assert_eq!(cfg.camera_count(), 4);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(StudyConfig::parse("poisson_ratio = 0.5").is_err());
        assert!(StudyConfig::parse("camera_positions = 1,1,9").is_err());
    }
}
