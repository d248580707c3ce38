//! Thickness of the layer stack and how far it can shrink.

use crate::{Error, Result};

/// Thickness of the smallest commodity camera module, lens included.
pub const COMMODITY_MODULE_THICKNESS: f64 = 1.158;
/// Closest surface that commodity module can focus on.
pub const COMMODITY_FOCUS_DISTANCE: f64 = 3.0;
/// Half-angle of the widest field of view assumed for an ideal pinhole (60°).
pub const IDEAL_HALF_ANGLE_DEG: f64 = 60.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DimensioningSpec {
    /// Particle layer plus the black protective layer.
    pub silicone_stack_thickness: f64,
    pub lens_to_particle_distance: f64,
    pub camera_module_thickness: f64,
    pub interface_board_thickness: f64,
    pub connector_thickness: f64,
    pub image_sensor_width: f64,
    /// Surface span one camera must image to keep the coverage continuous.
    pub required_fov_width: f64,
}

impl Default for DimensioningSpec {
    fn default() -> Self {
        Self {
            silicone_stack_thickness: 0.842,
            lens_to_particle_distance: 8.608,
            camera_module_thickness: 4.0,
            interface_board_thickness: 1.1,
            connector_thickness: 2.9,
            image_sensor_width: 3.68,
            required_fov_width: 6.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    AsBuilt,
    RelocatedConnector,
    RelocatedBoard,
    IdealMinimal,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::AsBuilt,
        Variant::RelocatedConnector,
        Variant::RelocatedBoard,
        Variant::IdealMinimal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::AsBuilt => "as-built",
            Variant::RelocatedConnector => "relocated-connector",
            Variant::RelocatedBoard => "relocated-board",
            Variant::IdealMinimal => "ideal-minimal",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown thickness variant `{s}`")))
    }
}

impl DimensioningSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("silicone_stack_thickness", self.silicone_stack_thickness),
            ("lens_to_particle_distance", self.lens_to_particle_distance),
            ("camera_module_thickness", self.camera_module_thickness),
            ("interface_board_thickness", self.interface_board_thickness),
            ("connector_thickness", self.connector_thickness),
            ("image_sensor_width", self.image_sensor_width),
            ("required_fov_width", self.required_fov_width),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Lens-to-particle distance an ideal pinhole needs to see the required
    /// span, never below what the commodity module can focus on.
    pub fn ideal_lens_distance(&self) -> f64 {
        let span = self.required_fov_width.max(self.image_sensor_width);
        let pinhole = span / (2.0 * IDEAL_HALF_ANGLE_DEG.to_radians().tan());
        pinhole.max(COMMODITY_FOCUS_DISTANCE)
    }
}

pub fn total_thickness(spec: &DimensioningSpec, variant: Variant) -> Result<f64> {
    spec.validate()?;
    let upper = spec.silicone_stack_thickness + spec.lens_to_particle_distance;
    let t = match variant {
        Variant::AsBuilt => {
            upper
                + spec.camera_module_thickness
                + spec.interface_board_thickness
                + spec.connector_thickness
        }
        Variant::RelocatedConnector => upper + spec.camera_module_thickness + spec.interface_board_thickness,
        Variant::RelocatedBoard => upper + spec.camera_module_thickness,
        // A tailored design never ends up thicker than the board-free stack.
        Variant::IdealMinimal => (spec.silicone_stack_thickness
            + spec.ideal_lens_distance()
            + COMMODITY_MODULE_THICKNESS)
            .min(upper + spec.camera_module_thickness),
    };
    if !(t > 0.0) {
        return Err(Error::Validation(format!(
            "{} thickness is not positive ({t})",
            variant.as_str()
        )));
    }
    Ok(t)
}
