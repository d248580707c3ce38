//! Particle images seen by each camera and their difference frames.

use std::path::Path;

use std::io::{BufWriter, Write};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::SensorConfig;
use crate::contact::{bin_forces, ForceDistribution, Indentation};
use crate::elastic::particle_displacement;
use crate::geometry::project_unbounded;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleField {
    /// Rest positions in the sensor frame (mm).
    pub positions: Vec<[f64; 3]>,
    pub radius_px: f64,
    pub seed: u64,
}

impl ParticleField {
    /// Uniformly scattered particles over the surface extent on the particle plane.
    pub fn generate(cfg: &SensorConfig, seed: u64) -> Self {
        let area = cfg.surface_width_x * cfg.surface_width_y;
        let count = (cfg.particle_density * area).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..count)
            .map(|_| {
                [
                    rng.random::<f64>() * cfg.surface_width_x,
                    rng.random::<f64>() * cfg.surface_width_y,
                    cfg.particle_plane_height,
                ]
            })
            .collect();
        Self {
            positions,
            radius_px: cfg.particle_radius_px,
            seed,
        }
    }

    pub fn empty(cfg: &SensorConfig) -> Self {
        Self {
            positions: Vec::new(),
            radius_px: cfg.particle_radius_px,
            seed: 0,
        }
    }

    /// Positions after applying the elastic field of `load`.
    pub fn displaced(&self, load: &ForceDistribution, cfg: &SensorConfig) -> Vec<[f64; 3]> {
        self.positions
            .iter()
            .map(|p| {
                let d = particle_displacement(load, p[0], p[1], cfg.particle_depth, cfg).u;
                [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
            })
            .collect()
    }
}

/// Square single-channel image, row-major with `u` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn at(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.size + u]
    }

    /// Rounds raw intensities to `bits`-bit levels; 0 leaves them untouched.
    pub fn quantize(&mut self, bits: u32) {
        if bits == 0 {
            return;
        }
        let levels = ((1u64 << bits) - 1) as f32;
        for v in &mut self.data {
            *v = (*v * levels).round() / levels;
        }
    }

    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|v| v.abs() as f64).sum()
    }

    /// Writes the frame as a binary PGM, see [`write_pgm`].
    pub fn write_pgm(&self, path: impl AsRef<Path>, bits: u8, offset: bool) -> Result<()> {
        write_pgm(path, self.size, self.size, &self.data, bits, offset)
    }
}

/// Writes a row-major `width`×`height` image as an 8- or 16-bit binary PGM.
/// Signed data (`offset = true`) is stored as `0.5 + v/2`; values are clamped
/// to [0, 1] either way.
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, data: &[f32], bits: u8, offset: bool) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::Validation(format!(
            "{} values for a {width}x{height} image",
            data.len()
        )));
    }
    let enc = |v: f32| -> f64 {
        let v = if offset { 0.5 + v as f64 / 2.0 } else { v as f64 };
        v.clamp(0.0, 1.0)
    };
    let (max, body): (u32, Vec<u8>) = match bits {
        8 => (255, data.iter().map(|&v| (enc(v) * 255.0).round() as u8).collect()),
        // 16-bit PGM samples are big-endian.
        16 => (
            65535,
            data.iter()
                .flat_map(|&v| ((enc(v) * 65535.0).round() as u16).to_be_bytes())
                .collect(),
        ),
        other => return Err(Error::Validation(format!("PGM depth must be 8 or 16, got {other}"))),
    };
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P5\n{width} {height}\n{max}\n")?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// Draws particles at the given positions into one camera's frame.
pub fn render_positions(positions: &[[f64; 3]], radius: f64, cfg: &SensorConfig, cam: usize) -> Result<Frame> {
    let size = cfg.image_size;
    let mut acc = vec![0.0f64; size * size];
    let reach = radius + 0.5;
    for &p in positions {
        let c = project_unbounded(p, cam, cfg)?;
        if c.u + reach < 0.0 || c.v + reach < 0.0 || c.u - reach > size as f64 || c.v - reach > size as f64 {
            continue;
        }
        let u0 = (c.u - reach).floor().max(0.0) as usize;
        let v0 = (c.v - reach).floor().max(0.0) as usize;
        let u1 = ((c.u + reach).ceil() as usize).min(size);
        let v1 = ((c.v + reach).ceil() as usize).min(size);
        for v in v0..v1 {
            let dv = v as f64 + 0.5 - c.v;
            for u in u0..u1 {
                let du = u as f64 + 0.5 - c.u;
                let cover = (reach - du.hypot(dv)).clamp(0.0, 1.0);
                acc[v * size + u] += cover;
            }
        }
    }
    Ok(Frame {
        size,
        data: acc.into_iter().map(|v| v.min(1.0) as f32).collect(),
    })
}

/// Raw, quantized frame of `cam` with the field at rest or pushed by `load`.
pub fn render(
    field: &ParticleField,
    load: Option<&ForceDistribution>,
    cfg: &SensorConfig,
    cam: usize,
) -> Result<Frame> {
    let mut frame = match load {
        None => render_positions(&field.positions, field.radius_px, cfg, cam)?,
        Some(l) => render_positions(&field.displaced(l, cfg), field.radius_px, cfg, cam)?,
    };
    frame.quantize(cfg.pixel_bit_depth);
    Ok(frame)
}

pub fn difference_image(current: &Frame, rest: &Frame) -> Result<Frame> {
    if current.size != rest.size || current.data.len() != rest.data.len() {
        return Err(Error::Validation(format!(
            "frame sizes differ: {} vs {}",
            current.size, rest.size
        )));
    }
    Ok(Frame {
        size: current.size,
        data: current.data.iter().zip(&rest.data).map(|(c, r)| c - r).collect(),
    })
}

/// Difference frames of every camera for one contact state.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    pub frames: Vec<Frame>,
    pub sample_id: u64,
}

impl FrameSet {
    pub fn abs_sums(&self) -> Vec<f64> {
        self.frames.iter().map(Frame::abs_sum).collect()
    }
}

/// A particle field with its rest frames rendered once.
#[derive(Clone, Debug)]
pub struct OpticalSim {
    pub cfg: SensorConfig,
    pub field: ParticleField,
    rest: Vec<Frame>,
}

impl OpticalSim {
    pub fn new(cfg: SensorConfig, field: ParticleField) -> Result<Self> {
        cfg.validate()?;
        let rest = (0..cfg.camera_count())
            .map(|c| render(&field, None, &cfg, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg, field, rest })
    }

    pub fn rest_frames(&self) -> &[Frame] {
        &self.rest
    }

    /// Difference frames under `load`; `sample_id` seeds the pixel noise.
    pub fn capture(&self, load: Option<&ForceDistribution>, sample_id: u64) -> Result<FrameSet> {
        let moved = load.map(|l| self.field.displaced(l, &self.cfg));
        let positions = moved.as_deref().unwrap_or(&self.field.positions);
        let mut frames = Vec::with_capacity(self.rest.len());
        for (cam, rest) in self.rest.iter().enumerate() {
            let mut current = render_positions(positions, self.field.radius_px, &self.cfg, cam)?;
            if self.cfg.noise_sigma > 0.0 {
                let seed = self.cfg.rng_seed ^ sample_id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ cam as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0, self.cfg.noise_sigma)
                    .map_err(|e| Error::Validation(e.to_string()))?;
                for v in &mut current.data {
                    *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
                }
            }
            current.quantize(self.cfg.pixel_bit_depth);
            frames.push(difference_image(&current, rest)?);
        }
        Ok(FrameSet { frames, sample_id })
    }

    pub fn capture_indentation(&self, ind: Option<&Indentation>, sample_id: u64) -> Result<FrameSet> {
        match ind {
            None => self.capture(None, sample_id),
            Some(i) => {
                let load = bin_forces(i, &self.cfg)?;
                self.capture(Some(&load), sample_id)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SensorConfig {
        SensorConfig::desk_scale()
    }

    #[test]
    fn empty_field_is_black() {
        let c = cfg();
        let f = render(&ParticleField::empty(&c), None, &c, 0).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn axial_particle_draws_centered_disc() {
        let c = cfg();
        let cam = c.camera_positions[0];
        let field = ParticleField {
            positions: vec![[cam[0], cam[1], c.particle_plane_height]],
            radius_px: 2.0,
            seed: 0,
        };
        let f = render(&field, None, &c, 0).unwrap();
        // Pixels 31 and 32 straddle the image centre at 32.0.
        assert_eq!(f.at(31, 31), 1.0);
        assert_eq!(f.at(32, 32), 1.0);
        assert_eq!(f.at(10, 10), 0.0);
        let (mut su, mut sv, mut s) = (0.0, 0.0, 0.0);
        for v in 0..64 {
            for u in 0..64 {
                let w = f.at(u, v) as f64;
                su += w * (u as f64 + 0.5);
                sv += w * (v as f64 + 0.5);
                s += w;
            }
        }
        assert!((su / s - 32.0).abs() < 1e-9 && (sv / s - 32.0).abs() < 1e-9);
    }

    #[test]
    fn overlapping_discs_saturate() {
        let c = cfg();
        let p = [12.25, 12.75, c.particle_plane_height];
        let field = ParticleField {
            positions: vec![p, p],
            radius_px: 2.0,
            seed: 0,
        };
        let f = render(&field, None, &c, 0).unwrap();
        assert!(f.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn difference_is_antisymmetric() {
        let c = cfg();
        let field = ParticleField::generate(&c, 3);
        let a = render(&field, None, &c, 1).unwrap();
        let moved = ParticleField {
            positions: field.positions.iter().map(|p| [p[0] + 0.3, p[1], p[2]]).collect(),
            ..field.clone()
        };
        let b = render(&moved, None, &c, 1).unwrap();
        let ab = difference_image(&a, &b).unwrap();
        let ba = difference_image(&b, &a).unwrap();
        assert!(ab.data.iter().zip(&ba.data).all(|(x, y)| x + y == 0.0));
        assert!(difference_image(&a, &a).unwrap().data.iter().all(|&v| v == 0.0));
        assert!(difference_image(&a, &Frame::zeros(32)).is_err());
    }

    #[test]
    fn rest_capture_is_exactly_zero() {
        let c = cfg();
        let sim = OpticalSim::new(c.clone(), ParticleField::generate(&c, 5)).unwrap();
        let fs = sim.capture(None, 0).unwrap();
        assert_eq!(fs.frames.len(), 4);
        assert!(fs.frames.iter().all(|f| f.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn field_is_reproducible() {
        let c = cfg();
        assert_eq!(ParticleField::generate(&c, 9), ParticleField::generate(&c, 9));
        assert_ne!(ParticleField::generate(&c, 9), ParticleField::generate(&c, 10));
    }

    #[test]
    fn pgm_export() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = Frame::zeros(4);
        f.data[0] = -1.0;
        f.data[1] = 1.0;
        let p8 = dir.path().join("a.pgm");
        f.write_pgm(&p8, 8, true).unwrap();
        let bytes = std::fs::read(&p8).unwrap();
        assert!(bytes.starts_with(b"P5"));
        let pixels = &bytes[bytes.len() - 16..];
        assert_eq!(&pixels[..3], &[0, 255, 128]);
        let p16 = dir.path().join("b.pgm");
        f.write_pgm(&p16, 16, true).unwrap();
        let wide = std::fs::read(&p16).unwrap();
        assert!(wide.starts_with(b"P5\n4 4\n65535\n"));
        assert_eq!(&wide[wide.len() - 32..wide.len() - 26], &[0, 0, 255, 255, 128, 0]);
        assert!(f.write_pgm(dir.path().join("c.pgm"), 12, false).is_err());
    }
}
