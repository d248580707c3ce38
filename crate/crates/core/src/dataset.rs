//! Indentation grids, labelled frame datasets and the TDS1 file format.
//!
//! TDS1 layout, little-endian:
//! `"TDS1"`, u32 version, u32 cameras, u32 image size, u32 bin nx, u32 bin ny,
//! u64 sample count, u64 seed, u64 config hash, then per sample a u8 tag
//! (split in the low bits, bit 7 set for truncated contacts), 3 × f32
//! indentation (x, y, depth), cameras × size² f32 pixels and 3 × bins f32 labels.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::config::SensorConfig;
use crate::contact::{bin_forces, ForceDistribution, Indentation};
use crate::optics::OpticalSim;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TDS1";
pub const VERSION: u32 = 1;
const TRUNCATED_BIT: u8 = 0x80;

/// Evenly spaced indentation centres times a list of depths.
#[derive(Clone, Debug, PartialEq)]
pub struct IndentationGrid {
    pub nx: usize,
    pub ny: usize,
    pub depths: Vec<f64>,
}

impl Default for IndentationGrid {
    fn default() -> Self {
        Self {
            nx: 9,
            ny: 9,
            depths: vec![0.3, 0.6, 0.9, 1.2, 1.5],
        }
    }
}

impl IndentationGrid {
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell-centred positions, x fastest.
    pub fn positions(&self, cfg: &SensorConfig) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push([
                    cfg.surface_width_x * (i as f64 + 0.5) / self.nx as f64,
                    cfg.surface_width_y * (j as f64 + 0.5) / self.ny as f64,
                ]);
            }
        }
        out
    }

    /// Indentations in sample-id order: position-major, depth fastest.
    pub fn indentations(&self, cfg: &SensorConfig) -> Result<Vec<Indentation>> {
        let mut out = Vec::with_capacity(self.len());
        for c in self.positions(cfg) {
            for &d in &self.depths {
                out.push(Indentation::new(c, d, cfg)?);
            }
        }
        Ok(out)
    }

    pub fn validate(&self, cfg: &SensorConfig) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.depths.is_empty() {
            return Err(Error::Validation("indentation grid is empty".into()));
        }
        for &d in &self.depths {
            if !(d > 0.0 && d <= cfg.max_depth) {
                return Err(Error::Validation(format!(
                    "depth {d} outside (0, {}]",
                    cfg.max_depth
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train = 0,
    Val = 1,
    Test = 2,
}

impl Split {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag & !TRUNCATED_BIT {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            t => Err(Error::Format(format!("unknown split tag {t}"))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 70/10/20 assignment that depends on nothing but `(seed, id)`.
pub fn split_for(seed: u64, id: u64) -> Split {
    let u = (splitmix64(seed ^ splitmix64(id)) >> 11) as f64 / (1u64 << 53) as f64;
    if u < 0.7 {
        Split::Train
    } else if u < 0.8 {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub split: Split,
    /// Indentation centre x, y and depth.
    pub indentation: [f32; 3],
    pub truncated: bool,
    /// One difference frame per camera, each `size²` values.
    pub frames: Vec<Vec<f32>>,
    /// Interleaved (Fx, Fy, Fz) for each of the dataset's label bins.
    pub label: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub camera_count: usize,
    pub image_size: usize,
    pub bin_nx: usize,
    pub bin_ny: usize,
    pub seed: u64,
    pub config_hash: u64,
    /// Bins covered by the labels, ascending; all bins unless restricted.
    pub label_bins: Vec<u32>,
    pub samples: Vec<Sample>,
}

/// Renders and labels every indentation of `grid`; samples are independent
/// and generated in parallel.
pub fn generate_dataset(
    sim: &OpticalSim,
    grid: &IndentationGrid,
    seed: u64,
    config_hash: u64,
) -> Result<Dataset> {
    let cfg = &sim.cfg;
    grid.validate(cfg)?;
    let inds = grid.indentations(cfg)?;
    let samples = inds
        .par_iter()
        .enumerate()
        .map(|(id, ind)| {
            let load = bin_forces(ind, cfg)?;
            let frames = sim.capture(Some(&load), id as u64)?;
            Ok(Sample {
                id: id as u64,
                split: split_for(seed, id as u64),
                indentation: [ind.center[0] as f32, ind.center[1] as f32, ind.depth as f32],
                truncated: load.truncated,
                frames: frames.frames.into_iter().map(|f| f.data).collect(),
                label: load.to_flat(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        camera_count: cfg.camera_count(),
        image_size: cfg.image_size,
        bin_nx: cfg.bin_nx,
        bin_ny: cfg.bin_ny,
        seed,
        config_hash,
        label_bins: (0..cfg.bin_count() as u32).collect(),
        samples,
    })
}

impl Dataset {
    pub fn bin_count(&self) -> usize {
        self.bin_nx * self.bin_ny
    }

    pub fn is_restricted(&self) -> bool {
        self.label_bins.len() != self.bin_count()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Reassigns splits from a new seed.
    pub fn resplit(&mut self, seed: u64) {
        self.seed = seed;
        for s in &mut self.samples {
            s.split = split_for(seed, s.id);
        }
    }

    /// Keeps only the listed cameras, in the given order.
    pub fn with_cameras(&self, cameras: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = cameras.iter().find(|&&c| c >= self.camera_count) {
            return Err(Error::Validation(format!("camera {bad} does not exist")));
        }
        if cameras.is_empty() {
            return Err(Error::Validation("at least one camera is required".into()));
        }
        let mut out = self.clone();
        out.camera_count = cameras.len();
        for s in &mut out.samples {
            s.frames = cameras.iter().map(|&c| s.frames[c].clone()).collect();
        }
        Ok(out)
    }

    /// Keeps only the labels of `bins` (a subset of the current label bins).
    pub fn with_label_bins(&self, bins: &[u32]) -> Result<Dataset> {
        let pos: Vec<usize> = bins
            .iter()
            .map(|b| {
                self.label_bins
                    .binary_search(b)
                    .map_err(|_| Error::Validation(format!("bin {b} is not labelled")))
            })
            .collect::<Result<_>>()?;
        let mut out = self.clone();
        out.label_bins = bins.to_vec();
        for s in &mut out.samples {
            s.label = pos
                .iter()
                .flat_map(|&p| s.label[3 * p..3 * p + 3].iter().copied())
                .collect();
        }
        Ok(out)
    }

    /// A sample's label spread over the full bin grid (unlabelled bins zero).
    pub fn label_distribution(&self, index: usize) -> ForceDistribution {
        scatter(&self.samples[index].label, &self.label_bins, self.bin_nx, self.bin_ny)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        if self.is_restricted() {
            return Err(Error::Validation(
                "datasets with restricted labels are not stored".into(),
            ));
        }
        w.write_all(MAGIC)?;
        for v in [
            VERSION,
            self.camera_count as u32,
            self.image_size as u32,
            self.bin_nx as u32,
            self.bin_ny as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [self.samples.len() as u64, self.seed, self.config_hash] {
            w.write_all(&v.to_le_bytes())?;
        }
        let pixels = self.image_size * self.image_size;
        for s in &self.samples {
            let tag = s.split as u8 | if s.truncated { TRUNCATED_BIT } else { 0 };
            w.write_all(&[tag])?;
            let mut buf = Vec::with_capacity(4 * (3 + self.camera_count * pixels + s.label.len()));
            for v in s
                .indentation
                .iter()
                .chain(s.frames.iter().flatten())
                .chain(&s.label)
            {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Dataset> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a TDS1 dataset".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let camera_count = read_u32(r)? as usize;
        let image_size = read_u32(r)? as usize;
        let bin_nx = read_u32(r)? as usize;
        let bin_ny = read_u32(r)? as usize;
        let count = read_u64(r)?;
        let seed = read_u64(r)?;
        let config_hash = read_u64(r)?;
        let pixels = image_size * image_size;
        let bins = bin_nx * bin_ny;
        let mut samples = Vec::new();
        for id in 0..count {
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag).map_err(truncated)?;
            let indentation = read_f32s(r, 3)?;
            let frames = (0..camera_count)
                .map(|_| read_f32s(r, pixels))
                .collect::<Result<Vec<_>>>()?;
            let label = read_f32s(r, 3 * bins)?;
            samples.push(Sample {
                id,
                split: Split::from_tag(tag[0])?,
                indentation: [indentation[0], indentation[1], indentation[2]],
                truncated: tag[0] & TRUNCATED_BIT != 0,
                frames,
                label,
            });
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Format("trailing bytes after the last sample".into()));
        }
        Ok(Dataset {
            camera_count,
            image_size,
            bin_nx,
            bin_ny,
            seed,
            config_hash,
            label_bins: (0..bins as u32).collect(),
            samples,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Dataset::read(&mut r)
    }
}

/// Spreads labels of `bins` over an `nx × ny` grid.
pub fn scatter(label: &[f32], bins: &[u32], nx: usize, ny: usize) -> ForceDistribution {
    let mut forces = vec![[0.0; 3]; nx * ny];
    for (k, &b) in bins.iter().enumerate() {
        forces[b as usize] = [
            label[3 * k] as f64,
            label[3 * k + 1] as f64,
            label[3 * k + 2] as f64,
        ];
    }
    ForceDistribution {
        nx,
        ny,
        forces,
        truncated: false,
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("dataset file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; 4 * n];
    r.read_exact(&mut bytes).map_err(truncated)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
