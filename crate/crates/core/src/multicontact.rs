//! Detection of two simultaneous contacts from a single-contact model.

use tactile_nn::NetworkModel;

use crate::contact::{bin_forces, ForceDistribution, Indentation};
use crate::dataset::scatter;
use crate::geometry::{bin_cell, nearest_camera, sees};
use crate::optics::OpticalSim;
use crate::{Error, Result};

/// Detection radius in bins.
pub const MATCH_RADIUS_BINS: f64 = 2.0;
/// Maxima count only above this share of the weaker true peak.
pub const PEAK_SHARE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Peak {
    pub bin: usize,
    pub fz: f64,
}

#[derive(Clone, Debug)]
pub struct DetectionReport {
    pub centers: Vec<[f64; 2]>,
    pub threshold: f64,
    /// Local maxima of predicted Fz above `threshold`, strongest first.
    pub maxima: Vec<Peak>,
    /// Index into `maxima` matched to each true centre.
    pub matches: Vec<Option<usize>>,
    /// The contacts do not fall into distinct, fully imaged quadrants.
    pub unsupported: bool,
    pub success: bool,
    pub prediction: ForceDistribution,
}

/// Bins whose value is at least every 8-neighbour's, with ties going to
/// the lower bin id, and strictly above `threshold`.
pub fn local_maxima(grid: &ForceDistribution, axis: usize, threshold: f64) -> Vec<Peak> {
    let (nx, ny) = (grid.nx as isize, grid.ny as isize);
    let v = |i: isize, j: isize| grid.forces[(i + nx * j) as usize][axis];
    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let c = v(i, j);
            if c <= threshold {
                continue;
            }
            let id = i + nx * j;
            let mut is_max = true;
            'nb: for dj in -1..=1 {
                for di in -1..=1 {
                    let (ii, jj) = (i + di, j + dj);
                    if (di, dj) == (0, 0) || ii < 0 || jj < 0 || ii >= nx || jj >= ny {
                        continue;
                    }
                    let n = v(ii, jj);
                    if n > c || (n == c && ii + nx * jj < id) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                out.push(Peak { bin: id as usize, fz: c });
            }
        }
    }
    out.sort_by(|a, b| b.fz.total_cmp(&a.fz).then(a.bin.cmp(&b.bin)));
    out
}

fn patch_fully_imaged(sim: &OpticalSim, ind: &Indentation, cam: usize) -> bool {
    let a = ind.contact_radius();
    (0..16).all(|k| {
        let t = k as f64 * std::f64::consts::TAU / 16.0;
        sees(&sim.cfg, cam, ind.center[0] + a * t.cos(), ind.center[1] + a * t.sin())
    })
}

/// Renders the superposed load of `contacts`, predicts, and checks that each
/// contact produced exactly one nearby Fz maximum.
pub fn multi_contact_eval(
    model: &NetworkModel,
    sim: &OpticalSim,
    contacts: &[Indentation],
    sample_id: u64,
) -> Result<DetectionReport> {
    let cfg = &sim.cfg;
    if contacts.is_empty() {
        return Err(Error::Validation("no contacts given".into()));
    }
    if model.arch().camera_count != cfg.camera_count() || model.arch().image_size != cfg.image_size {
        return Err(Error::Validation("model does not match the simulated sensor".into()));
    }
    let cams: Vec<usize> = contacts
        .iter()
        .map(|c| nearest_camera(cfg, c.center[0], c.center[1]))
        .collect();
    let distinct = cams.iter().enumerate().all(|(i, c)| !cams[..i].contains(c));
    let imaged = contacts.iter().zip(&cams).all(|(c, &cam)| patch_fully_imaged(sim, c, cam));

    let mut load = ForceDistribution::zeros(cfg);
    let mut weakest = f64::INFINITY;
    for c in contacts {
        let f = bin_forces(c, cfg)?;
        weakest = weakest.min(f.forces.iter().map(|v| v[2]).fold(0.0, f64::max));
        load.add_assign(&f)?;
    }
    let threshold = PEAK_SHARE * weakest;
    let frames = sim.capture(Some(&load), sample_id)?;
    let input: Vec<f32> = frames.frames.iter().flat_map(|f| f.data.iter().copied()).collect();
    let pred = model.predict(&input)?;
    let prediction = scatter(&pred, &model.arch().output_bins, cfg.bin_nx, cfg.bin_ny);
    let maxima = local_maxima(&prediction, 2, threshold);

    let (bw, bh) = (cfg.bin_width_x(), cfg.bin_width_y());
    let mut taken = vec![false; maxima.len()];
    let mut matches = Vec::with_capacity(contacts.len());
    for c in contacts {
        let (ci, cj) = (c.center[0] / bw - 0.5, c.center[1] / bh - 0.5);
        let best = maxima
            .iter()
            .enumerate()
            .filter(|(k, _)| !taken[*k])
            .map(|(k, p)| {
                let (i, j) = bin_cell(p.bin, cfg);
                (k, (i as f64 - ci).hypot(j as f64 - cj))
            })
            .filter(|&(_, d)| d <= MATCH_RADIUS_BINS)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((k, _)) = best {
            taken[k] = true;
        }
        matches.push(best.map(|(k, _)| k));
    }
    let unsupported = !(distinct && imaged);
    let success = !unsupported && maxima.len() == contacts.len() && matches.iter().all(Option::is_some);
    Ok(DetectionReport {
        centers: contacts.iter().map(|c| c.center).collect(),
        threshold,
        maxima,
        matches,
        unsupported,
        success,
        prediction,
    })
}
