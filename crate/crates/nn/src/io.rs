//! `TNM1` model files.
//!
//! Layout (little-endian):
//! - magic `b"TNM1"`, `u32` version
//! - architecture: `u32` camera count, image size, hidden width, feature
//!   width; `f64` dropout rate; `u32` stage count + per-stage channels;
//!   `u32` output-bin count + bin ids
//! - layer table: `u32` count, then per layer `u8` kind, `u8` frozen,
//!   `u8` activation (`0xFF` when not applicable), `u32` tensor count and
//!   for each tensor `u32` rank + `u32` dims
//! - parameter blocks: every tensor of the table in order as `f32` values,
//!   batch-norm running statistics included

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::layers::Layer;
use crate::network::{Architecture, NetworkModel};
use crate::{NnError, Result};

pub const MAGIC: &[u8; 4] = b"TNM1";
pub const VERSION: u32 = 1;

fn kind_code(layer: &Layer<f32>) -> u8 {
    match layer {
        Layer::Conv(_) => 0,
        Layer::BatchNorm(_) => 1,
        Layer::Relu(_) => 2,
        Layer::MaxPool(_) => 3,
        Layer::Flatten(_) => 4,
        Layer::Dense(_) => 5,
        Layer::Dropout(_) => 6,
    }
}

fn activation_code(layer: &Layer<f32>) -> u8 {
    match layer {
        Layer::Dense(d) => d.activation.code(),
        _ => 0xFF,
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| NnError::Format(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_model(model: &NetworkModel, w: &mut impl Write) -> Result<()> {
    let arch = model.arch();
    w.write_all(MAGIC)?;
    put_u32(w, VERSION as usize)?;
    put_u32(w, arch.camera_count)?;
    put_u32(w, arch.image_size)?;
    put_u32(w, arch.hidden_width)?;
    put_u32(w, arch.feature_width)?;
    w.write_all(&arch.dropout_rate.to_le_bytes())?;
    put_u32(w, arch.conv_channels.len())?;
    for &c in &arch.conv_channels {
        put_u32(w, c)?;
    }
    put_u32(w, arch.output_bins.len())?;
    for &b in &arch.output_bins {
        put_u32(w, b as usize)?;
    }

    put_u32(w, model.layers().len())?;
    for layer in model.layers() {
        w.write_all(&[kind_code(layer), layer.is_frozen() as u8, activation_code(layer)])?;
        let state = layer.state();
        put_u32(w, state.len())?;
        for t in state {
            put_u32(w, t.shape().len())?;
            for &d in t.shape() {
                put_u32(w, d)?;
            }
        }
    }
    for layer in model.layers() {
        for t in layer.state() {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<NetworkModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format(format!("bad magic {magic:?}")));
    }
    let version = get_u32(r)?;
    if version != VERSION as usize {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let camera_count = get_u32(r)?;
    let image_size = get_u32(r)?;
    let hidden_width = get_u32(r)?;
    let feature_width = get_u32(r)?;
    let dropout_rate = get_f64(r)?;
    let stages = get_u32(r)?;
    let conv_channels = (0..stages).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
    let n_bins = get_u32(r)?;
    let output_bins = (0..n_bins)
        .map(|_| get_u32(r).map(|b| b as u32))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        camera_count,
        image_size,
        conv_channels,
        hidden_width,
        feature_width,
        dropout_rate,
        output_bins,
    };
    let mut model = NetworkModel::new(arch, 0)?;

    let n_layers = get_u32(r)?;
    if n_layers != model.layers().len() {
        return Err(NnError::Format(format!(
            "layer table has {n_layers} entries, architecture implies {}",
            model.layers().len()
        )));
    }
    for (i, layer) in model.layers_mut().iter_mut().enumerate() {
        let kind = get_u8(r)?;
        let frozen = get_u8(r)? != 0;
        let act = get_u8(r)?;
        if kind != kind_code(layer) || act != activation_code(layer) {
            return Err(NnError::Format(format!("layer {i}: kind/activation mismatch")));
        }
        layer.set_frozen(frozen);
        let n_tensors = get_u32(r)?;
        let state = layer.state();
        if n_tensors != state.len() {
            return Err(NnError::Format(format!("layer {i}: tensor count mismatch")));
        }
        for t in state {
            let rank = get_u32(r)?;
            let dims = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
            if dims != t.shape() {
                return Err(NnError::Format(format!(
                    "layer {i}: tensor shape {dims:?} does not match {:?}",
                    t.shape()
                )));
            }
        }
    }
    let mut buf = [0u8; 4];
    for layer in model.layers_mut() {
        for t in layer.state_mut() {
            for v in t.data_mut() {
                r.read_exact(&mut buf)?;
                *v = f32::from_le_bytes(buf);
            }
        }
    }
    Ok(model)
}

pub fn save_model(model: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel> {
    read_model(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkModel {
        let arch = Architecture {
            camera_count: 2,
            image_size: 8,
            conv_channels: vec![2, 2],
            hidden_width: 5,
            feature_width: 3,
            dropout_rate: 0.1,
            output_bins: vec![4, 9],
        };
        let mut m = NetworkModel::new(arch, 11).unwrap();
        m.set_frozen(0, true);
        m
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let model = small();
        let mut bytes = Vec::new();
        write_model(&model, &mut bytes).unwrap();
        let loaded = read_model(&mut bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        write_model(&loaded, &mut again).unwrap();
        assert_eq!(bytes, again);
        assert!(loaded.layers()[0].is_frozen());
        assert_eq!(loaded.arch(), model.arch());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = Vec::new();
        write_model(&small(), &mut bytes).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_model(&mut bytes.as_slice()), Err(NnError::Format(_))));
    }

    #[test]
    fn truncated_file_rejected() {
        let mut bytes = Vec::new();
        write_model(&small(), &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_model(&mut bytes.as_slice()).is_err());
    }
}
