//! Binary weight files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "CAVW" | u32 version = 1 | u32 parametric layer count
//! per layer: u32 layer index | u32 ndim | u64 dims[ndim]
//!            | f64 kernels[prod(dims)] | f64 biases[dims[0]]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LayerParams, Network};
use crate::error::{Error, Result};
use crate::io::{read_f64s, read_u32, read_u64, write_f64s, ReadExt};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CAVW";
pub const VERSION: u32 = 1;

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_weights(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_weights(net: &Network, w: &mut impl Write) -> Result<()> {
    let params: Vec<(usize, &LayerParams)> = net
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.params.as_ref().map(|p| (i, p)))
        .collect();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (index, p) in params {
        w.write_all(&(index as u32).to_le_bytes())?;
        let dims = p.kernels.shape();
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        write_f64s(w, p.kernels.data())?;
        write_f64s(w, p.biases.data())?;
    }
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Vec<(usize, LayerParams)>> {
    let mut r = BufReader::new(File::open(path)?);
    read_weights(&mut r)
}

/// Parses a weight stream. Shapes are only checked for internal
/// consistency here; `Network::set_weights` checks them against layers.
pub fn read_weights(r: &mut impl Read) -> Result<Vec<(usize, LayerParams)>> {
    let mut magic = [0u8; 4];
    r.read_exact_or_truncated(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad weight file magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let index = read_u32(r)? as usize;
        let ndim = read_u32(r)? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(Error::Format(format!("layer {index}: bad ndim {ndim}")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = read_u64(r)?;
            if d == 0 || d > u32::MAX as u64 {
                return Err(Error::Format(format!("layer {index}: bad extent {d}")));
            }
            dims.push(d as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= 1 << 32)
            .ok_or_else(|| Error::Format(format!("layer {index}: kernel tensor too large")))?;
        let kernels = read_f64s(r, len)?;
        let biases = read_f64s(r, dims[0])?;
        let kernels = Tensor::new(dims.clone(), kernels)
            .map_err(|e| Error::Format(format!("layer {index}: {e}")))?;
        let biases = Tensor::new(vec![dims[0]], biases)
            .map_err(|e| Error::Format(format!("layer {index}: {e}")))?;
        out.push((index, LayerParams { kernels, biases }));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last layer".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::{build_network, LayerSpec, WeightInit};

    fn net() -> Network {
        build_network(
            [2, 8, 8],
            &[
                LayerSpec::conv(3, 3, 1, 1),
                LayerSpec::Rectifier,
                LayerSpec::maxpool(2, 2),
                LayerSpec::fc(5),
            ],
            &WeightInit::SeededRandom(11),
        )
        .unwrap()
    }

    fn bytes(net: &Network) -> Vec<u8> {
        let mut buf = Vec::new();
        write_weights(net, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_gives_identical_outputs() {
        let src = net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.cavw");
        save_weights(&src, &path).unwrap();
        let mut dst = build_network([2, 8, 8], &src.specs(), &WeightInit::Zeros).unwrap();
        dst.set_weights(load_weights(&path).unwrap()).unwrap();
        assert_eq!(src, dst);
        let img = Tensor::from_fn(&[2, 8, 8], |i| (i as f64 * 0.37).cos());
        assert_eq!(src.forward(&img).unwrap(), dst.forward(&img).unwrap());
        let via_init =
            build_network([2, 8, 8], &src.specs(), &WeightInit::FromFile(path)).unwrap();
        assert_eq!(src, via_init);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let buf = bytes(&net());
        for cut in [0, 3, 10, buf.len() / 2, buf.len() - 1] {
            let err = read_weights(&mut &buf[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut buf = bytes(&net());
        buf[0] = b'X';
        assert!(read_weights(&mut buf.as_slice()).is_err());
        let mut buf = bytes(&net());
        buf[4] = 2;
        assert!(read_weights(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn mismatched_shape_names_layer() {
        let src = net();
        let buf = bytes(&src);
        // Same stack but conv with 4 kernels: layer 0 and fc (layer 3) differ.
        let mut other = build_network(
            [2, 8, 8],
            &[
                LayerSpec::conv(4, 3, 1, 1),
                LayerSpec::Rectifier,
                LayerSpec::maxpool(2, 2),
                LayerSpec::fc(5),
            ],
            &WeightInit::Zeros,
        )
        .unwrap();
        let err = other
            .set_weights(read_weights(&mut buf.as_slice()).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::LayerBuild { index: 0, .. }), "{err}");
        assert!(err.to_string().contains("layer 0"));
    }
}
