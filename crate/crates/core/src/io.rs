//! File formats shared across stages: binary PGM images, the `CAVM`
//! matrix container and little-endian primitives.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) trait ReadExt: Read {
    fn read_exact_or_truncated(&mut self, buf: &mut [u8]) -> Result<()> {
        self.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Format("file truncated".into()),
            _ => Error::Io(e),
        })
    }
}

impl<R: Read + ?Sized> ReadExt for R {}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact_or_truncated(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact_or_truncated(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact_or_truncated(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 20));
    let mut buf = [0u8; 8 * 512];
    let mut left = n;
    while left > 0 {
        let take = left.min(512);
        r.read_exact_or_truncated(&mut buf[..take * 8])?;
        out.extend(
            buf[..take * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
        );
        left -= take;
    }
    Ok(out)
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a binary (P5) PGM with maxval 255, mapping samples linearly to
/// `[0, 1]`. Returns a `[1, height, width]` tensor.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("PGM header truncated".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Format("not a binary PGM (P5)".into()));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()?
            .parse()
            .map_err(|_| Error::Format(format!("bad PGM {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("PGM maxval {maxval} unsupported (need 255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let len = width * height;
    if width == 0 || height == 0 || bytes.len() < start + len {
        return Err(Error::Format("PGM raster truncated".into()));
    }
    let data = bytes[start..start + len]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Tensor::new(vec![1, height, width], data)
}

/// Quantizes a single-channel image (values clamped to `[0, 1]`) to 8 bits.
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = image.chw()?;
    if c != 1 {
        return Err(Error::InvalidArgument(format!(
            "PGM holds one channel, image has {c}"
        )));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    fs::write(path, encode_pgm(image)?)?;
    Ok(())
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every value to the nearest 8-bit level, as a PGM round trip would.
pub fn quantize_image(image: &Tensor) -> Tensor {
    image.map(|v| quantize(v) as f64 / 255.0)
}

/// Writes a multi-channel image as one PGM per channel:
/// `{stem}_c{k}.pgm`, or `{stem}.pgm` for single-channel images.
pub fn write_channels(dir: impl AsRef<Path>, stem: &str, image: &Tensor) -> Result<()> {
    let [c, h, w] = image.chw()?;
    if c == 1 {
        return write_pgm(dir.as_ref().join(format!("{stem}.pgm")), image);
    }
    for k in 0..c {
        let plane = Tensor::from_parts(
            vec![1, h, w],
            image.data()[k * h * w..(k + 1) * h * w].to_vec(),
        );
        write_pgm(dir.as_ref().join(format!("{stem}_c{k}.pgm")), &plane)?;
    }
    Ok(())
}

/// Dense row-major matrix container.
///
/// ```text
/// "CAVM" | u32 version = 1 | u64 rows | u64 cols | f64 data[rows*cols]
/// ```
pub const MATRIX_MAGIC: &[u8; 4] = b"CAVM";

#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RowMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, rows: impl IntoIterator<Item = usize>) -> RowMatrix {
        let mut data = Vec::new();
        let mut n = 0;
        for i in rows {
            data.extend_from_slice(self.row(i));
            n += 1;
        }
        RowMatrix {
            rows: n,
            cols: self.cols,
            data,
        }
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MATRIX_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        write_f64s(w, &self.data)?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact_or_truncated(&mut magic)?;
        if &magic != MATRIX_MAGIC {
            return Err(Error::Format("bad matrix file magic".into()));
        }
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported matrix version {version}")));
        }
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let len = rows
            .checked_mul(cols)
            .filter(|&n| n <= 1 << 34)
            .ok_or_else(|| Error::Format("matrix too large".into()))?;
        let data = read_f64s(r, len)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after matrix".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}
