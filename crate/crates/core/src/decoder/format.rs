//! `CAVD` decoder-model files.
//!
//! ```text
//! "CAVD"  u32 version = 1
//! u32 layer_index  u32 D  u32 n
//! D × { u32 support_size, support_size × (u32 voxel, f64 coef), f64 intercept }
//! ```
//!
//! Little-endian; voxel indices strictly increasing and `< n`. The solver
//! settings travel in a `<file>.provenance` text sidecar of `key = value`
//! lines.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{AccuracyReport, DecoderModel};
use crate::error::{Error, Result};
use crate::io::{read_f64, read_u32, ReadExt};
use crate::sparse::{SolverConfig, SolverKind, SparseWeights};

pub const MODEL_MAGIC: &[u8; 4] = b"CAVD";

fn as_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds the u32 range")))
}

impl DecoderModel {
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        self.validate()?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        for v in [self.layer_index, self.feature_dim(), self.n_voxels] {
            w.write_all(&as_u32(v, "header field")?.to_le_bytes())?;
        }
        let b = self.intercept_index();
        for weights in &self.weights {
            let voxels: Vec<&(usize, f64)> = weights.entries().iter().filter(|e| e.0 != b).collect();
            w.write_all(&as_u32(voxels.len(), "support size")?.to_le_bytes())?;
            for &&(i, c) in &voxels {
                w.write_all(&(i as u32).to_le_bytes())?;
                w.write_all(&c.to_le_bytes())?;
            }
            w.write_all(&weights.get(b).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a model; `solver` is left empty (see [`DecoderModel::load`]).
    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact_or_truncated(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("bad decoder-model magic".into()));
        }
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported decoder-model version {version}")));
        }
        let layer_index = read_u32(r)? as usize;
        let d = read_u32(r)? as usize;
        let n = read_u32(r)? as usize;
        let mut weights = Vec::with_capacity(d.min(1 << 16));
        for j in 0..d {
            let size = read_u32(r)? as usize;
            if size > n {
                return Err(Error::Format(format!("feature {j}: support of {size} exceeds {n} voxels")));
            }
            let mut entries = Vec::with_capacity(size + 1);
            for _ in 0..size {
                let i = read_u32(r)? as usize;
                entries.push((i, read_f64(r)?));
            }
            let intercept = read_f64(r)?;
            if intercept != 0.0 {
                entries.push((n, intercept));
            }
            let w = SparseWeights::new(n + 1, entries)
                .map_err(|e| Error::Format(format!("feature {j}: {e}")))?;
            weights.push(w);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after decoder model".into()));
        }
        Ok(Self {
            layer_index,
            n_voxels: n,
            weights,
            solver: None,
        })
    }

    /// Writes the model and, when known, its solver provenance sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        if let Some(cfg) = &self.solver {
            std::fs::write(provenance_path(path), provenance_text(cfg))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut model = Self::read(&mut BufReader::new(File::open(path)?))?;
        let side = provenance_path(path);
        if side.exists() {
            model.solver = Some(parse_provenance(&std::fs::read_to_string(side)?)?);
        }
        Ok(model)
    }
}

pub fn provenance_path(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".provenance");
    PathBuf::from(name)
}

fn provenance_text(cfg: &SolverConfig) -> String {
    format!(
        "solver = {}\nsparsity_k = {}\nresidual_tol = {:?}\nmax_iterations = {}\nrho = {:?}\nnoise_allowance = {:?}\ncenter = {}\n",
        cfg.solver.name(),
        cfg.sparsity_k,
        cfg.residual_tol,
        cfg.max_iterations,
        cfg.rho,
        cfg.noise_allowance,
        cfg.center
    )
}

fn parse_provenance(text: &str) -> Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Format(format!("provenance line `{line}` is not key = value")))?;
        let bad = || Error::Format(format!("provenance value `{value}` for `{key}`"));
        match key {
            "solver" => cfg.solver = SolverKind::parse(value)?,
            "sparsity_k" => cfg.sparsity_k = value.parse().map_err(|_| bad())?,
            "residual_tol" => cfg.residual_tol = value.parse().map_err(|_| bad())?,
            "max_iterations" => cfg.max_iterations = value.parse().map_err(|_| bad())?,
            "rho" => cfg.rho = value.parse().map_err(|_| bad())?,
            "noise_allowance" => cfg.noise_allowance = value.parse().map_err(|_| bad())?,
            "center" => cfg.center = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Format(format!("unknown provenance key `{key}`"))),
        }
    }
    Ok(cfg)
}

/// `feature_index,r` rows; undefined correlations are written as `NaN`.
pub fn write_accuracy_csv(path: impl AsRef<Path>, report: &AccuracyReport) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "feature_index,r")?;
    for (j, r) in report.per_feature_r.iter().enumerate() {
        writeln!(out, "{j},{:?}", r.unwrap_or(f64::NAN))?;
    }
    out.flush()?;
    Ok(())
}
