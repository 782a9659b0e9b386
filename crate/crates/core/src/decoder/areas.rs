use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Area {
    V1,
    V2,
    V3,
    V4,
    Other,
}

impl Area {
    pub const ALL: [Area; 5] = [Area::V1, Area::V2, Area::V3, Area::V4, Area::Other];

    pub fn name(self) -> &'static str {
        match self {
            Area::V1 => "V1",
            Area::V2 => "V2",
            Area::V3 => "V3",
            Area::V4 => "V4",
            Area::Other => "other",
        }
    }
}

impl fmt::Display for Area {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Area {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Area::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Format(format!("unknown visual area `{s}`")))
    }
}

/// Area label of every voxel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AreaMap {
    pub labels: Vec<Area>,
}

impl AreaMap {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, voxel: usize) -> Option<Area> {
        self.labels.get(voxel).copied()
    }
}

/// Share of each represented area among `voxels`, in area order.
pub fn area_contributions(voxels: &[usize], areas: &AreaMap) -> Result<Vec<(Area, f64)>> {
    if voxels.is_empty() {
        return Err(Error::InvalidArgument("no voxels to attribute".into()));
    }
    let mut counts = [0usize; 5];
    for &v in voxels {
        let area = areas
            .get(v)
            .ok_or_else(|| Error::InvalidArgument(format!("voxel {v} has no area label")))?;
        counts[area as usize] += 1;
    }
    Ok(Area::ALL
        .into_iter()
        .zip(counts)
        .filter(|&(_, c)| c > 0)
        .map(|(a, c)| (a, c as f64 / voxels.len() as f64))
        .collect())
}

pub fn write_area_csv(path: impl AsRef<Path>, contributions: &[(Area, f64)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "area,proportion")?;
    for (area, p) in contributions {
        writeln!(out, "{area},{p:?}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendDirection {
    Increasing,
    Decreasing,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannKendall {
    pub s: i64,
    pub variance: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub direction: TrendDirection,
}

/// Mann–Kendall monotone-trend test with tie-corrected variance and the
/// normal approximation (continuity-corrected).
pub fn mann_kendall_trend(series: &[f64]) -> Result<MannKendall> {
    let n = series.len();
    if n < 3 {
        return Err(Error::InvalidArgument("trend test needs at least 3 values".into()));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("trend series has non-finite values".into()));
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match series[j].partial_cmp(&series[i]).expect("finite") {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
            };
        }
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tie_term: f64 = sorted
        .chunk_by(|a, b| a == b)
        .map(|g| g.len() as f64)
        .map(|t| t * (t - 1.0) * (2.0 * t + 5.0))
        .sum();
    let nf = n as f64;
    let variance = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
    let z = match s.signum() {
        1 => (s - 1) as f64 / variance.sqrt(),
        -1 => (s + 1) as f64 / variance.sqrt(),
        _ => 0.0,
    };
    let p_two_sided = if variance > 0.0 { (2.0 * normal_cdf(-z.abs())).min(1.0) } else { 1.0 };
    let direction = match s.signum() {
        1 => TrendDirection::Increasing,
        -1 => TrendDirection::Decreasing,
        _ => TrendDirection::None,
    };
    Ok(MannKendall {
        s,
        variance,
        z,
        p_two_sided,
        direction,
    })
}
