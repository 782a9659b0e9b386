//! The pipeline configuration: a flat `section.key = value` file checked
//! against a closed schema.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cnn_recon::decoder::Area;
use cnn_recon::inversion::{InitImage, InversionConfig};
use cnn_recon::metrics::CwssimParams;
use cnn_recon::sparse::{SolverConfig, SolverKind};

use crate::error::{CliError, CliResult};

/// Every accepted key with its default; `None` marks a required key.
pub const SCHEMA: &[(&str, Option<&str>, &str)] = &[
    ("run.seed", Some("0"), "global seed; stage seeds are derived from it"),
    ("paths.work", None, "work directory holding every stage's outputs"),
    ("paths.network", None, "network spec file"),
    ("paths.weights", Some(""), "CAVW weight file; empty draws seeded random weights"),
    ("sim.count", Some("200"), "number of stimuli"),
    ("sim.height", Some("32"), "stimulus height"),
    ("sim.width", Some("32"), "stimulus width"),
    ("sim.test_count", Some("20"), "trailing stimuli held out for testing"),
    ("sim.mode", Some("single"), "`single` (one encoded layer) or `gradient` (areas spread over layers)"),
    ("sim.layer", Some("last"), "encoded layer in single mode"),
    ("sim.n_voxels", Some("400"), "voxel count"),
    ("sim.n_informative", Some("200"), "informative voxels in single mode"),
    ("sim.support_size", Some("3"), "features per informative voxel"),
    ("sim.noise_rel", Some("0.1"), "noise sd relative to each voxel's response sd"),
    ("sim.areas", Some("V1:0.3,V2:0.3,V3:0.28,V4:0.12"), "area proportions in gradient mode"),
    ("sim.gradient", Some("8"), "area-to-layer informativeness gradient"),
    ("decoder.layers", Some("last"), "layers to decode: `all`, `last` or a list such as `0,2,4-6`"),
    ("decoder.select_count", Some("300"), "voxels kept by significance selection"),
    ("decoder.selection_groups", Some(""), "`;`-separated layer lists pooled for selection; empty selects per layer"),
    ("solver.kind", Some("romp"), "`romp` or `l1_admm`"),
    ("solver.sparsity_k", Some("32"), "ROMP target sparsity"),
    ("solver.residual_tol", Some("1e-8"), "relative stopping tolerance"),
    ("solver.max_iterations", Some("10000"), "solver iteration cap"),
    ("solver.rho", Some("1.0"), "initial ADMM penalty"),
    ("solver.noise_allowance", Some("0.05"), "ADMM constraint radius as a fraction of ‖y‖"),
    ("solver.center", Some("true"), "center voxel columns"),
    ("invert.layer", Some("last"), "layer whose decoded features are inverted"),
    ("invert.items", Some("all"), "number of test items to reconstruct, or `all`"),
    ("invert.alpha", Some("6"), "alpha-norm exponent"),
    ("invert.lambda_alpha", Some("1e-5"), "alpha-norm weight"),
    ("invert.lambda_tv", Some("1e-4"), "total-variation weight"),
    ("invert.tv_beta", Some("2"), "total-variation exponent"),
    ("invert.learning_rate", Some("0.05"), "step relative to the target energy"),
    ("invert.momentum", Some("0.9"), "heavy-ball momentum"),
    ("invert.max_iterations", Some("2000"), "iteration cap"),
    ("invert.loss_tol", Some("1e-6"), "relative decrease between windows that counts as converged"),
    ("invert.init", Some("noise"), "`noise` or `zeros`"),
    ("evaluate.levels", Some("3"), "CW-SSIM pyramid levels"),
    ("evaluate.orientations", Some("4"), "CW-SSIM orientations"),
    ("evaluate.window", Some("7"), "CW-SSIM window side"),
    ("evaluate.k", Some("0.03"), "CW-SSIM stabilizer"),
    ("evaluate.permutations", Some("1000"), "chance-baseline permutations"),
    ("evaluate.compare_models", Some(""), "two comma-separated model files for a paired accuracy test"),
];

/// A layer reference resolved against the network at stage time.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerRef {
    Last,
    Index(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSet {
    All,
    List(Vec<LayerRef>),
}

impl LayerRef {
    /// `Last` on a network without layers is the identity layer 0.
    pub fn resolve(&self, n_layers: usize) -> CliResult<usize> {
        match *self {
            LayerRef::Last => Ok(n_layers.saturating_sub(1)),
            LayerRef::Index(i) if i < n_layers.max(1) => Ok(i),
            LayerRef::Index(i) => Err(CliError::Config(format!(
                "layer {i} is out of range for a network with {n_layers} layers"
            ))),
        }
    }
}

impl LayerSet {
    /// Sorted, deduplicated layer indices.
    pub fn resolve(&self, n_layers: usize) -> CliResult<Vec<usize>> {
        let mut out = match self {
            LayerSet::All => (0..n_layers.max(1)).collect(),
            LayerSet::List(refs) => refs.iter().map(|r| r.resolve(n_layers)).collect::<CliResult<Vec<_>>>()?,
        };
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimMode {
    Single(LayerRef),
    Gradient { areas: Vec<(Area, f64)>, gradient: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub test_count: usize,
    pub mode: SimMode,
    pub n_voxels: usize,
    pub n_informative: usize,
    pub support_size: usize,
    pub noise_rel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderSettings {
    pub layers: LayerSet,
    pub select_count: usize,
    /// `None` selects voxels per decoded layer.
    pub selection_groups: Option<Vec<LayerSet>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertSettings {
    pub layer: LayerRef,
    pub items: Option<usize>,
    pub inversion: InversionConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSettings {
    pub cwssim: CwssimParams,
    pub permutations: usize,
    pub compare_models: Option<(PathBuf, PathBuf)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub work: PathBuf,
    pub network: PathBuf,
    pub weights: Option<PathBuf>,
    pub sim: SimSettings,
    pub decoder: DecoderSettings,
    pub solver: SolverConfig,
    pub invert: InvertSettings,
    pub evaluate: EvaluateSettings,
}

/// Offsets added to the global seed for each random stream.
pub mod seed_offset {
    pub const STIMULI: u64 = 0;
    pub const ENCODING: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const WEIGHTS: u64 = 3;
    pub const AREAS: u64 = 4;
    pub const INVERSION: u64 = 5;
    pub const CHANCE: u64 = 6;
}

impl PipelineConfig {
    /// Reads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base, seed_override)
    }

    pub fn parse(text: &str, base: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let values = Values::parse(text)?;
        let seed = match seed_override {
            Some(s) => s,
            None => values.get("run.seed")?,
        };
        let path = |key: &str| -> CliResult<Option<PathBuf>> {
            let raw = values.raw(key)?;
            Ok((!raw.is_empty()).then(|| base.join(raw)))
        };
        let required_path = |key: &str| -> CliResult<PathBuf> {
            path(key)?.ok_or_else(|| CliError::Config(format!("`{key}` must not be empty")))
        };

        let mode = match values.raw("sim.mode")? {
            "single" => SimMode::Single(parse_layer_ref(values.raw("sim.layer")?).map_err(values.bad("sim.layer"))?),
            "gradient" => SimMode::Gradient {
                areas: parse_areas(values.raw("sim.areas")?).map_err(values.bad("sim.areas"))?,
                gradient: values.get("sim.gradient")?,
            },
            other => return Err(CliError::Config(format!("`sim.mode`: unknown mode `{other}`"))),
        };
        let sim = SimSettings {
            count: values.get("sim.count")?,
            height: values.get("sim.height")?,
            width: values.get("sim.width")?,
            test_count: values.get("sim.test_count")?,
            mode,
            n_voxels: values.get("sim.n_voxels")?,
            n_informative: values.get("sim.n_informative")?,
            support_size: values.get("sim.support_size")?,
            noise_rel: values.get("sim.noise_rel")?,
        };
        if sim.test_count == 0 || sim.test_count >= sim.count {
            return Err(CliError::Config("`sim.test_count` must lie in 1..sim.count".into()));
        }
        if !(sim.noise_rel >= 0.0) {
            return Err(CliError::Config("`sim.noise_rel` must be >= 0".into()));
        }

        let groups = values.raw("decoder.selection_groups")?;
        let decoder = DecoderSettings {
            layers: parse_layer_set(values.raw("decoder.layers")?).map_err(values.bad("decoder.layers"))?,
            select_count: values.get("decoder.select_count")?,
            selection_groups: if groups.is_empty() {
                None
            } else {
                Some(
                    groups
                        .split(';')
                        .map(|g| parse_layer_set(g.trim()))
                        .collect::<Result<_, _>>()
                        .map_err(values.bad("decoder.selection_groups"))?,
                )
            },
        };

        let solver = SolverConfig {
            solver: SolverKind::parse(values.raw("solver.kind")?).map_err(values.bad("solver.kind"))?,
            sparsity_k: values.get("solver.sparsity_k")?,
            residual_tol: values.get("solver.residual_tol")?,
            max_iterations: values.get("solver.max_iterations")?,
            rho: values.get("solver.rho")?,
            noise_allowance: values.get("solver.noise_allowance")?,
            center: values.get("solver.center")?,
        };
        solver.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let inversion = InversionConfig {
            alpha: values.get("invert.alpha")?,
            lambda_alpha: values.get("invert.lambda_alpha")?,
            lambda_tv: values.get("invert.lambda_tv")?,
            tv_beta: values.get("invert.tv_beta")?,
            learning_rate: values.get("invert.learning_rate")?,
            momentum: values.get("invert.momentum")?,
            max_iterations: values.get("invert.max_iterations")?,
            loss_tol: values.get("invert.loss_tol")?,
            init: match values.raw("invert.init")? {
                "noise" => InitImage::SeededNoise,
                "zeros" => InitImage::Zeros,
                other => return Err(CliError::Config(format!("`invert.init`: unknown init `{other}`"))),
            },
            seed: seed.wrapping_add(seed_offset::INVERSION),
        };
        inversion.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let invert = InvertSettings {
            layer: parse_layer_ref(values.raw("invert.layer")?).map_err(values.bad("invert.layer"))?,
            items: match values.raw("invert.items")? {
                "all" => None,
                _ => Some(values.get("invert.items")?),
            },
            inversion,
        };

        let levels: usize = values.get("evaluate.levels")?;
        let cwssim = CwssimParams {
            window: values.get("evaluate.window")?,
            k: values.get("evaluate.k")?,
            ..CwssimParams::uniform(levels, values.get("evaluate.orientations")?)
        };
        cwssim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let compare = values.raw("evaluate.compare_models")?;
        let compare_models = if compare.is_empty() {
            None
        } else {
            match compare.split(',').map(str::trim).collect::<Vec<_>>()[..] {
                [a, b] if !a.is_empty() && !b.is_empty() => Some((base.join(a), base.join(b))),
                _ => return Err(CliError::Config("`evaluate.compare_models` needs exactly two paths".into())),
            }
        };
        let evaluate = EvaluateSettings {
            cwssim,
            permutations: values.get("evaluate.permutations")?,
            compare_models,
        };

        Ok(Self {
            seed,
            work: required_path("paths.work")?,
            network: required_path("paths.network")?,
            weights: path("paths.weights")?,
            sim,
            decoder,
            solver,
            invert,
            evaluate,
        })
    }

    pub fn derived_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }
}

/// Raw values after schema checking, defaults filled in.
struct Values(BTreeMap<&'static str, String>);

impl Values {
    fn parse(text: &str) -> CliResult<Self> {
        let mut given: BTreeMap<&'static str, String> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `section.key = value`", n + 1)))?;
            let key = key.trim();
            let Some(&(known, _, _)) = SCHEMA.iter().find(|(k, _, _)| *k == key) else {
                return Err(CliError::Config(format!("line {}: unknown key `{key}`", n + 1)));
            };
            if given.insert(known, value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
        }
        for &(key, default, _) in SCHEMA {
            if !given.contains_key(key) {
                match default {
                    Some(d) => {
                        given.insert(key, d.to_string());
                    }
                    None => return Err(CliError::Config(format!("missing required key `{key}`"))),
                }
            }
        }
        Ok(Self(given))
    }

    fn raw(&self, key: &str) -> CliResult<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key)?;
        raw.parse().map_err(|e| CliError::Config(format!("`{key}`: invalid value `{raw}`: {e}")))
    }

    fn bad<E: Display>(&self, key: &'static str) -> impl Fn(E) -> CliError {
        move |e| CliError::Config(format!("`{key}`: {e}"))
    }
}

fn parse_layer_ref(s: &str) -> Result<LayerRef, String> {
    match s {
        "last" => Ok(LayerRef::Last),
        _ => s.parse().map(LayerRef::Index).map_err(|_| format!("invalid layer `{s}`")),
    }
}

/// `all`, `last`, or comma-separated indices and inclusive `a-b` ranges.
fn parse_layer_set(s: &str) -> Result<LayerSet, String> {
    if s == "all" {
        return Ok(LayerSet::All);
    }
    let mut refs = Vec::new();
    for part in s.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((a, b)) => {
                let bad = || format!("invalid layer range `{part}`");
                let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                refs.extend((a..=b).map(LayerRef::Index));
            }
            None => refs.push(parse_layer_ref(part)?),
        }
    }
    Ok(LayerSet::List(refs))
}

fn parse_areas(s: &str) -> Result<Vec<(Area, f64)>, String> {
    s.split(',')
        .map(|part| {
            let (area, p) = part.split_once(':').ok_or_else(|| format!("expected `AREA:proportion`, got `{part}`"))?;
            let area: Area = area.trim().parse().map_err(|e: cnn_recon::Error| e.to_string())?;
            let p: f64 = p.trim().parse().map_err(|_| format!("invalid proportion in `{part}`"))?;
            Ok((area, p))
        })
        .collect()
}

/// The schema as a commented config file with every default spelled out.
pub fn template() -> String {
    let mut out = String::new();
    for &(key, default, doc) in SCHEMA {
        out.push_str(&format!("# {doc}\n"));
        match default {
            Some(d) => out.push_str(&format!("{key} = {d}\n")),
            None => out.push_str(&format!("# required\n{key} =\n")),
        }
    }
    out
}
