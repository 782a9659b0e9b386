//! Pipeline stages. Each reads its inputs from the work directory written
//! by earlier stages and writes one output directory of its own.

mod evaluate;
mod features;
mod invert;
mod simulate;
mod train;

use std::path::{Path, PathBuf};

use cnn_recon::convnet::spec_file::parse_network_spec;
use cnn_recon::convnet::{build_network, Network, WeightInit};
use cnn_recon::io::{read_pgm, RowMatrix};
use cnn_recon::sparse::{DesignMatrix, SolverKind};
use cnn_recon::Tensor;

use crate::error::{CliError, CliResult, Context};

pub use evaluate::run as evaluate;
pub use features::run as features;
pub use invert::run as invert;
pub use simulate::run as simulate;
pub use train::run as train;

/// File names inside the work directory.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn simulate_dir(&self) -> PathBuf {
        self.root.join("simulate")
    }

    pub fn stimulus(&self, index: usize) -> PathBuf {
        self.simulate_dir().join("stimuli").join(format!("stim_{index:04}.pgm"))
    }

    pub fn design(&self) -> PathBuf {
        self.simulate_dir().join("design.cavm")
    }

    pub fn split(&self) -> PathBuf {
        self.simulate_dir().join("split.csv")
    }

    pub fn truth(&self) -> PathBuf {
        self.simulate_dir().join("truth.csv")
    }

    pub fn network_spec(&self) -> PathBuf {
        self.simulate_dir().join("network.spec")
    }

    pub fn network_weights(&self) -> PathBuf {
        self.simulate_dir().join("network.cavw")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn features(&self, layer: usize) -> PathBuf {
        self.features_dir().join(format!("layer_{layer}.cavm"))
    }

    pub fn models_dir(&self, solver: SolverKind) -> PathBuf {
        self.root.join("models").join(solver.name())
    }

    pub fn model(&self, solver: SolverKind, layer: usize) -> PathBuf {
        self.models_dir(solver).join(format!("layer_{layer}.cavd"))
    }

    pub fn recon_dir(&self) -> PathBuf {
        self.root.join("recon")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}

/// Creates `dir` empty, replacing an existing one only when forced.
pub fn fresh_output_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        if !force {
            return Err(CliError::Config(format!(
                "output directory {} exists; pass --force to overwrite it",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(dir).at(dir.display())?;
    }
    std::fs::create_dir_all(dir).at(dir.display())?;
    Ok(())
}

/// Fails with a data error naming the stage that produces `path`.
pub fn require_input(path: &Path, stage: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} is missing; run `{stage}` first", path.display())))
    }
}

/// The network saved by `simulate`.
pub fn load_network(layout: &Layout) -> CliResult<Network> {
    let spec_path = layout.network_spec();
    require_input(&spec_path, "simulate")?;
    require_input(&layout.network_weights(), "simulate")?;
    let text = std::fs::read_to_string(&spec_path).at(spec_path.display())?;
    let (input, specs) = parse_network_spec(&text).at(spec_path.display())?;
    build_network(input, &specs, &WeightInit::FromFile(layout.network_weights())).at(layout.network_weights().display())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut rows: Vec<(usize, &str)> = self.train.iter().map(|&i| (i, "train")).collect();
        rows.extend(self.test.iter().map(|&i| (i, "test")));
        rows.sort_unstable();
        let mut text = String::from("stimulus,set\n");
        for (i, set) in rows {
            text.push_str(&format!("{i},{set}\n"));
        }
        std::fs::write(path, text).at(path.display())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        require_input(path, "simulate")?;
        let text = std::fs::read_to_string(path).at(path.display())?;
        let mut split = Split { train: Vec::new(), test: Vec::new() };
        for (n, line) in text.lines().enumerate().skip(1) {
            let bad = || CliError::Data(format!("{} line {}: malformed `{line}`", path.display(), n + 1));
            let (i, set) = line.split_once(',').ok_or_else(bad)?;
            let i: usize = i.parse().map_err(|_| bad())?;
            match set {
                "train" => split.train.push(i),
                "test" => split.test.push(i),
                _ => return Err(bad()),
            }
        }
        Ok(split)
    }
}

pub fn load_design(layout: &Layout) -> CliResult<DesignMatrix> {
    let path = layout.design();
    require_input(&path, "simulate")?;
    DesignMatrix::from_row_matrix(&RowMatrix::load(&path).at(path.display())?).at(path.display())
}

pub fn load_stimuli(layout: &Layout, indices: &[usize]) -> CliResult<Vec<Tensor>> {
    indices
        .iter()
        .map(|&i| {
            let path = layout.stimulus(i);
            require_input(&path, "simulate")?;
            read_pgm(&path).at(path.display())
        })
        .collect()
}

pub fn warn(message: impl std::fmt::Display) {
    eprintln!("warning: {message}");
}
