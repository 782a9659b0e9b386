use cnn_recon::convnet::spec_file::{format_network_spec, parse_network_spec};
use cnn_recon::convnet::weights::save_weights;
use cnn_recon::convnet::{build_network, WeightInit};
use cnn_recon::io::write_pgm;
use cnn_recon::synth::{generate_corpus, make_area_map, simulate_planned, simulate_voxels, write_manifest, write_truth_csv, TruthConfig};

use super::{fresh_output_dir, Layout, Split};
use crate::config::{seed_offset, PipelineConfig, SimMode};
use crate::error::{CliError, CliResult, Context};

/// Stimuli, network, voxel responses and ground truth.
pub fn run(cfg: &PipelineConfig, force: bool) -> CliResult<()> {
    if !cfg.network.exists() {
        return Err(CliError::Config(format!("network spec {} does not exist", cfg.network.display())));
    }
    if let Some(w) = cfg.weights.as_ref().filter(|w| !w.exists()) {
        return Err(CliError::Config(format!("weight file {} does not exist", w.display())));
    }
    let spec_text = std::fs::read_to_string(&cfg.network).at(cfg.network.display())?;
    let (input, specs) = parse_network_spec(&spec_text).map_err(|e| CliError::Config(format!("{}: {e}", cfg.network.display())))?;
    let sim = &cfg.sim;
    if input != [1, sim.height, sim.width] {
        return Err(CliError::Config(format!(
            "network input {input:?} does not match 1×{}×{} stimuli",
            sim.height, sim.width
        )));
    }
    let init = match &cfg.weights {
        Some(path) => WeightInit::FromFile(path.clone()),
        None => WeightInit::SeededRandom(cfg.derived_seed(seed_offset::WEIGHTS)),
    };
    let net = build_network(input, &specs, &init).map_err(|e| CliError::Config(e.to_string()))?;

    let layout = Layout::new(&cfg.work);
    let dir = layout.simulate_dir();
    fresh_output_dir(&dir, force)?;
    std::fs::create_dir_all(dir.join("stimuli")).at(dir.display())?;

    let corpus = generate_corpus(sim.count, sim.height, sim.width, cfg.derived_seed(seed_offset::STIMULI))
        .map_err(|e| CliError::Config(e.to_string()))?;
    for (i, image) in corpus.images.iter().enumerate() {
        write_pgm(layout.stimulus(i), image).at(layout.stimulus(i).display())?;
    }
    write_manifest(dir.join("manifest.csv"), &corpus.records)?;

    let truth_cfg = TruthConfig {
        n_voxels: sim.n_voxels,
        n_informative: sim.n_informative,
        support_size: sim.support_size,
        noise_rel: sim.noise_rel,
        encoding_seed: cfg.derived_seed(seed_offset::ENCODING),
        noise_seed: cfg.derived_seed(seed_offset::NOISE),
    };
    let simulation = match &sim.mode {
        SimMode::Single(layer) => {
            let layer = layer.resolve(net.len())?;
            simulate_voxels(&corpus.images, &net, layer, &truth_cfg)
        }
        SimMode::Gradient { areas, gradient } => {
            let levels = net.len().max(1);
            let (map, assignment) = make_area_map(sim.n_voxels, areas, *gradient, levels, cfg.derived_seed(seed_offset::AREAS))
                .map_err(|e| CliError::Config(e.to_string()))?;
            let plan: Vec<Option<usize>> = assignment.into_iter().map(Some).collect();
            simulate_planned(&corpus.images, &net, &plan, &map, &truth_cfg)
        }
    }
    .map_err(|e| match e {
        cnn_recon::Error::InvalidArgument(m) => CliError::Config(m),
        other => other.into(),
    })?;

    simulation.design.to_row_matrix().save(layout.design())?;
    simulation.clean.save(dir.join("clean.cavm"))?;
    write_truth_csv(layout.truth(), &simulation.truth)?;
    let split = Split {
        train: (0..sim.count - sim.test_count).collect(),
        test: (sim.count - sim.test_count..sim.count).collect(),
    };
    split.write(&layout.split())?;
    std::fs::write(layout.network_spec(), format_network_spec(input, &specs)).at(layout.network_spec().display())?;
    save_weights(&net, layout.network_weights())?;
    eprintln!(
        "simulate: {} stimuli ({} held out), {} voxels -> {}",
        sim.count,
        sim.test_count,
        sim.n_voxels,
        dir.display()
    );
    Ok(())
}
