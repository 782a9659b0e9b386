use cnn_recon::synth::feature_matrix;

use super::{fresh_output_dir, load_network, load_stimuli, Layout, Split};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

/// Feature matrices of every stimulus for the decoded layers, read back
/// from the stimulus files.
pub fn run(cfg: &PipelineConfig, force: bool) -> CliResult<()> {
    let layout = Layout::new(&cfg.work);
    let net = load_network(&layout)?;
    let split = Split::read(&layout.split())?;
    let stimuli = load_stimuli(&layout, &(0..split.len()).collect::<Vec<_>>())?;
    if let Some(s) = stimuli.iter().find(|s| s.shape() != net.input_shape()) {
        return Err(CliError::Data(format!(
            "stimulus shape {:?} does not match network input {:?}",
            s.shape(),
            net.input_shape()
        )));
    }
    let layers = cfg.decoder.layers.resolve(net.len())?;
    fresh_output_dir(&layout.features_dir(), force)?;
    for &layer in &layers {
        let f = feature_matrix(&net, &stimuli, layer)?;
        f.save(layout.features(layer))?;
        eprintln!("features: layer {layer} ({}) -> {} × {}", layer_name(&net, layer), f.rows, f.cols);
    }
    Ok(())
}

fn layer_name(net: &cnn_recon::convnet::Network, layer: usize) -> &'static str {
    net.layers().get(layer).map_or("input", |l| l.spec.kind_name())
}
