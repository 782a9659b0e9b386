use std::fmt::Write as _;

use cnn_recon::decoder::{predict_features, DecoderModel};
use cnn_recon::inversion::{invert, write_trajectory_csv};
use cnn_recon::io::write_pgm;
use rayon::prelude::*;

use super::{fresh_output_dir, load_design, load_network, require_input, warn, Layout, Split};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult, Context};

/// Decodes features for each held-out item and inverts them to an image.
///
/// Writes `item_NNNN.pgm`, `item_NNNN.trajectory.csv` and an `items.csv`
/// index into `recon/`. A diverged item keeps its last finite image, is
/// marked in the index, and does not stop the others; the command fails
/// only when every item diverges.
pub fn run(cfg: &PipelineConfig, force: bool) -> CliResult<()> {
    let layout = Layout::new(&cfg.work);
    let net = load_network(&layout)?;
    let design = load_design(&layout)?;
    let split = Split::read(&layout.split())?;
    let layer = cfg.invert.layer.resolve(net.len())?;
    let model_path = layout.model(cfg.solver.solver, layer);
    require_input(&model_path, "train")?;
    let model = DecoderModel::load(&model_path).at(model_path.display())?;
    if model.layer_index != layer || model.n_voxels != design.n_voxels() {
        return Err(CliError::Data(format!(
            "{} decodes layer {} from {} voxels; expected layer {layer} from {}",
            model_path.display(),
            model.layer_index,
            model.n_voxels,
            design.n_voxels()
        )));
    }
    let items: Vec<usize> = match cfg.invert.items {
        Some(n) => split.test.iter().copied().take(n).collect(),
        None => split.test.clone(),
    };

    let dir = layout.recon_dir();
    fresh_output_dir(&dir, force)?;
    let results: Vec<_> = items
        .par_iter()
        .map(|&stimulus| {
            let target = predict_features(&model, &design.row(stimulus))?;
            Ok(invert(&net, layer, &target, &cfg.invert.inversion))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut index = String::from("item,stimulus,status,iterations,converged,final_total,final_feature\n");
    let mut diverged = 0;
    for (item, (&stimulus, result)) in items.iter().zip(results).enumerate() {
        let stem = format!("item_{item:04}");
        match result {
            Ok(r) => {
                write_pgm(dir.join(format!("{stem}.pgm")), &r.image)?;
                write_trajectory_csv(dir.join(format!("{stem}.trajectory.csv")), &r.trajectory)?;
                let last = r.trajectory.last().copied();
                let _ = writeln!(
                    index,
                    "{item},{stimulus},ok,{},{},{:?},{:?}",
                    r.iterations_run,
                    r.converged,
                    last.map_or(f64::NAN, |l| l.total),
                    last.map_or(f64::NAN, |l| l.feature)
                );
            }
            Err(cnn_recon::Error::Diverged { iteration, last_finite }) => {
                diverged += 1;
                warn(format!("item {item} (stimulus {stimulus}) diverged at iteration {iteration}"));
                write_pgm(dir.join(format!("{stem}.pgm")), &last_finite)?;
                let _ = writeln!(index, "{item},{stimulus},diverged,{iteration},false,NaN,NaN");
            }
            Err(e) => return Err(e.into()),
        }
    }
    std::fs::write(dir.join("items.csv"), index).at(dir.display())?;
    eprintln!("invert: {} items from layer {layer} -> {}", items.len(), dir.display());
    if diverged > 0 && diverged == items.len() {
        return Err(CliError::Numerical(format!("all {diverged} inversions diverged")));
    }
    Ok(())
}
