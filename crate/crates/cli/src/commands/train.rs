use std::fmt::Write as _;
use std::time::Instant;

use cnn_recon::decoder::{evaluate_accuracy, train_layer_decoder, write_accuracy_csv};
use cnn_recon::io::RowMatrix;

use super::{fresh_output_dir, load_design, load_network, require_input, warn, Layout, Split};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult, Context};

/// One decoder per configured layer, scored on the held-out stimuli.
///
/// Writes `layer_L.cavd` (+ provenance), `layer_L.accuracy.csv` and a
/// `training.csv` summary into `models/<solver>/`.
pub fn run(cfg: &PipelineConfig, force: bool) -> CliResult<()> {
    let layout = Layout::new(&cfg.work);
    let net = load_network(&layout)?;
    let design = load_design(&layout)?;
    let split = Split::read(&layout.split())?;
    if split.len() != design.rows() {
        return Err(CliError::Data(format!(
            "split lists {} stimuli, design has {} rows",
            split.len(),
            design.rows()
        )));
    }
    let layers = cfg.decoder.layers.resolve(net.len())?;
    for &layer in &layers {
        require_input(&layout.features(layer), "features")?;
    }
    let x_train = design.select_rows(&split.train)?;
    let x_test = design.select_rows(&split.test)?;

    let dir = layout.models_dir(cfg.solver.solver);
    fresh_output_dir(&dir, force)?;
    let mut summary = String::from("layer,features,nonconverged,rank_deficient,constant,valid_r,mean_r\n");
    let mut nonconverged_total = 0;
    for &layer in &layers {
        let path = layout.features(layer);
        let features = RowMatrix::load(&path).at(path.display())?;
        if features.cols == 0 {
            warn(format!("layer {layer} has no features; skipped"));
            continue;
        }
        if features.rows != design.rows() {
            return Err(CliError::Data(format!(
                "{} has {} rows, design has {}",
                path.display(),
                features.rows,
                design.rows()
            )));
        }
        let started = Instant::now();
        let (model, report) = train_layer_decoder(&x_train, &features.select_rows(split.train.iter().copied()), layer, &cfg.solver)?;
        let seconds = started.elapsed().as_secs_f64();
        model.save(layout.model(cfg.solver.solver, layer))?;

        let accuracy = match evaluate_accuracy(&model, &x_test, &features.select_rows(split.test.iter().copied())) {
            Ok(acc) => {
                write_accuracy_csv(dir.join(format!("layer_{layer}.accuracy.csv")), &acc)?;
                Some(acc)
            }
            Err(cnn_recon::Error::Undefined(m)) => {
                warn(format!("layer {layer}: no held-out accuracy ({m})"));
                None
            }
            Err(e) => return Err(e.into()),
        };
        nonconverged_total += report.nonconverged.len();
        let (valid, mean_r) = accuracy.as_ref().map_or((0, f64::NAN), |a| (a.valid_count, a.mean_r));
        let _ = writeln!(
            summary,
            "{layer},{},{},{},{},{valid},{mean_r:?}",
            features.cols,
            report.nonconverged.len(),
            report.rank_deficient.len(),
            report.constant.len()
        );
        eprintln!(
            "train: layer {layer}, {} features, {} solver in {seconds:.2} s, mean r {mean_r:.4}, {} nonconverged",
            features.cols,
            cfg.solver.solver.name(),
            report.nonconverged.len()
        );
    }
    std::fs::write(dir.join("training.csv"), summary).at(dir.display())?;
    if nonconverged_total > 0 {
        warn(format!("{nonconverged_total} feature solves did not converge (see training.csv)"));
    }
    Ok(())
}
