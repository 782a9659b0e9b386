use std::fmt::Write as _;
use std::path::Path;

use cnn_recon::decoder::{
    area_contributions, evaluate_accuracy, mann_kendall_trend, select_significant_voxels_pooled, Area, AreaMap,
    DecoderModel, TrendDirection,
};
use cnn_recon::io::{read_pgm, RowMatrix};
use cnn_recon::metrics::{paired_ttest, write_cwssim_report, CwssimSummary, PairScores};

use super::{fresh_output_dir, load_design, load_network, load_stimuli, require_input, warn, Layout, Split};
use crate::config::{seed_offset, LayerSet, PipelineConfig};
use crate::error::{CliError, CliResult, Context};

/// Reconstruction scores against chance, per-area voxel contributions with
/// their trend across layers, and the optional two-model accuracy test.
pub fn run(cfg: &PipelineConfig, force: bool) -> CliResult<()> {
    let layout = Layout::new(&cfg.work);
    let (recons, stimuli) = load_pairs(&layout)?;
    let net = load_network(&layout)?;
    let dir = layout.reports_dir();
    fresh_output_dir(&dir, force)?;

    let pairs = PairScores::compute(&recons, &stimuli, &cfg.evaluate.cwssim)?;
    let summary = CwssimSummary::new(&pairs, cfg.evaluate.permutations, cfg.derived_seed(seed_offset::CHANCE))?;
    write_cwssim_report(dir.join("cwssim.csv"), &summary)?;
    eprintln!(
        "evaluate: CW-SSIM {:.4} ± {:.4} vs chance {:.4}, p = {:.3e}",
        summary.mean, summary.sd, summary.chance_mean, summary.p
    );

    area_report(cfg, &layout, net.len(), &dir)?;
    if let Some((a, b)) = &cfg.evaluate.compare_models {
        compare_models(&layout, a, b, &dir)?;
    }
    Ok(())
}

/// Reconstructions listed in `recon/items.csv` with their stimuli.
fn load_pairs(layout: &Layout) -> CliResult<(Vec<cnn_recon::Tensor>, Vec<cnn_recon::Tensor>)> {
    let dir = layout.recon_dir();
    let index = dir.join("items.csv");
    require_input(&index, "invert")?;
    let text = std::fs::read_to_string(&index).at(index.display())?;
    let mut stimulus_ids = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = match fields[..] {
            [item, stimulus, ..] => item.parse::<usize>().ok().zip(stimulus.parse::<usize>().ok()),
            _ => None,
        };
        match parsed {
            Some((item, stimulus)) if item == stimulus_ids.len() => stimulus_ids.push(stimulus),
            _ => return Err(CliError::Data(format!("{} line {}: malformed `{line}`", index.display(), n + 1))),
        }
    }
    let images = std::fs::read_dir(&dir)
        .at(dir.display())?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_str().is_some_and(|n| n.starts_with("item_") && n.ends_with(".pgm")))
        .count();
    if images != stimulus_ids.len() {
        return Err(CliError::Data(format!(
            "mismatched item counts: {} reconstructions, {} listed items",
            images,
            stimulus_ids.len()
        )));
    }
    let recons = (0..stimulus_ids.len())
        .map(|i| {
            let path = dir.join(format!("item_{i:04}.pgm"));
            require_input(&path, "invert")?;
            read_pgm(&path).at(path.display())
        })
        .collect::<CliResult<Vec<_>>>()?;
    let stimuli = load_stimuli(layout, &stimulus_ids)?;
    Ok((recons, stimuli))
}

/// `areas.csv` (`group,layers,area,proportion`) and `trend.csv`
/// (`area,s,variance,z,p_two_sided,direction`).
fn area_report(cfg: &PipelineConfig, layout: &Layout, n_layers: usize, dir: &Path) -> CliResult<()> {
    let areas = read_area_labels(&layout.truth())?;
    let groups: Vec<Vec<usize>> = match &cfg.decoder.selection_groups {
        Some(groups) => groups.iter().map(|g| g.resolve(n_layers)).collect::<CliResult<_>>()?,
        None => LayerSet::resolve(&cfg.decoder.layers, n_layers)?.into_iter().map(|l| vec![l]).collect(),
    };
    let present: Vec<Area> = Area::ALL.into_iter().filter(|a| areas.labels.contains(a)).collect();
    let mut table = String::from("group,layers,area,proportion\n");
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); present.len()];
    for (g, layers) in groups.iter().enumerate() {
        let models = layers
            .iter()
            .map(|&l| {
                let path = layout.model(cfg.solver.solver, l);
                require_input(&path, "train")?;
                DecoderModel::load(&path).at(path.display())
            })
            .collect::<CliResult<Vec<_>>>()?;
        let voxels: Vec<usize> = select_significant_voxels_pooled(&models, cfg.decoder.select_count)
            .into_iter()
            .map(|(v, _)| v)
            .collect();
        let shares = area_contributions(&voxels, &areas)?;
        let names: Vec<String> = layers.iter().map(usize::to_string).collect();
        for (k, &area) in present.iter().enumerate() {
            let share = shares.iter().find(|(a, _)| *a == area).map_or(0.0, |s| s.1);
            series[k].push(share);
            let _ = writeln!(table, "{g},{},{area},{share:?}", names.join(" "));
        }
    }
    std::fs::write(dir.join("areas.csv"), table).at(dir.display())?;

    let mut trend = String::from("area,s,variance,z,p_two_sided,direction\n");
    if groups.len() < 3 {
        warn(format!("trend test needs at least 3 layer groups, have {}", groups.len()));
    } else {
        for (area, values) in present.iter().zip(&series) {
            let mk = mann_kendall_trend(values)?;
            let direction = match mk.direction {
                TrendDirection::Increasing => "increasing",
                TrendDirection::Decreasing => "decreasing",
                TrendDirection::None => "none",
            };
            let _ = writeln!(trend, "{area},{},{:?},{:?},{:?},{direction}", mk.s, mk.variance, mk.z, mk.p_two_sided);
        }
    }
    std::fs::write(dir.join("trend.csv"), trend).at(dir.display())
}

/// Area column of the truth CSV written by `simulate`.
fn read_area_labels(path: &Path) -> CliResult<AreaMap> {
    require_input(path, "simulate")?;
    let text = std::fs::read_to_string(path).at(path.display())?;
    let labels = text
        .lines()
        .skip(1)
        .enumerate()
        .map(|(n, line)| {
            line.split(',')
                .nth(1)
                .ok_or_else(|| CliError::Data(format!("{} line {}: no area field", path.display(), n + 2)))
                .and_then(|a| a.parse().at(path.display()))
        })
        .collect::<CliResult<_>>()?;
    Ok(AreaMap { labels })
}

/// Held-out accuracy of two models of the same layer, compared feature
/// by feature with a paired t-test.
fn compare_models(layout: &Layout, a: &Path, b: &Path, dir: &Path) -> CliResult<()> {
    let load = |p: &Path| {
        if !p.exists() {
            return Err(CliError::Data(format!("model {} does not exist", p.display())));
        }
        DecoderModel::load(p).at(p.display())
    };
    let (ma, mb) = (load(a)?, load(b)?);
    if ma.layer_index != mb.layer_index || ma.feature_dim() != mb.feature_dim() {
        return Err(CliError::Data("compared models decode different layers".into()));
    }
    let features_path = layout.features(ma.layer_index);
    require_input(&features_path, "features")?;
    let features = RowMatrix::load(&features_path).at(features_path.display())?;
    let split = Split::read(&layout.split())?;
    let x_test = load_design(layout)?.select_rows(&split.test)?;
    let f_test = features.select_rows(split.test.iter().copied());
    let (ra, rb) = (evaluate_accuracy(&ma, &x_test, &f_test)?, evaluate_accuracy(&mb, &x_test, &f_test)?);

    let mut rows = String::from("feature_index,r_a,r_b\n");
    let (mut pa, mut pb) = (Vec::new(), Vec::new());
    for (j, (x, y)) in ra.per_feature_r.iter().zip(&rb.per_feature_r).enumerate() {
        let _ = writeln!(rows, "{j},{:?},{:?}", x.unwrap_or(f64::NAN), y.unwrap_or(f64::NAN));
        if let (Some(x), Some(y)) = (x, y) {
            pa.push(*x);
            pb.push(*y);
        }
    }
    std::fs::write(dir.join("model_comparison.csv"), rows).at(dir.display())?;
    let test = paired_ttest(&pa, &pb)?;
    // Parent directory and file name: models of different solvers share file names.
    let name = |p: &Path| {
        let parts: Vec<String> = p.iter().rev().take(2).map(|c| c.to_string_lossy().into_owned()).collect();
        parts.into_iter().rev().collect::<Vec<_>>().join("/")
    };
    let solver = |m: &DecoderModel| m.solver.as_ref().map_or("unknown", |s| s.solver.name());
    let summary = format!(
        "model_a,model_b,solver_a,solver_b,features,mean_r_a,mean_r_b,t,df,p_two_sided\n{},{},{},{},{},{:?},{:?},{:?},{:?},{:?}\n",
        name(a),
        name(b),
        solver(&ma),
        solver(&mb),
        pa.len(),
        ra.mean_r,
        rb.mean_r,
        test.t,
        test.df,
        test.p_two_sided
    );
    std::fs::write(dir.join("model_comparison_summary.csv"), summary).at(dir.display())?;
    eprintln!(
        "evaluate: {} r {:.4} vs {} r {:.4}, paired t {:.3} (p = {:.3e})",
        solver(&ma),
        ra.mean_r,
        solver(&mb),
        rb.mean_r,
        test.t,
        test.p_two_sided
    );
    Ok(())
}
