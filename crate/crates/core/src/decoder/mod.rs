//! Per-feature sparse decoders from voxel responses to network features, and
//! the voxel-level analyses built on their supports.

mod areas;
mod format;

use rayon::prelude::*;

pub use areas::{area_contributions, mann_kendall_trend, write_area_csv, Area, AreaMap, MannKendall, TrendDirection};
pub use format::{provenance_path, write_accuracy_csv, MODEL_MAGIC};

use crate::convnet::FeatureVector;
use crate::error::{Error, Result};
use crate::io::RowMatrix;
use crate::metrics::{one_sample_ttest, pearson, TTest};
use crate::sparse::{DesignMatrix, PreparedDesign, SolverConfig, SparseWeights};

/// One sparse weight vector per feature of a layer. Each vector has length
/// `n + 1`; index `n` is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub layer_index: usize,
    pub n_voxels: usize,
    pub weights: Vec<SparseWeights>,
    /// Solver settings the model was trained with, when known.
    pub solver: Option<SolverConfig>,
}

/// Diagnostics gathered while training; not part of the stored model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    /// Features whose solver hit its iteration limit or missed its
    /// tolerance.
    pub nonconverged: Vec<usize>,
    /// Features fitted with a rank-deficient least-squares refit.
    pub rank_deficient: Vec<usize>,
    /// Features with a constant training column, fitted by the intercept.
    pub constant: Vec<usize>,
    /// Set when the design has a single row: no voxel can be identified.
    pub degenerate_design: bool,
}

impl DecoderModel {
    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn intercept_index(&self) -> usize {
        self.n_voxels
    }

    /// Intercept-only model predicting `value` for every feature.
    pub fn constant(layer_index: usize, n_voxels: usize, values: &[f64]) -> Self {
        let weights = values
            .iter()
            .map(|&v| intercept_only(n_voxels, v))
            .collect();
        Self {
            layer_index,
            n_voxels,
            weights,
            solver: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(j) = self.weights.iter().position(|w| w.dim() != self.n_voxels + 1) {
            return Err(Error::Dimension(format!(
                "feature {j} weights have length {}, expected {}",
                self.weights[j].dim(),
                self.n_voxels + 1
            )));
        }
        Ok(())
    }
}

fn intercept_only(n_voxels: usize, value: f64) -> SparseWeights {
    let entries = if value != 0.0 { vec![(n_voxels, value)] } else { Vec::new() };
    SparseWeights::new(n_voxels + 1, entries).expect("intercept entry is in range")
}

/// Fits `F[:, j] ≈ X w_j` independently for every feature `j`.
pub fn train_layer_decoder(
    x: &DesignMatrix,
    features: &RowMatrix,
    layer_index: usize,
    cfg: &SolverConfig,
) -> Result<(DecoderModel, TrainingReport)> {
    cfg.validate()?;
    if features.rows != x.rows() {
        return Err(Error::Dimension(format!(
            "feature matrix has {} rows, design has {}",
            features.rows,
            x.rows()
        )));
    }
    if features.cols == 0 {
        return Err(Error::Dimension("feature matrix has no columns".into()));
    }
    let n = x.n_voxels();
    let prepared = PreparedDesign::new(x.matrix(), cfg.center);

    struct Fit {
        weights: SparseWeights,
        converged: bool,
        rank_deficient: bool,
        constant: bool,
    }
    let fits: Vec<Fit> = (0..features.cols)
        .into_par_iter()
        .map(|j| {
            let y = features.column(j);
            if y.iter().all(|&v| v == y[0]) {
                return Ok(Fit {
                    weights: intercept_only(n, y[0]),
                    converged: true,
                    rank_deficient: false,
                    constant: true,
                });
            }
            let out = prepared.solve(&y, cfg).map_err(|e| Error::Feature {
                feature: j,
                source: Box::new(e),
            })?;
            Ok(Fit {
                weights: out.weights,
                converged: out.converged,
                rank_deficient: out.rank_deficient,
                constant: false,
            })
        })
        .collect::<Result<_>>()?;

    let mut report = TrainingReport {
        degenerate_design: x.rows() == 1,
        ..Default::default()
    };
    for (j, fit) in fits.iter().enumerate() {
        if !fit.converged {
            report.nonconverged.push(j);
        }
        if fit.rank_deficient {
            report.rank_deficient.push(j);
        }
        if fit.constant {
            report.constant.push(j);
        }
    }
    let model = DecoderModel {
        layer_index,
        n_voxels: n,
        weights: fits.into_iter().map(|f| f.weights).collect(),
        solver: Some(cfg.clone()),
    };
    Ok((model, report))
}

/// Predicted features for one design row (voxel responses followed by 1).
pub fn predict_features(model: &DecoderModel, x_row: &[f64]) -> Result<FeatureVector> {
    if x_row.len() != model.n_voxels + 1 {
        return Err(Error::Dimension(format!(
            "design row has {} entries, model expects {}",
            x_row.len(),
            model.n_voxels + 1
        )));
    }
    Ok(FeatureVector {
        layer_index: model.layer_index,
        values: model.weights.iter().map(|w| w.dot(x_row)).collect(),
    })
}

/// Predictions for every row of `x`, one row per stimulus.
pub fn predict_matrix(model: &DecoderModel, x: &DesignMatrix) -> Result<RowMatrix> {
    let rows = (0..x.rows())
        .map(|i| predict_features(model, &x.row(i)).map(|f| f.values))
        .collect::<Result<Vec<_>>>()?;
    RowMatrix::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// `None` where the actual or predicted column is constant.
    pub per_feature_r: Vec<Option<f64>>,
    pub mean_r: f64,
    pub valid_count: usize,
    /// Defined correlations against zero; absent with fewer than two
    /// defined values or no spread among them.
    pub ttest: Option<TTest>,
}

/// Per-feature Pearson correlation between actual and predicted values on
/// a test set.
pub fn evaluate_accuracy(model: &DecoderModel, x_test: &DesignMatrix, f_test: &RowMatrix) -> Result<AccuracyReport> {
    if f_test.rows != x_test.rows() || f_test.cols != model.feature_dim() {
        return Err(Error::Dimension(format!(
            "test features are {}x{}, expected {}x{}",
            f_test.rows,
            f_test.cols,
            x_test.rows(),
            model.feature_dim()
        )));
    }
    let predicted = predict_matrix(model, x_test)?;
    let per_feature_r: Vec<Option<f64>> = (0..model.feature_dim())
        .map(|j| match pearson(&f_test.column(j), &predicted.column(j)) {
            Ok(r) => Ok(Some(r)),
            Err(Error::Undefined(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let defined: Vec<f64> = per_feature_r.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Undefined("no feature has a defined correlation".into()));
    }
    let mean_r = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(AccuracyReport {
        ttest: one_sample_ttest(&defined, 0.0).ok(),
        valid_count: defined.len(),
        per_feature_r,
        mean_r,
    })
}

/// Voxels ranked by how many feature decoders use them (intercept
/// excluded), ties broken by ascending index, truncated to `count`.
pub fn select_significant_voxels(model: &DecoderModel, count: usize) -> Vec<(usize, usize)> {
    select_significant_voxels_pooled(std::slice::from_ref(model), count)
}

/// As [`select_significant_voxels`], counting supports across several
/// models that share a design (for example all sublayers of one stage).
pub fn select_significant_voxels_pooled(models: &[DecoderModel], count: usize) -> Vec<(usize, usize)> {
    let n = models.iter().map(|m| m.n_voxels).max().unwrap_or(0);
    let mut freq = vec![0usize; n];
    for model in models {
        for w in &model.weights {
            for v in w.support().filter(|&v| v != model.n_voxels) {
                freq[v] += 1;
            }
        }
    }
    let mut ranked: Vec<(usize, usize)> = freq.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(count);
    ranked
}
