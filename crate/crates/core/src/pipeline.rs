//! Two-stage fitting pipeline on a simulated dataset: estimate the
//! shared low-rank structure on the training split, extract per-sample
//! cores, train the two-channel network with its sparse selector, and
//! evaluate split-level metrics. This is the glue the command-line
//! driver, the coverage experiments, and the structure selector share.

use crate::conformal::LatentPoint;
use crate::decomp::{self, DecompError, DecompModel, Structure};
use crate::network::{
    self, DualChannelNet, Latent, NetConfig, NetworkError, TrainConfig, TrainHistory,
};
use crate::simgen::{SimDataset, Split};
use crate::tensor::DenseTensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Net(#[from] NetworkError),
}

/// Everything `fit` needs beyond the dataset itself. Defaults follow the
/// estimation protocol: over-specified ranks (4,4,4) / 16, refinement
/// shape (3,3,3), depth 3.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitOptions {
    pub structure: Structure,
    pub tucker_ranks: Vec<usize>,
    pub cp_rank: usize,
    pub hooi_iters: usize,
    pub als_iters: usize,
    pub decomp_tol: f64,
    pub ref_shape: Vec<usize>,
    pub depth: usize,
    pub train: TrainConfig,
}

impl FitOptions {
    pub fn new(structure: Structure) -> Self {
        Self {
            structure,
            tucker_ranks: vec![4, 4, 4],
            cp_rank: 16,
            hooi_iters: 5,
            als_iters: 15,
            decomp_tol: 1e-6,
            ref_shape: vec![3, 3, 3],
            depth: 3,
            train: TrainConfig::default(),
        }
    }
}

/// A fitted decomposition plus trained network.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub decomp: DecompModel,
    pub net: DualChannelNet,
    pub history: TrainHistory,
    pub options: FitOptions,
}

/// Split-level evaluation: accuracy, mean squared error of the
/// probability against the 0/1 label, and class-conditional mean
/// predicted probabilities on the calibration and test splits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_mse: f64,
    pub pi_cal_y1: f64,
    pub pi_cal_y0: f64,
    pub pi_test_y1: f64,
    pub pi_test_y0: f64,
}

/// Two-stage fit on the training split of a dataset.
pub fn fit_on_dataset(ds: &SimDataset, opts: &FitOptions) -> Result<FittedModel, PipelineError> {
    let train_xs_owned: Vec<DenseTensor> = ds.xs(Split::Train).into_iter().cloned().collect();
    let model = match opts.structure {
        Structure::Tucker => {
            let fit = decomp::fit_tucker(
                &train_xs_owned,
                &opts.tucker_ranks,
                opts.hooi_iters,
                opts.decomp_tol,
            )?;
            DecompModel::Tucker(fit.model)
        }
        Structure::Cp => {
            let fit = decomp::fit_cp(
                &train_xs_owned,
                opts.cp_rank,
                opts.als_iters,
                opts.decomp_tol,
                opts.train.seed,
            )?;
            DecompModel::Cp(fit.model)
        }
    };

    let cores = model.project_batch(&train_xs_owned)?;
    let net_config = NetConfig::classifier(
        model.core_shape(),
        opts.ref_shape.clone(),
        train_xs_owned[0].shape().to_vec(),
        opts.depth,
    );
    let xs_refs = ds.xs(Split::Train);
    let ys = ds.ys(Split::Train);
    let (net, history) = network::train(
        net_config,
        &cores.cores,
        &xs_refs,
        &ys,
        model.train_mean(),
        &opts.train,
    )?;
    Ok(FittedModel {
        decomp: model,
        net,
        history,
        options: opts.clone(),
    })
}

/// Predicted probabilities and latent points for one split.
pub fn predict_split(
    fitted: &FittedModel,
    ds: &SimDataset,
    split: Split,
) -> Result<Vec<(f64, Latent)>, PipelineError> {
    let xs = ds.xs(split);
    Ok(network::predict_batch(&fitted.net, &fitted.decomp, &xs)?)
}

/// Latent points (core, refinement, predicted probability, label) for
/// one split, the conformal machinery's working representation.
pub fn latent_points(
    fitted: &FittedModel,
    ds: &SimDataset,
    split: Split,
) -> Result<Vec<LatentPoint>, PipelineError> {
    let preds = predict_split(fitted, ds, split)?;
    let ys = ds.ys(split);
    Ok(preds
        .into_iter()
        .zip(ys)
        .map(|((prob, latent), y)| LatentPoint {
            core: latent.core,
            refinement: latent.refinement,
            prob,
            label: y as u8,
            smoothed: None,
        })
        .collect())
}

pub fn evaluate(fitted: &FittedModel, ds: &SimDataset) -> Result<Metrics, PipelineError> {
    let acc = |preds: &[(f64, Latent)], ys: &[f64]| -> f64 {
        let correct = preds
            .iter()
            .zip(ys)
            .filter(|((p, _), y)| (*p > 0.5) == (**y > 0.5))
            .count();
        correct as f64 / ys.len() as f64
    };
    let class_mean = |preds: &[(f64, Latent)], ys: &[f64], label: f64| -> f64 {
        let vals: Vec<f64> = preds
            .iter()
            .zip(ys)
            .filter(|(_, y)| **y == label)
            .map(|((p, _), _)| *p)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    };

    let train_preds = predict_split(fitted, ds, Split::Train)?;
    let train_ys = ds.ys(Split::Train);
    let cal_preds = predict_split(fitted, ds, Split::Cal)?;
    let cal_ys = ds.ys(Split::Cal);
    let test_preds = predict_split(fitted, ds, Split::Test)?;
    let test_ys = ds.ys(Split::Test);

    let test_mse = test_preds
        .iter()
        .zip(&test_ys)
        .map(|((p, _), y)| (p - y) * (p - y))
        .sum::<f64>()
        / test_ys.len() as f64;

    Ok(Metrics {
        train_accuracy: acc(&train_preds, &train_ys),
        test_accuracy: acc(&test_preds, &test_ys),
        test_mse,
        pi_cal_y1: class_mean(&cal_preds, &cal_ys, 1.0),
        pi_cal_y0: class_mean(&cal_preds, &cal_ys, 0.0),
        pi_test_y1: class_mean(&test_preds, &test_ys, 1.0),
        pi_test_y0: class_mean(&test_preds, &test_ys, 0.0),
    })
}
