//! Fold loop, per-slice batches, L1 slope loss, AdamW steps, best-checkpoint
//! selection and evaluation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod log;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{MaskPolicy, Precision, TrainConfig};
pub use data::{prepare_patient, prepare_patients, PreparedPatient};
pub use log::{config_hash, LogEntry, TrainLog};

use crate::dataset::{kfold_indices, NormStats, PatientSample};
use crate::error::{Error, Result};
use crate::metrics::{
    estimate_sigma, fvc_residuals, score_predictions, MetricsReport, PatientPrediction, ResidualCenter, SigmaPolicy,
};
use crate::model::{HybridModel, ModelConfig, SliceInput, TargetStats};
use crate::nn::{adamw_step, evaluate_with_gradients, AdamWState, Graph, ParamGrads, ParamStore, Real, Tensor};
use crate::run::RunManifest;

/// `(1/N) Σ |s_i − ŝ_i|`.
pub fn l1_slope_loss(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Invalid(format!("{} predictions vs {} targets", pred.len(), truth.len())));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Fails if any patient appears on both sides of a split.
pub fn check_leakage<'a>(
    train: impl IntoIterator<Item = &'a str>,
    test: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let train: BTreeSet<&str> = train.into_iter().collect();
    let leaked: Vec<&str> = test.into_iter().filter(|id| train.contains(id)).collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("test patients present in training: {}", leaked.join(", "))))
    }
}

fn derive_seed(seed: u64, stream: u64, index: usize) -> u64 {
    let mut x = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 31;
    x.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// One patient's mean slope prediction, in mL/week.
pub fn predict_prepared<T: Real>(
    model: &HybridModel,
    params: &ParamStore<T>,
    patient: &PreparedPatient,
    norm: &NormStats,
    target: &TargetStats,
) -> Result<PatientPrediction> {
    let slope = model.predict_patient(params, &patient.inputs(norm), target)?;
    Ok(PatientPrediction {
        patient_id: patient.patient_id.clone(),
        predicted_slope: slope.value,
        true_slope: patient.target,
        visits: patient.fvc.points().to_vec(),
    })
}

fn predict_all<T: Real>(
    model: &HybridModel,
    params: &ParamStore<T>,
    patients: &[&PreparedPatient],
    norm: &NormStats,
    target: &TargetStats,
) -> Result<Vec<PatientPrediction>> {
    patients
        .par_iter()
        .map(|p| predict_prepared(model, params, p, norm, target))
        .collect()
}

/// Laplace σ from FVC residuals of the given predictions.
pub fn residual_sigma(predictions: &[PatientPrediction]) -> Result<f64> {
    estimate_sigma(&fvc_residuals(predictions), ResidualCenter::Zero)
}

/// Scores predictions, with σ taken from `train_sigma` or the policy.
pub fn score<T: Real>(
    checkpoint: &Checkpoint<T>,
    patients: &[&PreparedPatient],
    policy: &SigmaPolicy,
) -> Result<MetricsReport> {
    let preds = predict_all(
        &checkpoint.model,
        &checkpoint.params,
        patients,
        &checkpoint.meta.norm,
        &checkpoint.meta.target,
    )?;
    score_predictions(&preds, policy.resolve(checkpoint.meta.sigma), policy)
}

/// Metrics of a checkpoint on raw patient samples.
pub fn evaluate_model<T: Real>(
    checkpoint: &Checkpoint<T>,
    patients: &[PatientSample],
    policy: &SigmaPolicy,
    masks: &MaskPolicy,
) -> Result<MetricsReport> {
    if patients.is_empty() {
        return Err(Error::Invalid("no patients to evaluate".into()));
    }
    let (prepared, _) = prepare_patients(patients, checkpoint.meta.model.image_size, masks)?;
    if prepared.is_empty() {
        return Err(Error::Invalid("no patient has a usable FVC series".into()));
    }
    let refs: Vec<&PreparedPatient> = prepared.iter().collect();
    score(checkpoint, &refs, policy)
}

/// Result of training on one split.
#[derive(Debug, Clone)]
pub struct FoldResult<T: Real> {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Parameters at the epoch with the best validation score, or at the
    /// last epoch when there is no validation set.
    pub checkpoint: Checkpoint<T>,
    pub initial: ParamStore<T>,
    pub epoch_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_lll: Option<f64>,
    pub seconds: f64,
}

/// One sample's standardized L1 loss and its gradients.
fn sample_gradients<T: Real>(
    model: &HybridModel,
    params: &ParamStore<T>,
    input: &SliceInput,
    target: f64,
) -> Result<(f64, ParamGrads<T>)> {
    let (loss, grads) = evaluate_with_gradients(params, |g: &mut Graph<'_, T>| {
        let y = model.forward(g, input)?.output();
        let t = g.input(Tensor::full(&[1, 1], T::of(target)));
        let d = g.sub(y, t)?;
        Ok(g.abs(d))
    })?;
    let loss = loss.as_f64();
    if !loss.is_finite() {
        return Err(Error::Numerical("non-finite training loss".into()));
    }
    Ok((loss, grads))
}

/// Trains a freshly initialized model on `train`, choosing the best epoch by
/// Laplace score on `val` (clipped when the policy clips).
pub fn fit<T: Real>(
    model_cfg: &ModelConfig,
    train: &[&PreparedPatient],
    val: &[&PreparedPatient],
    cfg: &TrainConfig,
    fold: usize,
    log: &mut TrainLog,
) -> Result<FoldResult<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    check_leakage(
        train.iter().map(|p| p.patient_id.as_str()),
        val.iter().map(|p| p.patient_id.as_str()),
    )?;
    let started = Instant::now();
    let norm = NormStats::from_records(train.iter().map(|p| &p.record))?;
    let targets: Vec<f64> = train.iter().map(|p| p.target).collect();
    for (p, &t) in train.iter().zip(&targets) {
        debug_assert_eq!(p.fvc.slope_target().ok(), Some(t));
    }
    let stats = TargetStats::from_targets(&targets)?;
    let samples: Vec<(SliceInput, f64)> = train
        .iter()
        .flat_map(|p| {
            let t = stats.standardize(p.target);
            p.inputs(&norm).into_iter().map(move |x| (x, t))
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::Invalid("training patients have no kept slices".into()));
    }

    let (model, mut params) = HybridModel::init::<T>(model_cfg, derive_seed(cfg.seed, 1, fold))?;
    let initial = params.clone();
    let mut opt = AdamWState::new(&params, cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2, fold));
    let mut order: Vec<usize> = (0..samples.len()).collect();

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore<T>, f64, Option<f64>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, ParamGrads<T>)> = batch
                .par_iter()
                .map(|&i| sample_gradients(&model, &params, &samples[i].0, samples[i].1))
                .collect::<Result<_>>()?;
            let mut grads = ParamGrads::empty(params.len());
            for (loss, g) in &results {
                total += loss;
                grads.accumulate(g);
            }
            grads.scale(T::of(1.0 / batch.len() as f64));
            adamw_step(&mut params, &grads, &mut opt);
        }
        let train_loss = total / samples.len() as f64;
        epoch_losses.push(train_loss);

        let last = epoch == cfg.epochs;
        let mut entry_val = (None, None, None);
        if !val.is_empty() && (epoch % cfg.eval_every == 0 || last) {
            let sigma = residual_sigma(&predict_all(&model, &params, train, &norm, &stats)?)?;
            let preds = predict_all(&model, &params, val, &norm, &stats)?;
            let report = score_predictions(&preds, cfg.sigma.resolve(sigma), &cfg.sigma)?;
            let lll = report.aggregate.lll_clipped.unwrap_or(report.aggregate.lll);
            entry_val = (Some(lll), Some(report.aggregate.rmse), Some(sigma));
            if best.as_ref().map_or(true, |b| lll > b.0) {
                best = Some((lll, epoch, params.clone(), sigma, Some(report.aggregate.rmse)));
            }
        }
        log.push(LogEntry::Epoch {
            fold,
            epoch,
            train_loss,
            val_lll: entry_val.0,
            val_rmse: entry_val.1,
            sigma: entry_val.2,
        });
        ::log::debug!("fold {fold} epoch {epoch}: train L1 {train_loss:.6}");
    }

    let (best_val_lll, best_epoch, best_params, sigma, val_rmse) = match best {
        Some((lll, e, p, s, r)) => (Some(lll), e, p, s, r),
        None => {
            let sigma = residual_sigma(&predict_all(&model, &params, train, &norm, &stats)?)?;
            (None, cfg.epochs, params, sigma, None)
        }
    };
    let train_ids: Vec<String> = train.iter().map(|p| p.patient_id.clone()).collect();
    let test_ids: Vec<String> = val.iter().map(|p| p.patient_id.clone()).collect();
    log.push(LogEntry::Fold {
        fold,
        train_patients: train_ids.clone(),
        test_patients: test_ids.clone(),
        best_epoch,
        best_val_lll,
        val_rmse,
        sigma,
    });
    Ok(FoldResult {
        fold,
        train_ids,
        test_ids,
        checkpoint: Checkpoint {
            meta: CheckpointMeta {
                model: model_cfg.clone(),
                target: stats,
                norm,
                sigma,
                fold,
                epoch: best_epoch,
                run: None,
            },
            model,
            params: best_params,
        },
        initial,
        epoch_losses,
        best_epoch,
        best_val_lll,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub folds: Vec<FoldResult<T>>,
    pub log: TrainLog,
}

/// Patient-level k-fold cross-validation with a fresh model per fold.
pub fn run_training<T: Real>(
    patients: &[PreparedPatient],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    run: Option<RunManifest>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    model_cfg.validate()?;
    if patients.is_empty() {
        return Err(Error::Invalid("dataset is empty".into()));
    }
    let mut log = TrainLog::with_header(run.clone(), model_cfg, cfg)?;
    let folds = kfold_indices(patients.len(), cfg.folds, cfg.seed)?;
    let mut results = Vec::with_capacity(folds.len());
    for (k, fold) in folds.iter().enumerate() {
        let train: Vec<&PreparedPatient> = fold.train.iter().map(|&i| &patients[i]).collect();
        let test: Vec<&PreparedPatient> = fold.test.iter().map(|&i| &patients[i]).collect();
        let mut result = fit::<T>(model_cfg, &train, &test, cfg, k, &mut log)?;
        result.checkpoint.meta.run = run.clone();
        ::log::info!(
            "fold {k}: best epoch {} (validation LLL {:?})",
            result.best_epoch,
            result.best_val_lll
        );
        results.push(result);
    }
    Ok(TrainOutcome { folds: results, log })
}
