use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::args::*;
use super::plot::distfit_svg;
use super::{sigma_policy, CliError, CliResult, FileConfig};
use crate::dataset::{generate_synthetic, load_dataset, parse_clinical_csv, LoadedDataset, SynthSpec, CLINICAL_FILE};
use crate::error::Error;
use crate::image::{read_hu_slice, write_pgm};
use crate::lung_mask::{extract_lung_mask, extract_or_full, mask_path_for, write_mask, MaskParams};
use crate::metrics::{fit_distributions, PatientPrediction};
use crate::model::ModelConfig;
use crate::nn::{Graph, Real, Tensor};
use crate::run::RunManifest;
use crate::training::{
    evaluate_model, predict_prepared, prepare_patients, run_training, Checkpoint, MaskPolicy, Precision, PreparedPatient,
    TrainConfig,
};

pub fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Synth(a) => synth(a),
        Command::Mask(a) => mask(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Distfit(a) => distfit(a),
        Command::DumpFeatures(a) => dump_features(a),
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn manifest(command: &str, common: &Common, seed: u64, inputs: &[&Path]) -> RunManifest {
    RunManifest::new(command, display(&common.out), seed)
        .with_config(common.config.as_deref().map(display))
        .with_inputs(inputs.iter().map(|p| display(p)))
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    write_text(path, &text)
}

fn precision(flag: Option<&str>, file: &FileConfig) -> CliResult<Precision> {
    match flag.or(file.precision.as_deref()) {
        None => Ok(Precision::default()),
        Some(s) => s.parse().map_err(|e: Error| CliError::Usage(e.to_string())),
    }
}

fn mask_policy(flags: &MaskFlags, file: &FileConfig) -> MaskPolicy {
    MaskPolicy {
        enabled: file.use_masks.unwrap_or(true),
        params: None,
        fallback_ones: flags.fallback_ones || file.fallback_ones.unwrap_or(false),
    }
}

fn load_data(dir: &Path) -> CliResult<LoadedDataset> {
    let data = load_dataset(dir)?;
    if data.patients.is_empty() {
        return Err(Error::Invalid(format!("{}: no usable patients", dir.display())).into());
    }
    Ok(data)
}

fn synth(a: SynthArgs) -> CliResult {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        patients: a.patients.or(file.patients).unwrap_or(d.patients),
        slices_per_patient: a.slices.or(file.slices).unwrap_or(d.slices_per_patient),
        image_size: a.image_size.or(file.image_size).unwrap_or(d.image_size),
        visits: a.visits.or(file.visits).unwrap_or(d.visits),
        noise_sd: a.noise_sd.or(file.noise_sd).unwrap_or(d.noise_sd),
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let seed = a.common.seed.or(file.seed).unwrap_or(0);
    let run = manifest("synth", &a.common, seed, &[]);
    let patients = generate_synthetic(&spec, seed)?;
    crate::dataset::write_dataset(&a.common.out, &patients, &run)?;
    log::info!("wrote {} patients to {}", patients.len(), a.common.out.display());
    Ok(())
}

/// `(slice path, output mask path)` for every slice named by the inputs.
fn mask_jobs(inputs: &[PathBuf], out: &Path) -> CliResult<Vec<(PathBuf, PathBuf)>> {
    let mut jobs = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let data = load_data(input)?;
            for p in &data.patients {
                for i in p.volume.kept_indices() {
                    let slice = p.volume.paths[i].clone();
                    let name = mask_path_for(&slice);
                    let target = out.join(p.id()).join(name.file_name().expect("slice file name"));
                    jobs.push((slice, target));
                }
            }
        } else {
            let name = mask_path_for(input);
            jobs.push((input.clone(), out.join(name.file_name().expect("slice file name"))));
        }
    }
    Ok(jobs)
}

fn mask(a: MaskArgs) -> CliResult {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let seed = a.common.seed.or(file.seed).unwrap_or(0);
    let inputs: Vec<&Path> = a.inputs.iter().map(PathBuf::as_path).collect();
    let run = manifest("mask", &a.common, seed, &inputs);
    let fallback = a.masks.fallback_ones || file.fallback_ones.unwrap_or(false);
    let jobs = mask_jobs(&a.inputs, &a.common.out)?;
    let header = vec![run.header_line()];
    let fallbacks: Vec<bool> = jobs
        .par_iter()
        .map(|(slice_path, out_path)| -> CliResult<bool> {
            let slice = read_hu_slice(slice_path)?;
            let params = MaskParams::for_size(slice.width(), slice.height());
            let (mask, fell_back) = if fallback {
                extract_or_full(&slice, &params)?
            } else {
                let m = extract_lung_mask(&slice, &params).map_err(|e| match e {
                    Error::NoLungRegion => Error::format(slice_path, "no lung region"),
                    other => other,
                })?;
                (m, false)
            };
            if fell_back {
                log::warn!("{}: no lung region, wrote an all-ones mask", slice_path.display());
            }
            if let Some(parent) = out_path.parent() {
                create_dir(parent)?;
            }
            write_mask(out_path, &mask, &header)?;
            Ok(fell_back)
        })
        .collect::<CliResult<_>>()?;
    log::info!(
        "wrote {} masks ({} fallbacks) to {}",
        jobs.len(),
        fallbacks.iter().filter(|&&f| f).count(),
        a.common.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Timing<'a> {
    run: &'a RunManifest,
    fold_seconds: Vec<f64>,
}

fn train(a: TrainArgs) -> CliResult {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let d = TrainConfig::default();
    let mut cfg = TrainConfig {
        folds: a.folds.or(file.folds).unwrap_or(d.folds),
        epochs: a.epochs.or(file.epochs).unwrap_or(d.epochs),
        batch_size: a.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        seed: a.common.seed.or(file.seed).unwrap_or(d.seed),
        precision: precision(a.precision.as_deref(), &file)?,
        eval_every: file.eval_every.unwrap_or(d.eval_every),
        sigma: sigma_policy(a.scoring.sigma_policy.as_deref(), a.scoring.clip.as_deref(), &file)?,
        masks: mask_policy(&a.masks, &file),
        ..d
    };
    cfg.optimizer.lr = a.lr.or(file.lr).unwrap_or(cfg.optimizer.lr);
    cfg.optimizer.weight_decay = file.weight_decay.unwrap_or(cfg.optimizer.weight_decay);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let model_cfg = file.model.clone().unwrap_or_default();
    model_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let data = load_data(&a.data)?;
    let run = manifest("train", &a.common, cfg.seed, &[&a.data]);
    let (prepared, skipped) = prepare_patients(&data.patients, model_cfg.image_size, &cfg.masks)?;
    for (id, why) in &skipped {
        log::warn!("skipped patient {id}: {why}");
    }
    if prepared.len() < cfg.folds {
        return Err(Error::Invalid(format!("{} usable patients for {} folds", prepared.len(), cfg.folds)).into());
    }
    create_dir(&a.common.out)?;
    let seconds = match cfg.precision {
        Precision::F32 => train_with::<f32>(&prepared, &model_cfg, &cfg, &run, &a.common.out)?,
        Precision::F64 => train_with::<f64>(&prepared, &model_cfg, &cfg, &run, &a.common.out)?,
    };
    write_json(
        &a.common.out.join("timing.json"),
        &Timing {
            run: &run,
            fold_seconds: seconds,
        },
    )
}

fn train_with<T: Real>(
    prepared: &[PreparedPatient],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    run: &RunManifest,
    out: &Path,
) -> CliResult<Vec<f64>> {
    let outcome = run_training::<T>(prepared, model_cfg, cfg, Some(run.clone()))?;
    outcome.log.write(&out.join("train_log.jsonl"))?;
    for f in &outcome.folds {
        f.checkpoint.save(&out.join(format!("fold_{}.safetensors", f.fold)))?;
    }
    Ok(outcome.folds.iter().map(|f| f.seconds).collect())
}

fn eval(a: EvalArgs) -> CliResult {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let policy = sigma_policy(a.scoring.sigma_policy.as_deref(), a.scoring.clip.as_deref(), &file)?;
    let masks = mask_policy(&a.masks, &file);
    let seed = a.common.seed.or(file.seed).unwrap_or(0);
    let run = manifest("eval", &a.common, seed, &[&a.checkpoint, &a.data]);
    let data = load_data(&a.data)?;
    let mut report = match precision(a.precision.as_deref(), &file)? {
        Precision::F32 => evaluate_model(&Checkpoint::<f32>::load(&a.checkpoint)?, &data.patients, &policy, &masks)?,
        Precision::F64 => evaluate_model(&Checkpoint::<f64>::load(&a.checkpoint)?, &data.patients, &policy, &masks)?,
    };
    report.run = Some(run);
    create_dir(&a.common.out)?;
    write_json(&a.common.out.join("metrics.json"), &report)
}

fn predictions<T: Real>(ckpt: &Checkpoint<T>, patients: &[PreparedPatient]) -> CliResult<Vec<PatientPrediction>> {
    patients
        .par_iter()
        .map(|p| predict_prepared(&ckpt.model, &ckpt.params, p, &ckpt.meta.norm, &ckpt.meta.target).map_err(Into::into))
        .collect()
}

fn predict(a: PredictArgs) -> CliResult {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let masks = mask_policy(&a.masks, &file);
    let seed = a.common.seed.or(file.seed).unwrap_or(0);
    let run = manifest("predict", &a.common, seed, &[&a.checkpoint, &a.data]);
    let data = load_data(&a.data)?;
    let preds = match precision(a.precision.as_deref(), &file)? {
        Precision::F32 => {
            let ckpt = Checkpoint::<f32>::load(&a.checkpoint)?;
            predictions(&ckpt, &prepare_patients(&data.patients, ckpt.meta.model.image_size, &masks)?.0)?
        }
        Precision::F64 => {
            let ckpt = Checkpoint::<f64>::load(&a.checkpoint)?;
            predictions(&ckpt, &prepare_patients(&data.patients, ckpt.meta.model.image_size, &masks)?.0)?
        }
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["patient_id", "week", "predicted_slope", "fvc_predicted", "fvc_observed"])
        .map_err(csv_error)?;
    for p in &preds {
        for (&(week, observed), predicted) in p.visits.iter().zip(p.reconstructed()) {
            w.write_record([
                p.patient_id.clone(),
                week.to_string(),
                p.predicted_slope.to_string(),
                predicted.to_string(),
                observed.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| csv_error(e.into_error()))?).expect("csv is utf-8");
    create_dir(&a.common.out)?;
    write_text(&a.common.out.join("predictions.csv"), &format!("# {}\n{body}", run.header_line()))
}

fn csv_error(e: impl std::fmt::Display) -> CliError {
    Error::Invalid(format!("csv: {e}")).into()
}

fn distfit(a: DistfitArgs) -> CliResult {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let seed = a.common.seed.or(file.seed).unwrap_or(0);
    let run = manifest("distfit", &a.common, seed, &[&a.data]);
    let csv_path = if a.data.is_dir() { a.data.join(CLINICAL_FILE) } else { a.data.clone() };
    let values: Vec<f64> = parse_clinical_csv(&csv_path)?.iter().map(|r| r.fvc).collect();
    let fit = fit_distributions(&values)?;

    let mut text = format!(
        "# {}\n# gaussian mean={} sd={}\n# laplace mu={} b={}\nbin_low,bin_high,count,density,gaussian_pdf,laplace_pdf\n",
        run.header_line(),
        fit.gaussian.mean,
        fit.gaussian.sd,
        fit.laplace.mu,
        fit.laplace.b
    );
    let width = fit.histogram.bin_width();
    let n = values.len() as f64;
    for (i, &count) in fit.histogram.counts.iter().enumerate() {
        let (lo, hi) = (fit.histogram.edges[i], fit.histogram.edges[i + 1]);
        let mid = 0.5 * (lo + hi);
        text.push_str(&format!(
            "{lo},{hi},{count},{},{},{}\n",
            count as f64 / (n * width),
            fit.gaussian.pdf(mid),
            fit.laplace.pdf(mid)
        ));
    }
    create_dir(&a.common.out)?;
    write_text(&a.common.out.join("distfit.csv"), &text)?;
    write_text(&a.common.out.join("distfit.svg"), &distfit_svg(&fit, values.len(), &run))
}

/// Scales a channel to 0..=255 by its own range; constant channels map to 0.
fn to_gray(channel: &[f64]) -> Vec<u16> {
    let lo = channel.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = channel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    channel
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u16 } else { 0 })
        .collect()
}

fn gate_channels(ckpt: &Checkpoint<f64>, patient: &PreparedPatient, slice: usize) -> CliResult<Tensor<f64>> {
    let inputs = patient.inputs(&ckpt.meta.norm);
    let input = inputs.get(slice).ok_or_else(|| {
        CliError::Usage(format!(
            "--slice {slice} out of range: patient {} has {} kept slices",
            patient.patient_id,
            inputs.len()
        ))
    })?;
    let s = ckpt.meta.model.image_size;
    let mut g = Graph::new(&ckpt.params);
    let to_var = |g: &mut Graph<'_, f64>, v: &[f32]| -> crate::Result<_> {
        Ok(g.input(Tensor::new(&[1, s, s], v.iter().map(|&x| f64::from(x)).collect())?))
    };
    let image = to_var(&mut g, &input.image)?;
    let mask = to_var(&mut g, &input.mask)?;
    let gated = ckpt.model.context_gate(&mut g, image, mask)?;
    Ok(g.value(gated).clone())
}

fn dump_features(a: DumpArgs) -> CliResult {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let masks = mask_policy(&a.masks, &file);
    let seed = a.common.seed.or(file.seed).unwrap_or(0);
    let run = manifest("dump-features", &a.common, seed, &[&a.checkpoint, &a.data]);
    let ckpt = Checkpoint::<f64>::load(&a.checkpoint)?;
    let data = load_data(&a.data)?;
    let sample = match &a.patient {
        Some(id) => data
            .patients
            .iter()
            .find(|p| p.id() == id)
            .ok_or_else(|| CliError::Usage(format!("unknown patient {id}")))?,
        None => &data.patients[0],
    };
    let prepared = crate::training::prepare_patient(sample, ckpt.meta.model.image_size, &masks)?;
    let gated = gate_channels(&ckpt, &prepared, a.slice)?;
    let s = ckpt.meta.model.image_size;
    create_dir(&a.common.out)?;
    let header = vec![run.header_line()];
    let save = |name: String, values: &[f64]| -> CliResult {
        write_pgm(&a.common.out.join(name), s, s, 255, &to_gray(values), &header)?;
        Ok(())
    };
    let input = &prepared.slices[a.slice];
    save("input.pgm".into(), &input.0.iter().map(|&v| f64::from(v)).collect::<Vec<_>>())?;
    save("mask.pgm".into(), &input.1.iter().map(|&v| f64::from(v)).collect::<Vec<_>>())?;
    for (c, channel) in gated.data().chunks(s * s).enumerate() {
        save(format!("gate_ch{c:02}.pgm"), channel)?;
    }
    Ok(())
}
