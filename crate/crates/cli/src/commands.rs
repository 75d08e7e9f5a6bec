//! The experiment steps behind each subcommand.
//!
//! Work directory layout:
//!
//! ```text
//! manifests/{split}.jsonl
//! mixes/{split}/{id}.wav, mixes/{split}/stats.csv
//! models/{label}.model.json, models/{label}.history.csv
//! enhanced/{label}/{id}.enh.wav
//! reports/{split}_utterances.csv, reports/{split}_aggregate.csv
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use denoise_core::audio::{read_wav, write_wav, AudioSignal, WavEncoding};
use denoise_core::metrics::{evaluate_utterance, MetricsReport, UtteranceMetrics};
use denoise_core::mixer::{build_manifest, entry_seed, measured_snr_db, mix_at_offsets, DatasetManifest, MixSpec, Split};
use denoise_core::mlp::{load_model, save_model, train_with_progress, MlpModel, TrainHistory};
use denoise_core::pipeline::{
    enhance, fit_feature_norm, logmmse_enhance_with, stack_dataset, utterance_features, InputMode, LossMode,
};
use denoise_core::synth::{synth_noise, synth_utterance, TEST_NOISES, TRAIN_NOISES};
use denoise_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })
}

fn write_file(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, contents).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })
}

fn write_csv<R: Serialize>(p: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("CSV encoding: {e}")))?;
    }
    write_file(p, w.into_inner().map_err(|e| Error::Config(format!("CSV encoding: {e}")))?)
}

/// Path as stored in manifests: relative to the config directory when possible.
fn manifest_path(cfg: &ExperimentConfig, p: &Path) -> String {
    p.strip_prefix(cfg.base_dir()).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    out.sort();
    Ok(out)
}

fn clean_dir(cfg: &ExperimentConfig, split: Split) -> PathBuf {
    cfg.resolve(match split {
        Split::Train => &cfg.paths.clean_train,
        Split::Validation => &cfg.paths.clean_validation,
        Split::Test => &cfg.paths.clean_test,
    })
}

/// Validation mixtures use the held-out noises, as test mixtures do.
fn noise_dir(cfg: &ExperimentConfig, split: Split) -> PathBuf {
    cfg.resolve(match split {
        Split::Train => &cfg.paths.noise_train,
        Split::Validation | Split::Test => &cfg.paths.noise_test,
    })
}

pub fn manifest_file(cfg: &ExperimentConfig, split: Split) -> PathBuf {
    cfg.work_dir().join("manifests").join(format!("{split}.jsonl"))
}

pub fn mix_dir(cfg: &ExperimentConfig, split: Split) -> PathBuf {
    cfg.work_dir().join("mixes").join(split.name())
}

pub fn model_file(cfg: &ExperimentConfig, label: &str) -> PathBuf {
    cfg.work_dir().join("models").join(format!("{label}.model.json"))
}

pub fn history_file(cfg: &ExperimentConfig, label: &str) -> PathBuf {
    cfg.work_dir().join("models").join(format!("{label}.history.csv"))
}

pub fn enhanced_dir(cfg: &ExperimentConfig, label: &str) -> PathBuf {
    cfg.work_dir().join("enhanced").join(label)
}

pub fn report_files(cfg: &ExperimentConfig, split: Split) -> (PathBuf, PathBuf) {
    let dir = cfg.work_dir().join("reports");
    (dir.join(format!("{split}_utterances.csv")), dir.join(format!("{split}_aggregate.csv")))
}

/// Name of a trained model: the input mode, suffixed by the loss unless MSE.
pub fn model_label(mode: InputMode, loss: LossMode) -> String {
    match loss {
        LossMode::Mse => mode.to_string(),
        other => format!("{mode}-{other}"),
    }
}

pub const BASELINE_LABEL: &str = "logmmse";

/// Writes the synthetic clean and noise corpora named in the config.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    let c = &cfg.corpus;
    for (split, count) in
        [(Split::Train, c.train_utterances), (Split::Validation, c.validation_utterances), (Split::Test, c.test_utterances)]
    {
        let dir = clean_dir(cfg, split);
        create_dir(&dir)?;
        (0..count).into_par_iter().try_for_each(|i| {
            let utt = synth_utterance(entry_seed(cfg.seed ^ 0x5eed_c1ea, split, i), c.utterance_secs);
            write_wav(&utt, dir.join(format!("utt_{i:04}.wav")), WavEncoding::Pcm16)
        })?;
    }
    for (kinds, split) in [(&TRAIN_NOISES[..], Split::Train), (&TEST_NOISES[..], Split::Test)] {
        let dir = noise_dir(cfg, split);
        create_dir(&dir)?;
        for kind in kinds {
            let n = synth_noise(*kind, cfg.seed, c.noise_secs);
            write_wav(&n, dir.join(format!("{kind}.wav")), WavEncoding::Float32)?;
        }
    }
    Ok(())
}

/// Noise recordings referenced by a manifest, loaded once.
fn load_noises(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<HashMap<String, AudioSignal>> {
    let mut out = HashMap::new();
    for e in &manifest.entries {
        for n in &e.noises {
            if !out.contains_key(n) {
                out.insert(n.clone(), read_wav(cfg.resolve(Path::new(n)))?);
            }
        }
    }
    Ok(out)
}

/// Clean signal and noisy mixture of one manifest entry.
fn render(cfg: &ExperimentConfig, spec: &MixSpec, noises: &HashMap<String, AudioSignal>) -> Result<(AudioSignal, AudioSignal)> {
    let clean = read_wav(cfg.resolve(Path::new(&spec.clean)))?;
    let refs: Vec<&AudioSignal> = spec.noises.iter().map(|n| &noises[n]).collect();
    let mix = mix_at_offsets(&clean, &refs, &spec.offsets, spec.snr_db)?;
    Ok((clean, mix.noisy))
}

#[derive(Debug, Serialize)]
struct MixStat<'a> {
    id: &'a str,
    clean: &'a str,
    noises: String,
    requested_snr_db: f64,
    measured_snr_db: f64,
}

#[derive(Debug)]
pub struct MixOutcome {
    pub manifest: PathBuf,
    pub files: Vec<PathBuf>,
    pub stats: PathBuf,
}

/// Draws a manifest for `split` and renders its noisy mixtures.
pub fn cmd_mix(cfg: &ExperimentConfig, split: Split, count: Option<usize>) -> Result<MixOutcome> {
    let count = count.unwrap_or(match split {
        Split::Train => cfg.corpus.train_mixes,
        Split::Validation => cfg.corpus.validation_mixes,
        Split::Test => cfg.corpus.test_mixes,
    });
    let names = |paths: Vec<PathBuf>| paths.iter().map(|p| manifest_path(cfg, p)).collect::<Vec<_>>();
    let clean = names(list_wavs(&clean_dir(cfg, split))?);
    let noise = names(list_wavs(&noise_dir(cfg, split))?);
    let manifest = build_manifest(&clean, &noise, split, count, cfg.seed)?;
    let manifest_path = manifest_file(cfg, split);
    create_dir(manifest_path.parent().expect("manifest dir"))?;
    manifest.write(&manifest_path)?;

    let out_dir = mix_dir(cfg, split);
    create_dir(&out_dir)?;
    let noises = load_noises(cfg, &manifest)?;
    let results: Vec<(PathBuf, f64)> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let (clean, noisy) = render(cfg, e, &noises)?;
            let path = out_dir.join(format!("{}.wav", e.id));
            write_wav(&noisy, &path, WavEncoding::Float32)?;
            // Measured on the file as written.
            let written = read_wav(&path)?;
            let residual: Vec<f64> = written.samples.iter().zip(&clean.samples).map(|(y, c)| y - c).collect();
            Ok((path, measured_snr_db(&clean.samples, &residual)))
        })
        .collect::<Result<_>>()?;
    let stats: Vec<MixStat> = manifest
        .entries
        .iter()
        .zip(&results)
        .map(|(e, (_, snr))| MixStat {
            id: &e.id,
            clean: &e.clean,
            noises: e.noises.join(";"),
            requested_snr_db: e.snr_db,
            measured_snr_db: *snr,
        })
        .collect();
    let stats_path = out_dir.join("stats.csv");
    write_csv(&stats_path, &stats)?;
    Ok(MixOutcome { manifest: manifest_path, files: results.into_iter().map(|(p, _)| p).collect(), stats: stats_path })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub label: String,
    pub model: PathBuf,
    pub history_csv: PathBuf,
    pub history: TrainHistory,
}

fn features_for(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    loss: LossMode,
) -> Result<Vec<denoise_core::pipeline::UtteranceFeatures>> {
    let noises = load_noises(cfg, manifest)?;
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let (clean, noisy) = render(cfg, e, &noises)?;
            utterance_features(&clean, &noisy, &cfg.feature, &cfg.stft, loss)
        })
        .collect()
}

/// Trains a model for the configured input mode and loss on the training
/// manifest, selecting the epoch with the lowest validation loss.
pub fn cmd_train(cfg: &ExperimentConfig, on_epoch: impl FnMut(&denoise_core::mlp::EpochRecord)) -> Result<TrainOutcome> {
    let (mode, loss) = (cfg.feature.mode, cfg.train.loss);
    let label = model_label(mode, loss);
    let train_manifest = DatasetManifest::read(manifest_file(cfg, Split::Train))?;
    let val_manifest = DatasetManifest::read(manifest_file(cfg, Split::Validation))?;
    let train_set = stack_dataset::<f32>(&features_for(cfg, &train_manifest, loss)?, loss, &cfg.stft)?;
    let val_set = stack_dataset::<f32>(&features_for(cfg, &val_manifest, loss)?, loss, &cfg.stft)?;

    let mut dims = vec![train_set.inputs.ncols()];
    dims.extend(&cfg.model.hidden);
    dims.push(train_set.targets.ncols());
    let mut model = MlpModel::<f32>::init(&dims, cfg.seed)?;
    model.norm = fit_feature_norm(&train_set, &cfg.feature)?;
    let (model, history) = train_with_progress(model, &train_set, &val_set, &cfg.train_config(), on_epoch)?;

    let models = cfg.work_dir().join("models");
    create_dir(&models)?;
    let metadata = BTreeMap::from([
        ("mode".to_string(), mode.to_string()),
        ("loss".to_string(), loss.to_string()),
        ("tau".to_string(), cfg.feature.tau.to_string()),
        ("best_epoch".to_string(), history.best_epoch.to_string()),
        ("best_val_loss".to_string(), history.best_val_loss.to_string()),
        ("epochs".to_string(), history.epochs.len().to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
    ]);
    let model_path = model_file(cfg, &label);
    save_model(&model, &metadata, &model_path)?;
    let history_path = history_file(cfg, &label);
    write_csv(&history_path, &history.epochs)?;
    Ok(TrainOutcome { label, model: model_path, history_csv: history_path, history })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Enhancer {
    /// The trained model for the configured mode and loss.
    Model,
    LogMmse,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnhanceInput {
    /// Every mixture of a split's manifest.
    Manifest(Split),
    /// One WAV file.
    File(PathBuf),
}

impl Enhancer {
    pub fn label(&self, cfg: &ExperimentConfig) -> String {
        match self {
            Enhancer::Model => model_label(cfg.feature.mode, cfg.train.loss),
            Enhancer::LogMmse => BASELINE_LABEL.to_string(),
        }
    }
}

/// Enhances each input into `out_dir` (default `enhanced/{label}/`) as
/// `{stem}.enh.wav`.
pub fn cmd_enhance(
    cfg: &ExperimentConfig,
    enhancer: &Enhancer,
    input: &EnhanceInput,
    out_dir: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let label = enhancer.label(cfg);
    let model = match enhancer {
        Enhancer::Model => Some(load_model::<f32>(model_file(cfg, &label))?.0),
        Enhancer::LogMmse => None,
    };
    let inputs: Vec<PathBuf> = match input {
        EnhanceInput::Manifest(split) => {
            let m = DatasetManifest::read(manifest_file(cfg, *split))?;
            m.entries.iter().map(|e| mix_dir(cfg, *split).join(format!("{}.wav", e.id))).collect()
        }
        EnhanceInput::File(p) => vec![p.clone()],
    };
    let out_dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| enhanced_dir(cfg, &label));
    create_dir(&out_dir)?;
    inputs
        .par_iter()
        .map(|path| {
            let noisy = read_wav(path)?;
            let out = match &model {
                Some(m) => enhance(m, &noisy, &cfg.feature, &cfg.stft)?,
                None => logmmse_enhance_with(&noisy, &cfg.stft, &cfg.logmmse)?,
            };
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let dst = out_dir.join(format!("{stem}.enh.wav"));
            write_wav(&out, &dst, WavEncoding::Float32)?;
            Ok(dst)
        })
        .collect()
}

/// Scores the noisy mixtures and each labelled system's enhanced output for
/// every entry of the split's manifest, writing per-utterance and aggregate
/// CSVs.
pub fn cmd_evaluate(cfg: &ExperimentConfig, split: Split, labels: &[String]) -> Result<MetricsReport> {
    let manifest = DatasetManifest::read(manifest_file(cfg, split))?;
    let per_entry: Vec<Vec<UtteranceMetrics>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let clean = read_wav(cfg.resolve(Path::new(&e.clean)))?;
            let noisy = read_wav(mix_dir(cfg, split).join(format!("{}.wav", e.id)))?;
            let mut rows = Vec::with_capacity(labels.len() + 1);
            let systems = std::iter::once(("noisy".to_string(), None))
                .chain(labels.iter().map(|l| (l.clone(), Some(enhanced_dir(cfg, l).join(format!("{}.enh.wav", e.id))))));
            for (mode, path) in systems {
                let processed = match path {
                    Some(p) => read_wav(p)?,
                    None => noisy.clone(),
                };
                let (stoi, sd, nr, seg_snr_db) = evaluate_utterance(&clean, &noisy, &processed, &cfg.stft)?;
                rows.push(UtteranceMetrics { utterance_id: e.id.clone(), snr_db: e.snr_db, mode, stoi, sd, nr, seg_snr_db });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let report = MetricsReport { rows: per_entry.into_iter().flatten().collect() };
    let (utt_path, agg_path) = report_files(cfg, split);
    create_dir(utt_path.parent().expect("report dir"))?;
    write_file(&utt_path, report.to_csv())?;
    write_file(&agg_path, report.aggregate_csv())?;
    Ok(report)
}
