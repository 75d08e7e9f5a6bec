use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LossWeights, MlpModel, Real};
use crate::{Error, Result};

/// Step size per epoch: `initial` for the first `switch_after` epochs, then
/// `later`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub later: f64,
    pub switch_after: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 0.05, later: 0.01, switch_after: 10 }
    }
}

impl LrSchedule {
    /// Learning rate for 1-based `epoch`.
    pub fn at(&self, epoch: usize) -> f64 {
        if epoch <= self.switch_after {
            self.initial
        } else {
            self.later
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lambda: f64,
    pub lr: LrSchedule,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 128, lambda: 1e-5, lr: LrSchedule::default(), epochs: 40, seed: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss weighting attached to a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameWeights<T> {
    None,
    Global(Array1<T>),
    PerFrame(Array2<T>),
}

/// Training examples in raw (unnormalized) feature space, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Array2<T>,
    pub targets: Array2<T>,
    pub weights: FrameWeights<T>,
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.targets.nrows() != self.inputs.nrows() {
            return Err(Error::DimensionMismatch("inputs and targets differ in row count".into()));
        }
        match &self.weights {
            FrameWeights::Global(w) if w.len() != self.targets.ncols() => {
                Err(Error::DimensionMismatch("global weight length".into()))
            }
            FrameWeights::PerFrame(w) if w.dim() != self.targets.dim() => {
                Err(Error::DimensionMismatch("per-frame weight shape".into()))
            }
            _ => Ok(()),
        }
    }

    fn normalized(&self, model: &MlpModel<T>) -> Self {
        let mut out = self.clone();
        model.norm.normalize_inputs(&mut out.inputs);
        model.norm.normalize_targets(&mut out.targets);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

const EVAL_CHUNK: usize = 2048;

/// Mean data loss over a normalized dataset.
fn evaluate<T: Real>(model: &MlpModel<T>, data: &Dataset<T>) -> Result<f64> {
    let n = data.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let out = model.forward(data.inputs.slice(s![start..end, ..]))?;
        let target = data.targets.slice(s![start..end, ..]);
        let chunk_weights;
        let weights = match &data.weights {
            FrameWeights::None => LossWeights::None,
            FrameWeights::Global(w) => LossWeights::Global(w.view()),
            FrameWeights::PerFrame(w) => {
                chunk_weights = w.slice(s![start..end, ..]);
                LossWeights::PerSample(chunk_weights)
            }
        };
        let mean = MlpModel::data_loss(&out.view(), &target, weights);
        total += mean.to_f64().expect("finite") * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Minibatch SGD with a seeded shuffle per epoch. Datasets are given in raw
/// feature space and normalized with `model.norm`, which the caller fits on the
/// training set beforehand. Returns the parameters of the epoch with the lowest
/// validation loss.
pub fn train<T: Real>(
    model: MlpModel<T>,
    train_set: &Dataset<T>,
    validation_set: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(MlpModel<T>, TrainHistory)> {
    train_with_progress(model, train_set, validation_set, cfg, |_| {})
}

pub fn train_with_progress<T: Real>(
    mut model: MlpModel<T>,
    train_set: &Dataset<T>,
    validation_set: &Dataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(MlpModel<T>, TrainHistory)> {
    cfg.validate()?;
    model.validate()?;
    train_set.validate()?;
    validation_set.validate()?;
    for d in [train_set, validation_set] {
        if d.inputs.ncols() != model.input_dim() || d.targets.ncols() != model.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "dataset is {}->{}, model is {}->{}",
                d.inputs.ncols(),
                d.targets.ncols(),
                model.input_dim(),
                model.output_dim()
            )));
        }
    }
    let train_n = train_set.normalized(&model);
    let val_n = validation_set.normalized(&model);
    let lambda = T::from_f64_lossy(cfg.lambda);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_n.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, MlpModel<T>)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr.at(epoch);
        let lr_t = T::from_f64_lossy(lr);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let x = train_n.inputs.select(Axis(0), idx);
            let y = train_n.targets.select(Axis(0), idx);
            let selected = match &train_n.weights {
                FrameWeights::PerFrame(w) => Some(w.select(Axis(0), idx)),
                _ => None,
            };
            let weights = match (&train_n.weights, &selected) {
                (FrameWeights::Global(w), _) => LossWeights::Global(w.view()),
                (FrameWeights::PerFrame(_), Some(w)) => LossWeights::PerSample(w.view()),
                _ => LossWeights::None,
            };
            let (loss, grads) = model.loss_and_grad(x.view(), y.view(), weights, lambda)?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch, loss });
            }
            model.sgd_step(&grads, lr_t);
            loss_sum += loss;
            batches += 1;
        }
        let val_loss = evaluate(&model, &val_n)?;
        if !val_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch, loss: val_loss });
        }
        let record = EpochRecord { epoch, train_loss: loss_sum / batches as f64, val_loss, lr };
        on_epoch(&record);
        records.push(record);
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, model.clone()));
        }
    }
    let (best_epoch, best_val_loss, best_model) = best.expect("at least one epoch");
    Ok((best_model, TrainHistory { epochs: records, best_epoch, best_val_loss }))
}

/// Per-column mean and population standard deviation, the latter floored at
/// `std_floor`.
pub fn fit_norm_stats<T: Real>(data: &Array2<T>, std_floor: f64) -> (Array1<T>, Array1<T>) {
    let n = data.nrows().max(1) as f64;
    let cols = data.ncols();
    let mut mean = vec![0.0f64; cols];
    let mut sq = vec![0.0f64; cols];
    for row in data.rows() {
        for (j, &v) in row.iter().enumerate() {
            let v = v.to_f64().expect("finite");
            mean[j] += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for row in data.rows() {
        for (j, &v) in row.iter().enumerate() {
            let d = v.to_f64().expect("finite") - mean[j];
            sq[j] += d * d;
        }
    }
    let std: Array1<T> = sq.iter().map(|s| T::from_f64_lossy((s / n).sqrt().max(std_floor))).collect();
    let mean: Array1<T> = mean.into_iter().map(T::from_f64_lossy).collect();
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::FeatureNorm;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0f64..1.0));
        let targets = Array2::from_shape_fn((n, 2), |(i, j)| {
            if j == 0 {
                inputs[[i, 0]] * inputs[[i, 1]]
            } else {
                (inputs[[i, 2]] * 2.0).sin()
            }
        });
        Dataset { inputs, targets, weights: FrameWeights::None }
    }

    #[test]
    fn overfits_small_problem() {
        let data = toy(20, 1);
        let model = MlpModel::<f64>::init(&[3, 16, 2], 4).unwrap();
        let initial = evaluate(&model, &data).unwrap();
        let cfg = TrainConfig { batch_size: 4, lambda: 0.0, epochs: 200, ..Default::default() };
        let (best, hist) = train(model, &data, &data, &cfg).unwrap();
        assert_eq!(hist.epochs.len(), 200);
        let last = hist.epochs.last().unwrap().train_loss;
        assert!(last < 0.2 * initial, "initial {initial} final {last}");
        assert!(evaluate(&best, &data).unwrap() < 0.2 * initial);
    }

    #[test]
    fn deterministic_and_selects_min_validation() {
        let tr = toy(50, 2);
        let va = toy(15, 3);
        let cfg = TrainConfig { batch_size: 8, epochs: 12, ..Default::default() };
        let m = MlpModel::<f64>::init(&[3, 6, 6, 2], 5).unwrap();
        let (a, ha) = train(m.clone(), &tr, &va, &cfg).unwrap();
        let (b, hb) = train(m, &tr, &va, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        for r in &ha.epochs {
            assert!(ha.best_val_loss <= r.val_loss);
        }
        assert_eq!(ha.epochs[ha.best_epoch - 1].val_loss, ha.best_val_loss);
        assert_eq!(ha.epochs[0].lr, 0.05);
        assert_eq!(ha.epochs[11].lr, 0.01);
    }

    #[test]
    fn empty_and_diverging() {
        let empty = Dataset::<f64> {
            inputs: Array2::zeros((0, 3)),
            targets: Array2::zeros((0, 2)),
            weights: FrameWeights::None,
        };
        let m = MlpModel::<f64>::init(&[3, 2], 5).unwrap();
        assert!(matches!(train(m.clone(), &empty, &toy(3, 1), &TrainConfig::default()), Err(Error::EmptyDataset)));

        let mut data = toy(10, 1);
        data.targets.mapv_inplace(|v| v * 1e200);
        let cfg = TrainConfig { lr: LrSchedule { initial: 10.0, later: 10.0, switch_after: 1 }, ..Default::default() };
        assert!(matches!(train(m, &data, &data, &cfg), Err(Error::DivergedLoss { .. })));
    }

    #[test]
    fn normalization_round_trip() {
        let data = toy(30, 9);
        let (im, is) = fit_norm_stats(&data.inputs, 1e-6);
        let (tm, ts) = fit_norm_stats(&data.targets, 1e-6);
        let norm = FeatureNorm { input_mean: im, input_std: is, target_mean: tm, target_std: ts };
        let mut x = data.inputs.clone();
        norm.normalize_inputs(&mut x);
        for col in x.columns() {
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
        }
        let mut y = data.targets.clone();
        norm.normalize_targets(&mut y);
        norm.denormalize_targets(&mut y);
        for (a, b) in y.iter().zip(data.targets.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
