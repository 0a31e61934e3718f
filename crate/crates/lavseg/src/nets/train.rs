//! Training loop: Adam, gradient clipping, early stopping, learning curve.

use crate::autodiff::{bce_loss, l2_penalty, Parameter, Tensor};
use crate::error::{Error, Result};
use crate::metrics;
use crate::patchwork::{PatchSet, PATCH_SIZE};
use crate::raster::BandCombo;
use crate::rng::RngStream;

use super::network::{predict_probs, select_input_channels, Network};
use super::{Checkpoint, CheckpointMeta, TrainConfig};

/// One learning-curve row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
}

/// Per-epoch training history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub records: Vec<CurveRecord>,
}

impl LearningCurve {
    /// CSV with 6 decimal places: `epoch,train_loss,val_loss,val_dice`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_dice\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_dice
            ));
        }
        out
    }
}

/// Early stopping on validation loss with strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Record an epoch's validation loss. Returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-7).
struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    fn new(lr: f64, params: &[&mut Parameter<f32>]) -> Adam {
        Adam {
            lr: lr as f32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    fn step(&mut self, params: &mut [&mut Parameter<f32>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((w, &g), (mi, vi)) in p
                .value
                .data
                .iter_mut()
                .zip(&p.grad.data)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Global gradient norm over all parameters.
pub fn global_grad_norm(params: &[&mut Parameter<f32>]) -> f64 {
    let mut sq = 0.0f64;
    for p in params {
        for &g in &p.grad.data {
            sq += (g as f64) * (g as f64);
        }
    }
    sq.sqrt()
}

/// Scale all gradients so the global norm does not exceed `clip_norm`.
pub fn clip_global_norm(params: &mut [&mut Parameter<f32>], clip_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm > clip_norm {
        let scale = (clip_norm / norm) as f32;
        for p in params.iter_mut() {
            for g in &mut p.grad.data {
                *g *= scale;
            }
        }
    }
    norm
}

/// L2 penalty value without touching gradients.
fn l2_value(params: &[&Parameter<f32>], lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let sum: f64 = params
        .iter()
        .filter(|p| p.decay_eligible)
        .flat_map(|p| p.value.data.iter())
        .map(|&w| (w as f64) * (w as f64))
        .sum();
    lambda / 2.0 * sum
}

/// Copy patches `idxs` into batch input/target tensors.
fn batch_tensors(set: &PatchSet, idxs: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
    let b = idxs.len();
    let c = set.channels();
    let mut x = Tensor::zeros(b, c, PATCH_SIZE, PATCH_SIZE);
    let mut t = Tensor::zeros(b, 1, PATCH_SIZE, PATCH_SIZE);
    for (bi, &i) in idxs.iter().enumerate() {
        x.item_mut(bi).copy_from_slice(set.image(i));
        for (dst, &m) in t.item_mut(bi).iter_mut().zip(set.mask(i)) {
            *dst = m as f32;
        }
    }
    (x, t)
}

/// Result of a training run.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: LearningCurve,
    /// Epoch whose weights the checkpoint carries (1-based).
    pub best_epoch: usize,
    /// Last epoch actually run (1-based).
    pub stopped_epoch: usize,
}

/// Train a network on a patch set.
///
/// Per epoch: a seeded shuffle, mini-batches of BCE + L2 with backward,
/// optional global-norm clipping, and an Adam step; then validation loss
/// (BCE plus the current L2 penalty) and validation Dice. Stops early
/// after `patience` epochs without validation-loss improvement and
/// returns the parameters of the best-validation epoch.
pub fn train(
    net: &mut Network<f32>,
    train_set: &PatchSet,
    val_set: &PatchSet,
    tc: &TrainConfig,
    combo: BandCombo,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Argument("train and val sets must be non-empty".into()));
    }
    let train_in = select_input_channels(train_set, combo)?;
    let val_in = select_input_channels(val_set, combo)?;
    if train_in.channels() != net.config().in_channels {
        return Err(Error::Shape(format!(
            "combo {} provides {} channels, network expects {}",
            combo,
            train_in.channels(),
            net.config().in_channels
        )));
    }
    let lambda = net.config().l2_lambda;
    let mut adam = Adam::new(tc.learning_rate, &net.params_mut());
    let mut stopper = EarlyStopping::new(tc.patience);
    let mut curve = LearningCurve::default();
    let mut dropout_rng = RngStream::derive(tc.seed, "dropout", 0);
    let mut best_params: Option<Vec<Tensor<f32>>> = None;
    let mut stopped_epoch = 0;

    for epoch in 1..=tc.epochs {
        let mut order: Vec<usize> = (0..train_in.len()).collect();
        RngStream::derive(tc.seed, "shuffle", epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut sample_count = 0usize;
        for (batch_idx, chunk) in order.chunks(tc.batch_size).enumerate() {
            let (x, t) = batch_tensors(&train_in, chunk);
            net.zero_grads();
            let (y, cache) = net.forward(&x, true, &mut dropout_rng)?;
            let (bce, d_pred) = bce_loss(&y, &t)?;
            net.backward(&cache, &d_pred)?;
            let mut params = net.params_mut();
            let penalty = l2_penalty(&mut params, lambda);
            let batch_loss = bce + penalty;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    reason: format!("loss {batch_loss}"),
                });
            }
            if let Some(clip) = tc.clip_norm {
                clip_global_norm(&mut params, clip);
            }
            adam.step(&mut params);
            loss_sum += batch_loss * chunk.len() as f64;
            sample_count += chunk.len();
        }
        let train_loss = loss_sum / sample_count as f64;

        let (val_bce, val_dice) = evaluate(net, &val_in, tc.batch_size)?;
        let val_loss = val_bce + l2_value(&net.params(), lambda);
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                reason: format!("validation loss {val_loss}"),
            });
        }
        curve.records.push(CurveRecord {
            epoch,
            train_loss,
            val_loss,
            val_dice,
        });
        stopped_epoch = epoch;

        let (improved, stop) = stopper.update(epoch, val_loss);
        if improved {
            best_params = Some(net.params().iter().map(|p| p.value.clone()).collect());
        }
        if stop {
            break;
        }
    }

    if let Some(best) = best_params {
        for (p, v) in net.params_mut().into_iter().zip(best) {
            p.value = v;
        }
    }
    let meta = CheckpointMeta {
        arch: *net.config(),
        combo: Some(combo),
        seed: tc.seed,
        best_epoch: stopper.best_epoch(),
        stopped_epoch,
        best_val_loss: stopper.best_loss(),
    };
    let checkpoint = Checkpoint::from_network(net, meta);
    Ok(TrainOutcome {
        checkpoint,
        curve,
        best_epoch: stopper.best_epoch(),
        stopped_epoch,
    })
}

/// Mean BCE and micro-aggregated Dice over a set (inference mode).
pub fn evaluate(
    net: &mut Network<f32>,
    set: &PatchSet,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0f64;
    let mut counts = metrics::ConfusionCounts::default();
    let n = set.len();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idxs: Vec<usize> = (start..end).collect();
        let (x, t) = batch_tensors(set, &idxs);
        let y = predict_probs(net, &x)?;
        let (bce, _) = bce_loss(&y, &t)?;
        loss_sum += bce * idxs.len() as f64;
        let pred: Vec<u8> = y.data.iter().map(|&p| if p > 0.5 { 1 } else { 0 }).collect();
        let truth: Vec<u8> = t.data.iter().map(|&v| if v > 0.5 { 1 } else { 0 }).collect();
        counts = counts.merge(&metrics::accumulate(&pred, &truth)?);
        start = end;
    }
    let report = metrics::derive(counts, metrics::ReportContext::default())?;
    Ok((loss_sum / n as f64, report.dice))
}
