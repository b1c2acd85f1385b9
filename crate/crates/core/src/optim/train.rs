use super::{early_stop, OptimizerState, TrainConfig};
use crate::data::balanced_sample;
use crate::error::{Error, Result};
use crate::network::{predictions_from_probs, Network, Prediction};
use crate::preprocess::{build_epoch_training_set, SliceSample};
use crate::tensor::{nll_loss, Tensor};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// Preprocessed inputs of a training run.
#[derive(Debug, Clone)]
pub struct TrainData {
    /// Pool the balanced per-epoch subset is drawn from.
    pub pool: Vec<SliceSample>,
    pub validation: Vec<SliceSample>,
    /// Slices of each class in every epoch's subset.
    pub per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

pub fn stack_samples(samples: &[SliceSample]) -> Result<(Tensor, Vec<usize>)> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let labels = samples.iter().map(|s| s.label.index()).collect();
    Ok((Tensor::stack(&images)?, labels))
}

/// Mean NLL, accuracy and per-sample predictions over `samples`.
pub fn evaluate_samples(
    net: &Network,
    samples: &[SliceSample],
    batch_size: usize,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Degenerate(
            "cannot evaluate an empty sample set".into(),
        ));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let (x, y) = stack_samples(chunk)?;
        let probs = net.forward(&x, false)?;
        loss += nll_loss(&probs, &y)? as f64 * chunk.len() as f64;
        let preds = predictions_from_probs(&probs);
        correct += preds.iter().zip(&y).filter(|(p, &t)| p.label == t).count();
        predictions.extend(preds);
    }
    let n = samples.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        predictions,
    })
}

pub fn train_loop(net: &mut Network, data: &TrainData, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    train_loop_with(net, data, cfg, |_, _| {})
}

/// The epoch loop; `observer` sees each log row and the network after it.
pub fn train_loop_with(
    net: &mut Network,
    data: &TrainData,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochLog, &Network),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.pool.is_empty() || data.per_class == 0 {
        return Err(Error::Split("empty training pool".into()));
    }
    let mut state = OptimizerState::new(cfg.optimizer);
    let mut logs = Vec::new();
    let mut val_losses = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.schedule.lr(epoch);
        let subset = balanced_sample(&data.pool, data.per_class, epoch, cfg.master_seed)?;
        let set = build_epoch_training_set(
            &subset,
            cfg.augmentation_fold,
            epoch,
            cfg.master_seed,
            &cfg.augment,
        );
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, chunk) in set.chunks(cfg.batch_size).enumerate() {
            let (x, y) = stack_samples(chunk)?;
            let (loss, probs) = net.compute_gradients(&x, &y).map_err(|e| match e {
                Error::Numeric { op } => Error::Divergence {
                    epoch,
                    detail: format!("non-finite values in {op} on minibatch {b}"),
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("loss {loss} on minibatch {b}"),
                });
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            correct += predictions_from_probs(&probs)
                .iter()
                .zip(&y)
                .filter(|(p, &t)| p.label == t)
                .count();
            state.step(net.parameters_mut(), lr as f32)?;
        }
        if let Some(p) = net.parameters().iter().find(|p| !p.tensor.all_finite()) {
            return Err(Error::Divergence {
                epoch,
                detail: format!("parameter `{}` became non-finite", p.name),
            });
        }
        let n = set.len() as f64;
        let (val_loss, val_acc) = if data.validation.is_empty() {
            (None, None)
        } else {
            let e = evaluate_samples(net, &data.validation, cfg.batch_size)?;
            if !e.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("validation loss {}", e.loss),
                });
            }
            (Some(e.loss), Some(e.accuracy))
        };
        let log = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        };
        observer(&log, net);
        logs.push(log);
        if let Some(v) = val_loss {
            val_losses.push(v);
            if early_stop(&val_losses, cfg.early_stop_delta, cfg.early_stop_patience) {
                break;
            }
        }
    }
    Ok(logs)
}
