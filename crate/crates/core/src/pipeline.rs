//! End-to-end glue: manifest → split → preprocessing → training → evaluation.

use rayon::prelude::*;

use crate::data::{Manifest, SliceRecord, Split};
use crate::error::Result;
use crate::metrics::{confusion, evaluate_metrics, ConfusionMatrix, Metrics};
use crate::network::Network;
use crate::optim::{evaluate_samples, TrainData};
use crate::preprocess::{prepare_sample, ChannelSelection, SliceSample};

/// Load and preprocess `records` in order.
pub fn load_samples(
    manifest: &Manifest,
    records: &[SliceRecord],
    channels: ChannelSelection,
    canvas: usize,
) -> Result<Vec<SliceSample>> {
    records
        .par_iter()
        .map(|r| prepare_sample(&manifest.resolved(r), channels, canvas))
        .collect()
}

/// Preprocessed training inputs and test samples of a split.
pub fn prepare_split(
    manifest: &Manifest,
    split: &Split,
    channels: ChannelSelection,
    canvas: usize,
) -> Result<(TrainData, Vec<SliceSample>)> {
    let data = TrainData {
        pool: load_samples(manifest, &split.train, channels, canvas)?,
        validation: load_samples(manifest, &split.validation, channels, canvas)?,
        per_class: split.train_per_class,
    };
    let test = load_samples(manifest, &split.test, channels, canvas)?;
    Ok((data, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub loss: f64,
}

/// Metrics of `net` on `samples`.
pub fn evaluate(net: &Network, samples: &[SliceSample]) -> Result<Report> {
    let e = evaluate_samples(net, samples, 32)?;
    let preds: Vec<usize> = e.predictions.iter().map(|p| p.label).collect();
    let truths: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
    let cm = confusion(&preds, &truths)?;
    Ok(Report {
        confusion: cm,
        metrics: evaluate_metrics(&cm)?,
        loss: e.loss,
    })
}

/// Accuracy of `net` on `samples`, defined for one-class sets too.
pub fn accuracy(net: &Network, samples: &[SliceSample]) -> Result<f64> {
    Ok(evaluate_samples(net, samples, 32)?.accuracy)
}
