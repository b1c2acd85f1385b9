//! Confusion matrix and the sensitivity / specificity / accuracy triple.
//! Codeleted (label 1) is the positive class.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same outcomes with the other class treated as positive.
    pub fn swapped(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tp={} fp={} tn={} fn={}",
            self.tp, self.fp, self.tn, self.fn_
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

pub fn confusion(predictions: &[usize], truths: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::dim(
            "confusion",
            format!(
                "{} predictions for {} truths",
                predictions.len(),
                truths.len()
            ),
        ));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p, t) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fn_ += 1,
            _ => {
                return Err(Error::Label {
                    label: p.max(t),
                    classes: 2,
                })
            }
        }
    }
    Ok(cm)
}

fn ratio(num: usize, den: usize, name: &'static str) -> Result<f64> {
    if den == 0 {
        Err(Error::UndefinedMetric(name))
    } else {
        Ok(num as f64 / den as f64)
    }
}

pub fn sensitivity(cm: &ConfusionMatrix) -> Result<f64> {
    ratio(cm.tp, cm.tp + cm.fn_, "sensitivity")
}

pub fn specificity(cm: &ConfusionMatrix) -> Result<f64> {
    ratio(cm.tn, cm.tn + cm.fp, "specificity")
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    ratio(cm.tp + cm.tn, cm.total(), "accuracy")
}

pub fn evaluate_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    Ok(Metrics {
        sensitivity: sensitivity(cm)?,
        specificity: specificity(cm)?,
        accuracy: accuracy(cm)?,
    })
}
