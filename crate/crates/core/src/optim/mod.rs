//! Optimizers, learning-rate schedule, early stopping and the training loop.

mod train;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Parameter;

pub use train::{
    evaluate_samples, stack_samples, train_loop, train_loop_with, EpochLog, Evaluation, TrainData,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    RmsProp,
    AdaDelta,
    Adam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Sgd,
        OptimizerKind::RmsProp,
        OptimizerKind::AdaDelta,
        OptimizerKind::Adam,
    ];
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::AdaDelta => "adadelta",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown optimizer `{s}` (sgd|rmsprop|adadelta|adam)"
                ))
            })
    }
}

pub const RMSPROP_DECAY: f32 = 0.9;
pub const RMSPROP_EPS: f32 = 1e-8;
pub const ADADELTA_RHO: f32 = 0.95;
pub const ADADELTA_EPS: f32 = 1e-6;
pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

#[derive(Debug, Clone, Default, PartialEq)]
struct Buffers {
    first: Vec<f32>,
    second: Vec<f32>,
}

/// Per-parameter accumulators, created lazily at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    buffers: HashMap<String, Buffers>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerState {
            kind,
            buffers: HashMap::new(),
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// All accumulator values, for inspection in tests.
    pub fn buffer_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.buffers
            .values()
            .flat_map(|b| b.first.iter().chain(&b.second).copied())
    }

    /// Apply one update to every trainable parameter from its gradient buffer.
    pub fn step(&mut self, params: &mut [Parameter<f32>], lr: f32) -> Result<()> {
        for p in params.iter().filter(|p| p.trainable) {
            match p.tensor.grad() {
                Some(g) if g.len() == p.tensor.len() => {}
                Some(g) => {
                    return Err(Error::ParameterMismatch {
                        name: p.name.clone(),
                        detail: format!(
                            "gradient has {} entries for {} weights",
                            g.len(),
                            p.tensor.len()
                        ),
                    })
                }
                None => return Err(Error::MissingGradient(p.name.clone())),
            }
        }
        self.step += 1;
        let t = self.step as i32;
        for p in params.iter_mut().filter(|p| p.trainable) {
            let n = p.tensor.len();
            let buf = self
                .buffers
                .entry(p.name.clone())
                .or_insert_with(|| Buffers {
                    first: vec![0.0; n],
                    second: vec![0.0; n],
                });
            let grad = p.tensor.grad.take().expect("checked above");
            let w = p.tensor.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in w.iter_mut().zip(&grad) {
                        *w -= lr * g;
                    }
                }
                OptimizerKind::RmsProp => {
                    for ((w, g), a) in w.iter_mut().zip(&grad).zip(&mut buf.second) {
                        *a = RMSPROP_DECAY * *a + (1.0 - RMSPROP_DECAY) * g * g;
                        *w -= lr * g / (a.sqrt() + RMSPROP_EPS);
                    }
                }
                OptimizerKind::AdaDelta => {
                    for (i, (w, g)) in w.iter_mut().zip(&grad).enumerate() {
                        let eg = &mut buf.second[i];
                        *eg = ADADELTA_RHO * *eg + (1.0 - ADADELTA_RHO) * g * g;
                        let ed = &mut buf.first[i];
                        let dx = -((*ed + ADADELTA_EPS).sqrt() / (*eg + ADADELTA_EPS).sqrt()) * g;
                        *ed = ADADELTA_RHO * *ed + (1.0 - ADADELTA_RHO) * dx * dx;
                        *w += dx;
                    }
                }
                OptimizerKind::Adam => {
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    for ((w, g), (m, v)) in w
                        .iter_mut()
                        .zip(&grad)
                        .zip(buf.first.iter_mut().zip(buf.second.iter_mut()))
                    {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
            p.tensor.grad = Some(grad);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub halving_period: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 0.001,
            halving_period: 50,
        }
    }
}

impl LrSchedule {
    /// `base_lr` halved once per completed period.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base_lr * 0.5f64.powi((epoch / self.halving_period) as i32)
    }
}

/// True once the last `patience` epoch-to-epoch changes are all below `delta`
/// in absolute value.
pub fn early_stop(validation_losses: &[f64], delta: f64, patience: usize) -> bool {
    if patience == 0 || validation_losses.len() < patience + 1 {
        return false;
    }
    validation_losses[validation_losses.len() - patience - 1..]
        .windows(2)
        .all(|w| (w[1] - w[0]).abs() < delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub early_stop_delta: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub augmentation_fold: usize,
    pub augment: crate::preprocess::AugmentParams,
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Sgd,
            schedule: LrSchedule::default(),
            batch_size: 32,
            early_stop_delta: 0.02,
            early_stop_patience: 10,
            max_epochs: 200,
            augmentation_fold: 0,
            augment: Default::default(),
            master_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.schedule.base_lr > 0.0) || self.schedule.halving_period == 0 {
            return Err(Error::Config(
                "learning rate and halving period must be positive".into(),
            ));
        }
        if !(self.early_stop_delta > 0.0) || self.early_stop_patience == 0 {
            return Err(Error::Config(
                "early-stop delta and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn param(w: f32, g: f32) -> Vec<Parameter<f32>> {
        let mut p = Parameter::new("w", Tensor::new(vec![1], vec![w]).unwrap());
        p.tensor.grad = Some(vec![g]);
        vec![p]
    }

    fn one_step(kind: OptimizerKind, w: f32, g: f32, lr: f32) -> f32 {
        let mut p = param(w, g);
        OptimizerState::new(kind).step(&mut p, lr).unwrap();
        p[0].tensor.data()[0]
    }

    #[test]
    fn first_steps_by_hand() {
        assert!((one_step(OptimizerKind::Sgd, 1.0, 0.5, 0.1) - 0.95).abs() < 1e-7);
        let adam = one_step(OptimizerKind::Adam, 1.0, 1.0, 0.001);
        assert!((adam - (1.0 - 0.001 / (1.0 + 1e-8))).abs() < 1e-6, "{adam}");
        let rms = one_step(OptimizerKind::RmsProp, 1.0, 1.0, 0.001);
        assert!((rms - (1.0 - 0.001 / 0.1f32.sqrt())).abs() < 1e-6, "{rms}");
        assert!((rms - 0.99684).abs() < 1e-5);
        // sqrt(eps) / sqrt(0.05 + eps) regardless of lr
        let ada = one_step(OptimizerKind::AdaDelta, 1.0, 1.0, 123.0);
        let expect = 1.0 - (1e-6f64.sqrt() / (0.05f64 + 1e-6).sqrt());
        assert!((ada as f64 - expect).abs() < 1e-6, "{ada}");
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for kind in OptimizerKind::ALL {
            let w = one_step(kind, 0.7, 0.0, 0.01);
            assert!((w - 0.7).abs() < 1e-9, "{kind}");
        }
        assert_eq!(one_step(OptimizerKind::Sgd, 0.7, 0.0, 0.01), 0.7);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut p = param(1.0, 1.0);
        p[0].tensor.grad = None;
        match OptimizerState::new(OptimizerKind::Adam).step(&mut p, 0.1) {
            Err(Error::MissingGradient(name)) => assert_eq!(name, "w"),
            other => panic!("{other:?}"),
        }
        p[0].trainable = false;
        assert!(OptimizerState::new(OptimizerKind::Adam)
            .step(&mut p, 0.1)
            .is_ok());
    }

    #[test]
    fn quadratic_descent() {
        for kind in OptimizerKind::ALL {
            let mut p = param(1.0, 0.0);
            let mut state = OptimizerState::new(kind);
            for _ in 0..100 {
                let w = p[0].tensor.data()[0];
                p[0].tensor.grad = Some(vec![2.0 * w]);
                state.step(&mut p, 0.01).unwrap();
            }
            assert!(p[0].tensor.data()[0].abs() < 1.0, "{kind}");
        }
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0), 0.001);
        assert_eq!(s.lr(49), 0.001);
        assert_eq!(s.lr(50), 0.0005);
        assert!((s.lr(120) - 0.00025).abs() < 1e-15);
    }

    #[test]
    fn early_stop_cases() {
        assert!(early_stop(&[0.5; 11], 0.02, 10));
        assert!(!early_stop(&[0.5; 10], 0.02, 10));
        let alt: Vec<f64> = (0..20)
            .map(|i| if i % 2 == 0 { 0.5 } else { 0.55 })
            .collect();
        assert!(!early_stop(&alt, 0.02, 10));
        let mut rising: Vec<f64> = vec![1.0, 0.2];
        rising.extend([0.21; 10]);
        assert!(early_stop(&rising, 0.02, 10));
    }

    #[test]
    fn kind_text_roundtrip() {
        for k in OptimizerKind::ALL {
            assert_eq!(k.to_string().parse::<OptimizerKind>().unwrap(), k);
        }
        assert!("momentum".parse::<OptimizerKind>().is_err());
    }

    proptest! {
        #[test]
        fn schedule_is_non_increasing(e in 0usize..10_000) {
            let s = LrSchedule::default();
            prop_assert!(s.lr(e + 1) <= s.lr(e));
            prop_assert_eq!(s.lr(e), s.lr(e - e % 50));
        }

        #[test]
        fn plateau_keeps_stopping(prefix in proptest::collection::vec(0.0f64..3.0, 0..20), extra in 0usize..10) {
            let mut losses = prefix.clone();
            losses.extend(std::iter::repeat_n(0.4, 11));
            prop_assert!(early_stop(&losses, 0.02, 10));
            losses.extend(std::iter::repeat_n(0.4, extra));
            prop_assert!(early_stop(&losses, 0.02, 10));
        }

        #[test]
        fn adaptive_buffers_stay_finite(grads in proptest::collection::vec(-1e3f32..1e3, 1000)) {
            for kind in [OptimizerKind::RmsProp, OptimizerKind::AdaDelta, OptimizerKind::Adam] {
                let mut p = param(0.0, 0.0);
                let mut state = OptimizerState::new(kind);
                for &g in &grads {
                    p[0].tensor.grad = Some(vec![g]);
                    state.step(&mut p, 0.001).unwrap();
                }
                prop_assert!(p[0].tensor.data()[0].is_finite());
                prop_assert!(state.buffer_values().all(f32::is_finite));
            }
        }
    }
}
