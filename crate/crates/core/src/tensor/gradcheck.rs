//! Central finite-difference verification of the backward passes.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    concat, concat_backward, conv2d, conv2d_backward, dense, dense_backward, maxpool2d,
    maxpool2d_backward, maxpool2d_with_indices, nll_loss, relu, relu_backward, softmax,
    softmax_nll_backward, Dim2, Tensor,
};
use crate::error::Error;

/// Finite-difference step.
pub const STEP: f64 = 1e-3;
/// Below this magnitude both gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-8;
/// Absolute floor for the end-to-end check, whose analytic side runs in f32.
pub const NETWORK_REL_FLOOR: f64 = 1e-4;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, REL_FLOOR)
}

/// `|a - n| / max(|a|, |n|)`, or `|a - n| / floor` when both are smaller than `floor`.
pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        diff / floor
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub op: String,
    pub max_rel_error: f64,
    /// Number of gradient entries compared.
    pub checked: usize,
    /// Entries left out because the perturbation crossed a kink.
    pub skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn new(op: impl Into<String>, tolerance: f64) -> Self {
        GradcheckReport {
            op: op.into(),
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
            tolerance,
            passed: true,
        }
    }

    pub fn record(&mut self, analytic: f64, numeric: f64) {
        self.record_with_floor(analytic, numeric, REL_FLOOR);
    }

    pub fn record_with_floor(&mut self, analytic: f64, numeric: f64, floor: f64) {
        let err = relative_error_with_floor(analytic, numeric, floor);
        // NaN must fail the check
        if !(err <= self.max_rel_error) {
            self.max_rel_error = err;
        }
        self.checked += 1;
        self.passed = self.max_rel_error < self.tolerance;
    }

    pub fn merge(&mut self, other: &GradcheckReport) {
        if !(other.max_rel_error <= self.max_rel_error) {
            self.max_rel_error = other.max_rel_error;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.passed = self.max_rel_error < self.tolerance;
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} max_rel_error={:.3e} tol={:.0e} checked={} skipped={} {}",
            self.op,
            self.max_rel_error,
            self.tolerance,
            self.checked,
            self.skipped,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

/// Compare `analytic[i]` against central differences of `objective` for
/// every element of every input.
pub fn check_gradients(
    op: &str,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    tolerance: f64,
    objective: impl Fn(&[Tensor<f64>]) -> f64,
) -> GradcheckReport {
    assert_eq!(inputs.len(), analytic.len());
    let mut report = GradcheckReport::new(op, tolerance);
    let mut work = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        assert_eq!(
            grad.len(),
            inputs[t].len(),
            "analytic gradient {t} has wrong length"
        );
        for i in 0..inputs[t].len() {
            let x = inputs[t].data()[i];
            work[t].data_mut()[i] = x + STEP;
            let up = objective(&work);
            work[t].data_mut()[i] = x - STEP;
            let down = objective(&work);
            work[t].data_mut()[i] = x;
            report.record(grad.data()[i], (up - down) / (2.0 * STEP));
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Conv2d,
    Relu,
    MaxPool2d,
    Dense,
    Concat,
    SoftmaxNll,
    /// The whole tiny network, forward in `f32`.
    Network,
}

impl Op {
    pub const ALL: [Op; 7] = [
        Op::Conv2d,
        Op::Relu,
        Op::MaxPool2d,
        Op::Dense,
        Op::Concat,
        Op::SoftmaxNll,
        Op::Network,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::Conv2d => "conv2d",
            Op::Relu => "relu",
            Op::MaxPool2d => "maxpool2d",
            Op::Dense => "dense",
            Op::Concat => "concat",
            Op::SoftmaxNll => "softmax_nll",
            Op::Network => "network",
        }
    }

    pub fn default_tolerance(self) -> f64 {
        match self {
            Op::Network => NETWORK_TOLERANCE,
            _ => LAYER_TOLERANCE,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Op::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradcheck op `{s}`")))
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform values with magnitude at least `gap`, so ±STEP never crosses zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(gap..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// A shuffled ladder of distinct values, so window maxima are unique by a
/// margin far larger than STEP.
fn distinct_values(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..len).map(|i| i as f64 * 0.05 - 1.0).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).expect("shape matches length")
}

fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Check one randomly drawn instance of `op`; the scalar objective is a
/// random projection of the op output.
pub fn check_op(op: Op, seed: u64, tolerance: f64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164_6368_6b00);
    match op {
        Op::Conv2d => {
            let (c, f) = (rng.gen_range(1..=2), rng.gen_range(1..=3));
            let (h, w) = (rng.gen_range(4..=6), rng.gen_range(4..=6));
            let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let stride = Dim2::new(rng.gen_range(1..=2), rng.gen_range(1..=2));
            let x = uniform(&mut rng, &[2, c, h, w], -1.0, 1.0);
            let k = uniform(&mut rng, &[f, c, kh, kw], -1.0, 1.0);
            let b = uniform(&mut rng, &[f], -1.0, 1.0);
            let y = conv2d(&x, &k, &b, stride).expect("valid geometry");
            let r = uniform(&mut rng, y.shape(), -1.0, 1.0);
            let g = conv2d_backward(&x, &k, stride, &r, true).expect("valid geometry");
            check_gradients(
                op.name(),
                &[x, k, b],
                &[g.input.expect("requested"), g.kernel, g.bias],
                tolerance,
                |t| project(&conv2d(&t[0], &t[1], &t[2], stride).unwrap(), &r),
            )
        }
        Op::Relu => {
            let x = away_from_zero(&mut rng, &[3, 5], 0.05);
            let r = uniform(&mut rng, x.shape(), -1.0, 1.0);
            let g = relu_backward(&x, &r).unwrap();
            check_gradients(op.name(), &[x], &[g], tolerance, |t| {
                project(&relu(&t[0]), &r)
            })
        }
        Op::MaxPool2d => {
            let (window, stride) = if rng.gen_bool(0.5) {
                (Dim2::square(2), Dim2::square(2))
            } else {
                (Dim2::new(3, 2), Dim2::square(1))
            };
            let x = distinct_values(&mut rng, &[1, 2, 5, 6]);
            let (y, idx) = maxpool2d_with_indices(&x, window, stride).unwrap();
            let r = uniform(&mut rng, y.shape(), -1.0, 1.0);
            let g = maxpool2d_backward(x.shape(), &idx, &r).unwrap();
            check_gradients(op.name(), &[x], &[g], tolerance, |t| {
                project(&maxpool2d(&t[0], window, stride).unwrap(), &r)
            })
        }
        Op::Dense => {
            let (n, d, k) = (
                rng.gen_range(1..=3),
                rng.gen_range(1..=6),
                rng.gen_range(1..=4),
            );
            let x = uniform(&mut rng, &[n, d], -1.0, 1.0);
            let w = uniform(&mut rng, &[d, k], -1.0, 1.0);
            let b = uniform(&mut rng, &[k], -1.0, 1.0);
            let r = uniform(&mut rng, &[n, k], -1.0, 1.0);
            let g = dense_backward(&x, &w, &r).unwrap();
            check_gradients(
                op.name(),
                &[x, w, b],
                &[g.input, g.weights, g.bias],
                tolerance,
                |t| project(&dense(&t[0], &t[1], &t[2]).unwrap(), &r),
            )
        }
        Op::Concat => {
            let n = rng.gen_range(1..=3);
            let widths: Vec<usize> = (0..rng.gen_range(1..=3))
                .map(|_| rng.gen_range(1..=4))
                .collect();
            let xs: Vec<Tensor<f64>> = widths
                .iter()
                .map(|&d| uniform(&mut rng, &[n, d], -1.0, 1.0))
                .collect();
            let r = uniform(&mut rng, &[n, widths.iter().sum()], -1.0, 1.0);
            let g = concat_backward(&r, &widths).unwrap();
            check_gradients(op.name(), &xs, &g, tolerance, |t| {
                let refs: Vec<&Tensor<f64>> = t.iter().collect();
                project(&concat(&refs).unwrap(), &r)
            })
        }
        Op::SoftmaxNll => {
            let (n, k) = (rng.gen_range(1..=4), rng.gen_range(2..=4));
            let x = uniform(&mut rng, &[n, k], -3.0, 3.0);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let p = softmax(&x).unwrap();
            let g = softmax_nll_backward(&p, &labels).unwrap();
            check_gradients(op.name(), &[x], &[g], tolerance, |t| {
                nll_loss(&softmax(&t[0]).unwrap(), &labels).unwrap()
            })
        }
        Op::Network => crate::network::check_network_gradients(seed, tolerance),
    }
}

/// Run `cases` seeded instances of `op` and fold them into one report.
pub fn check_op_cases(op: Op, cases: u64, tolerance: f64) -> GradcheckReport {
    let mut report = GradcheckReport::new(op.name(), tolerance);
    for seed in 0..cases {
        report.merge(&check_op(op, seed, tolerance));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_two_elements() {
        let x = Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap();
        let r = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let g = relu_backward(&x, &r).unwrap();
        let rep = check_gradients("relu", &[x], &[g], 1e-6, |t| project(&relu(&t[0]), &r));
        assert!(rep.passed && rep.max_rel_error < 1e-6, "{rep}");
    }

    #[test]
    fn conv_4x4_with_2x2_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = uniform(&mut rng, &[1, 1, 4, 4], -1.0, 1.0);
        let k = uniform(&mut rng, &[1, 1, 2, 2], -1.0, 1.0);
        let b = Tensor::new(vec![1], vec![0.1]).unwrap();
        let s = Dim2::square(1);
        let r = uniform(&mut rng, &[1, 1, 3, 3], -1.0, 1.0);
        let g = conv2d_backward(&x, &k, s, &r, true).unwrap();
        let rep = check_gradients(
            "conv2d",
            &[x, k, b],
            &[g.input.unwrap(), g.kernel, g.bias],
            1e-4,
            |t| project(&conv2d(&t[0], &t[1], &t[2], s).unwrap(), &r),
        );
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn dense_zero_weights_exact() {
        let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let w = Tensor::<f64>::zeros(&[3, 2]);
        let b = Tensor::new(vec![2], vec![0.3, -0.2]).unwrap();
        let r = Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let g = dense_backward(&x, &w, &r).unwrap();
        let rep = check_gradients(
            "dense",
            &[x, w, b],
            &[g.input, g.weights, g.bias],
            1e-8,
            |t| project(&dense(&t[0], &t[1], &t[2]).unwrap(), &r),
        );
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn layer_ops_pass_on_seeded_cases() {
        for op in Op::ALL.into_iter().filter(|&o| o != Op::Network) {
            let rep = check_op_cases(op, 20, op.default_tolerance());
            assert!(rep.passed, "{rep}");
            assert!(rep.checked > 0);
        }
    }

    #[test]
    fn impossible_tolerance_fails() {
        let rep = check_op_cases(Op::SoftmaxNll, 5, 1e-12);
        assert!(!rep.passed, "{rep}");
    }

    #[test]
    fn op_names_roundtrip() {
        for op in Op::ALL {
            assert_eq!(op.name().parse::<Op>().unwrap(), op);
        }
        assert!("conv3d".parse::<Op>().is_err());
    }
}
