//! Multi-branch ("multi-scale") CNN: parallel conv→relu→pool branches with
//! different kernel sizes, flattened and concatenated, followed by dense
//! layers and a softmax over the two classes.

mod weights;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::gradcheck::{GradcheckReport, NETWORK_REL_FLOOR, STEP};
use crate::tensor::{
    concat, concat_backward, conv2d, conv2d_backward, conv_output_dim, dense, dense_backward,
    maxpool2d_backward, maxpool2d_with_indices, nll_loss, relu, relu_backward, softmax,
    softmax_nll_backward, Dim2, Parameter, Scalar, Tensor,
};

pub use weights::{
    load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};

/// One conv→relu(→maxpool) stage. Pooling uses a stride equal to its window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub filters: usize,
    pub kernel: Dim2,
    pub stride: Dim2,
    pub pool: Option<Dim2>,
}

impl StageSpec {
    pub fn new(filters: usize, kernel: usize) -> Self {
        StageSpec {
            filters,
            kernel: Dim2::square(kernel),
            stride: Dim2::square(1),
            pool: None,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = Dim2::square(s);
        self
    }

    pub fn pool(mut self, window: usize) -> Self {
        self.pool = Some(Dim2::square(window));
        self
    }
}

/// Stage text form: `{kernel}x{filters}[s{stride}][p{pool}]`, e.g. `32x16p2`.
/// Square kernels, strides and windows only.
impl fmt::Display for StageSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.kernel.h, self.filters)?;
        if self.stride.h != 1 {
            write!(f, "s{}", self.stride.h)?;
        }
        if let Some(p) = self.pool {
            write!(f, "p{}", p.h)?;
        }
        Ok(())
    }
}

impl FromStr for StageSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "bad stage `{s}`, expected e.g. `32x16p2` or `200x128s1`"
            ))
        };
        let s = s.trim();
        let (kernel, rest) = s.split_once('x').ok_or_else(bad)?;
        let kernel: usize = kernel.parse().map_err(|_| bad())?;
        let digits_end = rest
            .find(|c: char| !c.is_ascii_digit())
            .unwrap_or(rest.len());
        let filters: usize = rest[..digits_end].parse().map_err(|_| bad())?;
        let mut stage = StageSpec::new(filters, kernel);
        let mut tail = &rest[digits_end..];
        while let Some(tag) = tail.chars().next() {
            let end = tail[1..]
                .find(|c: char| !c.is_ascii_digit())
                .map_or(tail.len(), |i| i + 1);
            let value: usize = tail[1..end].parse().map_err(|_| bad())?;
            match tag {
                's' => stage = stage.stride(value),
                'p' => stage = stage.pool(value),
                _ => return Err(bad()),
            }
            tail = &tail[end..];
        }
        Ok(stage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchSpec {
    pub stages: Vec<StageSpec>,
}

impl BranchSpec {
    pub fn new(stages: Vec<StageSpec>) -> Self {
        BranchSpec { stages }
    }
}

/// Branch text form: stages joined by `>`.
impl fmt::Display for BranchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.stages.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(">"))
    }
}

impl FromStr for BranchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let stages = s.split('>').map(str::parse).collect::<Result<Vec<_>>>()?;
        Ok(BranchSpec { stages })
    }
}

/// Parse a comma separated list of branches, e.g. `32x16p2,16x16p2,8x16p2`.
pub fn parse_branches(s: &str) -> Result<Vec<BranchSpec>> {
    s.split(',').map(str::parse).collect()
}

pub fn format_branches(branches: &[BranchSpec]) -> String {
    branches
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub canvas: usize,
    pub branches: Vec<BranchSpec>,
    pub fc_sizes: Vec<usize>,
    pub classes: usize,
    pub init_seed: u64,
}

impl NetworkConfig {
    /// Canvas 64; three branches with 32, 16 and 8 pixel kernels, 16 filters
    /// each and one 2×2 max-pool; one hidden dense layer of 64.
    pub fn desk_scale(input_channels: usize) -> Self {
        NetworkConfig {
            input_channels,
            canvas: 64,
            branches: [32, 16, 8]
                .into_iter()
                .map(|k| BranchSpec::new(vec![StageSpec::new(16, k).pool(2)]))
                .collect(),
            fc_sizes: vec![64],
            classes: 2,
            init_seed: 0,
        }
    }

    /// 205 pixel canvas whose first branch opens with 128 filters of
    /// 200×200 at stride 1. The remaining branches are illustrative.
    pub fn full_scale(input_channels: usize) -> Self {
        NetworkConfig {
            input_channels,
            canvas: 205,
            branches: vec![
                BranchSpec::new(vec![StageSpec::new(128, 200).pool(2)]),
                BranchSpec::new(vec![StageSpec::new(64, 64).stride(2).pool(2)]),
                BranchSpec::new(vec![StageSpec::new(32, 16).stride(4).pool(2)]),
            ],
            fc_sizes: vec![64],
            classes: 2,
            init_seed: 0,
        }
    }

    /// The small single-branch network used for end-to-end gradient checks.
    pub fn tiny(input_channels: usize) -> Self {
        NetworkConfig {
            input_channels,
            canvas: 16,
            branches: vec![BranchSpec::new(vec![StageSpec::new(3, 5).pool(2)])],
            fc_sizes: vec![6],
            classes: 2,
            init_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
struct StageLayout {
    spec: StageSpec,
    weight: usize,
    bias: usize,
    in_shape: [usize; 3],
    conv_shape: [usize; 3],
    out_shape: [usize; 3],
}

#[derive(Debug, Clone)]
struct DenseLayout {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    branches: Vec<Vec<StageLayout>>,
    dense: Vec<DenseLayout>,
}

fn plan(config: &NetworkConfig) -> Result<(Layout, Vec<(String, Vec<usize>, usize, usize)>)> {
    let cfg_err = |detail: String| Error::Build {
        stage: "config".into(),
        detail,
    };
    if !(1..=2).contains(&config.input_channels) {
        return Err(cfg_err(format!(
            "input_channels must be 1 or 2, got {}",
            config.input_channels
        )));
    }
    if config.classes != 2 {
        return Err(cfg_err(format!(
            "classes must be 2, got {}",
            config.classes
        )));
    }
    if config.canvas == 0 || config.branches.is_empty() {
        return Err(cfg_err(
            "need a positive canvas and at least one branch".into(),
        ));
    }
    // (name, shape, fan_in, fan_out)
    let mut params = Vec::new();
    let mut branches = Vec::new();
    let mut features = 0;
    for (b, branch) in config.branches.iter().enumerate() {
        if branch.stages.is_empty() {
            return Err(Error::Build {
                stage: format!("branch {b}"),
                detail: "branch has no stages".into(),
            });
        }
        let mut shape = [config.input_channels, config.canvas, config.canvas];
        let mut stages = Vec::new();
        for (s, spec) in branch.stages.iter().enumerate() {
            let stage_err = |detail: String| Error::Build {
                stage: format!("branch {b} stage {s} ({spec})"),
                detail,
            };
            if spec.filters == 0 {
                return Err(stage_err("zero filters".into()));
            }
            let [c, h, w] = shape;
            let ho = conv_output_dim(h, spec.kernel.h, spec.stride.h);
            let wo = conv_output_dim(w, spec.kernel.w, spec.stride.w);
            let (Some(ho), Some(wo)) = (ho, wo) else {
                return Err(stage_err(format!(
                    "kernel {} does not fit a {h}x{w} input",
                    spec.kernel
                )));
            };
            let conv_shape = [spec.filters, ho, wo];
            let out_shape = match spec.pool {
                None => conv_shape,
                Some(win) => match (
                    conv_output_dim(ho, win.h, win.h),
                    conv_output_dim(wo, win.w, win.w),
                ) {
                    (Some(ph), Some(pw)) => [spec.filters, ph, pw],
                    _ => {
                        return Err(stage_err(format!(
                            "pool window {win} does not fit a {ho}x{wo} map"
                        )))
                    }
                },
            };
            let area = spec.kernel.h * spec.kernel.w;
            let weight = params.len();
            params.push((
                format!("branch{b}.conv{s}.weight"),
                vec![spec.filters, c, spec.kernel.h, spec.kernel.w],
                c * area,
                spec.filters * area,
            ));
            params.push((format!("branch{b}.conv{s}.bias"), vec![spec.filters], 0, 0));
            stages.push(StageLayout {
                spec: *spec,
                weight,
                bias: weight + 1,
                in_shape: shape,
                conv_shape,
                out_shape,
            });
            shape = out_shape;
        }
        features += shape.iter().product::<usize>();
        branches.push(stages);
    }
    let mut dense_layers = Vec::new();
    let mut width = features;
    let widths: Vec<usize> = config
        .fc_sizes
        .iter()
        .copied()
        .chain([config.classes])
        .collect();
    for (i, &out) in widths.iter().enumerate() {
        if out == 0 {
            return Err(Error::Build {
                stage: format!("fc{i}"),
                detail: "zero width".into(),
            });
        }
        let weight = params.len();
        params.push((format!("fc{i}.weight"), vec![width, out], width, out));
        params.push((format!("fc{i}.bias"), vec![out], 0, 0));
        dense_layers.push(DenseLayout {
            weight,
            bias: weight + 1,
        });
        width = out;
    }
    Ok((
        Layout {
            branches,
            dense: dense_layers,
        },
        params,
    ))
}

#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    config: NetworkConfig,
    params: Vec<Parameter<T>>,
    layout: Layout,
}

/// Build a network with Glorot-uniform weights drawn from `init_seed` and zero biases.
pub fn build_network(config: NetworkConfig) -> Result<Network<f32>> {
    Network::build(config)
}

/// One predicted label with the probability assigned to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probability: f32,
}

struct StageTrace<T: Scalar> {
    /// `None` for the first stage, whose input is the batch itself.
    input: Option<Tensor<T>>,
    preact: Tensor<T>,
    pool_indices: Option<Vec<usize>>,
}

/// Intermediate values of one forward pass, consumed by backward.
pub struct Trace<T: Scalar> {
    stages: Vec<Vec<StageTrace<T>>>,
    branch_widths: Vec<usize>,
    dense_inputs: Vec<Tensor<T>>,
    hidden_preacts: Vec<Tensor<T>>,
    pub probs: Tensor<T>,
}

/// Which side of every kink (relu sign, pooling argmax) a forward pass took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    signs: Vec<bool>,
    argmax: Vec<usize>,
}

impl<T: Scalar> Trace<T> {
    pub fn activation_pattern(&self) -> ActivationPattern {
        let mut signs = Vec::new();
        let mut argmax = Vec::new();
        for st in self.stages.iter().flatten() {
            signs.extend(st.preact.data().iter().map(|&v| v > T::zero()));
            if let Some(idx) = &st.pool_indices {
                argmax.extend_from_slice(idx);
            }
        }
        for z in &self.hidden_preacts {
            signs.extend(z.data().iter().map(|&v| v > T::zero()));
        }
        ActivationPattern { signs, argmax }
    }
}

impl<T: Scalar> Network<T> {
    pub fn build(config: NetworkConfig) -> Result<Self> {
        let (layout, specs) = plan(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let params = specs
            .into_iter()
            .map(|(name, shape, fan_in, fan_out)| {
                let tensor = if fan_in == 0 {
                    Tensor::zeros(&shape)
                } else {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::from_fn(&shape, |_| T::from_f64(rng.gen_range(-limit..limit)))
                };
                Parameter::new(name, tensor)
            })
            .collect();
        Ok(Network {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// `[filters, height, width]` after each stage's convolution, per branch.
    pub fn conv_output_shapes(&self) -> Vec<Vec<[usize; 3]>> {
        self.layout
            .branches
            .iter()
            .map(|b| b.iter().map(|s| s.conv_shape).collect())
            .collect()
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.iter().map(Parameter::cast).collect(),
            layout: self.layout.clone(),
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        let expect = [c.input_channels, c.canvas, c.canvas];
        if batch.rank() != 4 || batch.shape()[1..] != expect {
            if batch.rank() == 4 && batch.shape()[1] != c.input_channels {
                return Err(Error::dim(
                    "network",
                    format!(
                        "channel axis: batch has {} channels, network expects {}",
                        batch.shape()[1],
                        c.input_channels
                    ),
                ));
            }
            return Err(Error::dim(
                "network",
                format!(
                    "batch shape {:?}, expected [N, {}, {}, {}]",
                    batch.shape(),
                    expect[0],
                    expect[1],
                    expect[2]
                ),
            ));
        }
        Ok(())
    }

    /// Class probabilities `[N, 2]`. `training` is accepted for interface
    /// stability; no layer behaves differently in training.
    pub fn forward(&self, batch: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let _ = training;
        Ok(self.forward_trace(batch)?.probs)
    }

    pub fn forward_trace(&self, batch: &Tensor<T>) -> Result<Trace<T>> {
        self.check_batch(batch)?;
        let n = batch.shape()[0];
        let mut stage_traces = Vec::with_capacity(self.layout.branches.len());
        let mut branch_outputs = Vec::with_capacity(self.layout.branches.len());
        for branch in &self.layout.branches {
            let mut traces = Vec::with_capacity(branch.len());
            let mut x: Option<Tensor<T>> = None;
            for stage in branch {
                let input = x.as_ref().unwrap_or(batch);
                let preact = conv2d(
                    input,
                    &self.params[stage.weight].tensor,
                    &self.params[stage.bias].tensor,
                    stage.spec.stride,
                )?;
                let act = relu(&preact);
                let (out, pool_indices) = match stage.spec.pool {
                    Some(win) => {
                        let (o, i) = maxpool2d_with_indices(&act, win, win)?;
                        (o, Some(i))
                    }
                    None => (act, None),
                };
                traces.push(StageTrace {
                    input: x.take(),
                    preact,
                    pool_indices,
                });
                x = Some(out);
            }
            branch_outputs.push(x.expect("branch has stages").flatten_batch());
            stage_traces.push(traces);
        }
        let branch_widths = branch_outputs.iter().map(|t| t.shape()[1]).collect();
        let refs: Vec<&Tensor<T>> = branch_outputs.iter().collect();
        let mut h = concat(&refs)?;
        let mut dense_inputs = Vec::with_capacity(self.layout.dense.len());
        let mut hidden_preacts = Vec::new();
        let last = self.layout.dense.len() - 1;
        for (i, layer) in self.layout.dense.iter().enumerate() {
            let z = dense(
                &h,
                &self.params[layer.weight].tensor,
                &self.params[layer.bias].tensor,
            )?;
            dense_inputs.push(h);
            if i < last {
                h = relu(&z);
                hidden_preacts.push(z);
            } else {
                h = z;
            }
        }
        let probs = softmax(&h)?;
        debug_assert_eq!(probs.shape(), &[n, self.config.classes]);
        Ok(Trace {
            stages: stage_traces,
            branch_widths,
            dense_inputs,
            hidden_preacts,
            probs,
        })
    }

    /// Fill every parameter's gradient buffer from `trace` and return the loss.
    pub fn backward(&mut self, trace: Trace<T>, batch: &Tensor<T>, labels: &[usize]) -> Result<T> {
        let loss = nll_loss(&trace.probs, labels)?;
        let mut g = softmax_nll_backward(&trace.probs, labels)?;
        for (i, layer) in self.layout.dense.iter().enumerate().rev() {
            let grads = dense_backward(
                &trace.dense_inputs[i],
                &self.params[layer.weight].tensor,
                &g,
            )?;
            self.params[layer.weight].tensor.grad = Some(grads.weights.into_data());
            self.params[layer.bias].tensor.grad = Some(grads.bias.into_data());
            g = grads.input;
            if i > 0 {
                g = relu_backward(&trace.hidden_preacts[i - 1], &g)?;
            }
        }
        let parts = concat_backward(&g, &trace.branch_widths)?;
        let n = batch.shape()[0];
        for ((branch, traces), part) in self.layout.branches.iter().zip(&trace.stages).zip(parts) {
            let [f, h, w] = branch.last().expect("branch has stages").out_shape;
            let mut g = part.reshape(&[n, f, h, w])?;
            for (s, (stage, st)) in branch.iter().zip(traces).enumerate().rev() {
                if let Some(idx) = &st.pool_indices {
                    g = maxpool2d_backward(st.preact.shape(), idx, &g)?;
                }
                g = relu_backward(&st.preact, &g)?;
                let input = st.input.as_ref().unwrap_or(batch);
                let cg = conv2d_backward(
                    input,
                    &self.params[stage.weight].tensor,
                    stage.spec.stride,
                    &g,
                    s > 0,
                )?;
                self.params[stage.weight].tensor.grad = Some(cg.kernel.into_data());
                self.params[stage.bias].tensor.grad = Some(cg.bias.into_data());
                if let Some(dx) = cg.input {
                    debug_assert_eq!(&dx.shape()[1..], &stage.in_shape[..]);
                    g = dx;
                }
            }
        }
        Ok(loss)
    }

    /// Forward, loss and backward in one call; returns `(loss, probabilities)`.
    pub fn compute_gradients(
        &mut self,
        batch: &Tensor<T>,
        labels: &[usize],
    ) -> Result<(T, Tensor<T>)> {
        let trace = self.forward_trace(batch)?;
        let probs = trace.probs.clone();
        let loss = self.backward(trace, batch, labels)?;
        Ok((loss, probs))
    }

    pub fn loss(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<T> {
        nll_loss(&self.forward(batch, false)?, labels)
    }
}

impl Network<f32> {
    /// Argmax label per row; ties go to class 0.
    pub fn predict(&self, batch: &Tensor<f32>) -> Result<Vec<Prediction>> {
        Ok(predictions_from_probs(&self.forward(batch, false)?))
    }
}

pub fn predictions_from_probs(probs: &Tensor<f32>) -> Vec<Prediction> {
    let k = probs.shape()[1];
    probs
        .data()
        .chunks(k)
        .map(|row| {
            let mut label = 0;
            for (i, &p) in row.iter().enumerate() {
                if p > row[label] {
                    label = i;
                }
            }
            Prediction {
                label,
                probability: row[label],
            }
        })
        .collect()
}

/// End-to-end gradient check of the tiny network: analytic gradients from
/// the `f32` pipeline against central differences of an `f64` copy.
/// Perturbations that flip any relu sign or pooling argmax are skipped.
/// Entries below [`NETWORK_REL_FLOOR`] in magnitude are compared absolutely,
/// since f32 rounding of O(1) activations bounds their accuracy.
pub fn check_network_gradients(seed: u64, tolerance: f64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x6e65_7477);
    let mut net =
        Network::<f32>::build(NetworkConfig::tiny(2).with_seed(seed)).expect("tiny config builds");
    for p in net.parameters_mut() {
        if p.name.ends_with(".bias") {
            p.tensor
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    let n = 3;
    let batch = Tensor::<f32>::from_fn(&[n, 2, 16, 16], |_| rng.gen_range(-1.0..1.0));
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    net.compute_gradients(&batch, &labels).expect("valid batch");

    let mut wide = net.cast::<f64>();
    let batch64 = batch.cast::<f64>();
    let base = wide
        .forward_trace(&batch64)
        .expect("valid batch")
        .activation_pattern();
    let mut report = GradcheckReport::new("network", tolerance);
    for pi in 0..net.parameters().len() {
        let analytic = net.parameters()[pi]
            .tensor
            .grad()
            .expect("filled by backward")
            .to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let x = wide.params[pi].tensor.data()[i];
            let mut eval = |v: f64| {
                wide.params[pi].tensor.data_mut()[i] = v;
                let trace = wide.forward_trace(&batch64).expect("valid batch");
                let same = trace.activation_pattern() == base;
                (nll_loss(&trace.probs, &labels).expect("valid labels"), same)
            };
            let (up, same_up) = eval(x + STEP);
            let (down, same_down) = eval(x - STEP);
            wide.params[pi].tensor.data_mut()[i] = x;
            if same_up && same_down {
                report.record_with_floor(a as f64, (up - down) / (2.0 * STEP), NETWORK_REL_FLOOR);
            } else {
                report.skipped += 1;
            }
        }
    }
    report
}
