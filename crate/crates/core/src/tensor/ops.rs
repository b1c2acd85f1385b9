use rayon::prelude::*;

use super::{Dim2, Scalar, Tensor};
use crate::error::{Error, Result};

/// Floor applied to probabilities inside the log of the NLL loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Output length of a valid (unpadded) window sweep, `None` if the window
/// does not fit.
pub fn conv_output_dim(size: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > size {
        None
    } else {
        Some((size - kernel) / stride + 1)
    }
}

fn expect_rank<T: Scalar>(op: &'static str, what: &str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dim(
            op,
            format!("{what} must have rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn new<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, stride: Dim2) -> Result<Self> {
        const OP: &str = "conv2d";
        expect_rank(OP, "input", input, 4)?;
        expect_rank(OP, "kernel", kernel, 4)?;
        let (n, c, h, w) = (
            input.shape()[0],
            input.shape()[1],
            input.shape()[2],
            input.shape()[3],
        );
        let (f, kc, kh, kw) = (
            kernel.shape()[0],
            kernel.shape()[1],
            kernel.shape()[2],
            kernel.shape()[3],
        );
        if kc != c {
            return Err(Error::dim(
                OP,
                format!("channel axis: input has {c} channels, kernel expects {kc}"),
            ));
        }
        let ho = conv_output_dim(h, kh, stride.h).ok_or_else(|| {
            Error::dim(
                OP,
                format!(
                    "height axis: kernel {kh} (stride {}) exceeds input {h}",
                    stride.h
                ),
            )
        })?;
        let wo = conv_output_dim(w, kw, stride.w).ok_or_else(|| {
            Error::dim(
                OP,
                format!(
                    "width axis: kernel {kw} (stride {}) exceeds input {w}",
                    stride.w
                ),
            )
        })?;
        Ok(ConvGeometry {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            sh: stride.h,
            sw: stride.w,
            ho,
            wo,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfold one sample into a `[C*kh*kw, Ho*Wo]` column matrix.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let positions = self.positions();
        let mut row = 0;
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for oy in 0..self.ho {
                        let src = &plane[(oy * self.sh + i) * self.w + j..];
                        let out = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if self.sw == 1 {
                            out.copy_from_slice(&src[..self.wo]);
                        } else {
                            for (ox, v) in out.iter_mut().enumerate() {
                                *v = src[ox * self.sw];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-add a column matrix back onto one input sample.
    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let positions = self.positions();
        let mut row = 0;
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let src = &cols[row * positions..(row + 1) * positions];
                    for oy in 0..self.ho {
                        let base = (oy * self.sh + i) * self.w + j;
                        for ox in 0..self.wo {
                            let p = &mut plane[base + ox * self.sw];
                            *p = *p + src[oy * self.wo + ox];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Valid 2D cross-correlation of `[N,C,H,W]` with `[F,C,kh,kw]` plus bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: Dim2,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input, kernel, stride)?;
    if bias.len() != g.f {
        return Err(Error::dim(
            "conv2d",
            format!("bias axis: {} entries for {} filters", bias.len(), g.f),
        ));
    }
    let (patch, positions) = (g.patch(), g.positions());
    let mut out = vec![T::zero(); g.n * g.f * positions];
    let k = kernel.data();
    let b = bias.data();
    input
        .data()
        .par_chunks(g.c * g.h * g.w)
        .zip(out.par_chunks_mut(g.f * positions))
        .for_each(|(x, y)| {
            let mut cols = vec![T::zero(); patch * positions];
            g.im2col(x, &mut cols);
            T::gemm(
                g.f,
                patch,
                positions,
                T::one(),
                k,
                (patch as isize, 1),
                &cols,
                (positions as isize, 1),
                T::zero(),
                y,
                (positions as isize, 1),
            );
            for (row, &bf) in y.chunks_mut(positions).zip(b) {
                row.iter_mut().for_each(|v| *v = *v + bf);
            }
        });
    Tensor::new(vec![g.n, g.f, g.ho, g.wo], out)
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads<T: Scalar> {
    /// Present only when requested; first layers skip it.
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: Dim2,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<Conv2dGrads<T>> {
    let g = ConvGeometry::new(input, kernel, stride)?;
    if grad_out.shape() != [g.n, g.f, g.ho, g.wo] {
        return Err(Error::dim(
            "conv2d_backward",
            format!(
                "upstream gradient {:?} does not match output [{}, {}, {}, {}]",
                grad_out.shape(),
                g.n,
                g.f,
                g.ho,
                g.wo
            ),
        ));
    }
    let (patch, positions) = (g.patch(), g.positions());
    let k = kernel.data();
    let per_sample: Vec<(Vec<T>, Vec<T>, Option<Vec<T>>)> = input
        .data()
        .par_chunks(g.c * g.h * g.w)
        .zip(grad_out.data().par_chunks(g.f * positions))
        .map(|(x, gy)| {
            let mut cols = vec![T::zero(); patch * positions];
            g.im2col(x, &mut cols);
            let mut dk = vec![T::zero(); g.f * patch];
            T::gemm(
                g.f,
                positions,
                patch,
                T::one(),
                gy,
                (positions as isize, 1),
                &cols,
                (1, positions as isize),
                T::zero(),
                &mut dk,
                (patch as isize, 1),
            );
            let db: Vec<T> = gy
                .chunks(positions)
                .map(|r| r.iter().copied().sum())
                .collect();
            let dx = want_input_grad.then(|| {
                T::gemm(
                    patch,
                    g.f,
                    positions,
                    T::one(),
                    k,
                    (1, patch as isize),
                    gy,
                    (positions as isize, 1),
                    T::zero(),
                    &mut cols,
                    (positions as isize, 1),
                );
                let mut dx = vec![T::zero(); g.c * g.h * g.w];
                g.col2im(&cols, &mut dx);
                dx
            });
            (dk, db, dx)
        })
        .collect();

    // Fixed-order reduction keeps results independent of the worker count.
    let mut dk = vec![T::zero(); g.f * patch];
    let mut db = vec![T::zero(); g.f];
    let mut dx = want_input_grad.then(|| Vec::with_capacity(input.len()));
    for (sk, sb, sx) in per_sample {
        add_assign(&mut dk, &sk);
        add_assign(&mut db, &sb);
        if let (Some(dx), Some(sx)) = (dx.as_mut(), sx) {
            dx.extend_from_slice(&sx);
        }
    }
    Ok(Conv2dGrads {
        input: dx
            .map(|d| Tensor::new(input.shape().to_vec(), d))
            .transpose()?,
        kernel: Tensor::new(kernel.shape().to_vec(), dk)?,
        bias: Tensor::new(vec![g.f], db)?,
    })
}

fn add_assign<T: Scalar>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a = *a + b;
    }
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient flows only where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::dim(
            "relu_backward",
            format!(
                "input {:?} vs gradient {:?}",
                input.shape(),
                grad_out.shape()
            ),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, window: Dim2, stride: Dim2) -> Result<Tensor<T>> {
    maxpool2d_with_indices(input, window, stride).map(|(t, _)| t)
}

/// Max pooling that also returns, per output element, the flat input index
/// of the selected maximum (first one in row-major order on ties).
pub fn maxpool2d_with_indices<T: Scalar>(
    input: &Tensor<T>,
    window: Dim2,
    stride: Dim2,
) -> Result<(Tensor<T>, Vec<usize>)> {
    const OP: &str = "maxpool2d";
    expect_rank(OP, "input", input, 4)?;
    let [n, c, h, w] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let ho = conv_output_dim(h, window.h, stride.h).ok_or_else(|| {
        Error::dim(
            OP,
            format!("height axis: window {} larger than input {h}", window.h),
        )
    })?;
    let wo = conv_output_dim(w, window.w, stride.w).ok_or_else(|| {
        Error::dim(
            OP,
            format!("width axis: window {} larger than input {w}", window.w),
        )
    })?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride.h * w + ox * stride.w;
                for i in 0..window.h {
                    for j in 0..window.w {
                        let p = base + (oy * stride.h + i) * w + ox * stride.w + j;
                        if x[p] > x[best] {
                            best = p;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, idx))
}

pub fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    indices: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if indices.len() != grad_out.len() {
        return Err(Error::dim(
            "maxpool2d_backward",
            format!(
                "{} indices for {} gradient entries",
                indices.len(),
                grad_out.len()
            ),
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in indices.iter().zip(grad_out.data()) {
        d[i] = d[i] + g;
    }
    Ok(dx)
}

fn as_matrix<'a, T: Scalar>(op: &'static str, t: &'a Tensor<T>) -> Result<(usize, usize, &'a [T])> {
    if t.rank() < 2 {
        return Err(Error::dim(
            op,
            format!("input needs a batch axis, got shape {:?}", t.shape()),
        ));
    }
    let n = t.shape()[0];
    Ok((n, t.len() / n, t.data()))
}

/// Affine map `[N,D] x [D,K] + [K]`; higher-rank inputs are flattened to `[N,D]`.
pub fn dense<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    const OP: &str = "dense";
    let (n, d, x) = as_matrix(OP, input)?;
    expect_rank(OP, "weights", weights, 2)?;
    let (wd, k) = (weights.shape()[0], weights.shape()[1]);
    if wd != d {
        return Err(Error::dim(
            OP,
            format!("inner axis: input has {d} features, weights expect {wd}"),
        ));
    }
    if bias.len() != k {
        return Err(Error::dim(
            OP,
            format!("bias axis: {} entries for {k} outputs", bias.len()),
        ));
    }
    let mut out: Vec<T> = (0..n).flat_map(|_| bias.data().iter().copied()).collect();
    T::gemm(
        n,
        d,
        k,
        T::one(),
        x,
        (d as isize, 1),
        weights.data(),
        (k as isize, 1),
        T::one(),
        &mut out,
        (k as isize, 1),
    );
    Tensor::new(vec![n, k], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T: Scalar> {
    /// Shaped like the original (possibly unflattened) input.
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    const OP: &str = "dense_backward";
    let (n, d, x) = as_matrix(OP, input)?;
    let k = weights.shape()[1];
    if grad_out.shape() != [n, k] {
        return Err(Error::dim(
            OP,
            format!(
                "upstream gradient {:?}, expected [{n}, {k}]",
                grad_out.shape()
            ),
        ));
    }
    let g = grad_out.data();
    let mut dw = vec![T::zero(); d * k];
    T::gemm(
        d,
        n,
        k,
        T::one(),
        x,
        (1, d as isize),
        g,
        (k as isize, 1),
        T::zero(),
        &mut dw,
        (k as isize, 1),
    );
    let mut dx = vec![T::zero(); n * d];
    T::gemm(
        n,
        k,
        d,
        T::one(),
        g,
        (k as isize, 1),
        weights.data(),
        (1, k as isize),
        T::zero(),
        &mut dx,
        (d as isize, 1),
    );
    let mut db = vec![T::zero(); k];
    for row in g.chunks(k) {
        add_assign(&mut db, row);
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: Tensor::new(vec![d, k], dw)?,
        bias: Tensor::new(vec![k], db)?,
    })
}

/// Feature-axis concatenation; each input is flattened to `[N, Di]` first.
pub fn concat<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    const OP: &str = "concat";
    let first = inputs.first().ok_or_else(|| Error::dim(OP, "no inputs"))?;
    let n = as_matrix(OP, first)?.0;
    let mut widths = Vec::with_capacity(inputs.len());
    for (i, t) in inputs.iter().enumerate() {
        let (tn, d, _) = as_matrix(OP, t)?;
        if tn != n {
            return Err(Error::dim(
                OP,
                format!("batch axis: input {i} has {tn} rows, input 0 has {n}"),
            ));
        }
        widths.push(d);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for row in 0..n {
        for (t, &d) in inputs.iter().zip(&widths) {
            out.extend_from_slice(&t.data()[row * d..(row + 1) * d]);
        }
    }
    Tensor::new(vec![n, total], out)
}

/// Split a `[N, ΣDi]` gradient back into `[N, Di]` pieces.
pub fn concat_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    widths: &[usize],
) -> Result<Vec<Tensor<T>>> {
    let (n, total, g) = as_matrix("concat_backward", grad_out)?;
    if widths.iter().sum::<usize>() != total {
        return Err(Error::dim(
            "concat_backward",
            format!("widths {widths:?} do not sum to feature axis {total}"),
        ));
    }
    let mut parts: Vec<Vec<T>> = widths.iter().map(|&d| Vec::with_capacity(n * d)).collect();
    for row in g.chunks(total) {
        let mut off = 0;
        for (p, &d) in parts.iter_mut().zip(widths) {
            p.extend_from_slice(&row[off..off + d]);
            off += d;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(p, &d)| Tensor::new(vec![n, d], p))
        .collect()
}

pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "softmax";
    expect_rank(OP, "logits", logits, 2)?;
    let k = logits.shape()[1];
    if k < 2 {
        return Err(Error::dim(
            OP,
            format!("class axis needs at least 2 entries, got {k}"),
        ));
    }
    if !logits.all_finite() {
        return Err(Error::Numeric { op: OP });
    }
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / total);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

fn check_labels<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    expect_rank("nll_loss", "probabilities", probs, 2)?;
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != n {
        return Err(Error::dim(
            "nll_loss",
            format!("batch axis: {n} rows but {} labels", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label { label, classes: k });
    }
    Ok((n, k))
}

/// Mean negative log-likelihood of the true classes.
pub fn nll_loss<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (n, k) = check_labels(probs, labels)?;
    let floor = T::from_f64(PROB_FLOOR);
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs.data()[i * k + l].max(floor).ln())
        .sum();
    Ok(total / T::from_f64(n as f64))
}

/// Gradient of `nll_loss(softmax(logits))` with respect to the logits.
pub fn softmax_nll_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (n, k) = check_labels(probs, labels)?;
    let scale = T::one() / T::from_f64(n as f64);
    let mut g = probs.data().to_vec();
    for (i, &l) in labels.iter().enumerate() {
        g[i * k + l] = g[i * k + l] - T::one();
    }
    g.iter_mut().for_each(|v| *v = *v * scale);
    Tensor::new(vec![n, k], g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_hand_cross_correlation() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = t(&[1, 1, 2, 2], &[1., 0., 0., 1.]);
        let b = t(&[1], &[0.]);
        let y = conv2d(&x, &k, &b, Dim2::square(1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[6., 8., 12., 14.]);
    }

    #[test]
    fn conv2d_zero_kernel_broadcasts_bias() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 5, 4], |i| i as f64 * 0.37 - 3.0);
        let k = Tensor::<f64>::zeros(&[2, 3, 2, 3]);
        let b = t(&[2], &[1.5, -0.25]);
        let y = conv2d(&x, &k, &b, Dim2::square(1)).unwrap();
        assert_eq!(y.shape(), &[2, 2, 4, 2]);
        for (i, v) in y.data().iter().enumerate() {
            let f = (i / 8) % 2;
            assert_eq!(*v, b.data()[f]);
        }
    }

    #[test]
    fn conv2d_large_kernel_output_geometry() {
        assert_eq!(conv_output_dim(205, 200, 1), Some(6));
        assert_eq!(conv_output_dim(10, 3, 2), Some(4));
        assert_eq!(conv_output_dim(4, 5, 1), None);
    }

    #[test]
    fn conv2d_strided_matches_direct_loop() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 7, 6], |i| ((i * 7919) % 13) as f64 - 6.0);
        let k = Tensor::<f64>::from_fn(&[3, 2, 3, 2], |i| ((i * 31) % 5) as f64 - 2.0);
        let b = t(&[3], &[0.5, 0.0, -1.0]);
        let s = Dim2::new(2, 3);
        let y = conv2d(&x, &k, &b, s).unwrap();
        let (ho, wo) = (3, 2);
        assert_eq!(y.shape(), &[1, 3, ho, wo]);
        for f in 0..3 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[f];
                    for c in 0..2 {
                        for i in 0..3 {
                            for j in 0..2 {
                                acc += x.data()[c * 42 + (oy * 2 + i) * 6 + ox * 3 + j]
                                    * k.data()[((f * 2 + c) * 3 + i) * 2 + j];
                            }
                        }
                    }
                    assert!((y.data()[(f * ho + oy) * wo + ox] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv2d_errors_name_axes() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let k = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1]);
        let e = conv2d(&x, &k, &b, Dim2::square(1)).unwrap_err().to_string();
        assert!(e.contains("channel"), "{e}");
        let k = Tensor::<f64>::zeros(&[1, 2, 5, 2]);
        let e = conv2d(&x, &k, &b, Dim2::square(1)).unwrap_err().to_string();
        assert!(e.contains("height"), "{e}");
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let x = t(&[3], &[-1., 0., 2.]);
        assert_eq!(relu(&x).data(), &[0., 0., 2.]);
        let g = relu_backward(&x, &t(&[3], &[1., 1., 1.])).unwrap();
        assert_eq!(g.data(), &[0., 0., 1.]);
        assert!(relu(&t(&[2], &[-3., -0.5]))
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn maxpool_examples() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let (y, idx) = maxpool2d_with_indices(&x, Dim2::square(2), Dim2::square(2)).unwrap();
        assert_eq!(y.data(), &[4.]);
        let dx = maxpool2d_backward(x.shape(), &idx, &t(&[1, 1, 1, 1], &[1.])).unwrap();
        assert_eq!(dx.data(), &[0., 0., 0., 1.]);

        let x = t(&[1, 1, 1, 4], &[1., 3., 2., 4.]);
        let y = maxpool2d(&x, Dim2::new(1, 2), Dim2::new(1, 2)).unwrap();
        assert_eq!(y.data(), &[3., 4.]);
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let x = t(&[1, 1, 2, 2], &[5., 5., 5., 5.]);
        let (_, idx) = maxpool2d_with_indices(&x, Dim2::square(2), Dim2::square(2)).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn maxpool_window_too_large() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 3]);
        assert!(matches!(
            maxpool2d(&x, Dim2::square(3), Dim2::square(1)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn dense_examples() {
        let x = t(&[1, 2], &[1., 2.]);
        let y = dense(&x, &t(&[2, 2], &[1., 0., 0., 1.]), &t(&[2], &[0., 0.])).unwrap();
        assert_eq!(y.data(), &[1., 2.]);
        let y = dense(&x, &t(&[2, 1], &[1., 1.]), &t(&[1], &[3.])).unwrap();
        assert_eq!(y.data(), &[6.]);
        let x = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        let y = dense(&x, &Tensor::zeros(&[2, 2]), &t(&[2], &[0.5, -2.])).unwrap();
        assert_eq!(y.data(), &[0.5, -2., 0.5, -2., 0.5, -2.]);
        assert!(dense(&x, &Tensor::zeros(&[3, 2]), &t(&[2], &[0., 0.])).is_err());
    }

    #[test]
    fn concat_examples() {
        let a = t(&[1, 1], &[1.]);
        let b = t(&[1, 2], &[2., 3.]);
        let y = concat(&[&a, &b]).unwrap();
        assert_eq!(y.data(), &[1., 2., 3.]);
        assert_eq!(concat(&[&b]).unwrap(), b);
        let parts = concat_backward(&t(&[1, 3], &[10., 20., 30.]), &[1, 2]).unwrap();
        assert_eq!(parts[0].data(), &[10.]);
        assert_eq!(parts[1].data(), &[20., 30.]);
        assert!(concat(&[&a, &t(&[2, 1], &[0., 0.])]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&t(&[1, 2], &[0., 0.])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = softmax(&t(&[1, 2], &[3f64.ln(), 0.])).unwrap();
        assert!((p.data()[0] - 0.75).abs() < 1e-12 && (p.data()[1] - 0.25).abs() < 1e-12);
        let p = softmax(&Tensor::<f32>::new(vec![1, 2], vec![1000., 0.]).unwrap()).unwrap();
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-6 && p.data()[1] < 1e-6);
        assert!(matches!(
            softmax(&t(&[1, 2], &[f64::NAN, 0.])),
            Err(Error::Numeric { .. })
        ));
        assert!(softmax(&t(&[1, 1], &[0.])).is_err());
    }

    #[test]
    fn nll_examples() {
        let p = t(&[1, 2], &[0., 1.]);
        assert_eq!(nll_loss(&p, &[1]).unwrap(), 0.0);
        let p = t(&[1, 2], &[0.5, 0.5]);
        assert!((nll_loss(&p, &[0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let p = t(&[2, 2], &[1., 0., 0.5, 0.5]);
        assert!((nll_loss(&p, &[0, 1]).unwrap() - 0.346_573_590_279_972_6).abs() < 1e-12);
        // floored, not infinite
        let p = t(&[1, 2], &[1., 0.]);
        assert!((nll_loss(&p, &[1]).unwrap() - (-(1e-12f64).ln())).abs() < 1e-9);
        assert!(matches!(
            nll_loss(&p, &[2]),
            Err(Error::Label {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn softmax_nll_gradient_formula() {
        let p = t(&[2, 2], &[0.25, 0.75, 0.5, 0.5]);
        let g = softmax_nll_backward(&p, &[1, 0]).unwrap();
        assert_eq!(g.data(), &[0.125, -0.125, -0.25, 0.25]);
    }
}
