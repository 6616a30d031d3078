//! Forward and backward kernels for the layer types. Image tensors are
//! `[N, C, H, W]`; the public `*_forward` helpers also accept a single
//! `[C, H, W]` image.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::special::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

impl ActivationKind {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Self::Sigmoid => sigmoid(z),
            Self::Tanh => z.tanh(),
            Self::Relu => z.max(T::zero()),
            Self::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T, y: T) -> T {
        match self {
            Self::Sigmoid => y * (T::one() - y),
            Self::Tanh => T::one() - y * y,
            Self::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::Identity => T::one(),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
            Self::Relu => "relu",
            Self::Identity => "identity",
        };
        f.write_str(s)
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Self::Sigmoid),
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            "identity" | "linear" => Ok(Self::Identity),
            other => Err(Error::Parameter(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub fn conv_output_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Dimension("stride must be at least 1".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Dimension(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn conv_geometry(
    input: &[usize],
    kernels: &[usize],
    bias: &[usize],
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let [n, c, h, w] = *input else {
        return Err(Error::Dimension(format!(
            "conv input must be [N,C,H,W], got {input:?}"
        )));
    };
    let [f, kc, kh, kw] = *kernels else {
        return Err(Error::Dimension(format!(
            "conv kernels must be [F,C,kh,kw], got {kernels:?}"
        )));
    };
    if kc != c {
        return Err(Error::Dimension(format!(
            "kernel has {kc} input channels, input has {c}"
        )));
    }
    if bias != [f] {
        return Err(Error::Dimension(format!(
            "conv bias must be [{f}], got {bias:?}"
        )));
    }
    let out_h = conv_output_dim(h, kh, stride, padding)?;
    let out_w = conv_output_dim(w, kw, stride, padding)?;
    Ok(ConvGeometry {
        n,
        c,
        h,
        w,
        f,
        kh,
        kw,
        stride,
        padding,
        out_h,
        out_w,
    })
}

/// Input pixel index for output position (oy, ox) and kernel offset (ky, kx);
/// `None` inside the zero padding.
#[inline]
fn source(g: &ConvGeometry, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
    let y = (oy * g.stride + ky).checked_sub(g.padding)?;
    let x = (ox * g.stride + kx).checked_sub(g.padding)?;
    (y < g.h && x < g.w).then_some((y, x))
}

pub(crate) fn conv2d_kernel<T: Scalar>(g: &ConvGeometry, x: &[T], k: &[T], b: &[T]) -> Vec<T> {
    let plane = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.n * g.f * plane];
    for n in 0..g.n {
        for f in 0..g.f {
            let o = &mut out[(n * g.f + f) * plane..(n * g.f + f + 1) * plane];
            o.iter_mut().for_each(|v| *v = b[f]);
            for c in 0..g.c {
                let xin = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                let kern = &k[(f * g.c + c) * g.kh * g.kw..(f * g.c + c + 1) * g.kh * g.kw];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = T::zero();
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((y, xx)) = source(g, oy, ox, ky, kx) {
                                    acc += kern[ky * g.kw + kx] * xin[y * g.w + xx];
                                }
                            }
                        }
                        o[oy * g.out_w + ox] += acc;
                    }
                }
            }
        }
    }
    out
}

/// Returns (d input, d kernels, d bias).
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    k: &[T],
    dout: &[T],
    want_dx: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = g.out_h * g.out_w;
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut db = vec![T::zero(); g.f];
    for n in 0..g.n {
        for f in 0..g.f {
            let d = &dout[(n * g.f + f) * plane..(n * g.f + f + 1) * plane];
            db[f] += d.iter().copied().sum();
            for c in 0..g.c {
                let xoff = (n * g.c + c) * g.h * g.w;
                let koff = (f * g.c + c) * g.kh * g.kw;
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let gv = d[oy * g.out_w + ox];
                        if gv == T::zero() {
                            continue;
                        }
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((y, xx)) = source(g, oy, ox, ky, kx) {
                                    dk[koff + ky * g.kw + kx] += gv * x[xoff + y * g.w + xx];
                                    if want_dx {
                                        dx[xoff + y * g.w + xx] += gv * k[koff + ky * g.kw + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub pool: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub fn pool_geometry(input: &[usize], pool: usize, stride: usize) -> Result<PoolGeometry> {
    let [n, c, h, w] = *input else {
        return Err(Error::Dimension(format!(
            "pool input must be [N,C,H,W], got {input:?}"
        )));
    };
    if pool == 0 || stride == 0 {
        return Err(Error::Dimension(
            "pool size and stride must be at least 1".into(),
        ));
    }
    if pool > h || pool > w {
        return Err(Error::Dimension(format!(
            "pool {pool} larger than spatial dims {h}x{w}"
        )));
    }
    Ok(PoolGeometry {
        n,
        c,
        h,
        w,
        pool,
        stride,
        out_h: (h - pool) / stride + 1,
        out_w: (w - pool) / stride + 1,
    })
}

/// Max pooling; returns the output and the flat input index of every maximum
/// (first maximum wins on ties).
pub(crate) fn maxpool_kernel<T: Scalar>(g: &PoolGeometry, x: &[T]) -> (Vec<T>, Vec<usize>) {
    let len = g.n * g.c * g.out_h * g.out_w;
    let mut out = Vec::with_capacity(len);
    let mut arg = Vec::with_capacity(len);
    for nc in 0..g.n * g.c {
        let base = nc * g.h * g.w;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = T::neg_infinity();
                let mut best_i = base + oy * g.stride * g.w + ox * g.stride;
                for py in 0..g.pool {
                    for px in 0..g.pool {
                        let i = base + (oy * g.stride + py) * g.w + ox * g.stride + px;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

pub(crate) fn dense_kernel<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    n: usize,
    k: usize,
    m: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(n * m);
    for row in x.chunks_exact(k).take(n) {
        for j in 0..m {
            let wr = &w[j * k..(j + 1) * k];
            let s: T = wr.iter().zip(row).map(|(&a, &v)| a * v).sum();
            out.push(s + b[j]);
        }
    }
    out
}

fn as_batch<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, bool)> {
    match input.shape().len() {
        3 => {
            let mut shape = vec![1];
            shape.extend_from_slice(input.shape());
            Ok((input.reshape(&shape)?, true))
        }
        4 => Ok((input.detached(), false)),
        _ => Err(Error::Dimension(format!(
            "expected [C,H,W] or [N,C,H,W], got {:?}",
            input.shape()
        ))),
    }
}

fn unbatch<T: Scalar>(t: Tensor<T>, single: bool) -> Result<Tensor<T>> {
    if single {
        let shape = t.shape()[1..].to_vec();
        t.reshape(&shape)
    } else {
        Ok(t)
    }
}

/// Cross-correlation of `input` with `kernels` plus a per-filter bias.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (x, single) = as_batch(input)?;
    let g = conv_geometry(x.shape(), kernels.shape(), bias.shape(), stride, padding)?;
    let out = conv2d_kernel(&g, x.data(), kernels.data(), bias.data());
    unbatch(Tensor::new(&[g.n, g.f, g.out_h, g.out_w], out)?, single)
}

pub fn maxpool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    pool: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let (x, single) = as_batch(input)?;
    let g = pool_geometry(x.shape(), pool, stride)?;
    let (out, _) = maxpool_kernel(&g, x.data());
    unbatch(Tensor::new(&[g.n, g.c, g.out_h, g.out_w], out)?, single)
}

/// `out[m] = Σ_k w[m,k]·x[k] + b[m]`; `x` may be `[K]` or `[N,K]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [m, k] = *w.shape() else {
        return Err(Error::Dimension(format!(
            "dense weight must be [M,K], got {:?}",
            w.shape()
        )));
    };
    if b.shape() != [m] {
        return Err(Error::Dimension(format!(
            "dense bias must be [{m}], got {:?}",
            b.shape()
        )));
    }
    let (n, single) = match *x.shape() {
        [kk] if kk == k => (1, true),
        [n, kk] if kk == k => (n, false),
        _ => {
            return Err(Error::Dimension(format!(
                "dense input {:?} does not conform to weight [{m},{k}]",
                x.shape()
            )))
        }
    };
    let out = dense_kernel(x.data(), w.data(), b.data(), n, k, m);
    if single {
        Tensor::new(&[m], out)
    } else {
        Tensor::new(&[n, m], out)
    }
}

pub fn activation_apply<T: Scalar>(x: &Tensor<T>, kind: ActivationKind) -> Tensor<T> {
    let data = x.data().iter().map(|&z| kind.apply(z)).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let y = conv2d_forward(&x, &k, &b, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let x = Tensor::<f64>::zeros(&[2, 5, 5]);
        let k = t(&[3, 2, 3, 3], &[0.7; 54]);
        let b = t(&[3], &[-1.0, 0.5, 2.0]);
        let y = conv2d_forward(&x, &k, &b, 2, 1).unwrap();
        assert_eq!(y.shape(), &[3, 3, 3]);
        for f in 0..3 {
            assert!(y.data()[f * 9..(f + 1) * 9]
                .iter()
                .all(|&v| v == b.data()[f]));
        }
    }

    #[test]
    fn all_ones_kernel_sums() {
        let x = t(&[1, 2, 2], &[1., 2., 3., 4.]);
        let k = t(&[1, 1, 2, 2], &[1.0; 4]);
        let b = t(&[1], &[0.0]);
        let y = conv2d_forward(&x, &k, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn conv_output_shape_formula() {
        let x = Tensor::<f64>::zeros(&[1, 7, 6]);
        let k = Tensor::<f64>::zeros(&[2, 1, 3, 2]);
        let b = Tensor::<f64>::zeros(&[2]);
        let y = conv2d_forward(&x, &k, &b, 2, 1).unwrap();
        // (7+2-3)/2+1 = 4, (6+2-2)/2+1 = 4
        assert_eq!(y.shape(), &[2, 4, 4]);
    }

    #[test]
    fn conv_dimension_errors() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2]);
        let k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let b = Tensor::<f64>::zeros(&[1]);
        assert!(matches!(
            conv2d_forward(&x, &k, &b, 1, 0),
            Err(Error::Dimension(_))
        ));
        let k2 = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        assert!(conv2d_forward(&x, &k2, &b, 1, 0).is_err());
        let k3 = Tensor::<f64>::zeros(&[1, 1, 1, 1]);
        assert!(conv2d_forward(&x, &k3, &b, 0, 0).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let x = t(&[1, 2, 2], &[1., 2., 3., 4.]);
        assert_eq!(maxpool2d_forward(&x, 2, 2).unwrap().data(), &[4.0]);
        let c = Tensor::filled(&[2, 4, 4], 3.5f64);
        let y = maxpool2d_forward(&c, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.5));
        let z = t(&[1, 2, 3], &[1., -2., 3., 0.5, 5., 6.]);
        assert_eq!(maxpool2d_forward(&z, 1, 1).unwrap(), z);
        assert!(maxpool2d_forward(&x, 3, 1).is_err());
    }

    #[test]
    fn dense_examples() {
        let x = t(&[2], &[1., 2.]);
        let y = dense_forward(&x, &t(&[1, 2], &[3., 4.]), &t(&[1], &[-1.])).unwrap();
        assert_eq!(y.data(), &[10.0]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let y = dense_forward(&x, &eye, &t(&[2], &[0., 0.])).unwrap();
        assert_eq!(y.data(), x.data());
        let zero = t(&[2], &[0., 0.]);
        let b = t(&[2], &[0.3, -0.2]);
        assert_eq!(dense_forward(&zero, &eye, &b).unwrap().data(), b.data());
        assert!(dense_forward(&t(&[3], &[1., 2., 3.]), &eye, &b).is_err());
    }

    #[test]
    fn activations() {
        let z = t(&[3], &[0.0, 2.0, -2.0]);
        let s = activation_apply(&z, ActivationKind::Sigmoid);
        assert_eq!(s.data()[0], 0.5);
        assert!((s.data()[1] + s.data()[2] - 1.0).abs() < 1e-15);
        assert_eq!(activation_apply(&z, ActivationKind::Tanh).data()[0], 0.0);
        assert_eq!(
            activation_apply(&z, ActivationKind::Relu).data(),
            &[0.0, 2.0, 0.0]
        );
        assert!("softplus".parse::<ActivationKind>().is_err());
        assert_eq!(
            "TANH".parse::<ActivationKind>().unwrap(),
            ActivationKind::Tanh
        );
    }
}
