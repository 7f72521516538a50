//! Functional forward/backward kernels over `[frames x channels]` tensors.

use rand::Rng;

use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

/// Whether stochastic and batch-statistics layers run in training or inference form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// `y[t] = x[t] * weight + bias`
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (frames, din) = x.expect_matrix("linear input")?;
    let (wdin, dout) = weight.expect_matrix("linear weight")?;
    if wdin != din || bias.shape() != [dout] {
        return Err(Error::invalid(format!(
            "linear shape mismatch: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut y = Tensor::zeros(&[frames, dout]);
    for t in 0..frames {
        let out = y.row_mut(t);
        out.copy_from_slice(bias.data());
        for (k, &a) in x.row(t).iter().enumerate() {
            if a != 0.0 {
                axpy(a, weight.row(k), out);
            }
        }
    }
    Ok(y)
}

pub fn linear_backward(x: &Tensor, weight: &Tensor, dy: &Tensor) -> LinearGrads {
    let (frames, din) = (x.rows(), x.cols());
    let dout = weight.cols();
    let mut dx = Tensor::zeros(&[frames, din]);
    let mut dw = Tensor::zeros(&[din, dout]);
    let mut db = Tensor::zeros(&[dout]);
    for t in 0..frames {
        let g = dy.row(t);
        axpy(1.0, g, db.data_mut());
        let dxt = dx.row_mut(t);
        for (k, v) in dxt.iter_mut().enumerate() {
            *v = dot(g, weight.row(k));
        }
        for (k, &a) in x.row(t).iter().enumerate() {
            if a != 0.0 {
                axpy(a, g, dw.row_mut(k));
            }
        }
    }
    LinearGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

fn conv_dims(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (frames, cin) = x.expect_matrix("conv input")?;
    let &[k, kcin, cout] = kernels.shape() else {
        return Err(Error::invalid(format!(
            "conv kernels must be [K x C_in x C_out], got {:?}",
            kernels.shape()
        )));
    };
    if k % 2 == 0 {
        return Err(Error::invalid(format!("conv kernel width must be odd, got {k}")));
    }
    if kcin != cin || bias.shape() != [cout] {
        return Err(Error::invalid(format!(
            "conv shape mismatch: input {:?}, kernels {:?}, bias {:?}",
            x.shape(),
            kernels.shape(),
            bias.shape()
        )));
    }
    Ok((frames, cin, cout, k))
}

/// Time-axis cross-correlation with `K/2` zero frames of padding on each
/// side, so the output keeps the input's frame count.
pub fn conv1d_time(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (frames, cin, cout, k) = conv_dims(x, kernels, bias)?;
    let pad = k / 2;
    let tap = cin * cout;
    let w = kernels.data();
    let mut y = Tensor::zeros(&[frames, cout]);
    for t in 0..frames {
        let out = y.row_mut(t);
        out.copy_from_slice(bias.data());
        for j in 0..k {
            let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < frames) else {
                continue;
            };
            let wk = &w[j * tap..(j + 1) * tap];
            for (c, &a) in x.row(src).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, &wk[c * cout..(c + 1) * cout], out);
                }
            }
        }
    }
    Ok(y)
}

pub fn conv1d_time_backward(x: &Tensor, kernels: &Tensor, dy: &Tensor) -> ConvGrads {
    let (frames, cin) = (x.rows(), x.cols());
    let (k, cout) = (kernels.shape()[0], kernels.shape()[2]);
    let pad = k / 2;
    let tap = cin * cout;
    let w = kernels.data();
    let mut dx = Tensor::zeros(&[frames, cin]);
    let mut dk = Tensor::zeros(&[k, cin, cout]);
    let mut db = Tensor::zeros(&[cout]);
    for t in 0..frames {
        let g = dy.row(t);
        axpy(1.0, g, db.data_mut());
        for j in 0..k {
            let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < frames) else {
                continue;
            };
            let wk = &w[j * tap..(j + 1) * tap];
            let dxs = dx.row_mut(src);
            for (c, v) in dxs.iter_mut().enumerate() {
                *v += dot(g, &wk[c * cout..(c + 1) * cout]);
            }
            let dkk = &mut dk.data_mut()[j * tap..(j + 1) * tap];
            for (c, &a) in x.row(src).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, g, &mut dkk[c * cout..(c + 1) * cout]);
                }
            }
        }
    }
    ConvGrads {
        input: dx,
        kernels: dk,
        bias: db,
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    let cols = y.cols();
    for row in y.data_mut().chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    let cols = y.cols();
    for row in y.data_mut().chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    y
}

/// Inverted dropout. Returns the output and the per-element scale that was
/// applied (0 or `1/(1-rate)`), which is also the backward multiplier.
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, Some(mask)))
}
