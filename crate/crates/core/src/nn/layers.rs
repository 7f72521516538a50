//! Stateful layers: parameters plus the forward cache their backward pass needs.
//!
//! `forward` records what `backward` consumes; `infer` takes `&self` and
//! leaves no trace, so a frozen model can be shared between readers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::batchnorm::{self, BnCache, RunningStats};
use super::ops::{self, Mode};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named learnable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything owning a list of parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

fn gaussian<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
        .expect("shape matches")
}

fn missing_cache(layer: &str) -> Error {
    Error::InvalidState(format!("{layer}: backward called without a forward pass"))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    /// He-normal weights (`std = gain * sqrt(2 / fan_in)`), zero bias.
    pub fn new<R: Rng + ?Sized>(name: &str, din: usize, dout: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain * (2.0 / din as f64).sqrt();
        Self {
            weight: Param::new(format!("{name}.weight"), gaussian(&[din, dout], std, rng)),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[dout])),
            input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        ops::linear(x, &self.weight.value, &self.bias.value)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(|| missing_cache(&self.weight.name))?;
        let g = ops::linear_backward(&x, &self.weight.value, dy);
        self.weight.grad.add_assign(&g.weight);
        self.bias.grad.add_assign(&g.bias);
        Ok(g.input)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Time convolution; the bias is optional because a following batch norm
/// cancels it.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernels: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        width: usize,
        cin: usize,
        cout: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::invalid(format!("conv kernel width must be odd, got {width}")));
        }
        let std = (2.0 / (width * cin) as f64).sqrt();
        Ok(Self {
            kernels: Param::new(format!("{name}.kernels"), gaussian(&[width, cin, cout], std, rng)),
            bias: with_bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[cout]))),
            input: None,
        })
    }

    pub fn width(&self) -> usize {
        self.kernels.value.shape()[0]
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match &self.bias {
            Some(b) => ops::conv1d_time(x, &self.kernels.value, &b.value),
            None => {
                let zeros = Tensor::zeros(&[self.kernels.value.shape()[2]]);
                ops::conv1d_time(x, &self.kernels.value, &zeros)
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(|| missing_cache(&self.kernels.name))?;
        let g = ops::conv1d_time_backward(&x, &self.kernels.value, dy);
        self.kernels.grad.add_assign(&g.kernels);
        if let Some(b) = &mut self.bias {
            b.grad.add_assign(&g.bias);
        }
        Ok(g.input)
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.kernels).chain(&self.bias).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.kernels).chain(&mut self.bias).collect()
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub stats: RunningStats,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::filled(&[channels], 1.0)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            stats: RunningStats::new(channels),
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        batchnorm::batchnorm_infer(x, &self.gamma.value, &self.beta.value, &self.stats)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (y, cache) =
            batchnorm::batchnorm_time(x, &self.gamma.value, &self.beta.value, mode, &mut self.stats)?;
        self.cache = cache;
        Ok(y)
    }

    /// Only defined after a train-mode forward.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| missing_cache(&self.gamma.name))?;
        let g = batchnorm::batchnorm_time_backward(&cache, &self.gamma.value, dy);
        self.gamma.grad.add_assign(&g.gamma);
        self.beta.grad.add_assign(&g.beta);
        Ok(g.input)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = ops::relu(x);
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(|| missing_cache("relu"))?;
        Ok(ops::relu_backward(&x, dy))
    }
}

#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<Option<Vec<f64>>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Self { rate, mask: None })
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        let (y, mask) = ops::dropout(x, self.rate, mode, rng)?;
        self.mask = Some(mask);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self.mask.take().ok_or_else(|| missing_cache("dropout"))? {
            None => Ok(dy.clone()),
            Some(mask) => {
                let mut dx = dy.clone();
                for (g, m) in dx.data_mut().iter_mut().zip(&mask) {
                    *g *= m;
                }
                Ok(dx)
            }
        }
    }
}
