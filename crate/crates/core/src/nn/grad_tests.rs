//! Finite-difference checks for each layer in isolation.
//!
//! Each objective is `sum(weights * layer(x))` with fixed random weights, so
//! every output element contributes a distinct, O(1) gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted_sum(y: &Tensor, w: &Tensor) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Treats the input as a parameter too so that `dx` is checked.
struct LinearObjective {
    layer: Linear,
    input: Param,
    out_weights: Tensor,
}

impl Objective for LinearObjective {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let [w, b] = self.layer.params_mut();
        vec![w, b, &mut self.input]
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(weighted_sum(&self.layer.infer(&self.input.value)?, &self.out_weights))
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let y = self.layer.forward(&self.input.value)?;
        let dx = self.layer.backward(&self.out_weights)?;
        self.input.grad.add_assign(&dx);
        Ok(weighted_sum(&y, &self.out_weights))
    }
}

#[test]
fn linear_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut obj = LinearObjective {
        layer: Linear::new("fc", 3, 2, 1.0, &mut rng),
        input: Param::new("x", random(&[4, 3], &mut rng)),
        out_weights: random(&[4, 2], &mut rng),
    };
    obj.layer.bias.value = random(&[2], &mut rng);
    let report = grad_check(&mut obj, 1e-5).unwrap();
    assert_eq!(report.elements_checked, 6 + 2 + 12);
    assert!(report.max_relative_error < 1e-6, "{report:?}");
}

struct ConvObjective {
    layer: Conv1d,
    input: Param,
    out_weights: Tensor,
}

impl Objective for ConvObjective {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut params = self.layer.params_mut();
        params.push(&mut self.input);
        params
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(weighted_sum(&self.layer.infer(&self.input.value)?, &self.out_weights))
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let y = self.layer.forward(&self.input.value)?;
        let dx = self.layer.backward(&self.out_weights)?;
        self.input.grad.add_assign(&dx);
        Ok(weighted_sum(&y, &self.out_weights))
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for width in [1, 3, 5] {
        let mut obj = ConvObjective {
            layer: Conv1d::new("conv", width, 3, 4, true, &mut rng).unwrap(),
            input: Param::new("x", random(&[6, 3], &mut rng)),
            out_weights: random(&[6, 4], &mut rng),
        };
        let report = grad_check(&mut obj, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-6, "width {width}: {report:?}");
    }
}

struct BnObjective {
    layer: BatchNorm,
    input: Param,
    out_weights: Tensor,
}

impl Objective for BnObjective {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let [g, b] = self.layer.params_mut();
        vec![g, b, &mut self.input]
    }

    fn loss(&mut self) -> Result<f64> {
        let y = self.layer.forward(&self.input.value, Mode::Train)?;
        Ok(weighted_sum(&y, &self.out_weights))
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let y = self.layer.forward(&self.input.value, Mode::Train)?;
        let dx = self.layer.backward(&self.out_weights)?;
        self.input.grad.add_assign(&dx);
        Ok(weighted_sum(&y, &self.out_weights))
    }
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut obj = BnObjective {
        layer: BatchNorm::new("bn", 3),
        input: Param::new("x", random(&[7, 3], &mut rng)),
        out_weights: random(&[7, 3], &mut rng),
    };
    obj.layer.gamma.value = random(&[3], &mut rng);
    obj.layer.beta.value = random(&[3], &mut rng);
    let report = grad_check(&mut obj, 1e-5).unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}

struct ReluObjective {
    input: Param,
    out_weights: Tensor,
}

impl Objective for ReluObjective {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.input]
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(weighted_sum(&relu(&self.input.value), &self.out_weights))
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let mut layer = Relu::default();
        let y = layer.forward(&self.input.value);
        let dx = layer.backward(&self.out_weights)?;
        self.input.grad.add_assign(&dx);
        Ok(weighted_sum(&y, &self.out_weights))
    }
}

#[test]
fn relu_gradients_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // keep every input at least 0.1 from zero
    let data: Vec<f64> = (0..20)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    let mut obj = ReluObjective {
        input: Param::new("x", Tensor::matrix(4, 5, data).unwrap()),
        out_weights: random(&[4, 5], &mut rng),
    };
    let report = grad_check(&mut obj, 1e-5).unwrap();
    assert!(report.max_relative_error < 1e-8, "{report:?}");
}

struct LogSoftmaxObjective {
    input: Param,
    targets: Vec<usize>,
}

impl Objective for LogSoftmaxObjective {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.input]
    }

    fn loss(&mut self) -> Result<f64> {
        let lp = log_softmax_rows(&self.input.value);
        Ok(-self.targets.iter().enumerate().map(|(t, &k)| lp.at(t, k)).sum::<f64>())
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let loss = self.loss()?;
        let p = softmax_rows(&self.input.value);
        let mut g = p;
        for (t, &k) in self.targets.iter().enumerate() {
            g.row_mut(t)[k] -= 1.0;
        }
        self.input.grad.add_assign(&g);
        Ok(loss)
    }
}

#[test]
fn softmax_cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut obj = LogSoftmaxObjective {
        input: Param::new("logits", random(&[3, 4], &mut rng)),
        targets: vec![0, 3, 1],
    };
    let report = grad_check(&mut obj, 1e-5).unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");
}

#[test]
fn softmax_self_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[5, 7], &mut rng).map(|v| v * 20.0);
    let p = softmax_rows(&x);
    let lp = log_softmax_rows(&x);
    for (a, b) in p.data().iter().zip(lp.data()) {
        assert!((a - b.exp()).abs() < 1e-12);
    }
}

struct Constant(Param);

impl Objective for Constant {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.0]
    }
    fn loss(&mut self) -> Result<f64> {
        Ok(4.2)
    }
    fn loss_and_grad(&mut self) -> Result<f64> {
        Ok(4.2)
    }
}

#[test]
fn constant_loss_has_zero_error() {
    let mut obj = Constant(Param::new("w", Tensor::filled(&[3], 1.0)));
    let report = grad_check(&mut obj, 1e-5).unwrap();
    assert_eq!(report.max_relative_error, 0.0);
    assert!(obj.0.grad.data().iter().all(|&g| g == 0.0));
}

struct Noisy;

impl Objective for Noisy {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![]
    }
    fn loss(&mut self) -> Result<f64> {
        Ok(0.0)
    }
    fn loss_and_grad(&mut self) -> Result<f64> {
        Ok(0.0)
    }
    fn is_stochastic(&self) -> bool {
        true
    }
}

#[test]
fn stochastic_objective_is_rejected() {
    assert!(matches!(
        grad_check(&mut Noisy, 1e-5),
        Err(crate::error::Error::InvalidState(_))
    ));
}
